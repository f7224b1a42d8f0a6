"""Asymmetric multi-label loss and the weighted three-level combination."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from hierprompt.prompthead import LevelScores


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class ASLConfig:
    gamma_pos: float = 1.0
    gamma_neg: float = 2.0
    margin: float = 0.05
    eps: float = 1e-8

    def __post_init__(self):
        if self.gamma_pos < 0 or self.gamma_neg < 0:
            raise LossError("focusing exponents must be non-negative")
        if not 0.0 <= self.margin < 1.0:
            raise LossError("margin must lie in [0, 1)")
        if self.eps <= 0:
            raise LossError("eps must be positive")


@dataclass(frozen=True)
class StageTwoConfig:
    lambdas: tuple[float, float, float] = (0.6, 0.25, 0.15)
    allow_unnormalized: bool = False

    def __post_init__(self):
        if len(self.lambdas) != 3:
            raise LossError("need exactly three level weights")
        if any(lam < 0 for lam in self.lambdas):
            raise LossError(f"level weights must be non-negative, got {self.lambdas}")
        if not self.allow_unnormalized and abs(sum(self.lambdas) - 1.0) > 1e-6:
            raise LossError(
                f"level weights must sum to 1 (got {sum(self.lambdas):.6g}); "
                "pass allow_unnormalized to override"
            )


def asl(p: torch.Tensor, y: torch.Tensor, cfg: ASLConfig = ASLConfig()) -> torch.Tensor:
    """Mean asymmetric loss over all entries of ``p``.

    Positives: (1 - p)^gamma_pos * -log(p).
    Negatives: p_m^gamma_neg * -log(1 - p_m), with p_m = max(p - margin, 0),
    so negatives already below the margin contribute nothing.
    """
    if p.shape != y.shape:
        raise LossError(f"probability shape {tuple(p.shape)} != target shape {tuple(y.shape)}")
    y = y.to(p.dtype)
    p_m = (p - cfg.margin).clamp(min=0.0)
    loss_pos = (1.0 - p) ** cfg.gamma_pos * -torch.log(p.clamp(min=cfg.eps))
    loss_neg = p_m ** cfg.gamma_neg * -torch.log((1.0 - p_m).clamp(min=cfg.eps))
    return (y * loss_pos + (1.0 - y) * loss_neg).mean()


def stage1_loss(
    scores: LevelScores,
    y: torch.Tensor,
    cfg: ASLConfig = ASLConfig(),
    level: int | None = None,
) -> torch.Tensor:
    if level is not None and level != scores.level_index:
        raise LossError(f"targets are for level {level}, scores for level {scores.level_index}")
    if y.ndim != 2 or y.shape[1] != len(scores.labels):
        raise LossError(
            f"targets of shape {tuple(y.shape)} do not match {len(scores.labels)} classes "
            f"at level {scores.level_index}"
        )
    return asl(scores.probs, y, cfg)


def stage2_loss(l1, l2, l3, cfg: StageTwoConfig = StageTwoConfig()):
    lam1, lam2, lam3 = cfg.lambdas
    return lam1 * l1 + lam2 * l2 + lam3 * l3
