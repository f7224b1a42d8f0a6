"""Two-stage cross-hierarchy training over prompt contexts only.

Stage 1 tunes each level's prompts on its own loss. Stage 2 starts from the
three stage-1 states and optimizes the weighted sum of the three level losses
jointly, sharing one image encoding per batch across the heads.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from hierprompt.backbone import BackboneAdapter
from hierprompt.data import DatasetSplit, label_matrix
from hierprompt.loss import ASLConfig, StageTwoConfig, stage1_loss, stage2_loss
from hierprompt.metrics import evaluate
from hierprompt.prompthead import PromptState, forward_features, threshold

log = logging.getLogger(__name__)

STAGE_DEFAULTS = {1: {"epochs": 110, "lr0": 0.002}, 2: {"epochs": 60, "lr0": 0.001}}


class TrainError(ValueError):
    pass


@dataclass
class TrainConfig:
    stage: int = 1
    epochs: int | None = None
    lr0: float | None = None
    batch_size: int = 32
    momentum: float = 0.9
    weight_decay: float = 0.0
    seed: int = 0
    lambdas: tuple[float, float, float] = (0.6, 0.25, 0.15)
    allow_unnormalized: bool = False
    checkpoint_every: int = 10
    tau: float = 0.5
    agg_scale: float | None = None
    asl: ASLConfig = field(default_factory=ASLConfig)

    def __post_init__(self):
        if self.stage not in STAGE_DEFAULTS:
            raise TrainError(f"stage must be 1 or 2, got {self.stage}")
        if self.epochs is None:
            self.epochs = STAGE_DEFAULTS[self.stage]["epochs"]
        if self.lr0 is None:
            self.lr0 = STAGE_DEFAULTS[self.stage]["lr0"]
        if self.epochs < 1 or self.batch_size < 1:
            raise TrainError("epochs and batch_size must be positive")
        if self.stage == 2:
            StageTwoConfig(tuple(self.lambdas), self.allow_unnormalized)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambdas"] = list(self.lambdas)
        return d


def cosine_lr(lr0: float, step: int, total_steps: int) -> float:
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class TrainReport:
    stage: int
    levels: tuple[int, ...]
    epoch_losses: dict[int, list[float]]
    backbone_digest_before: str
    backbone_digest_after: str
    config: dict
    best_epoch: int | None = None
    best_val_f1: float | None = None
    joint_losses: list[float] = field(default_factory=list)
    wall_clock_s: float = 0.0
    best_states: list[PromptState] | None = field(default=None, repr=False)

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "stage": self.stage,
            "levels": list(self.levels),
            "epoch_losses": {str(k): v for k, v in self.epoch_losses.items()},
            "joint_losses": self.joint_losses,
            "backbone_digest_before": self.backbone_digest_before,
            "backbone_digest_after": self.backbone_digest_after,
            "best_epoch": self.best_epoch,
            "best_val_f1": self.best_val_f1,
            "config": self.config,
        }
        if include_timing:
            d["wall_clock_s"] = self.wall_clock_s
        return d


def batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def level_targets(data: DatasetSplit, state: PromptState) -> torch.Tensor:
    return torch.from_numpy(label_matrix(data.targets(state.level_index), state.labels))


def predict(
    states: Sequence[PromptState],
    b: BackboneAdapter,
    data: DatasetSplit,
    tau: float = 0.5,
    agg_scale: float | None = None,
    batch_size: int = 256,
) -> dict[int, list[frozenset[str]]]:
    """Thresholded predictions per level for every sample in ``data``."""
    out: dict[int, list[frozenset[str]]] = {ps.level_index: [] for ps in states}
    refs = [s.image_ref for s in data]
    with torch.no_grad():
        for i in range(0, len(refs), batch_size):
            feats = b.encode_images(refs[i:i + batch_size])
            for ps in states:
                out[ps.level_index] += threshold(forward_features(ps, b, feats, agg_scale), tau)
    return out


def mean_f1(states, b, data, cfg: TrainConfig) -> float:
    preds = predict(states, b, data, cfg.tau, cfg.agg_scale)
    return float(np.mean([evaluate(preds[ps.level_index], data.targets(ps.level_index)).f1 for ps in states]))


Callback = Callable[[int, Sequence[PromptState]], None]


def _run(
    states: list[PromptState],
    data: DatasetSplit,
    b: BackboneAdapter,
    cfg: TrainConfig,
    loss_fn: Callable[[list[torch.Tensor]], torch.Tensor],
    val: DatasetSplit | None,
    on_checkpoint: Callback | None,
) -> TrainReport:
    digest_before = b.digest()
    t0 = time.perf_counter()
    targets = [level_targets(data, ps) for ps in states]
    refs = [s.image_ref for s in data]
    params = [p for ps in states for p in ps.parameters()]
    opt = torch.optim.SGD(params, lr=cfg.lr0, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    steps_per_epoch = math.ceil(len(data) / cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    report = TrainReport(
        cfg.stage,
        tuple(ps.level_index for ps in states),
        {ps.level_index: [] for ps in states},
        digest_before,
        "",
        cfg.to_dict(),
    )
    best: tuple[float, list[PromptState]] | None = None
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        sums = [0.0] * len(states)
        joint = 0.0
        for idx in batches(len(data), cfg.batch_size, rng):
            lr = cosine_lr(cfg.lr0, step, total)
            for group in opt.param_groups:
                group["lr"] = lr
            feats = b.encode_images([refs[j] for j in idx])
            per_level = [
                stage1_loss(forward_features(ps, b, feats, cfg.agg_scale), y[idx], cfg.asl)
                for ps, y in zip(states, targets)
            ]
            loss = loss_fn(per_level)
            opt.zero_grad()
            loss.backward()
            opt.step()
            step += 1
            joint += loss.item() * len(idx)
            for k, l in enumerate(per_level):
                sums[k] += l.item() * len(idx)
        for k, ps in enumerate(states):
            report.epoch_losses[ps.level_index].append(sums[k] / len(data))
        report.joint_losses.append(joint / len(data))
        log.info("stage %d epoch %d/%d loss %.6f", cfg.stage, epoch, cfg.epochs, joint / len(data))
        if epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs:
            if on_checkpoint is not None:
                on_checkpoint(epoch, states)
            if val is not None:
                score = mean_f1(states, b, val, cfg)
                if best is None or score > best[0]:
                    best = (score, [ps.clone() for ps in states])
                    report.best_epoch, report.best_val_f1 = epoch, score
    report.backbone_digest_after = b.digest()
    report.wall_clock_s = time.perf_counter() - t0
    if report.backbone_digest_after != report.backbone_digest_before:
        raise TrainError("backbone parameters changed during training")
    if best is not None:
        report.best_states = best[1]
    return report


def train_stage1(
    state: PromptState,
    data: DatasetSplit,
    b: BackboneAdapter,
    cfg: TrainConfig,
    val: DatasetSplit | None = None,
    on_checkpoint: Callback | None = None,
) -> tuple[PromptState, TrainReport]:
    """Tune one level's prompts in place on that level's loss alone."""
    if cfg.stage != 1:
        raise TrainError(f"train_stage1 needs a stage-1 config, got stage {cfg.stage}")
    report = _run([state], data, b, cfg, lambda losses: losses[0], val, on_checkpoint)
    return state, report


def train_stage2(
    states: Sequence[PromptState],
    data: DatasetSplit,
    b: BackboneAdapter,
    cfg: TrainConfig,
    val: DatasetSplit | None = None,
    on_checkpoint: Callback | None = None,
) -> tuple[list[PromptState], TrainReport]:
    """Jointly tune all three levels' prompts on the weighted sum of their losses."""
    if cfg.stage != 2:
        raise TrainError(f"train_stage2 needs a stage-2 config, got stage {cfg.stage}")
    states = list(states)
    if len(states) != 3 or any(s is None for s in states):
        raise TrainError("stage 2 needs the three stage-1 prompt states")
    if [s.level_index for s in states] != [1, 2, 3]:
        raise TrainError(f"stage-2 states must be levels 1, 2, 3 in order, got {[s.level_index for s in states]}")
    weights = StageTwoConfig(tuple(cfg.lambdas), cfg.allow_unnormalized)
    report = _run(states, data, b, cfg, lambda losses: stage2_loss(*losses, weights), val, on_checkpoint)
    return states, report
