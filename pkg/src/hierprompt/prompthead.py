"""Dual learnable-prompt head: per-class positive/negative contexts over a frozen encoder."""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from hierprompt.backbone import DTYPE, BackboneAdapter, hash_tokenize
from hierprompt.hierarchy import LabelSpace

CHECKPOINT_FORMAT = "hierprompt.prompt_state"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class PromptState:
    level_index: int
    labels: tuple[str, ...]
    pos_ctx: torch.Tensor  # (N, M+, d_tok)
    neg_ctx: torch.Tensor  # (N, M-, d_tok)
    name_token_ids: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        n = len(self.labels)
        if self.pos_ctx.shape[0] != n or self.neg_ctx.shape[0] != n:
            raise ValueError("context arrays must have one row per class")
        if self.pos_ctx.shape[2] != self.neg_ctx.shape[2]:
            raise ValueError("positive and negative contexts disagree on d_tok")
        if len(self.name_token_ids) != n:
            raise ValueError("need class-name tokens for every class")

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    @property
    def d_tok(self) -> int:
        return int(self.pos_ctx.shape[2])

    def parameters(self) -> list[torch.Tensor]:
        return [self.pos_ctx, self.neg_ctx]

    def clone(self) -> "PromptState":
        return PromptState(
            self.level_index,
            self.labels,
            self.pos_ctx.detach().clone().requires_grad_(True),
            self.neg_ctx.detach().clone().requires_grad_(True),
            self.name_token_ids,
        )


@dataclass
class LevelScores:
    level_index: int
    labels: tuple[str, ...]
    logits_pos: torch.Tensor  # (B, N)
    logits_neg: torch.Tensor  # (B, N)

    @property
    def probs(self) -> torch.Tensor:
        # pairwise softmax exp(l+)/(exp(l+)+exp(l-)), written in its stable form
        return torch.sigmoid(self.logits_pos - self.logits_neg)


def init_prompts(
    space: LabelSpace,
    m_pos: int = 16,
    m_neg: int = 16,
    d_tok: int = 512,
    seed: int = 0,
    backbone: BackboneAdapter | None = None,
    std: float = 0.02,
) -> PromptState:
    if m_pos < 1 or m_neg < 1:
        raise ValueError("context lengths must be >= 1")
    g = torch.Generator().manual_seed(seed)
    n = len(space)
    pos = torch.randn((n, m_pos, d_tok), generator=g, dtype=DTYPE) * std
    neg = torch.randn((n, m_neg, d_tok), generator=g, dtype=DTYPE) * std
    tok = backbone.tokenize if backbone is not None else (lambda s: hash_tokenize(s, 4096))
    names = tuple(tuple(tok(lab)) for lab in space.labels)
    return PromptState(
        space.level_index, space.labels, pos.requires_grad_(True), neg.requires_grad_(True), names
    )


def count_trainable_params(ps: PromptState) -> int:
    n, m_pos, d_tok = ps.pos_ctx.shape
    return n * (m_pos + ps.neg_ctx.shape[1]) * d_tok


def param_count(n_classes: int, m_pos: int = 16, m_neg: int = 16, d_tok: int = 512) -> int:
    return n_classes * (m_pos + m_neg) * d_tok


def text_features(ps: PromptState, b: BackboneAdapter) -> tuple[torch.Tensor, torch.Tensor]:
    """Encode [context ⊕ class-name tokens] for every class and both polarities -> two (N, d)."""
    d, d_tok, _ = b.dims()
    if d_tok != ps.d_tok:
        raise ValueError(f"prompt d_tok {ps.d_tok} does not match backbone d_tok {d_tok}")
    pos, neg = [], []
    for c, ids in enumerate(ps.name_token_ids):
        name = b.embed_tokens(ids) if ids else ps.pos_ctx.new_zeros((0, d_tok))
        pos.append(b.encode_text(torch.cat([ps.pos_ctx[c], name])))
        neg.append(b.encode_text(torch.cat([ps.neg_ctx[c], name])))
    return torch.stack(pos), torch.stack(neg)


def forward_features(
    ps: PromptState,
    b: BackboneAdapter,
    feats: torch.Tensor,
    agg_scale: float | None = None,
) -> LevelScores:
    """Score a batch of pre-encoded images, feats of shape (B, R, d)."""
    d, _, _ = b.dims()
    if feats.ndim != 3 or feats.shape[2] != d:
        raise ValueError(f"expected (B, R, {d}) region features, got {tuple(feats.shape)}")
    scale = b.logit_scale()
    agg_scale = scale if agg_scale is None else agg_scale
    t_pos, t_neg = text_features(ps, b)
    regions = F.normalize(feats, dim=-1, eps=1e-12)
    s_pos = torch.einsum("brd,nd->bnr", regions, t_pos)
    s_neg = torch.einsum("brd,nd->bnr", regions, t_neg)
    # one spatial attention per class, taken from the positive branch, shared by both
    w = torch.softmax(agg_scale * s_pos, dim=-1)
    e_pos = (w * s_pos).sum(-1)
    e_neg = (w * s_neg).sum(-1)
    return LevelScores(ps.level_index, ps.labels, scale * e_pos, scale * e_neg)


def forward(ps: PromptState, b: BackboneAdapter, image_refs: Sequence, agg_scale: float | None = None) -> LevelScores:
    return forward_features(ps, b, b.encode_images(image_refs), agg_scale)


def threshold(scores: LevelScores, tau: float = 0.5) -> list[frozenset[str]]:
    """Labels with probability strictly above ``tau``, one set per sample."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    p = scores.probs.detach().cpu().numpy()
    return [frozenset(scores.labels[j] for j in np.flatnonzero(row > tau)) for row in p]


def _pack(t: torch.Tensor) -> dict:
    arr = np.ascontiguousarray(t.detach().cpu().numpy().astype("<f8"))
    return {"shape": list(arr.shape), "dtype": "<f8", "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def _unpack(obj: dict) -> torch.Tensor:
    arr = np.frombuffer(base64.b64decode(obj["data"]), dtype=obj["dtype"]).reshape(obj["shape"])
    return torch.from_numpy(arr.astype(np.float64))


def state_to_dict(ps: PromptState, config: dict | None = None) -> dict:
    space = LabelSpace(ps.level_index, ps.labels)
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "level_index": ps.level_index,
        "labels_digest": space.digest(),
        "labels": list(ps.labels),
        "name_token_ids": [list(x) for x in ps.name_token_ids],
        "pos_ctx": _pack(ps.pos_ctx),
        "neg_ctx": _pack(ps.neg_ctx),
        "config": config or {},
    }


def save_prompt_state(ps: PromptState, path: str | Path, config: dict | None = None) -> None:
    Path(path).write_text(json.dumps(state_to_dict(ps, config), sort_keys=True, indent=1) + "\n")


def load_prompt_state(path: str | Path, space: LabelSpace | None = None) -> PromptState:
    """Load a checkpoint; when ``space`` is given its class-list digest must match."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a JSON checkpoint ({exc.msg})") from None
    if obj.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: unrecognized checkpoint format {obj.get('format')!r}")
    if obj.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {obj.get('version')!r}")
    labels = tuple(obj["labels"])
    if LabelSpace(obj["level_index"], labels).digest() != obj["labels_digest"]:
        raise CheckpointError(f"{path}: stored class list does not match its digest")
    if space is not None:
        if space.level_index != obj["level_index"]:
            raise CheckpointError(
                f"{path}: checkpoint is for level {obj['level_index']}, expected {space.level_index}"
            )
        if space.digest() != obj["labels_digest"]:
            raise CheckpointError(
                f"{path}: class-list digest mismatch; checkpoint was trained on a different hierarchy"
            )
    return PromptState(
        obj["level_index"],
        labels,
        _unpack(obj["pos_ctx"]).requires_grad_(True),
        _unpack(obj["neg_ctx"]).requires_grad_(True),
        tuple(tuple(x) for x in obj["name_token_ids"]),
    )
