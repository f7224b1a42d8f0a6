"""Frozen vision-language encoder interface and the deterministic synthetic encoder."""

from __future__ import annotations

import abc
import hashlib
import importlib
import zlib
from typing import Callable, Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from hierprompt.data import PrototypeBank

DTYPE = torch.float64


class BackboneError(RuntimeError):
    pass


class BackboneAdapter(abc.ABC):
    """What the prompt head needs from a frozen encoder.

    Implementations must be deterministic and must never expose their
    parameters to an optimizer.
    """

    @abc.abstractmethod
    def encode_image(self, image_ref) -> torch.Tensor:
        """Region features of one image, shape (R, d), no pooling."""

    def encode_images(self, image_refs: Sequence) -> torch.Tensor:
        return torch.stack([self.encode_image(r) for r in image_refs])

    @abc.abstractmethod
    def tokenize(self, text: str) -> list[int]:
        ...

    @abc.abstractmethod
    def embed_tokens(self, token_ids: Sequence[int]) -> torch.Tensor:
        """Token-embedding lookup, shape (M, d_tok)."""

    @abc.abstractmethod
    def encode_text(self, token_embeddings: torch.Tensor) -> torch.Tensor:
        """Unit-norm d-vector for a (M, d_tok) embedding sequence; differentiable in the input."""

    @abc.abstractmethod
    def dims(self) -> tuple[int, int, int]:
        """(d, d_tok, R)."""

    @abc.abstractmethod
    def logit_scale(self) -> float:
        ...

    @abc.abstractmethod
    def parameter_arrays(self) -> Iterable[tuple[str, np.ndarray]]:
        """Every frozen parameter, in a stable order; used for the integrity digest."""

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, arr in self.parameter_arrays():
            arr = np.ascontiguousarray(arr)
            h.update(name.encode())
            h.update(str(arr.dtype).encode())
            h.update(str(arr.shape).encode())
            h.update(arr.tobytes())
        return h.hexdigest()


def hash_tokenize(text: str, vocab_size: int) -> list[int]:
    # crc32 is stable across processes, unlike hash()
    return [zlib.crc32(w.encode("utf-8")) % vocab_size for w in text.lower().split()]


class SyntheticBackbone(BackboneAdapter):
    """Stand-in encoder: stored region features and a mean-pool + projection text tower.

    encode_text(seq) = normalize(P @ mean(seq)) with P fixed at construction.
    """

    def __init__(
        self,
        bank: PrototypeBank,
        seed: int = 0,
        d_tok: int = 512,
        vocab_size: int = 4096,
        scale: float = 100.0,
        token_std: float = 0.02,
    ):
        if scale <= 0:
            raise BackboneError("logit_scale must be positive")
        self.bank = bank
        self.seed = seed
        self._scale = float(scale)
        self.vocab_size = vocab_size
        first = next(iter(bank.features.values()))
        self._R, self._d = first.shape
        self._d_tok = d_tok
        rng = np.random.default_rng([seed, 0x7E27])
        self._table_np = token_std * rng.standard_normal((vocab_size, d_tok))
        self._proj_np = rng.standard_normal((self._d, d_tok)) / np.sqrt(d_tok)
        self._table = torch.from_numpy(self._table_np.copy())
        self._proj = torch.from_numpy(self._proj_np.copy())
        self._feats = {k: torch.from_numpy(v.copy()) for k, v in bank.features.items()}

    def encode_image(self, image_ref) -> torch.Tensor:
        try:
            return self._feats[image_ref]
        except KeyError:
            raise BackboneError(f"synthetic backbone cannot resolve image {image_ref!r}") from None

    def tokenize(self, text: str) -> list[int]:
        return hash_tokenize(text, self.vocab_size)

    def embed_tokens(self, token_ids: Sequence[int]) -> torch.Tensor:
        return self._table[torch.as_tensor(list(token_ids), dtype=torch.long)]

    def encode_text(self, token_embeddings: torch.Tensor) -> torch.Tensor:
        if token_embeddings.ndim != 2 or token_embeddings.shape[0] == 0:
            raise BackboneError("encode_text needs a non-empty (M, d_tok) sequence")
        if token_embeddings.shape[1] != self._d_tok:
            raise BackboneError(
                f"token dim {token_embeddings.shape[1]} != backbone d_tok {self._d_tok}"
            )
        pooled = token_embeddings.mean(dim=0)
        return F.normalize(self._proj @ pooled, dim=0, eps=1e-12)

    def dims(self) -> tuple[int, int, int]:
        return self._d, self._d_tok, self._R

    def logit_scale(self) -> float:
        return self._scale

    def parameter_arrays(self):
        yield "token_table", self._table.numpy()
        yield "text_projection", self._proj.numpy()
        yield "prototypes", self.bank.prototypes
        for key in sorted(self._feats):
            yield f"features/{key}", self._feats[key].numpy()


_REGISTRY: dict[str, Callable[..., BackboneAdapter]] = {"synthetic": SyntheticBackbone}


def register_backbone(name: str, factory: Callable[..., BackboneAdapter]) -> None:
    _REGISTRY[name] = factory


def load_factory(spec: str) -> Callable[..., BackboneAdapter]:
    """Resolve an out-of-tree adapter given as ``package.module:callable``."""
    mod_name, _, attr = spec.partition(":")
    if not attr:
        raise BackboneError(f"adapter factory must look like 'module:callable', got {spec!r}")
    try:
        return getattr(importlib.import_module(mod_name), attr)
    except (ImportError, AttributeError) as exc:
        raise BackboneError(f"cannot load adapter factory {spec!r}: {exc}") from None


def make_backbone(name: str, **kwargs) -> BackboneAdapter:
    if name not in _REGISTRY:
        raise BackboneError(f"unknown backbone {name!r}; registered: {sorted(_REGISTRY)}")
    return _REGISTRY[name](**kwargs)
