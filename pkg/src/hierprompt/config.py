"""Run configuration: INI-style file with dotted keys, overridable from the command line.

Both spellings are accepted and mean the same key::

    train.stage1.lr0 = 0.002

    [train.stage1]
    lr0 = 0.002
"""

from __future__ import annotations

import configparser
import hashlib
from pathlib import Path
from typing import Any, Iterable

from hierprompt.loss import ASLConfig
from hierprompt.trainer import TrainConfig

_ROOT = "__root__"

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "threads": 1,
    "data.source": "synthetic",
    "data.hierarchy": "",
    "data.train": "",
    "data.val": "",
    "data.test": "",
    "data.synthetic.seed": 0,
    "data.synthetic.n_l1": 12,
    "data.synthetic.n_l2": 6,
    "data.synthetic.n_l3": 3,
    "data.synthetic.d": 64,
    "data.synthetic.regions": 4,
    "data.synthetic.noise_sigma": 0.1,
    "data.synthetic.labels_min": 1,
    "data.synthetic.labels_max": 3,
    "data.synthetic.n_train": 500,
    "data.synthetic.n_val": 100,
    "data.synthetic.n_test": 200,
    "backbone.name": "synthetic",
    "backbone.factory": "",
    "backbone.path": "",
    "backbone.seed": 0,
    "backbone.d_tok": 512,
    "backbone.vocab_size": 4096,
    "backbone.logit_scale": 100.0,
    "prompt.m_pos": 16,
    "prompt.m_neg": 16,
    "prompt.init_std": 0.02,
    "prompt.agg_scale": "",
    "loss.gamma_pos": 1.0,
    "loss.gamma_neg": 2.0,
    "loss.margin": 0.05,
    "loss.eps": 1e-8,
    "train.batch_size": 32,
    "train.momentum": 0.9,
    "train.weight_decay": 0.0,
    "train.checkpoint_every": 10,
    "train.stage1.epochs": 110,
    "train.stage1.lr0": 0.002,
    "train.stage2.epochs": 60,
    "train.stage2.lr0": 0.001,
    "train.stage2.lambda1": 0.6,
    "train.stage2.lambda2": 0.25,
    "train.stage2.lambda3": 0.15,
    "train.allow_unnormalized_lambda": False,
    "eval.tau": 0.5,
}


class ConfigError(ValueError):
    pass


def _coerce(key: str, raw: str) -> Any:
    default = DEFAULTS[key]
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r} (expected {type(default).__name__})") from None
    return raw


class RunConfig:
    def __init__(self, values: dict[str, Any] | None = None):
        self.values = dict(DEFAULTS)
        self.source: str | None = None
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, value: Any) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = _coerce(key, value) if isinstance(value, str) else value

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
        parser.optionxform = str  # keep key case
        try:
            parser.read_string(f"[{_ROOT}]\n" + path.read_text(encoding="utf-8"), source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        cfg = cls()
        for section in parser.sections():
            for key, value in parser.items(section):
                full = key if section == _ROOT else f"{section}.{key}"
                cfg.set(full, value)
        cfg.source = str(path)
        return cfg

    def apply_overrides(self, pairs: Iterable[str]) -> None:
        for pair in pairs:
            key, sep, value = pair.partition("=")
            if not sep:
                raise ConfigError(f"override must be key=value, got {pair!r}")
            self.set(key.strip(), value)

    def section(self, prefix: str) -> dict[str, Any]:
        prefix = prefix + "."
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}

    def to_dict(self) -> dict[str, Any]:
        return dict(sorted(self.values.items()))

    def lambdas(self) -> tuple[float, float, float]:
        return (
            self["train.stage2.lambda1"],
            self["train.stage2.lambda2"],
            self["train.stage2.lambda3"],
        )

    def agg_scale(self) -> float | None:
        v = self["prompt.agg_scale"]
        return None if v in ("", None) else float(v)

    def asl(self) -> ASLConfig:
        return ASLConfig(
            self["loss.gamma_pos"], self["loss.gamma_neg"], self["loss.margin"], self["loss.eps"]
        )

    def train_config(self, stage: int) -> TrainConfig:
        return TrainConfig(
            stage=stage,
            epochs=self[f"train.stage{stage}.epochs"],
            lr0=self[f"train.stage{stage}.lr0"],
            batch_size=self["train.batch_size"],
            momentum=self["train.momentum"],
            weight_decay=self["train.weight_decay"],
            seed=self["seed"],
            lambdas=self.lambdas(),
            allow_unnormalized=self["train.allow_unnormalized_lambda"],
            checkpoint_every=self["train.checkpoint_every"],
            tau=self["eval.tau"],
            agg_scale=self.agg_scale(),
            asl=self.asl(),
        )


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
