"""Wire a RunConfig into hierarchy, splits, backbone and prompt states."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import torch

from hierprompt.backbone import BackboneAdapter, SyntheticBackbone, load_factory, make_backbone
from hierprompt.config import ConfigError, RunConfig, file_digest
from hierprompt.data import DatasetSplit, SyntheticSpec, generate_synthetic, load_annotations
from hierprompt.hierarchy import Hierarchy, load_hierarchy
from hierprompt.metrics import MetricsReport, evaluate, per_class_f1
from hierprompt.prompthead import PromptState, count_trainable_params, init_prompts
from hierprompt.trainer import predict


@dataclass
class Environment:
    hierarchy: Hierarchy
    splits: dict[str, DatasetSplit]
    backbone: BackboneAdapter
    inputs: dict[str, dict] = field(default_factory=dict)


def synthetic_spec(cfg: RunConfig) -> SyntheticSpec:
    s = cfg.section("data.synthetic")
    return SyntheticSpec(
        seed=s["seed"],
        n_l1=s["n_l1"],
        n_l2=s["n_l2"],
        n_l3=s["n_l3"],
        d=s["d"],
        regions=s["regions"],
        noise_sigma=s["noise_sigma"],
        labels_per_sample=(s["labels_min"], s["labels_max"]),
        split_sizes=(s["n_train"], s["n_val"], s["n_test"]),
    )


def _input(role_inputs: dict, role: str, path: str) -> None:
    role_inputs[role] = {"file": Path(path).name, "sha256": file_digest(path)}


def build_environment(cfg: RunConfig) -> Environment:
    torch.set_num_threads(max(1, cfg["threads"]))
    source = cfg["data.source"]
    if source == "synthetic":
        if cfg["backbone.name"] != "synthetic":
            raise ConfigError("synthetic data requires backbone.name = synthetic")
        h, (train, val, test), bank = generate_synthetic(synthetic_spec(cfg))
        b = SyntheticBackbone(
            bank,
            seed=cfg["backbone.seed"],
            d_tok=cfg["backbone.d_tok"],
            vocab_size=cfg["backbone.vocab_size"],
            scale=cfg["backbone.logit_scale"],
        )
        return Environment(h, {"train": train, "val": val, "test": test}, b)
    if source != "files":
        raise ConfigError(f"data.source must be 'synthetic' or 'files', got {source!r}")
    inputs: dict[str, dict] = {}
    if not cfg["data.hierarchy"]:
        raise ConfigError("data.hierarchy is required when data.source = files")
    h = load_hierarchy(cfg["data.hierarchy"])
    _input(inputs, "hierarchy", cfg["data.hierarchy"])
    splits = {}
    for name in ("train", "val", "test"):
        path = cfg[f"data.{name}"]
        if path:
            splits[name] = load_annotations(path, h, name)
            _input(inputs, f"annotations.{name}", path)
    options = cfg.section("backbone")
    factory_spec = options.pop("factory")
    name = options.pop("name")
    if factory_spec:
        b = load_factory(factory_spec)(options)
    elif name == "synthetic":
        # it resolves images from its generated bank, so it cannot serve annotation files
        raise ConfigError("the synthetic backbone only serves data.source = synthetic")
    else:
        b = make_backbone(name, **options)
    return Environment(h, splits, b, inputs)


def fresh_states(env: Environment, cfg: RunConfig, levels=(1, 2, 3)) -> list[PromptState]:
    _, d_tok, _ = env.backbone.dims()
    return [
        init_prompts(
            env.hierarchy.level(lvl),
            cfg["prompt.m_pos"],
            cfg["prompt.m_neg"],
            d_tok,
            seed=cfg["seed"] * 1000 + lvl,
            backbone=env.backbone,
            std=cfg["prompt.init_std"],
        )
        for lvl in levels
    ]


def evaluate_states(
    states: list[PromptState], env: Environment, split: DatasetSplit, cfg: RunConfig
) -> tuple[dict[int, MetricsReport], dict[int, list[frozenset[str]]]]:
    preds = predict(states, env.backbone, split, cfg["eval.tau"], cfg.agg_scale())
    reports = {}
    for ps in states:
        lvl = ps.level_index
        rep = evaluate(preds[lvl], split.targets(lvl), level_index=lvl, trainable_params=count_trainable_params(ps))
        rep.per_class_f1 = per_class_f1(preds[lvl], split.targets(lvl), ps.labels)
        reports[lvl] = rep
    return reports, preds
