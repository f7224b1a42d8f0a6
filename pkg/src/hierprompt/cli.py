"""Command-line entry point: ``hierprompt <command> ...``.

Exit codes: 0 success, 1 validation or domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from hierprompt import __version__
from hierprompt.backbone import BackboneError
from hierprompt.config import ConfigError, RunConfig, file_digest
from hierprompt.data import DataError, generate_synthetic, load_annotations, write_annotations
from hierprompt.experiment import build_environment, evaluate_states, fresh_states, synthetic_spec
from hierprompt.hierarchy import HierarchyError, hierarchy_stats, load_hierarchy
from hierprompt.loss import LossError, StageTwoConfig
from hierprompt.metrics import AVERAGING, MetricsError, qualitative_diff
from hierprompt.prompthead import CheckpointError, load_prompt_state, save_prompt_state
from hierprompt.reporting import (
    read_predictions,
    render_diff,
    write_json,
    write_loss_csv,
    write_metrics_csv,
    write_per_class_csv,
    write_predictions,
)
from hierprompt.trainer import TrainError, train_stage1, train_stage2
from hierprompt.zeroshot import ZeroShotError, evaluate_zeroshot, load_aliases, load_predictions

log = logging.getLogger("hierprompt")

DOMAIN_ERRORS = (
    HierarchyError,
    DataError,
    CheckpointError,
    LossError,
    TrainError,
    MetricsError,
    ZeroShotError,
    BackboneError,
)


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    cfg.apply_overrides(args.set or [])
    if args.seed is not None:
        cfg.set("seed", args.seed)
    if getattr(args, "allow_unnormalized_lambda", False):
        cfg.set("train.allow_unnormalized_lambda", True)
    return cfg


def _config_inputs(cfg: RunConfig) -> dict:
    if cfg.source is None:
        return {}
    return {"config": {"file": Path(cfg.source).name, "sha256": file_digest(cfg.source)}}


def _run_metadata(cfg: RunConfig) -> dict:
    return {
        "version": __version__,
        "tau": cfg["eval.tau"],
        "averaging": AVERAGING,
        "asl_reduction": "mean over classes, then over samples",
        "context_lengths": [cfg["prompt.m_pos"], cfg["prompt.m_neg"]],
        "logit_scale": cfg["backbone.logit_scale"],
        "agg_scale": cfg.agg_scale() if cfg.agg_scale() is not None else cfg["backbone.logit_scale"],
    }


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_hierarchy(args) -> int:
    h = load_hierarchy(args.path)
    stats = hierarchy_stats(h)
    if args.action == "validate":
        s1, s2, s3 = stats["level_sizes"]
        print(f"OK {args.path}: {s1} / {s2} / {s3} labels, totality, parent references and acyclicity hold")
        return 0
    if args.json:
        print(json.dumps(stats))
    else:
        print("Level of the hierarchy\t1\t2\t3")
        print("Number of ingredients\t" + "\t".join(str(x) for x in stats["level_sizes"]))
        print(" / ".join(str(x) for x in stats["level_sizes"]))
    return 0


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    h, splits, _ = generate_synthetic(synthetic_spec(cfg))
    (out / "hierarchy.tsv").write_text(
        "# synthetic hierarchy, seed %d\n" % cfg["data.synthetic.seed"] + h.to_tsv(), encoding="utf-8"
    )
    for split in splits:
        write_annotations(split, out / f"{split.name}.jsonl")
    print(f"wrote synthetic hierarchy {h.sizes()} and splits to {out}")
    return 0


def _save_states(states, directory: Path, cfg: RunConfig) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for ps in states:
        save_prompt_state(ps, directory / f"level{ps.level_index}.json", cfg.to_dict())


def _load_states(directory: Path, env) -> list:
    return [
        load_prompt_state(directory / f"level{lvl}.json", env.hierarchy.level(lvl)) for lvl in (1, 2, 3)
    ]


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    if args.stage == 2:
        StageTwoConfig(cfg.lambdas(), cfg["train.allow_unnormalized_lambda"])
        if not args.init:
            raise CheckpointError("stage 2 needs --init pointing at stage-1 checkpoints")
        for lvl in (1, 2, 3):
            if not (Path(args.init) / f"level{lvl}.json").exists():
                raise CheckpointError(f"missing stage-1 checkpoint {Path(args.init) / f'level{lvl}.json'}")
    env = build_environment(cfg)
    if "train" not in env.splits:
        raise DataError("no training split configured")
    train, val = env.splits["train"], env.splits.get("val")
    if val is not None and len(val) == 0:
        val = None
    tcfg = cfg.train_config(args.stage)
    inputs = dict(env.inputs, **_config_inputs(cfg))

    def checkpoint(epoch, states):
        _save_states(states, out / f"epoch_{epoch:03d}", cfg)

    reports = {}
    if args.stage == 1:
        states = fresh_states(env, cfg)
        best = []
        for ps in states:
            _, rep = train_stage1(ps, train, env.backbone, tcfg, val, checkpoint)
            reports[str(ps.level_index)] = rep
            best += rep.best_states or []
        loss_traces = {int(k): r.epoch_losses[int(k)] for k, r in reports.items()}
        joint = None
    else:
        init_dir = Path(args.init)
        states = _load_states(init_dir, env)
        for lvl in (1, 2, 3):
            inputs[f"init.level{lvl}"] = {
                "file": f"level{lvl}.json",
                "sha256": file_digest(init_dir / f"level{lvl}.json"),
            }
        states, rep = train_stage2(states, train, env.backbone, tcfg, val, checkpoint)
        reports["joint"] = rep
        best = rep.best_states or []
        loss_traces, joint = rep.epoch_losses, rep.joint_losses
    _save_states(states, out, cfg)
    if best:
        _save_states(best, out / "best", cfg)
    write_loss_csv(loss_traces, joint, out / "losses.csv")
    write_json(
        out / "train_report.json",
        {
            "stage": args.stage,
            "reports": {k: r.to_dict() for k, r in reports.items()},
            "config": cfg.to_dict(),
            "inputs": inputs,
            "metadata": _run_metadata(cfg),
        },
    )
    write_json(out / "timing.json", {k: r.wall_clock_s for k, r in reports.items()})
    print(f"stage {args.stage}: wrote checkpoints level1..3.json to {out}")
    return 0


def _compare(levels: dict, baseline_path: Path) -> dict:
    """Signed per-level IoU change against an earlier eval, in percentage points."""
    try:
        base = json.loads(baseline_path.read_text(encoding="utf-8"))["levels"]
    except (OSError, ValueError, KeyError) as exc:
        raise MetricsError(f"cannot read baseline results {baseline_path}: {exc}") from None
    if set(base) != set(levels):
        raise MetricsError(f"baseline levels {sorted(base)} differ from {sorted(levels)}")
    delta = {k: round(levels[k]["IOU"] - base[k]["IOU"], 2) for k in sorted(levels)}
    return {
        "metric": "IOU",
        "baseline_IOU": {k: base[k]["IOU"] for k in sorted(base)},
        "delta": delta,
        "delta_avg": round(sum(delta.values()) / len(delta), 2),
    }


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    env = build_environment(cfg)
    if args.split not in env.splits:
        raise DataError(f"split {args.split!r} is not configured")
    ckpt = Path(args.checkpoints)
    states = _load_states(ckpt, env)
    split = env.splits[args.split]
    reports, preds = evaluate_states(states, env, split, cfg)
    inputs = dict(env.inputs, **_config_inputs(cfg))
    for lvl in (1, 2, 3):
        inputs[f"checkpoint.level{lvl}"] = {
            "file": f"level{lvl}.json",
            "sha256": file_digest(ckpt / f"level{lvl}.json"),
        }
    results = {
        "kind": "eval",
        "split": args.split,
        "levels": {str(k): r.to_dict() for k, r in reports.items()},
        "metadata": _run_metadata(cfg),
        "config": cfg.to_dict(),
        "inputs": inputs,
    }
    if args.compare:
        results["compare"] = _compare(results["levels"], Path(args.compare))
        inputs["baseline"] = {"file": Path(args.compare).name, "sha256": file_digest(args.compare)}
    write_json(out / "results.json", results)
    write_metrics_csv(reports, out / "metrics.csv")
    write_per_class_csv(reports, out / "per_class_f1.csv")
    write_predictions(split.ids, preds, out / "predictions.jsonl")
    print((out / "metrics.csv").read_text(), end="")
    if args.compare:
        print(f"IoU delta vs baseline (avg): {results['compare']['delta_avg']:+.2f}")
    return 0


def cmd_zeroshot(args) -> int:
    out = _out_dir(args)
    h = load_hierarchy(args.hierarchy)
    data = load_annotations(args.annotations, h)
    aliases = load_aliases(args.aliases) if args.aliases else None
    preds = load_predictions(args.predictions, h, aliases, args.model_name)
    result = evaluate_zeroshot(preds, data, h)
    inputs = {
        "hierarchy": {"file": Path(args.hierarchy).name, "sha256": file_digest(args.hierarchy)},
        "annotations": {"file": Path(args.annotations).name, "sha256": file_digest(args.annotations)},
        "predictions": {"file": Path(args.predictions).name, "sha256": file_digest(args.predictions)},
    }
    if args.aliases:
        inputs["aliases"] = {"file": Path(args.aliases).name, "sha256": file_digest(args.aliases)}
    write_json(
        out / "results.json",
        {
            "kind": "zeroshot",
            "model": result.model_name,
            "unmatched_labels": result.unmatched_count,
            "unmatched": {k: v for k, v in sorted(preds.unmatched.items())},
            "levels": {str(k): r.to_dict() for k, r in result.reports.items()},
            "metadata": {"averaging": AVERAGING, "version": __version__},
            "inputs": inputs,
        },
    )
    write_metrics_csv(result.reports, out / "metrics.csv")
    write_per_class_csv(result.reports, out / "per_class_f1.csv")
    print((out / "metrics.csv").read_text(), end="")
    print(f"unmatched labels: {result.unmatched_count}")
    return 0


def cmd_diff(args) -> int:
    out = _out_dir(args)
    h = load_hierarchy(args.hierarchy)
    data = load_annotations(args.annotations, h)
    base, new = read_predictions(args.base), read_predictions(args.new)
    ids = data.ids
    for name, preds in (("base", base), ("new", new)):
        if set(preds) != set(ids):
            raise MetricsError(f"{name} predictions are not aligned with the annotations")
    levels = sorted(set.intersection(*(set(p) for p in list(base.values()) + list(new.values()))))
    records = []
    for lvl in levels:
        records += qualitative_diff(
            [base[i][lvl] for i in ids],
            [new[i][lvl] for i in ids],
            data.targets(lvl),
            ids=ids,
            level=lvl,
            parent=lambda lab, lvl=lvl: h.parent(lab, lvl) if lab in h.level(lvl) else None,
        )
    write_json(out / "diff.json", {"records": [r.to_dict() for r in records if not r.empty]})
    text = render_diff(records)
    (out / "diff.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hierprompt", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def run_flags(sp, out=True):
        sp.add_argument("--config", help="INI-style config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--seed", type=int)
        if out:
            sp.add_argument("--out", required=True)

    sp = sub.add_parser("hierarchy", help="validate a hierarchy file or print level sizes")
    sp.add_argument("action", choices=["validate", "stats"])
    sp.add_argument("path")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_hierarchy)

    sp = sub.add_parser("synth", help="export the synthetic hierarchy and annotations")
    run_flags(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="stage-1 or stage-2 prompt tuning")
    sp.add_argument("--stage", type=int, choices=[1, 2], required=True)
    sp.add_argument("--init", help="directory with stage-1 level{1,2,3}.json (stage 2)")
    sp.add_argument("--allow-unnormalized-lambda", action="store_true")
    run_flags(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="score checkpoints on a split")
    sp.add_argument("--checkpoints", required=True)
    sp.add_argument("--split", default="test", choices=["train", "val", "test"])
    sp.add_argument("--compare", metavar="RESULTS_JSON", help="earlier eval results to report IoU deltas against")
    run_flags(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("zeroshot", help="score external fine-grained predictions at all levels")
    sp.add_argument("--predictions", required=True)
    sp.add_argument("--annotations", required=True)
    sp.add_argument("--hierarchy", required=True)
    sp.add_argument("--aliases")
    sp.add_argument("--model-name")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_zeroshot)

    sp = sub.add_parser("diff", help="per-sample added/removed predictions between two runs")
    sp.add_argument("--base", required=True)
    sp.add_argument("--new", required=True)
    sp.add_argument("--annotations", required=True)
    sp.add_argument("--hierarchy", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_diff)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"hierprompt: usage error: {exc}", file=sys.stderr)
        return 2
    except DOMAIN_ERRORS as exc:
        print(f"hierprompt: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
