"""The eleven acceptance criteria, each recorded as one PASS/FAIL line.

Lines are printed as the tests run (visible with ``-s``) and collected again
in the "acceptance criteria" section of the terminal summary.
"""

import json
import time

import pytest

from conftest import ACCEPTANCE, DEMO_HIERARCHY, SYNTHETIC_CONFIG
from hierprompt.cli import main
from hierprompt.hierarchy import LabelSpace
from hierprompt.prompthead import count_trainable_params, init_prompts
from hierprompt.reporting import format_params
from test_cli import table_one_file
from test_loss import _grad_check
from test_metrics import oracle_mismatches, table_f1_worst
from test_trainer import stage2_degeneracy
from test_zeroshot import invariant_violations, sibling_corruption
from toy import synthetic_setup


def record(name, ok, detail):
    ACCEPTANCE.append((name, bool(ok), detail))
    print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, detail


def run_pipeline(out):
    cfg = ["--config", str(SYNTHETIC_CONFIG), "--seed", "0"]
    steps = [
        ["train", "--stage", "1", "--out", str(out / "stage1")],
        ["eval", "--checkpoints", str(out / "stage1"), "--out", str(out / "eval1")],
        ["train", "--stage", "2", "--init", str(out / "stage1"), "--out", str(out / "stage2")],
        ["eval", "--checkpoints", str(out / "stage2"), "--compare", str(out / "eval1" / "results.json"),
         "--out", str(out / "eval2")],
    ]
    for argv in steps:
        code = main(argv + cfg)
        if code != 0:
            raise RuntimeError(f"{argv[0]} exited with {code}")
    return out


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    t0 = time.perf_counter()
    a = run_pipeline(tmp_path_factory.mktemp("run_a"))
    elapsed = time.perf_counter() - t0
    b = run_pipeline(tmp_path_factory.mktemp("run_b"))
    return a, b, elapsed


def levels(path):
    return json.loads(path.read_text())["levels"]


def test_c01_table_identities():
    worst = table_f1_worst()
    record("1 table F1 identities", worst <= 0.01, f"nine (P, R) pairs, worst |F1 - printed| = {worst:.4f} <= 0.01")


def test_c02_parameter_counts():
    got = []
    for n in (353, 138, 13):
        ps = init_prompts(LabelSpace.from_labels(1, [f"c{i}" for i in range(n)]), 16, 16, 512)
        got.append(count_trainable_params(ps))
    shown = [format_params(x) for x in got]
    record("2 parameter counts", shown == ["5.8M", "2.3M", "0.2M"], f"{got} -> {' / '.join(shown)}")


def test_c03_level_sizes(tmp_path, capsys):
    assert main(["hierarchy", "stats", str(DEMO_HIERARCHY)]) == 0
    demo = capsys.readouterr().out
    assert main(["hierarchy", "stats", str(table_one_file(tmp_path / "full.tsv"))]) == 0
    full = capsys.readouterr().out
    ok = "26 / 18 / 8" in demo and "353 / 138 / 13" in full
    record("3 hierarchy stats", ok, "demo -> 26 / 18 / 8; full-size file -> 353 / 138 / 13")


def test_c04_metric_oracle():
    t0 = time.perf_counter()
    bad = oracle_mismatches(250, seed=4)
    dt = time.perf_counter() - t0
    record("4 metric oracle", bad == 0 and dt < 5, f"250 random instances, {bad} mismatches, {dt:.2f}s")


def test_c05_gradient():
    t0 = time.perf_counter()
    _, rel = _grad_check(scale=5.0)
    dt = time.perf_counter() - t0
    record("5 gradient check", rel < 1e-4 and dt < 30, f"max relative error {rel:.2e} < 1e-4, {dt:.2f}s")


def test_c06_stage2_degeneracy():
    gap, moved, changed = stage2_degeneracy(synthetic_setup(n_train=64))
    ok = changed > 0 and gap <= 1e-12 and moved == 0.0
    record("6 stage-2 degeneracy", ok, f"level-1 gap {gap:.1e} <= 1e-12, level-2/3 movement {moved}")


def test_c07_frozen_backbone(pipeline):
    a, _, _ = pipeline
    pairs = []
    for stage in ("stage1", "stage2"):
        for rep in json.loads((a / stage / "train_report.json").read_text())["reports"].values():
            pairs.append((rep["backbone_digest_before"], rep["backbone_digest_after"]))
    ok = len(pairs) == 4 and all(x == y for x, y in pairs)
    record("7 frozen backbone", ok, f"{len(pairs)} training runs, digest unchanged in each")


def test_c08_synthetic_learning(pipeline):
    a, _, elapsed = pipeline
    res = levels(a / "eval1" / "results.json")
    f1 = {k: v["F1"] for k, v in res.items()}
    epochs = json.loads((a / "stage1" / "train_report.json").read_text())["config"]["train.stage1.epochs"]
    ok = epochs <= 50 and all(v >= 90 for v in f1.values()) and f1["3"] >= f1["1"] and elapsed < 300
    detail = f"{epochs} epochs, test F1 {f1['1']} / {f1['2']} / {f1['3']}, pipeline {elapsed:.0f}s"
    record("8 synthetic learning", ok, detail)


def test_c09_stage2_non_degradation(pipeline):
    a, _, _ = pipeline
    one, two = levels(a / "eval1" / "results.json"), levels(a / "eval2" / "results.json")
    mean1 = sum(v["IOU"] for v in one.values()) / 3
    mean2 = sum(v["IOU"] for v in two.values()) / 3
    cmp = json.loads((a / "eval2" / "results.json").read_text())["compare"]
    ok = mean2 >= mean1 - 1.0 and "delta_avg" in cmp
    record("9 stage-2 non-degradation", ok, f"mean IoU {mean1:.2f} -> {mean2:.2f}, recorded delta avg {cmp['delta_avg']:+.2f}")


def test_c10_zeroshot_invariants(demo_hierarchy):
    bad = invariant_violations(demo_hierarchy, n=1000, seed=10)
    f1 = sibling_corruption(demo_hierarchy)
    ok = bad == 0 and f1[2] > f1[1] and f1[3] > f1[1]
    record("10 zero-shot invariants", ok, f"1000 pairs, {bad} violations; corrupted F1 {f1[1]:.2f} / {f1[2]:.2f} / {f1[3]:.2f}")


def test_c11_reproducibility(pipeline):
    a, b, _ = pipeline
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file() and p.name != "timing.json")
    differ = [str(f) for f in files if (a / f).read_bytes() != (b / f).read_bytes()]
    same_set = files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file() and p.name != "timing.json")
    ok = same_set and not differ and len(files) > 0
    record("11 reproducibility", ok, f"{len(files)} checkpoint and results files, {len(differ)} differ")
