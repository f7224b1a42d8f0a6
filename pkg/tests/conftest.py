from __future__ import annotations

from pathlib import Path

import pytest
import torch

from hierprompt.hierarchy import load_hierarchy

ROOT = Path(__file__).resolve().parents[1]
DEMO_HIERARCHY = ROOT / "data" / "demo_hierarchy.tsv"
SYNTHETIC_CONFIG = ROOT / "configs" / "synthetic.ini"

ACCEPTANCE: list[tuple[str, bool, str]] = []

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def demo_hierarchy():
    return load_hierarchy(DEMO_HIERARCHY)


@pytest.fixture
def write_tsv(tmp_path):
    def _write(rows, header="l1\tl2\tl3", name="h.tsv"):
        path = tmp_path / name
        path.write_text(header + "\n" + "\n".join("\t".join(r) for r in rows) + "\n", encoding="utf-8")
        return path

    return _write


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
