"""Validation/training error grids over finished runs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .runner import column, read_metrics

REDUCTIONS = ("final", "best")


@dataclass
class Cell:
    validation: float | None
    training: float | None
    missing: bool = False

    def text(self) -> str:
        if self.missing:
            return "N/A"
        f = lambda v: "nan" if v is None else f"{v:.3e}"
        return f"{f(self.validation)} / {f(self.training)}"


@dataclass
class TableReport:
    rows: list            # problem names
    cols: list            # method labels
    cells: dict           # (row, col) -> Cell
    warnings: list = field(default_factory=list)

    def render(self) -> str:
        head = "| problem | " + " | ".join(self.cols) + " |"
        sep = "|---" * (len(self.cols) + 1) + "|"
        lines = [head, sep]
        for r in self.rows:
            cells = [self.cells.get((r, c), Cell(None, None, True)).text() for c in self.cols]
            lines.append(f"| {r} | " + " | ".join(cells) + " |")
        return "\n".join(lines)


def _finite(x):
    x = float(x)
    return x if np.isfinite(x) else None


def reduce_run(run_dir, reduction: str = "final") -> Cell:
    if reduction not in REDUCTIONS:
        raise ValueError(f"reduction must be one of {REDUCTIONS}")
    rows = read_metrics(Path(run_dir) / "metrics.csv")
    if not rows:
        return Cell(None, None)
    va, tr = column(rows, "validation_mse"), column(rows, "train_mse")
    if reduction == "final":
        return Cell(_finite(va[-1]), _finite(tr[-1]))
    pick = lambda a: _finite(np.nanmin(a)) if np.any(np.isfinite(a)) else None
    return Cell(pick(va), pick(tr))


def method_label(doc: dict) -> str:
    fam = doc.get("family", "lsgan")
    return f"{fam}-rb" if doc.get("mode", "rollback") == "rollback" else f"{fam}-{doc['g_steps']}:{doc['d_steps']}"


def table_report(run_dirs, reduction: str = "final") -> TableReport:
    """Grid of 'validation / training' cells keyed by problem and method label."""
    rows, cols, cells, warns = [], [], {}, []

    def add(lst, x):
        if x not in lst:
            lst.append(x)

    for d in run_dirs:
        d = Path(d)
        cfg_path = d / "config.json"
        if not d.is_dir() or not cfg_path.exists() or not (d / "metrics.csv").exists():
            warns.append(f"missing run directory or artifacts: {d}")
            add(rows, d.name)  # every cell in this row renders as N/A
            continue
        doc = json.loads(cfg_path.read_text())
        key = (doc["problem"], method_label(doc))
        add(rows, key[0])
        add(cols, key[1])
        if key in cells:
            warns.append(f"duplicate entry for {key}; keeping {d}")
        cells[key] = reduce_run(d, reduction)
    if not cols:
        cols.append("run")
    return TableReport(rows, cols, cells, warns)
