"""Run orchestration: metrics CSV, checkpoints, summaries and ratio sweeps."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ..ntkdiag import moving_average, violation_stats
from ..rolltrain import METRIC_FIELDS, IterationRecord, Trainer
from .config import ExperimentConfig, resolve

INT_FIELDS = ("iteration", "accepted_g_depth", "accepted_d_depth", "saturation_count")
CHECKPOINT = "checkpoint.apinn"
FINAL = "final.apinn"
FAILED = "FAILED"


def format_value(name: str, v) -> str:
    if name in INT_FIELDS:
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "" if name == "wall_ms" else "nan"
    return format(v, ".17g")


def parse_value(name: str, s: str):
    if name in INT_FIELDS:
        return int(s)
    return float("nan") if s == "" else float(s)


def format_row(rec) -> list[str]:
    get = rec.get if isinstance(rec, dict) else (lambda k: getattr(rec, k))
    return [format_value(k, get(k)) for k in METRIC_FIELDS]


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header is None:
            return []
        if tuple(header) != METRIC_FIELDS:
            raise ValueError(f"{path}: unexpected header {header}")
        return [{k: parse_value(k, s) for k, s in zip(header, row)} for row in rd]


def column(rows: list[dict], name: str) -> np.ndarray:
    return np.array([r[name] for r in rows], dtype=np.float64)


class MetricSink:
    """Appends one CSV row per outer iteration, flushing every ``cadence`` rows."""

    def __init__(self, path, cadence: int = 1, keep_before: int | None = None):
        self.path = Path(path)
        self.cadence = cadence
        rows = []
        if keep_before is not None and self.path.exists():
            rows = [r for r in read_metrics(self.path) if r["iteration"] < keep_before]
        self.fh = open(self.path, "w", newline="")
        self.w = csv.writer(self.fh, lineterminator="\n")
        self.w.writerow(METRIC_FIELDS)
        for r in rows:
            self.w.writerow(format_row(r))
        self.fh.flush()
        self.pending = 0

    def write(self, rec: IterationRecord):
        self.w.writerow(format_row(rec))
        self.pending += 1
        if self.pending >= self.cadence:
            self.fh.flush()
            self.pending = 0

    def close(self):
        self.fh.close()


def summarize(rows: list[dict], ma_window: int = 300) -> dict:
    out = {"iterations": len(rows)}
    if not rows:
        out.update(final_train_mse=None, final_validation_mse=None, best_train_mse=None,
                   best_validation_mse=None, final_E=None, violation_stats=None)
        return out
    tr, va = column(rows, "train_mse"), column(rows, "validation_mse")
    S = column(rows, "S")
    out.update(
        final_train_mse=_num(tr[-1]), final_validation_mse=_num(va[-1]),
        best_train_mse=_num(np.nanmin(tr)) if np.any(np.isfinite(tr)) else None,
        best_validation_mse=_num(np.nanmin(va)) if np.any(np.isfinite(va)) else None,
        final_E=_num(rows[-1]["E"]),
        violation_stats=violation_stats(S).to_dict(),
        violation_stats_smoothed=violation_stats(moving_average(S, ma_window)).to_dict(),
        ma_window=ma_window,
    )
    return out


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else None


def write_smoothed(rows: list[dict], path, window: int):
    S = column(rows, "S")
    ma = moving_average(S, window)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("iteration", "S", "S_ma"))
        for r, s, m in zip(rows, S, ma):
            w.writerow((r["iteration"], format(s, ".17g"), format(m, ".17g")))


def run_experiment(exp: ExperimentConfig, out_dir=None, resume=None, log=print) -> int:
    """Train one configuration; returns 0 on success and 2 when training aborted."""
    out = Path(out_dir) if out_dir is not None else exp.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(exp.doc, indent=2, sort_keys=True) + "\n")
    marker = out / FAILED
    if marker.exists():
        marker.unlink()
    cfg = exp.train_config()
    trainer = Trainer(cfg)
    if resume is not None:
        trainer.load(resume)
    start = trainer.iteration
    sink = MetricSink(out / "metrics.csv", exp.metric_cadence, keep_before=start if resume else None)
    every = exp.checkpoint_every

    def on_record(rec):
        sink.write(rec)
        if every and trainer.iteration % every == 0:
            trainer.save(out / CHECKPOINT)

    try:
        hist = trainer.run(max(cfg.iterations - start, 0), on_record)
    finally:
        sink.close()
    trainer.save(out / FINAL)
    rows = read_metrics(out / "metrics.csv")
    summary = summarize(rows, exp.ma_window)
    summary["aborted"] = hist.aborted
    summary["abort_reason"] = hist.abort_reason
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if rows:
        write_smoothed(rows, out / "s_smoothed.csv", exp.ma_window)
    if hist.aborted:
        marker.write_text(hist.abort_reason + "\n")
        log(f"training aborted at iteration {trainer.iteration}: {hist.abort_reason}")
        return 2
    return 0


# ---------------------------------------------------------------------------
# ratio sweeps

def parse_ratios(text: str) -> list[tuple[int, int]]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        g, _, d = part.partition(":")
        try:
            gi, di = int(g), int(d)
        except ValueError:
            raise ValueError(f"bad ratio {part!r}; expected G:D") from None
        if gi < 1 or di < 1:
            raise ValueError(f"bad ratio {part!r}; budgets must be positive")
        out.append((gi, di))
    if not out:
        raise ValueError("no ratios given")
    return out


def _sweep_one(args):
    doc, out = args
    exp = resolve(doc)
    code = run_experiment(exp, out, log=lambda *_: None)
    return code, json.loads((Path(out) / "summary.json").read_text())


def worker_count() -> int:
    try:
        n = int(os.environ.get("APINN_THREADS", "1"))
    except ValueError:
        n = 1
    return max(n, 1)


def ratio_sweep(exp: ExperimentConfig, ratios, out_dir) -> list[dict]:
    """One fixed-ratio run per G:D pair; writes sweep.csv and returns its rows."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for g, d in ratios:
        doc = dict(exp.doc, mode="fixed", g_steps=g, d_steps=d)
        jobs.append((doc, str(out / f"ratio_{g}_{d}")))
    n = min(worker_count(), len(jobs))
    if n > 1:
        with ProcessPoolExecutor(n) as ex:
            results = list(ex.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    rows = []
    for (g, d), (code, s) in zip(ratios, results):
        vs = s.get("violation_stats") or {}
        rows.append({"ratio": f"{g}:{d}", "g_steps": g, "d_steps": d, "exit_code": code,
                     "final_train_mse": s["final_train_mse"],
                     "final_validation_mse": s["final_validation_mse"],
                     "positive_ratio": vs.get("positive_ratio")})
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else (format(v, ".17g") if isinstance(v, float) else v))
                        for k, v in r.items()})
    return rows
