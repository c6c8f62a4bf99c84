"""advpinn command line: run, ratio-sweep, report, kernelflow, selftest."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .. import kernelflow as kf
from .config import PRESETS, ConfigError, load
from .reports import REDUCTIONS, table_report
from .runner import parse_ratios, ratio_sweep, run_experiment
from .selftest import run_selftest


def _load(args):
    exp = load(args.config, args.preset)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.out is not None:
        over["output_dir"] = str(args.out)
    return exp.with_overrides(**over) if over else exp


def cmd_run(args) -> int:
    exp = _load(args)
    code = run_experiment(exp, resume=args.resume)
    s = json.loads((exp.output_dir / "summary.json").read_text())
    print(f"iterations={s['iterations']} final_train_mse={s['final_train_mse']} "
          f"final_validation_mse={s['final_validation_mse']}")
    return code


def cmd_sweep(args) -> int:
    exp = _load(args)
    try:
        ratios = parse_ratios(args.ratios)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    rows = ratio_sweep(exp, ratios, exp.output_dir)
    print("ratio,final_train_mse,final_validation_mse")
    for r in rows:
        print(f"{r['ratio']},{r['final_train_mse']},{r['final_validation_mse']}")
    return 0 if all(r["exit_code"] == 0 for r in rows) else 2


def cmd_report(args) -> int:
    rep = table_report(args.runs, args.reduction)
    print(rep.render())
    for w in rep.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if args.out is not None:
        Path(args.out).write_text(rep.render() + "\n")
    return 1 if rep.warnings else 0


def cmd_kernelflow(args) -> int:
    data = kf.scenario(args.scenario, args.ell)
    out = Path(args.out) if args.out else Path(f"kernelflow_{args.scenario}.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    m = data["support"].size
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"f_{j}" for j in range(m)] + [f"ref_{j}" for j in range(m)])
        for t, f, ref in zip(data["times"], data["flow"], data["closed_form"]):
            w.writerow([format(t, ".17g")] + [format(v, ".17g") for v in f] + [format(v, ".17g") for v in ref])
    print(f"wrote {out} ({data['times'].size} rows, support {list(map(float, data['support']))})")
    return 0


def cmd_selftest(args) -> int:
    return run_selftest()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="advpinn", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="experiment JSON")
        sp.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--preset", choices=PRESETS, help="optimizer/architecture preset beneath the config")

    sp = sub.add_parser("run", help="train one configuration")
    common(sp)
    sp.add_argument("--resume", type=Path, help="checkpoint to continue from")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("ratio-sweep", help="fixed-ratio runs over G:D pairs")
    common(sp)
    sp.add_argument("--ratios", default="100:1,10:1,1:100,1:1000", help="comma-separated G:D list")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("report", help="validation / training error grid")
    sp.add_argument("runs", nargs="+", help="run directories")
    sp.add_argument("--reduction", choices=REDUCTIONS, default="final")
    sp.add_argument("--out", type=Path, help="also write the table here")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("kernelflow", help="kernel-flow scenario trajectories as CSV")
    sp.add_argument("--scenario", choices=kf.SCENARIOS, default="lsgan")
    sp.add_argument("--ell", type=float, default=1.0, help="RBF length scale")
    sp.add_argument("--out", type=Path)
    sp.set_defaults(func=cmd_kernelflow)

    sp = sub.add_parser("selftest", help="quick invariant checks")
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for m in exc.messages:
            print(f"config error: {m}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
