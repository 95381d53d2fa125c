"""Command line entry point: ``python -m wasep_kpz <command> [--config PATH]``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness

COMMANDS = ("simulate", "cauchy-scan", "remainder-scan", "martingale-test",
            "sobolev-report", "oracle-check", "selftest")


def _parser():
    ap = argparse.ArgumentParser(prog="wasep-kpz", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="flat key = value config file")
        sp.add_argument("--workers", type=int, default=1, help="worker processes")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        if name == "oracle-check":
            sp.add_argument("--runs", type=int, default=10_000, help="runs per initial state")
    return ap


def load_config(args):
    cfg = harness.ExperimentConfig.from_file(args.config) if args.config else harness.ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.replace(master_seed=args.seed)
    return cfg


def _emit(cfg, result):
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = result.experiment
    result.table.to_csv(out / f"{stem}.csv")
    harness.write_manifest(out / f"{stem}.manifest.json", cfg, stem,
                           {"summary": result.summary, "checks": result.checks})
    failed = [k for k, ok in result.checks.items() if not ok]
    print(f"{stem}: {len(result.table)} rows -> {out / (stem + '.csv')}")
    for k, ok in result.checks.items():
        print(f"  {'PASS' if ok else 'FAIL'} {k}")
    return 1 if failed else 0


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args)
    except (OSError, ValueError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    cmd = args.command
    if cmd == "selftest":
        results = harness.selftest()
        for name, ok, detail in results:
            print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        return 0 if all(ok for _, ok, _ in results) else 1
    if cmd == "oracle-check":
        res = harness.oracle_check(runs=args.runs, seed=cfg.master_seed)
    elif cmd == "simulate":
        res = harness.ScanResult("simulate", harness.run_replicas(cfg, args.workers))
    else:
        fn = {"cauchy-scan": harness.cauchy_scan, "remainder-scan": harness.remainder_scan,
              "martingale-test": harness.martingale_test,
              "sobolev-report": lambda c, w: harness.sobolev_report(c, w, strict=False)}[cmd]
        res = fn(cfg, args.workers)
    return _emit(cfg, res)


if __name__ == "__main__":
    sys.exit(main())
