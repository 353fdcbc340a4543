"""Batch front-end: parse a run config, execute one of the Monte Carlo
experiments (ber, capacity, range, roc, export) and write CSV results plus
a JSON run manifest.

Exit codes: 0 success, 2 configuration/schema violation, 3 I/O failure,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

import numpy as np

from . import __version__, evaluate
from .config import (ConfigError, apply_override, config_hash, default_config,
                     load_config, canonical_yaml)
from .simulate import simulate_drop

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

EXPERIMENTS = ("ber", "capacity", "range", "roc", "export")


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)


def write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _code_version() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=5,
                             cwd=os.path.dirname(os.path.abspath(__file__)))
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"isacsim-{__version__}"


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def run_ber(cfg, out_dir: str, threads: int) -> list[str]:
    rows = []
    proposed = evaluate.simulate_ber(cfg, threads=threads)
    for p in proposed:
        rows.append((p.snr_db, p.ber, p.bits, p.errors))
    write_csv(os.path.join(out_dir, "ber.csv"),
              ["snr_db", "ber", "bits", "errors"], rows)
    baseline = evaluate.simulate_ber(cfg, with_target=False, threads=threads)
    write_csv(os.path.join(out_dir, "ber_baseline.csv"),
              ["snr_db", "ber", "bits", "errors"],
              [(p.snr_db, p.ber, p.bits, p.errors) for p in baseline])
    return ["ber.csv", "ber_baseline.csv"]


def run_capacity(cfg, out_dir: str, threads: int) -> list[str]:
    points = evaluate.ergodic_capacity(cfg, threads=threads)
    write_csv(os.path.join(out_dir, "capacity.csv"),
              ["rcs_m2", "capacity_bps_hz", "drops"],
              [(p.rcs_m2, p.capacity_bps_hz, p.drops) for p in points])
    return ["capacity.csv"]


def run_range(cfg, out_dir: str, threads: int) -> list[str]:
    points = evaluate.range_curve(cfg, threads=threads)
    write_csv(os.path.join(out_dir, "range.csv"),
              ["snr_db", "mean_error_m", "rmse_m", "outage_rate", "drops"],
              [(p.snr_db, p.mean_error_m, p.rmse_m, p.outage_rate, p.drops)
               for p in points])
    return ["range.csv"]


def run_roc(cfg, out_dir: str, threads: int) -> list[str]:
    scales = [r / cfg.target.rcs.value_m2 for r in cfg.grids.rcs_m2]
    t0, t1 = evaluate.detection_statistics(cfg, rcs_scales=scales,
                                           threads=threads)
    rows = []
    summary = []
    for i, rcs in enumerate(cfg.grids.rcs_m2):
        p_fa, p_d = evaluate.roc_curve(t0, t1[i], cfg.grids.roc_thresholds)
        rows.extend((rcs, f, d) for f, d in zip(p_fa, p_d))
        summary.append((rcs, evaluate.pfa_at_pd(t0, t1[i], 0.9),
                        evaluate.roc_auc(p_fa, p_d)))
    write_csv(os.path.join(out_dir, "roc.csv"), ["rcs_m2", "p_fa", "p_d"], rows)
    write_csv(os.path.join(out_dir, "roc_summary.csv"),
              ["rcs_m2", "p_fa_at_pd_0p9", "auc"], summary)
    return ["roc.csv", "roc_summary.csv"]


def run_export(cfg, out_dir: str, threads: int) -> list[str]:
    names = []
    for drop in range(cfg.drops):
        _, _, isac = simulate_drop(cfg, drop)
        name = f"taps_drop{drop:05d}.csv"
        rows = []
        for t in np.atleast_1d(isac.snapshots):
            for u in range(isac.n_rx):
                for s in range(isac.n_tx):
                    labels, delays, coefs = isac.taps(u, s, float(t))
                    rows.extend(
                        (float(t), u, s, lab, float(d), float(c.real), float(c.imag))
                        for lab, d, c in zip(labels, delays, coefs))
        write_csv(os.path.join(out_dir, name),
                  ["snapshot_time_s", "u", "s", "case_label", "delay_s", "re", "im"],
                  rows)
        names.append(name)
        if drop % 10 == 9:
            _progress(f"export: {drop + 1}/{cfg.drops} drops written")
    return names


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="isacsim",
        description="Bistatic ISAC channel simulator and evaluation harness")
    parser.add_argument("--experiment", required=True, choices=EXPERIMENTS)
    parser.add_argument("--config", help="run config YAML (defaults to the "
                                         "reference setup)")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--drops", type=int, help="override drop count")
    parser.add_argument("--seed", type=int, help="override master seed")
    parser.add_argument("--scenario", choices=("uma", "umi", "inf"))
    parser.add_argument("--threads", type=int,
                        default=max(1, os.cpu_count() or 1),
                        help="worker processes over drops")
    parser.add_argument("--override", action="append", default=[],
                        metavar="KEY=VALUE",
                        help="dotted-path config override, repeatable")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else default_config()
        if args.scenario:
            cfg = apply_override(cfg, "scenario", args.scenario)
        if args.drops is not None:
            cfg = apply_override(cfg, "drops", str(args.drops))
        if args.seed is not None:
            cfg = apply_override(cfg, "seed", str(args.seed))
        for item in args.override:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not KEY=VALUE")
            key, _, value = item.partition("=")
            cfg = apply_override(cfg, key.strip(), value.strip())
    except (ConfigError, OSError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        os.makedirs(args.out, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output dir: {exc}", file=sys.stderr)
        return EXIT_IO

    runner = {"ber": run_ber, "capacity": run_capacity, "range": run_range,
              "roc": run_roc, "export": run_export}[args.experiment]
    _progress(f"{args.experiment}: scenario={cfg.scenario} drops={cfg.drops} "
              f"seed={cfg.seed} threads={args.threads}")
    try:
        outputs = runner(cfg, args.out, args.threads)
    except OSError as exc:
        print(f"error: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    manifest = {
        "experiment": args.experiment,
        "seed": cfg.seed,
        "drops": cfg.drops,
        "scenario": cfg.scenario,
        "config_hash": config_hash(cfg),
        "code_version": _code_version(),
        "outputs": outputs,
    }
    try:
        with open(os.path.join(args.out, "run_manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(args.out, "config_used.yaml"), "w") as fh:
            fh.write(canonical_yaml(cfg))
    except OSError as exc:
        print(f"error: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    _progress(f"{args.experiment}: wrote {len(outputs)} file(s) to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
