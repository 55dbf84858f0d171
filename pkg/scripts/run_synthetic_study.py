#!/usr/bin/env python3
"""Run the desk-scale synthetic study and write one report per experiment.

    python3 scripts/run_synthetic_study.py --out runs/study

Writes ``<group>_<experiment>.json`` and a matching ``.svg`` for every
experiment, plus ``summary.txt`` with the accuracy targets checked.
"""

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

from neurotopo.cli import report_figure
from neurotopo.data import atomic_write_text, prepare_output_dir
from neurotopo.nn import TrainConfig
from neurotopo.pipeline import StudyConfig, run_synthetic_study

TARGETS = [
    ("ungated/user_id_kfold", ">=", 0.95),
    ("ungated/user_id_loso", ">=", 0.90),
    ("ungated/song_id_kfold", ">=", 0.90),
    ("ungated/song_id_louo", "<=", 0.20),
]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=None)
    ap.add_argument("--resolution", type=int, default=None)
    ap.add_argument("--force", action="store_true")
    args = ap.parse_args(argv)

    cfg = StudyConfig(seed=args.seed)
    cfg = replace(cfg, synthetic=replace(cfg.synthetic, seed=args.seed), gated=replace(cfg.gated, seed=args.seed))
    if args.epochs is not None:
        cfg = replace(cfg, train=TrainConfig(epochs=args.epochs))
    if args.resolution is not None:
        cfg = replace(cfg, resolution=args.resolution)
    out = prepare_output_dir(args.out, args.force)

    t0 = time.perf_counter()
    result = run_synthetic_study(cfg, log=lambda m: print(m, flush=True))
    elapsed = time.perf_counter() - t0

    for key, rep in result["reports"].items():
        stem = key.replace("/", "_")
        atomic_write_text(out / f"{stem}.json", rep.to_json())
        atomic_write_text(out / f"{stem}.svg", report_figure(rep))

    acc = {k: r.mean() for k, r in result["reports"].items()}
    lines = []
    for key, op, bound in TARGETS:
        ok = acc[key] >= bound if op == ">=" else acc[key] <= bound
        lines.append(f"{'ok  ' if ok else 'MISS'} {key:28s} {acc[key]:.4f} ({op} {bound})")
    base = acc["ungated/song_id_louo"]
    for key in ("gated/song_id_louo_high", "gated/song_id_louo_low"):
        ok = acc[key] >= 2 * base
        lines.append(f"{'ok  ' if ok else 'MISS'} {key:28s} {acc[key]:.4f} (>= 2 x {base:.4f})")
    hi, lo = acc["gated/song_id_louo_high"], acc["gated/song_id_louo_low"]
    lines.append(f"low-enjoyment partition {'>=' if lo >= hi else '<'} high-enjoyment partition")
    lines.append(f"total {elapsed:.0f} s")
    text = "\n".join(lines) + "\n"
    atomic_write_text(out / "summary.txt", text)
    print(text, end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
