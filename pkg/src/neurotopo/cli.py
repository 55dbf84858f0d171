"""Command-line runner: synth, featurize, run and report.

Exit status is 0 on success, 2 on invalid input and 3 when training diverges.
Every output directory receives a ``run_manifest.json``.
"""

from __future__ import annotations

import argparse
import io
import json
import os
import sys
import time
from collections import Counter
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    ENJOYMENT_THRESHOLD,
    ChunkSpec,
    SyntheticConfig,
    Synthesizer,
    atomic_write_bytes,
    atomic_write_text,
    chunk,
    open_dataset,
    prepare_output_dir,
    save_dataset,
)
from .errors import DivergenceError, ValidationError
from .evaluation import EXPERIMENTS, LabeledDataset, MetricsReport, run_experiment
from .nn import TrainConfig
from .spectral import BAND_NAMES
from .svg import fold_bars_svg, topomap_svg
from .topomap import Featurizer

RUN_MANIFEST = "run_manifest.json"
INDEX_NAME = "index.json"
METRICS_NAME = "metrics.json"

EXPERIMENT_FLAGS = {
    "user-id-kfold": "user_id_kfold",
    "user-id-loso": "user_id_loso",
    "song-id-kfold": "song_id_kfold",
    "song-id-louo": "song_id_louo",
    "enjoy-kfold": "enjoyment_kfold",
    "song-id-louo-high": "song_id_louo_high",
    "song-id-louo-low": "song_id_louo_low",
}


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_run_manifest(out: Path, argv, config, seeds, artifacts, timings):
    manifest = {
        "command": ["neurotopo", *argv],
        "config": config,
        "seeds": seeds,
        "artifacts": sorted(artifacts),
        "timings_s": {k: round(v, 3) for k, v in timings.items()},
        "version": __version__,
    }
    atomic_write_text(out / RUN_MANIFEST, dump_json(manifest))


# synth ----------------------------------------------------------------------


def ratings_histogram(ratings: dict, threshold: int = ENJOYMENT_THRESHOLD) -> str:
    counts = Counter(ratings.values())
    width = max(counts.values(), default=1)
    lines = ["rating  count  class"]
    for r in range(1, 10):
        n = counts.get(r, 0)
        bar = "#" * int(round(30 * n / width))
        lines.append(f"{r:>6}  {n:>5}  {'high' if r > threshold else 'low ':<4}  {bar}")
    high = sum(n for r, n in counts.items() if r > threshold)
    lines.append(f"high (> {threshold}): {high}   low: {sum(counts.values()) - high}")
    return "\n".join(lines)


def cmd_synth(args, argv):
    t0 = time.perf_counter()
    cfg = SyntheticConfig(
        users=args.users,
        songs=args.songs,
        duration_s=args.duration_s,
        channels=args.channels,
        confound=args.confound,
        enjoy_gate=args.enjoy_gate,
        g_high=args.g_high,
        g_low=args.g_low,
        noise=args.noise,
        seed=args.seed,
    )
    syn = Synthesizer(cfg)
    out = prepare_output_dir(args.out, args.force)
    save_dataset(out, syn, syn.layout, name=f"synthetic-seed{cfg.seed}", force=True)
    truth = {"high_pairs": sorted([list(p) for p in syn.high_pairs])}
    atomic_write_text(out / "ground_truth.json", dump_json(truth))
    elapsed = time.perf_counter() - t0
    print(f"{len(syn.pairs())} recordings ({cfg.users} users x {cfg.songs} songs), {cfg.channels} channels, {cfg.duration_s:g} s at {cfg.sample_rate_hz:g} Hz")
    print(ratings_histogram(syn.ratings))
    artifacts = ["manifest.json", "layout.txt", "ground_truth.json"] + [f"u{u:03d}_s{s:03d}.eegr" for u, s in syn.pairs()]
    write_run_manifest(out, argv, {"synthetic": cfg.to_dict()}, {"seed": cfg.seed}, artifacts, {"total": elapsed})


# featurize ------------------------------------------------------------------


def _npy_bytes(arr) -> bytes:
    buf = io.BytesIO()
    np.save(buf, arr, allow_pickle=False)
    return buf.getvalue()


def cmd_featurize(args, argv):
    t0 = time.perf_counter()
    handle = open_dataset(args.inp)
    layout = handle.layout()
    out = prepare_output_dir(args.out, args.force)
    feat = Featurizer(layout, handle.sample_rate_hz, resolution=args.resolution)
    spec = ChunkSpec(args.chunk_s, args.chunk_s)
    (out / "chunks").mkdir(exist_ok=True)
    (out / "previews").mkdir(exist_ok=True)
    atomic_write_bytes(out / "mask.npy", _npy_bytes(feat.mask))
    entries, ratings = [], []
    artifacts = [INDEX_NAME, "mask.npy"]
    for rec in handle:
        ratings.append({"user": rec.user_id, "song": rec.song_id, "enjoyment": rec.enjoyment_rating, "familiarity": rec.familiarity_rating})
        for ch in chunk(rec, spec):
            img = feat.image(ch.eeg)
            name = f"chunks/u{ch.user_id:03d}_s{ch.song_id:03d}_c{ch.index:03d}.npy"
            atomic_write_bytes(out / name, _npy_bytes(img.pixels))
            entries.append({"file": name, "user": ch.user_id, "song": ch.song_id, "chunk": ch.index})
            artifacts.append(name)
            if ch.index == 0:
                pname = f"previews/u{ch.user_id:03d}_s{ch.song_id:03d}.svg"
                title = f"user {ch.user_id}, song {ch.song_id}, chunk 0"
                atomic_write_text(out / pname, topomap_svg(img.pixels, img.mask, BAND_NAMES, title))
                artifacts.append(pname)
    index = {
        "source": str(Path(args.inp)),
        "resolution": args.resolution,
        "chunk_s": args.chunk_s,
        "bands": list(BAND_NAMES),
        "shape": [args.resolution, args.resolution, len(BAND_NAMES)],
        "mask": "mask.npy",
        "ratings": ratings,
        "chunks": entries,
    }
    atomic_write_text(out / INDEX_NAME, dump_json(index))
    elapsed = time.perf_counter() - t0
    print(f"{len(entries)} images of shape {args.resolution}x{args.resolution}x{len(BAND_NAMES)} from {len(handle)} recordings")
    config = {"resolution": args.resolution, "chunk_s": args.chunk_s, "source": str(Path(args.inp))}
    write_run_manifest(out, argv, config, {}, artifacts, {"total": elapsed})


def load_features(path) -> LabeledDataset:
    root = Path(path)
    ipath = root / INDEX_NAME
    if not ipath.exists():
        raise ValidationError(f"no {INDEX_NAME} in {root}; run 'neurotopo featurize' first")
    index = json.loads(ipath.read_text())
    if not index["chunks"]:
        raise ValidationError(f"{ipath}: no chunks")
    images = []
    for e in index["chunks"]:
        f = root / e["file"]
        if not f.exists():
            raise ValidationError(f"missing feature file: {f}")
        images.append(np.load(f, allow_pickle=False))
    ratings = {(r["user"], r["song"]): r["enjoyment"] for r in index["ratings"]}
    familiarity = {(r["user"], r["song"]): r["familiarity"] for r in index["ratings"] if r.get("familiarity") is not None}
    mask_path = root / index["mask"]
    return LabeledDataset(
        np.stack(images),
        [e["user"] for e in index["chunks"]],
        [e["song"] for e in index["chunks"]],
        [e["chunk"] for e in index["chunks"]],
        ratings,
        familiarity,
        np.load(mask_path) if mask_path.exists() else None,
    )


# run ------------------------------------------------------------------------


def report_figure(report: MetricsReport) -> str:
    if report.per_group:
        values = [g["accuracy"] for g in report.per_group]
        target = "user" if report.protocol == "leave_one_user_out" else "song"
        labels = [f"{target[0]}{g['group']}" for g in report.per_group]
        title = f"{report.experiment}: accuracy per held-out {target}"
    else:
        values = [f["metrics"]["accuracy"] for f in report.per_fold]
        labels = [f"{f['repetition']}.{f['fold']}" for f in report.per_fold]
        title = f"{report.experiment}: accuracy per fold"
    agg = report.aggregate["accuracy"]
    return fold_bars_svg(values, labels, agg["mean"], agg["ci95"], report.chance, title)


def cmd_run(args, argv):
    t0 = time.perf_counter()
    kind = EXPERIMENT_FLAGS[args.experiment]
    ds = load_features(args.features)
    out = prepare_output_dir(args.out, args.force)
    tc = TrainConfig(epochs=args.epochs, learning_rate=args.lr, batch_size=args.batch_size, seed=args.seed)
    t1 = time.perf_counter()
    report = run_experiment(
        kind,
        ds,
        train_config=tc,
        repetitions=args.repetitions,
        k=args.k,
        seed=args.seed,
        group_pairs=args.group_pairs,
        jobs=args.jobs,
        log=(lambda m: print(m, file=sys.stderr)) if args.verbose else None,
    )
    t2 = time.perf_counter()
    atomic_write_text(out / METRICS_NAME, report.to_json())
    atomic_write_text(out / "folds.svg", report_figure(report))
    agg = report.aggregate
    print(f"{kind} ({report.protocol}, {len(report.per_fold)} folds, {report.class_count} classes)")
    for m in ("accuracy", "weighted_precision", "weighted_recall", "weighted_f1"):
        print(f"  {m:<19} {agg[m]['mean']:.4f} +/- {agg[m]['std']:.4f}")
    config = {"experiment": kind, "features": str(Path(args.features)), "train": tc.to_dict(), "repetitions": args.repetitions, "k": args.k, "group_pairs": args.group_pairs}
    seeds = {"seed": args.seed, "fold_seed_rule": "seed*1000003 + repetition*1009 + fold"}
    timings = {"load": t1 - t0, "train_eval": t2 - t1, "total": time.perf_counter() - t0}
    write_run_manifest(out, argv, config, seeds, [METRICS_NAME, "folds.svg"], timings)


# report ---------------------------------------------------------------------


def cmd_report(args, argv):
    rows = []
    for d in args.runs:
        d = Path(d)
        if not (d / RUN_MANIFEST).exists():
            raise ValidationError(f"no {RUN_MANIFEST} in {d}")
        if not (d / METRICS_NAME).exists():
            raise ValidationError(f"no {METRICS_NAME} in {d}; is it a 'run' output?")
        rep = json.loads((d / METRICS_NAME).read_text())
        agg = rep["aggregate"]
        rows.append(
            {
                "run": str(d),
                "experiment": rep["experiment"],
                "protocol": rep["protocol"],
                "folds": len(rep["per_fold"]),
                "chance": rep["chance"],
                **{m: {"mean": agg[m]["mean"], "std": agg[m]["std"]} for m in ("accuracy", "weighted_precision", "weighted_recall", "weighted_f1")},
            }
        )
    header = f"{'run':<28} {'experiment':<18} {'folds':>5} {'accuracy':>15} {'precision':>15} {'recall':>15} {'f1':>15}"
    lines = [header, "-" * len(header)]
    for r in rows:
        cells = " ".join(f"{r[m]['mean']:.3f} +/- {r[m]['std']:.3f}".rjust(15) for m in ("accuracy", "weighted_precision", "weighted_recall", "weighted_f1"))
        lines.append(f"{Path(r['run']).name[:28]:<28} {r['experiment']:<18} {r['folds']:>5} {cells}")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out:
        out = prepare_output_dir(args.out, args.force)
        atomic_write_text(out / "report.txt", text)
        atomic_write_text(out / "report.json", dump_json({"rows": rows}))
        write_run_manifest(out, argv, {"runs": [str(Path(d)) for d in args.runs]}, {}, ["report.txt", "report.json"], {})


# entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="neurotopo", description="EEG spectral topomap experiments")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--users", type=int, default=20)
    s.add_argument("--songs", type=int, default=10)
    s.add_argument("--duration-s", type=float, default=60.0)
    s.add_argument("--channels", type=int, default=125)
    s.add_argument("--confound", type=float, default=1.0, help="0: song pattern shared by all users, 1: fully user-rotated")
    s.add_argument("--enjoy-gate", action="store_true", help="express the canonical song pattern only for pairs rated above 5")
    s.add_argument("--g-high", type=float, default=SyntheticConfig.g_high)
    s.add_argument("--g-low", type=float, default=SyntheticConfig.g_low)
    s.add_argument("--noise", type=float, default=SyntheticConfig.noise)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--force", action="store_true")
    s.set_defaults(fn=cmd_synth)

    f = sub.add_parser("featurize", help="turn a dataset into topographic images")
    f.add_argument("--in", dest="inp", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--resolution", type=int, default=32)
    f.add_argument("--chunk-s", type=float, default=5.0)
    f.add_argument("--force", action="store_true")
    f.set_defaults(fn=cmd_featurize)

    r = sub.add_parser("run", help="train and evaluate one experiment")
    r.add_argument("--experiment", required=True, choices=sorted(EXPERIMENT_FLAGS))
    r.add_argument("--features", required=True)
    r.add_argument("--epochs", type=int, default=30)
    r.add_argument("--lr", type=float, default=1e-3)
    r.add_argument("--batch-size", type=int, default=32)
    r.add_argument("--repetitions", type=int, default=10, help="k-fold repetitions (leave-one-out protocols run once)")
    r.add_argument("--k", type=int, default=5)
    r.add_argument("--group-pairs", action="store_true", help="keep each (user, song) pair's chunks on one side of k-fold splits")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--jobs", type=int, default=int(os.environ.get("NEUROTOPO_JOBS", "1")))
    r.add_argument("--out", required=True)
    r.add_argument("--force", action="store_true")
    r.add_argument("-v", "--verbose", action="store_true")
    r.set_defaults(fn=cmd_run)

    c = sub.add_parser("report", help="compare finished runs")
    c.add_argument("--runs", nargs="+", required=True)
    c.add_argument("--out")
    c.add_argument("--force", action="store_true")
    c.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    try:
        args.fn(args, argv)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
