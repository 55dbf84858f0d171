"""Recordings -> chunks -> topographic images, and the end-to-end synthetic study."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import ChunkSpec, SyntheticConfig, Synthesizer, chunk
from .evaluation import LabeledDataset, run_experiment
from .nn import TrainConfig
from .topomap import Featurizer


def featurize(recordings, featurizer: Featurizer, spec: ChunkSpec = ChunkSpec()) -> LabeledDataset:
    """Images for every chunk of every recording, in input order."""
    images, users, songs, idx = [], [], [], []
    ratings, familiarity = {}, {}
    for rec in recordings:
        ratings[(rec.user_id, rec.song_id)] = rec.enjoyment_rating
        if rec.familiarity_rating is not None:
            familiarity[(rec.user_id, rec.song_id)] = rec.familiarity_rating
        for ch in chunk(rec, spec):
            images.append(featurizer.image(ch.eeg).pixels)
            users.append(ch.user_id)
            songs.append(ch.song_id)
            idx.append(ch.index)
    return LabeledDataset(np.stack(images), users, songs, idx, ratings, familiarity, featurizer.mask.copy())


@dataclass
class StudyConfig:
    """Settings for the desk-scale synthetic reproduction of all experiments."""

    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    gated: SyntheticConfig = field(default_factory=lambda: SyntheticConfig(enjoy_gate=True))
    resolution: int = 12
    chunk_s: float = 5.0
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=3))
    repetitions: int = 1
    k: int = 5
    seed: int = 0

    def to_dict(self):
        return asdict(self)


UNGATED_EXPERIMENTS = ("user_id_kfold", "user_id_loso", "song_id_kfold", "song_id_louo")
GATED_EXPERIMENTS = ("song_id_louo_high", "song_id_louo_low")


def build_dataset(cfg: SyntheticConfig, resolution: int, chunk_s: float = 5.0) -> LabeledDataset:
    syn = Synthesizer(cfg)
    feat = Featurizer(syn.layout, cfg.sample_rate_hz, resolution=resolution)
    return featurize(syn, feat, ChunkSpec(chunk_s, chunk_s))


def run_synthetic_study(cfg: StudyConfig = StudyConfig(), log=None, experiments=None) -> dict:
    """Reports keyed ``ungated/<kind>`` and ``gated/<kind>`` plus wall-clock timings."""
    timings = {}
    reports = {}
    plan = [("ungated", cfg.synthetic, UNGATED_EXPERIMENTS), ("gated", cfg.gated, GATED_EXPERIMENTS)]
    for name, syn_cfg, kinds in plan:
        kinds = [k for k in kinds if experiments is None or f"{name}/{k}" in experiments]
        if not kinds:
            continue
        t0 = time.perf_counter()
        ds = build_dataset(syn_cfg, cfg.resolution, cfg.chunk_s)
        timings[f"{name}/featurize"] = time.perf_counter() - t0
        if log:
            log(f"{name}: {len(ds)} images in {timings[f'{name}/featurize']:.1f} s")
        for kind in kinds:
            t0 = time.perf_counter()
            rep = run_experiment(kind, ds, train_config=cfg.train, repetitions=cfg.repetitions, k=cfg.k, seed=cfg.seed)
            timings[f"{name}/{kind}"] = time.perf_counter() - t0
            reports[f"{name}/{kind}"] = rep
            if log:
                log(f"{name}/{kind}: accuracy {rep.mean():.3f} ({timings[f'{name}/{kind}']:.1f} s)")
    return {"reports": reports, "timings": timings}
