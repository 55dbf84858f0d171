"""Cross-validation planners, weighted metrics, enjoyment split and the experiment runner."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import ENJOYMENT_THRESHOLD
from .errors import ValidationError
from .nn import Model, ModelConfig, TrainConfig, architecture_a, predict, train

EXPERIMENTS = {
    # kind: (label, protocol, partition)
    "user_id_kfold": ("user", "stratified_kfold", None),
    "user_id_loso": ("user", "leave_one_song_out", None),
    "song_id_kfold": ("song", "stratified_kfold", None),
    "song_id_louo": ("song", "leave_one_user_out", None),
    "enjoyment_kfold": ("enjoyment", "stratified_kfold", None),
    "song_id_louo_high": ("song", "leave_one_user_out", "high"),
    "song_id_louo_low": ("song", "leave_one_user_out", "low"),
}
METRICS = ("accuracy", "weighted_precision", "weighted_recall", "weighted_f1")


@dataclass
class LabeledDataset:
    images: np.ndarray  # N x W x H x 5
    user_id: np.ndarray
    song_id: np.ndarray
    chunk_index: np.ndarray
    ratings: dict  # (user, song) -> enjoyment 1..9
    familiarity: dict = field(default_factory=dict)
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.user_id = np.asarray(self.user_id, dtype=int)
        self.song_id = np.asarray(self.song_id, dtype=int)
        self.chunk_index = np.asarray(self.chunk_index, dtype=int)
        n = len(self.images)
        if not (len(self.user_id) == len(self.song_id) == len(self.chunk_index) == n):
            raise ValidationError("images, user_id, song_id and chunk_index must have equal length")
        for pair in set(zip(self.user_id.tolist(), self.song_id.tolist())):
            if pair not in self.ratings:
                raise ValidationError(f"missing enjoyment rating for (user, song) {pair}")
        for pair, r in self.ratings.items():
            if not 1 <= r <= 9:
                raise ValidationError(f"rating {r} for {pair} outside 1..9")

    def __len__(self):
        return len(self.images)

    def pair_ids(self) -> np.ndarray:
        """Integer id per sample for its (user, song) pair."""
        pairs = sorted(set(zip(self.user_id.tolist(), self.song_id.tolist())))
        lookup = {p: i for i, p in enumerate(pairs)}
        return np.array([lookup[p] for p in zip(self.user_id.tolist(), self.song_id.tolist())], dtype=int)

    def subset(self, idx) -> LabeledDataset:
        idx = np.asarray(idx, dtype=int)
        pairs = set(zip(self.user_id[idx].tolist(), self.song_id[idx].tolist()))
        return LabeledDataset(
            self.images[idx],
            self.user_id[idx],
            self.song_id[idx],
            self.chunk_index[idx],
            {p: r for p, r in self.ratings.items() if p in pairs},
            {p: r for p, r in self.familiarity.items() if p in pairs},
            self.mask,
        )


@dataclass
class FoldPlan:
    protocol: str
    folds: list  # [(train_idx, test_idx)]
    repetition_seed: object = None
    held_out: list = field(default_factory=list)  # group id per fold (leave-one-group-out)


@dataclass
class EnjoymentPartition:
    high: np.ndarray
    low: np.ndarray
    threshold: int
    high_pairs: list
    low_pairs: list


# planners -------------------------------------------------------------------


def plan_stratified_kfold(labels, k: int = 5, repetitions: int = 10, seed: int = 0, groups=None) -> list:
    """One FoldPlan per repetition.

    Each class's members are shuffled and dealt round-robin, continuing from
    where the previous class stopped, so per-class fold counts differ by at
    most one and fold sizes stay balanced. When ``groups`` is given, whole
    groups (each carrying a single label) are dealt instead of samples.
    """
    labels = np.asarray(labels)
    if groups is None:
        units = np.arange(len(labels))
        unit_label = labels
    else:
        groups = np.asarray(groups)
        units = np.unique(groups)
        unit_label = np.empty(len(units), dtype=labels.dtype)
        for i, g in enumerate(units):
            lab = np.unique(labels[groups == g])
            if len(lab) != 1:
                raise ValidationError(f"group {g} mixes labels {lab.tolist()}")
            unit_label[i] = lab[0]
    classes, counts = np.unique(unit_label, return_counts=True)
    for c, n in zip(classes, counts):
        if n < k:
            what = "groups" if groups is not None else "samples"
            raise ValidationError(f"class {c} has {n} {what}, fewer than k={k}")

    plans = []
    for rep in range(repetitions):
        rng = np.random.default_rng([seed, rep])
        fold_of_unit = np.empty(len(units), dtype=int)
        offset = 0
        for c in classes:
            members = np.flatnonzero(unit_label == c)
            members = members[rng.permutation(len(members))]
            fold_of_unit[members] = (offset + np.arange(len(members))) % k
            offset = (offset + len(members)) % k
        if groups is None:
            fold_of_sample = fold_of_unit
        else:
            fold_of_sample = fold_of_unit[np.searchsorted(units, groups)]
        folds = [(np.flatnonzero(fold_of_sample != f), np.flatnonzero(fold_of_sample == f)) for f in range(k)]
        plans.append(FoldPlan("stratified_kfold", folds, repetition_seed=[seed, rep]))
    return plans


def plan_leave_one_group_out(group_ids, protocol: str = "leave_one_group_out") -> FoldPlan:
    g = np.asarray(group_ids)
    uniq = np.unique(g)
    if len(uniq) < 2:
        raise ValidationError(f"leave-one-group-out needs at least 2 groups, got {len(uniq)}")
    folds = [(np.flatnonzero(g != u), np.flatnonzero(g == u)) for u in uniq]
    return FoldPlan(protocol, folds, held_out=[int(u) for u in uniq])


# metrics --------------------------------------------------------------------


def confusion_matrix(y_true, y_pred, class_count) -> np.ndarray:
    cm = np.zeros((class_count, class_count), dtype=int)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def weighted_metrics(y_true, y_pred, class_count: int) -> dict:
    """Accuracy and support-weighted precision, recall and F1.

    Classes never predicted get precision 0; classes absent from ``y_true``
    carry zero weight.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) == 0:
        raise ValidationError("cannot score an empty prediction set")
    if len(y_true) != len(y_pred):
        raise ValidationError(f"{len(y_true)} true labels but {len(y_pred)} predictions")
    for name, arr in (("y_true", y_true), ("y_pred", y_pred)):
        if arr.min() < 0 or arr.max() >= class_count:
            raise ValidationError(f"{name} has labels outside [0, {class_count})")
    cm = confusion_matrix(y_true, y_pred, class_count)
    tp = np.diag(cm).astype(float)
    support = cm.sum(axis=1).astype(float)
    predicted = cm.sum(axis=0).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        prec = np.where(predicted > 0, tp / predicted, 0.0)
        rec = np.where(support > 0, tp / support, 0.0)
        f1 = np.where(prec + rec > 0, 2 * prec * rec / (prec + rec), 0.0)
    w = support / support.sum()
    return {
        "accuracy": float(tp.sum() / len(y_true)),
        "weighted_precision": float(w @ prec),
        "weighted_recall": float(w @ rec),
        "weighted_f1": float(w @ f1),
        "confusion": cm.tolist(),
    }


# enjoyment ------------------------------------------------------------------


def dichotomize_ratings(ratings: dict, threshold: int = ENJOYMENT_THRESHOLD):
    """(high_pairs, low_pairs) with rating > threshold counted as high."""
    high, low = [], []
    for pair in sorted(ratings):
        r = ratings[pair]
        if r is None:
            raise ValidationError(f"missing rating for (user, song) {pair}")
        (high if r > threshold else low).append(pair)
    return high, low


def dichotomize_enjoyment(dataset: LabeledDataset, threshold: int = ENJOYMENT_THRESHOLD) -> EnjoymentPartition:
    pairs = list(zip(dataset.user_id.tolist(), dataset.song_id.tolist()))
    for p in set(pairs):
        if dataset.ratings.get(p) is None:
            raise ValidationError(f"missing rating for (user, song) {p}")
    high_pairs, low_pairs = dichotomize_ratings({p: dataset.ratings[p] for p in set(pairs)}, threshold)
    hs = set(high_pairs)
    is_high = np.array([p in hs for p in pairs], dtype=bool)
    return EnjoymentPartition(np.flatnonzero(is_high), np.flatnonzero(~is_high), threshold, high_pairs, low_pairs)


# experiments ----------------------------------------------------------------


@dataclass
class MetricsReport:
    experiment: str
    protocol: str
    repetitions: int
    class_count: int
    classes: list
    per_fold: list
    aggregate: dict
    per_group: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def chance(self) -> float:
        return 1.0 / self.class_count

    def mean(self, metric="accuracy") -> float:
        return self.aggregate[metric]["mean"]

    def to_dict(self):
        return {
            "experiment": self.experiment,
            "protocol": self.protocol,
            "repetitions": self.repetitions,
            "class_count": self.class_count,
            "classes": self.classes,
            "chance": self.chance,
            "per_fold": self.per_fold,
            "per_group": self.per_group,
            "aggregate": self.aggregate,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        return cls(d["experiment"], d["protocol"], d["repetitions"], d["class_count"], d["classes"], d["per_fold"], d["aggregate"], d.get("per_group", []), d.get("config", {}))


def aggregate(per_fold) -> dict:
    out = {}
    for m in METRICS:
        vals = np.array([f["metrics"][m] for f in per_fold], dtype=float)
        n = len(vals)
        std = float(vals.std(ddof=1)) if n > 1 else 0.0
        half = 1.96 * std / math.sqrt(n) if n > 1 else 0.0
        out[m] = {"mean": float(vals.mean()), "std": std, "ci95": [float(vals.mean() - half), float(vals.mean() + half)], "n": n}
    return out


def _labels_for(kind, dataset: LabeledDataset):
    target = EXPERIMENTS[kind][0]
    if target == "user":
        raw = dataset.user_id
    elif target == "song":
        raw = dataset.song_id
    else:
        part = dichotomize_enjoyment(dataset)
        raw = np.zeros(len(dataset), dtype=int)
        raw[part.high] = 1
    classes = np.unique(raw)
    return np.searchsorted(classes, raw), [int(c) for c in classes]


def _run_fold(args):
    images, y, train_idx, test_idx, model_config, train_config, fold_seed = args
    cfg = TrainConfig(**{**train_config.to_dict(), "seed": fold_seed})
    model = Model.initialize(model_config, fold_seed)
    model, trace = train(model, images[train_idx], y[train_idx], cfg)
    pred, _ = predict(model, images[test_idx])
    return pred, trace


def run_experiment(
    kind: str,
    dataset: LabeledDataset,
    model_config: ModelConfig | None = None,
    train_config: TrainConfig | None = None,
    repetitions: int = 10,
    k: int = 5,
    seed: int = 0,
    group_pairs: bool = False,
    jobs: int | None = None,
    log=None,
) -> MetricsReport:
    """Train a fresh model per fold and score it.

    k-fold protocols stratify at sample level by default; ``group_pairs``
    keeps every (user, song) pair's chunks on one side of each split.
    Conditioned variants first restrict the dataset to one enjoyment side.
    """
    if kind not in EXPERIMENTS:
        raise ValidationError(f"unknown experiment {kind!r}; choose from {sorted(EXPERIMENTS)}")
    target, protocol, side = EXPERIMENTS[kind]
    train_config = train_config or TrainConfig()
    jobs = jobs or int(os.environ.get("NEUROTOPO_JOBS", "1"))

    if side is not None:
        part = dichotomize_enjoyment(dataset)
        idx = part.high if side == "high" else part.low
        if len(idx) == 0:
            raise ValidationError(f"{kind}: the {side}-enjoyment partition is empty")
        dataset = dataset.subset(idx)

    y, classes = _labels_for(kind, dataset)
    if len(classes) < 2:
        raise ValidationError(f"{kind}: need at least 2 classes, found {classes}")
    if model_config is None:
        model_config = architecture_a(dataset.images.shape[1:], len(classes))
    else:
        model_config = ModelConfig(model_config.input_shape, [dict(l) for l in model_config.layers[:-2]] + [{"type": "dense", "units": len(classes)}, {"type": "softmax"}], len(classes))

    if protocol == "stratified_kfold":
        plans = plan_stratified_kfold(y, k, repetitions, seed, groups=dataset.pair_ids() if group_pairs else None)
    else:
        groups = dataset.song_id if protocol == "leave_one_song_out" else dataset.user_id
        plans = [plan_leave_one_group_out(groups, protocol)]
        # every held-out group must leave at least one other group to train on
        if len(np.unique(groups)) < 2:
            raise ValidationError(f"{kind}: need at least 2 groups for {protocol}")

    tasks, meta = [], []
    for r, plan in enumerate(plans):
        for f, (tr, te) in enumerate(plan.folds):
            if protocol == "leave_one_user_out":
                assert not set(dataset.user_id[tr].tolist()) & set(dataset.user_id[te].tolist()), "test user leaked into training"
            if protocol == "leave_one_song_out":
                assert not set(dataset.song_id[tr].tolist()) & set(dataset.song_id[te].tolist()), "test song leaked into training"
            fold_seed = int(seed * 1_000_003 + r * 1009 + f)
            tasks.append((dataset.images, y, tr, te, model_config, train_config, fold_seed))
            meta.append((r, f, plan.held_out[f] if plan.held_out else None, tr, te))

    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_fold, tasks))
    else:
        results = []
        for t, (r, f, held, tr, te) in zip(tasks, meta):
            results.append(_run_fold(t))
            if log:
                log(f"{kind} rep {r} fold {f}: acc {np.mean(results[-1][0] == y[te]):.3f}")

    per_fold, per_group = [], []
    for (pred, trace), (r, f, held, tr, te) in zip(results, meta):
        m = weighted_metrics(y[te], pred, len(classes))
        entry = {
            "repetition": r,
            "fold": f,
            "n_train": int(len(tr)),
            "n_test": int(len(te)),
            "loss_trace": [float(v) for v in trace],
            "metrics": {key: m[key] for key in METRICS},
            "confusion": m["confusion"],
        }
        if held is not None:
            entry["held_out"] = held
            per_group.append({"group": held, **{key: m[key] for key in METRICS}})
        per_fold.append(entry)

    config = {
        "train": train_config.to_dict(),
        "model": model_config.to_dict(),
        "k": k if protocol == "stratified_kfold" else None,
        "seed": seed,
        "group_pairs": bool(group_pairs) if protocol == "stratified_kfold" else None,
        "n_samples": int(len(dataset)),
    }
    reps = repetitions if protocol == "stratified_kfold" else 1
    return MetricsReport(kind, protocol, reps, len(classes), classes, per_fold, aggregate(per_fold), per_group, config)
