"""A small CNN with hand-written forward and backward passes (numpy, float64).

Activations are NHWC throughout, which is the natural layout of the
W x H x 5 topographic images and keeps im2col a single copy.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DivergenceError, ValidationError

CHECKPOINT_MAGIC = b"NTCK"
CHECKPOINT_VERSION = 1
LAYER_TYPES = ("conv2d", "relu", "maxpool", "flatten", "dense", "softmax")


@dataclass
class ModelConfig:
    input_shape: tuple  # (W, H, C)
    layers: list
    class_count: int

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.layers = [dict(l) for l in self.layers]
        self.shapes()

    def shapes(self) -> list:
        """Output shape of every layer (without the batch axis); raises on mismatch."""
        shape = self.input_shape
        out = []
        for i, spec in enumerate(self.layers):
            kind = spec.get("type")
            if kind not in LAYER_TYPES:
                raise ValidationError(f"layer {i}: unknown type {kind!r}")
            if kind == "conv2d":
                if len(shape) != 3:
                    raise ValidationError(f"layer {i}: conv2d needs a 3-D input, got {shape}")
                k, s, p = spec["kernel"], spec.get("stride", 1), spec.get("pad", 0)
                h = (shape[0] + 2 * p - k) // s + 1
                w = (shape[1] + 2 * p - k) // s + 1
                if h < 1 or w < 1:
                    raise ValidationError(f"layer {i}: kernel {k} does not fit input {shape}")
                shape = (h, w, spec["filters"])
            elif kind == "maxpool":
                z = spec["size"]
                if len(shape) != 3 or shape[0] % z or shape[1] % z:
                    raise ValidationError(f"layer {i}: maxpool {z} needs spatial dims divisible by {z}, got {shape}")
                shape = (shape[0] // z, shape[1] // z, shape[2])
            elif kind == "flatten":
                shape = (int(np.prod(shape)),)
            elif kind == "dense":
                if len(shape) != 1:
                    raise ValidationError(f"layer {i}: dense needs a flat input, got {shape}; add flatten")
                shape = (spec["units"],)
            elif kind == "softmax" and i != len(self.layers) - 1:
                raise ValidationError(f"layer {i}: softmax must be the last layer")
            out.append(shape)
        if out[-1] != (self.class_count,):
            raise ValidationError(f"final layer width {out[-1]} does not equal class_count {self.class_count}")
        return out

    def to_dict(self):
        return {"input_shape": list(self.input_shape), "layers": self.layers, "class_count": self.class_count}


def architecture_a(input_shape=(32, 32, 5), class_count=10) -> ModelConfig:
    return ModelConfig(
        input_shape,
        [
            {"type": "conv2d", "filters": 32, "kernel": 3, "stride": 1, "pad": 1},
            {"type": "relu"},
            {"type": "conv2d", "filters": 32, "kernel": 3, "stride": 1, "pad": 1},
            {"type": "relu"},
            {"type": "maxpool", "size": 2},
            {"type": "flatten"},
            {"type": "dense", "units": 128},
            {"type": "relu"},
            {"type": "dense", "units": class_count},
            {"type": "softmax"},
        ],
        class_count,
    )


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    weight_init: str = "he_uniform"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ValidationError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if not self.learning_rate >= 0:
            raise ValidationError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValidationError("batch_size must be >= 1 and epochs >= 0")
        if self.weight_init != "he_uniform":
            raise ValidationError(f"unsupported weight_init {self.weight_init!r}")

    def to_dict(self):
        return asdict(self)


# layers ---------------------------------------------------------------------


def _im2col(x, k, s, p):
    n, h, w, c = x.shape
    ho = (h + 2 * p - k) // s + 1
    wo = (w + 2 * p - k) // s + 1
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
    cols = np.empty((n, ho, wo, k, k, c))
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xp[:, i : i + s * ho : s, j : j + s * wo : s, :]
    return cols.reshape(n * ho * wo, k * k * c), ho, wo


def _col2im(dcols, x_shape, k, s, p, ho, wo):
    n, h, w, c = x_shape
    dcols = dcols.reshape(n, ho, wo, k, k, c)
    dxp = np.zeros((n, h + 2 * p, w + 2 * p, c))
    for i in range(k):
        for j in range(k):
            dxp[:, i : i + s * ho : s, j : j + s * wo : s, :] += dcols[:, :, :, i, j, :]
    return dxp[:, p : p + h, p : p + w, :] if p else dxp


class Conv2D:
    def __init__(self, spec, in_shape):
        self.k, self.s, self.p = spec["kernel"], spec.get("stride", 1), spec.get("pad", 0)
        self.filters = spec["filters"]
        self.param_shapes = [(self.k, self.k, in_shape[2], self.filters), (self.filters,)]
        self.fan_in = self.k * self.k * in_shape[2]

    def forward(self, x, params):
        w, b = params
        cols, ho, wo = _im2col(x, self.k, self.s, self.p)
        out = cols @ w.reshape(-1, self.filters) + b
        return out.reshape(x.shape[0], ho, wo, self.filters), (cols, x.shape, ho, wo)

    def backward(self, dout, params, cache, need_dx=True):
        w, _ = params
        cols, x_shape, ho, wo = cache
        d = dout.reshape(-1, self.filters)
        dw = (cols.T @ d).reshape(w.shape)
        db = d.sum(axis=0)
        dx = _col2im(d @ w.reshape(-1, self.filters).T, x_shape, self.k, self.s, self.p, ho, wo) if need_dx else None
        return dx, [dw, db]


class Dense:
    def __init__(self, spec, in_shape):
        self.param_shapes = [(in_shape[0], spec["units"]), (spec["units"],)]
        self.fan_in = in_shape[0]

    def forward(self, x, params):
        w, b = params
        return x @ w + b, x

    def backward(self, dout, params, cache, need_dx=True):
        w, _ = params
        return (dout @ w.T if need_dx else None), [cache.T @ dout, dout.sum(axis=0)]


class ReLU:
    param_shapes = []

    def forward(self, x, params):
        mask = x > 0
        return x * mask, mask

    def backward(self, dout, params, cache, need_dx=True):
        return dout * cache, []


class MaxPool:
    param_shapes = []

    def __init__(self, spec, in_shape):
        self.z = spec["size"]

    def forward(self, x, params):
        n, h, w, c = x.shape
        z = self.z
        win = x.reshape(n, h // z, z, w // z, z, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // z, w // z, c, z * z)
        arg = win.argmax(axis=-1)
        out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
        return out, (arg, x.shape)

    def backward(self, dout, params, cache, need_dx=True):
        arg, shape = cache
        n, h, w, c = shape
        z = self.z
        dwin = np.zeros(dout.shape + (z * z,))
        np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
        dx = dwin.reshape(n, h // z, w // z, c, z, z).transpose(0, 1, 4, 2, 5, 3).reshape(shape)
        return dx, []


class Flatten:
    param_shapes = []

    def forward(self, x, params):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dout, params, cache, need_dx=True):
        return dout.reshape(cache), []


def _make_layer(spec, in_shape):
    kind = spec["type"]
    if kind == "conv2d":
        return Conv2D(spec, in_shape)
    if kind == "dense":
        return Dense(spec, in_shape)
    if kind == "relu":
        return ReLU()
    if kind == "maxpool":
        return MaxPool(spec, in_shape)
    if kind == "flatten":
        return Flatten()
    return None  # softmax is folded into the loss


# model ----------------------------------------------------------------------


@dataclass
class ForwardCache:
    logits: np.ndarray
    layer_caches: list
    version: int


class Model:
    """Layer stack plus its flat parameter list (weight then bias per parametric layer)."""

    def __init__(self, config: ModelConfig, params=None):
        self.config = config
        shapes = [config.input_shape] + config.shapes()
        self.layers = []
        for spec, in_shape in zip(config.layers, shapes[:-1]):
            layer = _make_layer(spec, in_shape)
            if layer is not None:
                self.layers.append(layer)
        self.param_slices = []
        k = 0
        for layer in self.layers:
            self.param_slices.append(slice(k, k + len(layer.param_shapes)))
            k += len(layer.param_shapes)
        if params is None:
            params = [np.zeros(s) for layer in self.layers for s in layer.param_shapes]
        expected = [s for layer in self.layers for s in layer.param_shapes]
        if [p.shape for p in params] != [tuple(s) for s in expected]:
            raise ValidationError("parameter shapes do not match the model configuration")
        self.params = [np.asarray(p, dtype=float) for p in params]
        self.version = 0

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0) -> Model:
        """He-uniform weights, zero biases."""
        model = cls(config)
        rng = np.random.default_rng([seed, 1])
        for layer, sl in zip(model.layers, model.param_slices):
            if layer.param_shapes:
                limit = np.sqrt(6.0 / layer.fan_in)
                model.params[sl.start] = rng.uniform(-limit, limit, layer.param_shapes[0])
        return model

    def bump(self):
        self.version += 1

    def copy(self) -> Model:
        m = Model(self.config, [p.copy() for p in self.params])
        return m


def forward(model: Model, batch) -> ForwardCache:
    x = np.asarray(batch, dtype=float)
    if x.shape[1:] != model.config.input_shape:
        raise ValidationError(f"layer 0: batch shape {x.shape[1:]} does not match model input {model.config.input_shape}")
    caches = []
    for layer, sl in zip(model.layers, model.param_slices):
        x, c = layer.forward(x, model.params[sl])
        caches.append(c)
    return ForwardCache(x, caches, model.version)


def softmax(logits) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits, labels) -> float:
    """Mean softmax cross-entropy."""
    z = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(logz - z[np.arange(len(labels)), labels]))


def backward(model: Model, cache: ForwardCache, labels) -> list:
    """Gradients of the mean cross-entropy w.r.t. every parameter, in ``model.params`` order."""
    if cache.version != model.version:
        raise ValidationError("stale forward cache: parameters changed since forward()")
    labels = np.asarray(labels)
    n = len(labels)
    d = softmax(cache.logits)
    d[np.arange(n), labels] -= 1.0
    d /= n
    grads = [None] * len(model.params)
    for i in range(len(model.layers) - 1, -1, -1):
        layer, sl = model.layers[i], model.param_slices[i]
        d, g = layer.backward(d, model.params[sl], cache.layer_caches[i], need_dx=i > 0)
        grads[sl] = g
    return grads


class Adam:
    def __init__(self, params, cfg: TrainConfig):
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        c = self.cfg
        self.t += 1
        bc1 = 1 - c.beta1**self.t
        bc2 = 1 - c.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= c.beta1
            m += (1 - c.beta1) * g
            v *= c.beta2
            v += (1 - c.beta2) * g * g
            p -= c.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + c.adam_eps)


class SGD:
    def __init__(self, params, cfg: TrainConfig):
        self.lr = cfg.learning_rate

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


def train(model: Model, images, labels, config: TrainConfig, log=None):
    """Mini-batch training in place; returns (model, per-epoch mean loss trace)."""
    x = np.asarray(images, dtype=float)
    y = np.asarray(labels)
    if len(x) == 0:
        raise ValidationError("empty training set")
    if len(x) != len(y):
        raise ValidationError(f"{len(x)} images but {len(y)} labels")
    if y.min() < 0 or y.max() >= model.config.class_count:
        raise ValidationError(f"labels must lie in [0, {model.config.class_count})")
    opt = (Adam if config.optimizer == "adam" else SGD)(model.params, config)
    rng = np.random.default_rng([config.seed, 2])
    trace = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), config.batch_size):
            idx = order[start : start + config.batch_size]
            cache = forward(model, x[idx])
            loss = cross_entropy(cache.logits, y[idx])
            if not np.isfinite(loss) or loss > 1e6:
                raise DivergenceError(f"loss diverged to {loss} at epoch {epoch}, batch starting {start}")
            grads = backward(model, cache, y[idx])
            opt.step(model.params, grads)
            model.bump()
            total += loss * len(idx)
        trace.append(total / len(x))
        if log is not None:
            log(epoch, trace[-1])
    return model, trace


def predict(model: Model, batch, chunk_size: int = 128):
    """(labels, probabilities); ties in the logits resolve to the lowest class index."""
    x = np.asarray(batch, dtype=float)
    probs = np.concatenate([softmax(forward(model, x[i : i + chunk_size]).logits) for i in range(0, len(x), chunk_size)]) if len(x) else np.zeros((0, model.config.class_count))
    return probs.argmax(axis=1), probs


def save_checkpoint(path, model: Model):
    header = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    blob = [CHECKPOINT_MAGIC, struct.pack("<HI", CHECKPOINT_VERSION, len(header)), header]
    blob += [np.ascontiguousarray(p, dtype="<f8").tobytes() for p in model.params]
    Path(path).write_bytes(b"".join(blob))


def load_checkpoint(path) -> Model:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValidationError(f"{path}: not a checkpoint (magic {raw[:4]!r})")
    version, hlen = struct.unpack_from("<HI", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    cfg = json.loads(raw[10 : 10 + hlen])
    config = ModelConfig(tuple(cfg["input_shape"]), cfg["layers"], cfg["class_count"])
    shell = Model(config)
    off = 10 + hlen
    params = []
    for p in shell.params:
        n = p.size * 8
        if off + n > len(raw):
            raise ValidationError(f"{path}: truncated parameter block")
        params.append(np.frombuffer(raw, dtype="<f8", count=p.size, offset=off).reshape(p.shape).copy())
        off += n
    if off != len(raw):
        raise ValidationError(f"{path}: {len(raw) - off} trailing bytes")
    return Model(config, params)


def _activation_pattern(cache: ForwardCache):
    """ReLU masks and pooling argmaxes; equal patterns mean the same linear piece."""
    out = []
    for c in cache.layer_caches:
        if isinstance(c, np.ndarray) and c.dtype == bool:
            out.append(c)
        elif isinstance(c, tuple) and len(c) == 2 and isinstance(c[0], np.ndarray) and c[0].dtype.kind == "i":
            out.append(c[0])
    return out


def gradient_check(model: Model, batch, labels, step: float = 1e-3, per_tensor: int | None = None, seed: int = 0) -> list:
    """Compare analytic gradients with central differences.

    Returns one dict per parameter tensor with the checked entry indices,
    relative errors ``|a - n| / (|a| + |n| + 1e-8)`` and a ``kink`` flag per
    entry: True when the +/- step moved a ReLU input across zero or changed a
    pooling winner, where a piecewise-linear network has no derivative and
    central differences are meaningless.
    """
    labels = np.asarray(labels)
    base = forward(model, batch)
    grads = backward(model, base, labels)
    pattern = _activation_pattern(base)
    rng = np.random.default_rng(seed)
    report = []
    for t, p in enumerate(model.params):
        flat = p.reshape(-1)
        idx = np.arange(flat.size) if per_tensor is None or per_tensor >= flat.size else np.sort(rng.choice(flat.size, per_tensor, replace=False))
        rel = np.empty(len(idx))
        kink = np.zeros(len(idx), bool)
        for j, i in enumerate(idx):
            orig = flat[i]
            losses = []
            for sign in (1.0, -1.0):
                flat[i] = orig + sign * step
                c = forward(model, batch)
                losses.append(cross_entropy(c.logits, labels))
                kink[j] |= any(not np.array_equal(a, b) for a, b in zip(pattern, _activation_pattern(c)))
            flat[i] = orig
            num = (losses[0] - losses[1]) / (2 * step)
            ana = grads[t].reshape(-1)[i]
            rel[j] = abs(ana - num) / (abs(ana) + abs(num) + 1e-8)
        report.append({"tensor": t, "index": idx, "rel_error": rel, "kink": kink})
    return report
