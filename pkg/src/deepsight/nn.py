"""Dense feed-forward classifier and parameter-space arithmetic.

Models are immutable: every operation returns new arrays. Hidden layers use
ReLU and the output layer is a softmax over ``P`` classes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

SNAPSHOT_VERSION = 1


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Ordered ``(weight[out, in], bias[out])`` pairs of a dense network."""

    layers: tuple

    def __post_init__(self):
        if len(self.layers) < 1:
            raise ValueError("model needs at least one layer")
        frozen = []
        prev_out = None
        for w, b in self.layers:
            w, b = _frozen(w), _frozen(b)
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ValueError(f"bad layer shapes {w.shape}, {b.shape}")
            if prev_out is not None and w.shape[1] != prev_out:
                raise ValueError(
                    f"layer in-dim {w.shape[1]} does not chain to previous out-dim {prev_out}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("non-finite parameter")
            prev_out = w.shape[0]
            frozen.append((w, b))
        if prev_out < 2:
            raise ValueError("output layer needs at least 2 classes")
        object.__setattr__(self, "layers", tuple(frozen))

    @property
    def layer_dims(self) -> list[int]:
        return [self.layers[0][0].shape[1]] + [w.shape[0] for w, _ in self.layers]

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def n_classes(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in self.layers)

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in self.layers])

    def same_shape(self, other: "ModelParams") -> bool:
        return self.layer_dims == other.layer_dims

    @classmethod
    def from_flat(cls, flat: np.ndarray, layer_dims: Sequence[int]) -> "ModelParams":
        flat = np.asarray(flat, dtype=np.float64)
        layers, pos = [], 0
        for n_in, n_out in zip(layer_dims[:-1], layer_dims[1:]):
            w = flat[pos:pos + n_in * n_out].reshape(n_out, n_in)
            pos += n_in * n_out
            b = flat[pos:pos + n_out]
            pos += n_out
            layers.append((w, b))
        if pos != flat.size:
            raise ValueError(f"flat vector has {flat.size} entries, dims need {pos}")
        return cls(tuple(layers))

    @classmethod
    def zeros(cls, layer_dims: Sequence[int]) -> "ModelParams":
        return cls(tuple((np.zeros((o, i)), np.zeros(o))
                         for i, o in zip(layer_dims[:-1], layer_dims[1:])))

    @classmethod
    def init(cls, layer_dims: Sequence[int], seed: int = 0) -> "ModelParams":
        """He-normal weights, zero biases."""
        rng = np.random.default_rng(seed)
        layers = []
        for n_in, n_out in zip(layer_dims[:-1], layer_dims[1:]):
            layers.append((rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_out, n_in)),
                           np.zeros(n_out)))
        return cls(tuple(layers))

    def equals(self, other: "ModelParams") -> bool:
        """Bitwise equality of all parameters."""
        return self.same_shape(other) and all(
            np.array_equal(w1, w2) and np.array_equal(b1, b2)
            for (w1, b1), (w2, b2) in zip(self.layers, other.layers))


@dataclass(frozen=True, eq=False)
class ParamUpdate:
    """Elementwise difference ``local - global`` with its cached L2 norm."""

    deltas: tuple
    l2: float = field(init=False)

    def __post_init__(self):
        deltas = tuple((_frozen(dw), _frozen(db)) for dw, db in self.deltas)
        object.__setattr__(self, "deltas", deltas)
        object.__setattr__(self, "l2", float(np.linalg.norm(self.flat())))

    @property
    def layer_dims(self) -> list[int]:
        return [self.deltas[0][0].shape[1]] + [w.shape[0] for w, _ in self.deltas]

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in self.deltas])

    def scaled(self, lam: float) -> "ParamUpdate":
        return ParamUpdate(tuple((lam * dw, lam * db) for dw, db in self.deltas))

    @property
    def output_bias(self) -> np.ndarray:
        return self.deltas[-1][1]

    @classmethod
    def from_flat(cls, flat: np.ndarray, layer_dims: Sequence[int]) -> "ParamUpdate":
        flat = np.asarray(flat, dtype=np.float64)
        need = sum(i * o + o for i, o in zip(layer_dims[:-1], layer_dims[1:]))
        if flat.ndim != 1 or flat.size != need:
            raise ValueError(f"flat vector has {flat.size} entries, dims need {need}")
        deltas, pos = [], 0
        for n_in, n_out in zip(layer_dims[:-1], layer_dims[1:]):
            dw = flat[pos:pos + n_in * n_out].reshape(n_out, n_in)
            pos += n_in * n_out
            deltas.append((dw, flat[pos:pos + n_out]))
            pos += n_out
        return cls(tuple(deltas))


@dataclass(frozen=True)
class TrainConfig:
    """Local SGD settings.

    ``loss_mode`` is ``"plain"`` or ``"anomaly_evasion"``. In evasion mode the
    loss is ``alpha * L_class + (1 - alpha) * L_anomaly`` where ``anomaly_kind``
    selects ``"cosine"`` (1 - cosine between local and reference parameters) or
    ``"ddif"`` (L2 distance between the local and reference division
    differences, both taken relative to the starting model).
    """

    learning_rate: float = 0.1
    epochs: int = 2
    batch_size: int = 32
    loss_mode: str = "plain"
    alpha: float = 1.0
    anomaly_kind: str = "cosine"
    freeze_output_layer: bool = False
    ddif_probe_samples: int = 256

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.loss_mode not in ("plain", "anomaly_evasion"):
            raise ValueError(f"unknown loss_mode {self.loss_mode!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.anomaly_kind not in ("cosine", "ddif"):
            raise ValueError(f"unknown anomaly_kind {self.anomaly_kind!r}")


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward_all(model: ModelParams, x: np.ndarray):
    """Return per-layer inputs and the output probabilities."""
    acts = [x]
    h = x
    last = len(model.layers) - 1
    for k, (w, b) in enumerate(model.layers):
        z = h @ w.T + b
        if k == last:
            return acts, softmax(z)
        h = np.maximum(z, 0.0)
        acts.append(h)


def predict_proba(model: ModelParams, x: np.ndarray) -> np.ndarray:
    """Class probabilities for a batch ``x[n, in_dim]``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.in_dim:
        raise ValueError(f"expected inputs of shape (n, {model.in_dim}), got {x.shape}")
    return _forward_all(model, x)[1]


def forward(model: ModelParams, x: np.ndarray) -> np.ndarray:
    """Probability vector for a single input."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.in_dim,):
        raise ValueError(f"expected input of shape ({model.in_dim},), got {x.shape}")
    return predict_proba(model, x[None, :])[0]


def predict(model: ModelParams, x: np.ndarray) -> np.ndarray:
    return np.argmax(predict_proba(model, x), axis=1)


def _backward(model, acts, dz):
    """Backpropagate ``dL/dlogits`` through the network; returns per-layer grads."""
    grads = [None] * len(model.layers)
    for k in range(len(model.layers) - 1, -1, -1):
        w, _ = model.layers[k]
        h = acts[k]
        grads[k] = (dz.T @ h, dz.sum(axis=0))
        if k > 0:
            dz = (dz @ w) * (h > 0)
    return grads


def _class_grads(model, x, y):
    acts, p = _forward_all(model, x)
    dz = p.copy()
    dz[np.arange(len(y)), y] -= 1.0
    dz /= len(y)
    return _backward(model, acts, dz)


def _cosine_grad(w_flat, ref_flat):
    """Gradient of ``1 - cos(w, ref)`` with respect to ``w``."""
    nw = np.linalg.norm(w_flat)
    nr = np.linalg.norm(ref_flat)
    if nw == 0.0 or nr == 0.0:
        return np.zeros_like(w_flat)
    dot = w_flat @ ref_flat
    return -(ref_flat / (nw * nr) - dot * w_flat / (nw ** 3 * nr))


def _ddif_grads(model, probes, start_probs, target_ddif):
    """Gradient of ``||DDif(model) - target||_2`` on a fixed probe set."""
    acts, p = _forward_all(model, probes)
    ratio = p / np.maximum(start_probs, 1e-12)
    dd = ratio.mean(axis=0) - target_ddif
    dist = np.linalg.norm(dd)
    if dist == 0.0:
        return [(np.zeros_like(w), np.zeros_like(b)) for w, b in model.layers]
    g = (dd / dist)[None, :] / np.maximum(start_probs, 1e-12) / len(probes)
    dz = p * (g - (p * g).sum(axis=1, keepdims=True))
    return _backward(model, acts, dz)


def train_local(model: ModelParams, data, cfg: TrainConfig,
                reference: Optional[ModelParams] = None, seed: int = 0) -> ModelParams:
    """Minibatch SGD on cross-entropy, optionally with an anomaly-evasion term.

    ``data`` is any object with ``x`` and ``y`` arrays. In ``cosine`` evasion
    mode ``reference`` defaults to the starting model; in ``ddif`` mode it is
    required and its division differences (relative to the starting model)
    are the target the local model is pulled towards.
    """
    x = np.asarray(data.x, dtype=np.float64)
    y = np.asarray(data.y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("empty dataset")
    if x.shape[1] != model.in_dim:
        raise ValueError("dataset feature dimension does not match model")
    evasion = cfg.loss_mode == "anomaly_evasion" and cfg.alpha < 1.0
    rng = np.random.default_rng(seed)

    layers = [(w.copy(), b.copy()) for w, b in model.layers]
    dims = model.layer_dims
    n_layers = len(layers)

    if evasion and cfg.anomaly_kind == "cosine":
        ref_flat = (reference if reference is not None else model).flat()
    if evasion and cfg.anomaly_kind == "ddif":
        if reference is None:
            raise ValueError("ddif evasion needs a reference model")
        probes = np.random.default_rng([seed, 7]).uniform(
            0.0, 1.0, size=(cfg.ddif_probe_samples, model.in_dim))
        start_probs = predict_proba(model, probes)
        target = (predict_proba(reference, probes) / np.maximum(start_probs, 1e-12)).mean(axis=0)

    n = len(y)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            cur = ModelParams(tuple(layers))
            grads = _class_grads(cur, x[idx], y[idx])
            if evasion:
                if cfg.anomaly_kind == "cosine":
                    ga = ParamUpdate.from_flat(_cosine_grad(cur.flat(), ref_flat), dims).deltas
                else:
                    ga = _ddif_grads(cur, probes, start_probs, target)
                grads = [(cfg.alpha * gw + (1 - cfg.alpha) * aw,
                          cfg.alpha * gb + (1 - cfg.alpha) * ab)
                         for (gw, gb), (aw, ab) in zip(grads, ga)]
            for k in range(n_layers):
                if cfg.freeze_output_layer and k == n_layers - 1:
                    continue
                w, b = layers[k]
                gw, gb = grads[k]
                layers[k] = (w - cfg.learning_rate * gw, b - cfg.learning_rate * gb)
    return ModelParams(tuple(layers))


def diff(local: ModelParams, global_model: ModelParams) -> ParamUpdate:
    if not local.same_shape(global_model):
        raise ValueError("shape mismatch between local and global model")
    return ParamUpdate(tuple((wl - wg, bl - bg)
                             for (wl, bl), (wg, bg) in zip(local.layers, global_model.layers)))


def apply_scaled(global_model: ModelParams, update: ParamUpdate, lam: float) -> ModelParams:
    """``global + lam * update``."""
    if update.layer_dims != global_model.layer_dims:
        raise ValueError("shape mismatch between update and model")
    if not np.isfinite(lam):
        raise ValueError("scale must be finite")
    if lam == 1.0:
        return ModelParams(tuple((wg + dw, bg + db)
                                 for (wg, bg), (dw, db) in zip(global_model.layers, update.deltas)))
    return ModelParams(tuple((wg + lam * dw, bg + lam * db)
                             for (wg, bg), (dw, db) in zip(global_model.layers, update.deltas)))


def mean_update(updates: Sequence[ParamUpdate]) -> ParamUpdate:
    """Average of updates, summed sequentially in a canonical order.

    Sorting by the raw bytes of each flattened update makes the result
    independent of the order of ``updates``.
    """
    if len(updates) == 0:
        raise ValueError("need at least one update")
    dims = updates[0].layer_dims
    if any(u.layer_dims != dims for u in updates):
        raise ValueError("updates have different shapes")
    flats = sorted((u.flat() for u in updates), key=lambda f: f.tobytes())
    acc = np.zeros_like(flats[0])
    for f in flats:
        acc = acc + f
    return ParamUpdate.from_flat(acc / len(flats), dims)


def fedavg(global_model: ModelParams, updates: Sequence[ParamUpdate]) -> ModelParams:
    """Equal-weight federated averaging: ``global + mean(updates)``."""
    return apply_scaled(global_model, mean_update(updates), 1.0)


def output_layer_view(model: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Read-only ``(bias[P], weights[P, H])`` of the output layer."""
    w, b = model.layers[-1]
    return b, w


def save_model(model: ModelParams, path) -> None:
    """Write a JSON snapshot; float repr round-trips exactly."""
    doc = {
        "format": "deepsight-model",
        "version": SNAPSHOT_VERSION,
        "layer_dims": model.layer_dims,
        "layers": [{"weight": w.ravel().tolist(), "bias": b.tolist()} for w, b in model.layers],
    }
    Path(path).write_text(json.dumps(doc))


def load_model(path) -> ModelParams:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "deepsight-model" or doc.get("version") != SNAPSHOT_VERSION:
        raise ValueError("not a supported model snapshot")
    dims = doc["layer_dims"]
    layers = []
    for (n_in, n_out), layer in zip(zip(dims[:-1], dims[1:]), doc["layers"]):
        layers.append((np.array(layer["weight"], dtype=np.float64).reshape(n_out, n_in),
                       np.array(layer["bias"], dtype=np.float64)))
    return ModelParams(tuple(layers))
