"""Deep-inspection features of model updates.

Division differences compare local and global predictions on random probes;
update energies, NEUPs and threshold exceedings are computed from the
output-layer parameter change only.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .nn import ModelParams, output_layer_view, predict_proba

DDIF_EPS = 1e-12
DEFAULT_DDIF_SAMPLES = 20_000


@lru_cache(maxsize=16)
def probe_inputs(seed: int, n_samples: int, in_dim: int) -> np.ndarray:
    """Uniform ``[0, 1]`` probes from a counter-based (Philox) generator."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.Generator(np.random.Philox(key=seed))
    probes = rng.random((n_samples, in_dim))
    probes.setflags(write=False)
    return probes


def ddif_many(global_model: ModelParams, locals_: Sequence[ModelParams], seed: int,
              n_samples: int = DEFAULT_DDIF_SAMPLES) -> np.ndarray:
    """Division differences ``[N, P]`` of several local models against one global."""
    probes = probe_inputs(seed, n_samples, global_model.in_dim)
    denom = np.maximum(predict_proba(global_model, probes), DDIF_EPS)
    out = np.empty((len(locals_), global_model.n_classes))
    for k, local in enumerate(locals_):
        if not local.same_shape(global_model):
            raise ValueError("architecture mismatch")
        out[k] = (predict_proba(local, probes) / denom).mean(axis=0)
    return out


def ddif(global_model: ModelParams, local: ModelParams, seed: int,
         n_samples: int = DEFAULT_DDIF_SAMPLES, in_dim: Optional[int] = None) -> np.ndarray:
    """Mean ratio of local to global class probabilities over random probes."""
    if in_dim is not None and in_dim != global_model.in_dim:
        raise ValueError("in_dim does not match the model")
    return ddif_many(global_model, [local], seed, n_samples)[0]


def update_energy(global_model: ModelParams, local: ModelParams) -> np.ndarray:
    """L1 magnitude of each output neuron's bias and weight change."""
    if not local.same_shape(global_model):
        raise ValueError("shape mismatch")
    bg, wg = output_layer_view(global_model)
    bl, wl = output_layer_view(local)
    return np.abs(bl - bg) + np.abs(wl - wg).sum(axis=1)


def energy_from_output_delta(d_bias: np.ndarray, d_weight: np.ndarray) -> np.ndarray:
    return np.abs(d_bias) + np.abs(d_weight).sum(axis=1)


def neups(energies: np.ndarray) -> np.ndarray:
    """Squared energies normalised to sum to one.

    An all-zero energy vector carries no label information and maps to the
    uniform vector.
    """
    e = np.asarray(energies, dtype=np.float64)
    sq = e * e
    total = sq.sum()
    if total == 0.0:
        return np.full(e.shape, 1.0 / e.size)
    return sq / total


def threshold_factor(n_classes: int) -> float:
    return max(0.01, 1.0 / n_classes)


def te_threshold(neup: np.ndarray, tf_override: Optional[float] = None) -> float:
    neup = np.asarray(neup)
    factor = threshold_factor(neup.size) if tf_override is None else tf_override
    return factor * float(neup.max())


def threshold_exceedings(neup: np.ndarray, tf_override: Optional[float] = None) -> int:
    """Number of NEUPs strictly above the client's threshold."""
    neup = np.asarray(neup)
    return int(np.count_nonzero(neup > te_threshold(neup, tf_override)))


def cosine_matrix(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Pairwise ``1 - cos`` distances; zero vectors sit at distance 1 from all others."""
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim != 2 or len(v) < 2:
        raise ValueError("need at least two equal-length vectors")
    norms = np.linalg.norm(v, axis=1)
    nonzero = norms > 0
    unit = np.zeros_like(v)
    unit[nonzero] = v[nonzero] / norms[nonzero, None]
    cos = np.clip(unit @ unit.T, -1.0, 1.0)
    d = 1.0 - cos
    zero_rows = ~nonzero
    d[zero_rows, :] = 1.0
    d[:, zero_rows] = 1.0
    d = np.clip(d, 0.0, 2.0)
    d = (d + d.T) / 2
    np.fill_diagonal(d, 0.0)
    return d


@dataclass
class FeatureBundle:
    """Per-client features for one round."""

    client_id: int
    ddifs: list
    energies: list
    neups: list
    te: int
    threshold: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class RoundFeatures:
    """Features of all clients in a round, stacked by client index."""

    ddifs: np.ndarray  # [n_seeds, N, P]
    energies: np.ndarray  # [N, P]
    neups: np.ndarray  # [N, P]
    te: np.ndarray  # [N]
    thresholds: np.ndarray  # [N]
    cosine: np.ndarray  # [N, N]

    def bundles(self, client_ids: Optional[Sequence[int]] = None) -> list[FeatureBundle]:
        ids = range(len(self.te)) if client_ids is None else client_ids
        return [FeatureBundle(client_id=int(cid),
                              ddifs=[self.ddifs[s, k].tolist() for s in range(len(self.ddifs))],
                              energies=self.energies[k].tolist(), neups=self.neups[k].tolist(),
                              te=int(self.te[k]), threshold=float(self.thresholds[k]))
                for k, cid in enumerate(ids)]


def extract_features(global_model: ModelParams, locals_: Sequence[ModelParams],
                     seeds: Sequence[int] = (0, 1, 2), n_samples: int = DEFAULT_DDIF_SAMPLES,
                     tf_override: Optional[float] = None,
                     cosine_on: str = "bias") -> RoundFeatures:
    """Compute every filtering feature for a list of local models."""
    energies = np.array([update_energy(global_model, m) for m in locals_])
    nu = np.array([neups(e) for e in energies])
    te = np.array([threshold_exceedings(c, tf_override) for c in nu], dtype=np.int64)
    thr = np.array([te_threshold(c, tf_override) for c in nu])
    if cosine_on == "bias":
        gb = output_layer_view(global_model)[0]
        vecs = [output_layer_view(m)[0] - gb for m in locals_]
    elif cosine_on == "full":
        gf = global_model.flat()
        vecs = [m.flat() - gf for m in locals_]
    else:
        raise ValueError(f"unknown cosine_on {cosine_on!r}")
    cos = cosine_matrix(vecs) if len(locals_) >= 2 else np.zeros((len(locals_), len(locals_)))
    dd = np.array([ddif_many(global_model, locals_, s, n_samples) for s in seeds])
    return RoundFeatures(ddifs=dd, energies=energies, neups=nu, te=te, thresholds=thr, cosine=cos)
