"""Filtering, clipping and aggregation layers of the DeepSight defense."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import clustering
from .features import DEFAULT_DDIF_SAMPLES, RoundFeatures, extract_features
from .nn import ModelParams, ParamUpdate, diff, fedavg

MODES = ("deepsight", "filtering_only", "clipping_only", "none")


@dataclass(frozen=True)
class DefenseConfig:
    mode: str = "deepsight"
    tau: float = 1.0 / 3.0
    tf_override: Optional[float] = None
    final_round_clusterwise: bool = False
    ddif_samples: int = DEFAULT_DDIF_SAMPLES
    ddif_seeds: tuple = (0, 1, 2)
    cosine_on: str = "bias"
    min_cluster_size: int = 2
    min_samples: Optional[int] = None  # None: equal to min_cluster_size

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown defense mode {self.mode!r}")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")


@dataclass
class FilterVerdict:
    suspicious: np.ndarray  # bool[N]
    boundary: float
    accepted: list
    rejected: list
    clusters: np.ndarray  # cluster labels, -1 = noise


@dataclass
class AggregationResult:
    model: ModelParams
    s_bound: Optional[float] = None
    verdict: Optional[FilterVerdict] = None
    features: Optional[RoundFeatures] = None
    norms: Optional[np.ndarray] = None
    # final-round clusterwise output: one model per client position
    client_models: Optional[list] = None
    skipped: bool = False


def classify(te_counts: Sequence[int]) -> tuple[np.ndarray, float]:
    """Label updates whose exceedings are at most half the median as suspicious."""
    te = np.asarray(te_counts, dtype=np.float64)
    if te.size == 0:
        raise ValueError("need at least one count")
    boundary = float(np.median(te)) / 2.0
    return te <= boundary, boundary


def pci(labels: np.ndarray, suspicious: np.ndarray, tau: float = 1.0 / 3.0) -> list[int]:
    """Accept whole clusters whose suspicious share is below ``tau``."""
    labels = np.asarray(labels)
    suspicious = np.asarray(suspicious, dtype=bool)
    if labels.shape != suspicious.shape:
        raise ValueError("labels and suspicious flags differ in length")
    accepted = []
    for members in clustering.clusters_of(labels):
        if suspicious[members].sum() / len(members) < tau:
            accepted.extend(members.tolist())
    return sorted(accepted)


def clipping_bound(norms: Sequence[float]) -> float:
    """Median of the update norms (mean of the central pair for even counts)."""
    norms = np.asarray(norms, dtype=np.float64)
    if norms.size == 0:
        raise ValueError("need at least one norm")
    return float(np.median(norms))


def clip(update: ParamUpdate, s_bound: float) -> ParamUpdate:
    """Scale ``update`` down to norm ``s_bound``; updates within bound pass unchanged."""
    if s_bound <= 0:
        raise ValueError("clipping bound must be positive")
    if update.l2 <= s_bound:
        return update
    return update.scaled(s_bound / update.l2)


def filter_updates(global_model: ModelParams, locals_: Sequence[ModelParams],
                   cfg: DefenseConfig) -> tuple[FilterVerdict, RoundFeatures]:
    """Feature extraction, classification, ensemble clustering and PCI."""
    feats = extract_features(global_model, locals_, seeds=cfg.ddif_seeds,
                             n_samples=cfg.ddif_samples, tf_override=cfg.tf_override,
                             cosine_on=cfg.cosine_on)
    suspicious, boundary = classify(feats.te)
    labels = clustering.ensemble_cluster(feats.neups, feats.ddifs, feats.cosine,
                                         min_cluster_size=cfg.min_cluster_size,
                                         min_samples=cfg.min_samples)
    accepted = pci(labels, suspicious, cfg.tau)
    acc = set(accepted)
    rejected = [i for i in range(len(locals_)) if i not in acc]
    return FilterVerdict(suspicious=suspicious, boundary=boundary, accepted=accepted,
                         rejected=rejected, clusters=labels), feats


def deepsight_aggregate(global_model: ModelParams, locals_: Sequence[ModelParams],
                        cfg: DefenseConfig = DefenseConfig(),
                        is_final_round: bool = False) -> AggregationResult:
    """Run the configured defense layers and aggregate.

    An empty accepted set leaves the global model unchanged. In the final
    round with ``final_round_clusterwise`` every cluster (noise points alone)
    is aggregated separately from all its members, filtered ones included,
    and ``client_models`` maps each input position to its cluster's model.
    """
    if len(locals_) < 1:
        raise ValueError("need at least one local model")
    updates = [diff(m, global_model) for m in locals_]
    norms = np.array([u.l2 for u in updates])
    if cfg.mode == "none":
        return AggregationResult(model=fedavg(global_model, updates), norms=norms)

    s_bound = None
    if cfg.mode in ("deepsight", "clipping_only"):
        s_bound = clipping_bound(norms)
        prepared = [clip(u, s_bound) if s_bound > 0 else u for u in updates]
    else:
        prepared = updates
    if cfg.mode == "clipping_only":
        return AggregationResult(model=fedavg(global_model, prepared), s_bound=s_bound,
                                 norms=norms)

    if len(locals_) < 2:
        raise ValueError("filtering needs at least two local models")
    verdict, feats = filter_updates(global_model, locals_, cfg)
    if verdict.accepted:
        model = fedavg(global_model, [prepared[i] for i in verdict.accepted])
        skipped = False
    else:
        model, skipped = global_model, True
    result = AggregationResult(model=model, s_bound=s_bound, verdict=verdict, features=feats,
                               norms=norms, skipped=skipped)
    if is_final_round and cfg.final_round_clusterwise:
        client_models = [None] * len(locals_)
        for members in clustering.clusters_of(verdict.clusters):
            m = fedavg(global_model, [prepared[i] for i in members])
            for i in members:
                client_models[i] = m
        result.client_models = client_models
    return result
