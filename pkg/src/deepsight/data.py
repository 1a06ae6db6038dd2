"""Synthetic federations: grouped Gaussian-mixture client data and triggers.

Every client belongs to a group. Clients of one group draw labels from the
same Dirichlet-skewed class distribution and share a feature offset, so
their datasets are IID with each other but differ from other groups.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np


@dataclass(frozen=True)
class GroupSpec:
    weight: float = 1.0
    # Dirichlet concentration of the group's class distribution; large = uniform
    skew_alpha: float = 1.0


@dataclass(frozen=True)
class FederationSpec:
    n_clients: int = 60
    pmr: float = 0.25
    n_classes: int = 10
    in_dim: int = 20
    groups: tuple = (GroupSpec(), GroupSpec(), GroupSpec())
    samples_per_client: tuple = (150, 250)
    rng_seed: int = 0
    class_sep: float = 2.0
    group_shift: float = 0.5
    noise_std: float = 1.0

    def __post_init__(self):
        if self.n_clients < 1:
            raise ValueError("n_clients must be >= 1")
        if not 0.0 <= self.pmr < 0.5:
            raise ValueError("pmr must lie in [0, 0.5)")
        if self.n_classes < 2 or self.in_dim < 1:
            raise ValueError("need n_classes >= 2 and in_dim >= 1")
        if len(self.groups) < 1 or any(g.weight <= 0 or g.skew_alpha <= 0 for g in self.groups):
            raise ValueError("groups need positive weights and skew")
        lo, hi = self.samples_per_client
        if not 1 <= lo <= hi:
            raise ValueError("samples_per_client must be a range 1 <= lo <= hi")

    @property
    def n_compromised(self) -> int:
        return int(math.floor(self.pmr * self.n_clients + 1e-9))


@dataclass(frozen=True, eq=False)
class ClientDataset:
    x: np.ndarray
    y: np.ndarray
    attack_mask: np.ndarray
    client_id: int = 0
    group_id: int = 0
    is_compromised: bool = False
    is_poisoned: bool = False
    pdr: float = 0.0

    def __post_init__(self):
        if len(self.y) == 0:
            raise ValueError("dataset must be non-empty")
        if not (len(self.x) == len(self.y) == len(self.attack_mask)):
            raise ValueError("x, y and attack_mask lengths differ")
        for name, dtype in (("x", np.float64), ("y", np.int64), ("attack_mask", bool)):
            arr = np.array(getattr(self, name), dtype=dtype, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.y)

    def label_counts(self, n_classes: int) -> np.ndarray:
        return np.bincount(self.y, minlength=n_classes)


@dataclass(frozen=True)
class TriggerSpec:
    """Fixed values written into a subset of input coordinates."""

    pattern: tuple  # ((coord, value), ...)
    target: int

    def __post_init__(self):
        if len(self.pattern) < 1:
            raise ValueError("trigger must touch at least one coordinate")
        if self.target < 0:
            raise ValueError("target class must be non-negative")

    @property
    def coords(self) -> np.ndarray:
        return np.array([c for c, _ in self.pattern], dtype=np.int64)

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.pattern], dtype=np.float64)

    def apply(self, x: np.ndarray) -> np.ndarray:
        out = np.array(x, dtype=np.float64, copy=True)
        out[..., self.coords] = self.values
        return out

    def matches(self, x: np.ndarray) -> np.ndarray:
        return np.all(np.asarray(x)[..., self.coords] == self.values, axis=-1)


def _class_means(spec: FederationSpec) -> np.ndarray:
    rng = np.random.default_rng([spec.rng_seed, 0])
    return rng.normal(0.0, spec.class_sep, size=(spec.n_classes, spec.in_dim))


def group_distributions(spec: FederationSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-group class proportions ``[G, P]`` and feature offsets ``[G, in_dim]``."""
    props, offsets = [], []
    for g, grp in enumerate(spec.groups):
        rng = np.random.default_rng([spec.rng_seed, 1, g])
        props.append(rng.dirichlet(np.full(spec.n_classes, grp.skew_alpha)))
        offsets.append(rng.normal(0.0, spec.group_shift, size=spec.in_dim))
    return np.array(props), np.array(offsets)


def _apportion(weights: Sequence[float], n: int) -> np.ndarray:
    """Largest-remainder apportionment of ``n`` items to ``weights``."""
    w = np.asarray(weights, dtype=np.float64)
    quota = w / w.sum() * n
    counts = np.floor(quota).astype(int)
    rest = n - counts.sum()
    order = np.argsort(-(quota - counts), kind="stable")
    counts[order[:rest]] += 1
    return counts


def _draw(spec, means, props, offsets, group, n, rng):
    y = rng.choice(spec.n_classes, size=n, p=props[group])
    x = means[y] + offsets[group] + rng.normal(0.0, spec.noise_std, size=(n, spec.in_dim))
    return x, y


def make_federation(spec: FederationSpec) -> list[ClientDataset]:
    """Build ``n_clients`` clean datasets; compromised clients are only flagged."""
    means = _class_means(spec)
    props, offsets = group_distributions(spec)
    rng = np.random.default_rng([spec.rng_seed, 2])
    counts = _apportion([g.weight for g in spec.groups], spec.n_clients)
    group_of = rng.permutation(np.repeat(np.arange(len(spec.groups)), counts))
    compromised = set(rng.choice(spec.n_clients, size=spec.n_compromised, replace=False).tolist())
    lo, hi = spec.samples_per_client
    clients = []
    for cid in range(spec.n_clients):
        crng = np.random.default_rng([spec.rng_seed, 3, cid])
        n = int(crng.integers(lo, hi + 1))
        x, y = _draw(spec, means, props, offsets, int(group_of[cid]), n, crng)
        clients.append(ClientDataset(x=x, y=y, attack_mask=np.zeros(n, dtype=bool),
                                     client_id=cid, group_id=int(group_of[cid]),
                                     is_compromised=cid in compromised))
    return clients


def benign_testset(spec: FederationSpec, n: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Held-out samples from the population mixture of all groups."""
    if n < 1:
        raise ValueError("n must be >= 1")
    means = _class_means(spec)
    props, offsets = group_distributions(spec)
    rng = np.random.default_rng([spec.rng_seed, 4, seed])
    per_group = _apportion([g.weight for g in spec.groups], n)
    xs, ys = [], []
    for g, k in enumerate(per_group):
        if k:
            x, y = _draw(spec, means, props, offsets, g, int(k), rng)
            xs.append(x)
            ys.append(y)
    return np.concatenate(xs), np.concatenate(ys)


def make_triggers(spec: FederationSpec, count: int = 1, size: int = 3,
                  value: float = 4.0, seed: int = 0) -> list[TriggerSpec]:
    """``count`` triggers on disjoint coordinate sets with distinct targets."""
    if count < 1 or count * size > spec.in_dim or count > spec.n_classes:
        raise ValueError("cannot place that many triggers")
    rng = np.random.default_rng([spec.rng_seed, 5, seed])
    coords = rng.permutation(spec.in_dim)[:count * size]
    targets = rng.permutation(spec.n_classes)[:count]
    return [TriggerSpec(pattern=tuple((int(c), float(value)) for c in coords[k * size:(k + 1) * size]),
                        target=int(targets[k]))
            for k in range(count)]


def split_trigger(trig: TriggerSpec, parts: int) -> list[TriggerSpec]:
    """Distributed-trigger pieces: each part carries a slice of the pattern."""
    if not 1 <= parts <= len(trig.pattern):
        raise ValueError("cannot split trigger into that many parts")
    chunks = np.array_split(np.arange(len(trig.pattern)), parts)
    return [TriggerSpec(pattern=tuple(trig.pattern[i] for i in c), target=trig.target)
            for c in chunks]


def attack_count(n: int, pdr: float) -> int:
    return max(1, int(math.floor(pdr * n + 1e-9)))


def poison(data: ClientDataset, trig: Union[TriggerSpec, Sequence[TriggerSpec]],
           pdr: float, seed: int = 0) -> ClientDataset:
    """Replace a ``pdr`` fraction of samples by triggered samples.

    With several triggers the attack samples are split round-robin between
    them. The dataset size is unchanged.
    """
    if not 0.0 < pdr <= 1.0:
        raise ValueError("pdr must lie in (0, 1]")
    triggers = [trig] if isinstance(trig, TriggerSpec) else list(trig)
    n = len(data)
    k = attack_count(n, pdr)
    rng = np.random.default_rng([seed, data.client_id, 6])
    idx = np.sort(rng.choice(n, size=k, replace=False))
    x = np.array(data.x, copy=True)
    y = np.array(data.y, copy=True)
    mask = np.zeros(n, dtype=bool)
    for j, i in enumerate(idx):
        t = triggers[j % len(triggers)]
        x[i] = t.apply(x[i])
        y[i] = t.target
    mask[idx] = True
    return replace(data, x=x, y=y, attack_mask=mask, is_poisoned=True, pdr=k / n)


def trigger_testset(trig: TriggerSpec, n: int, base_x: np.ndarray,
                    base_y: Optional[np.ndarray] = None, seed: int = 0):
    """``n`` triggered inputs drawn from ``base_x``, all labelled with the target.

    Base samples whose true label already equals the target are skipped when
    ``base_y`` is given.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    pool = np.asarray(base_x)
    if base_y is not None:
        pool = pool[np.asarray(base_y) != trig.target]
    rng = np.random.default_rng([seed, 8])
    pick = rng.choice(len(pool), size=n, replace=n > len(pool))
    return trig.apply(pool[pick]), np.full(n, trig.target, dtype=np.int64)


def export_dataset(data: ClientDataset, path) -> None:
    """Tab-separated dump: one row per sample, header line first."""
    d = data.x.shape[1]
    header = ["client_id", "group_id", "attack", "y"] + [f"x{i}" for i in range(d)]
    lines = ["\t".join(header)]
    for xi, yi, ai in zip(data.x, data.y, data.attack_mask):
        lines.append("\t".join([str(data.client_id), str(data.group_id), str(int(ai)), str(int(yi))]
                               + [repr(float(v)) for v in xi]))
    Path(path).write_text("\n".join(lines) + "\n")
