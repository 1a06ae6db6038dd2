"""Executable invariants of the inspection features and the clipping layer.

Each check draws its own random trials from a seeded generator and returns
a :class:`PropertyResult`; ``run_all`` bundles them for the ``prove``
command, which exits nonzero when any result has failures.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .defense import clip, clipping_bound
from .features import (cosine_matrix, neups, threshold_exceedings, threshold_factor,
                       update_energy)
from .nn import ModelParams, ParamUpdate, apply_scaled

SCALES = tuple(s * 10.0 ** k for k in range(-6, 7) for s in (1.0, -1.0))
TF_GRID = (0.001, 0.005, 0.01, 0.02, 0.05, 0.1)


@dataclass
class PropertyResult:
    name: str
    trials: int
    failures: int
    max_error: float = 0.0
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def to_json(self) -> str:
        return json.dumps({**asdict(self), "passed": self.passed}, sort_keys=True)


def _random_model_pair(rng: np.random.Generator):
    in_dim = int(rng.integers(2, 9))
    hidden = int(rng.integers(2, 9))
    n_cls = int(rng.integers(2, 13))
    dims = [in_dim, hidden, n_cls]
    g = ModelParams.from_flat(rng.normal(0.0, 1.0, size=_n_params(dims)), dims)
    u = ParamUpdate.from_flat(rng.normal(0.0, 1.0, size=_n_params(dims)), dims)
    return g, u


def _n_params(dims) -> int:
    return sum(o * i + o for i, o in zip(dims[:-1], dims[1:]))


def _scaling_trials(trials: int, seed: int):
    """Yield ``(neup_unit, neup_scaled, te_unit, te_scaled)`` per random trial."""
    rng = np.random.default_rng([seed, 1])
    for _ in range(trials):
        g, u = _random_model_pair(rng)
        lam = SCALES[int(rng.integers(len(SCALES)))]
        base = neups(update_energy(g, apply_scaled(g, u, 1.0)))
        scaled = neups(update_energy(g, apply_scaled(g, u, lam)))
        yield base, scaled, threshold_exceedings(base), threshold_exceedings(scaled)


def neup_scaling_invariance(trials: int = 1000, seed: int = 0, atol: float = 1e-9) -> PropertyResult:
    """NEUPs of ``G + lam*U`` match those of ``G + U`` for every sign and magnitude of lam."""
    fails, worst = 0, 0.0
    for base, scaled, _, _ in _scaling_trials(trials, seed):
        err = float(np.max(np.abs(base - scaled)))
        worst = max(worst, err)
        fails += int(err > atol)
    return PropertyResult("neup_scaling_invariance", trials, fails, worst, f"atol={atol}")


def te_scaling_invariance(trials: int = 1000, seed: int = 0) -> PropertyResult:
    """Threshold exceedings are exactly equal under the same randomization."""
    fails = sum(int(a != b) for _, _, a, b in _scaling_trials(trials, seed))
    return PropertyResult("te_scaling_invariance", trials, fails)


def cosine_scaling_stability(trials: int = 1000, seed: int = 0, atol: float = 1e-12) -> PropertyResult:
    """``d(lam*u, v) == d(u, v)`` for positive lam and ``d(-u, v) == 2 - d(u, v)``."""
    rng = np.random.default_rng([seed, 2])
    fails, worst = 0, 0.0
    for _ in range(trials):
        p = int(rng.integers(2, 33))
        u, v = rng.normal(size=p), rng.normal(size=p)
        lam = 10.0 ** rng.uniform(-6, 6)
        d = cosine_matrix([u, v, lam * u, -u])
        err = float(max(abs(d[2, 1] - d[0, 1]), abs(d[3, 1] - (2.0 - d[0, 1]))))
        worst = max(worst, err)
        fails += int(err > atol)
    return PropertyResult("cosine_scaling_stability", trials, fails, worst, f"atol={atol}")


def tf_monotonicity(trials: int = 100, seed: int = 0) -> PropertyResult:
    """TE never grows as the threshold factor grows; the default factor switches at P=100."""
    rng = np.random.default_rng([seed, 3])
    fails = 0
    for _ in range(trials):
        p = int(rng.integers(2, 201))
        vec = neups(np.abs(rng.normal(size=p)) * rng.exponential(size=p))
        te = [threshold_exceedings(vec, tf) for tf in TF_GRID]
        fails += int(any(b > a for a, b in zip(te, te[1:])))
    flips = [p for p in range(2, 300) if threshold_factor(p) == 0.01 and threshold_factor(p - 1) != 0.01]
    switch_ok = (flips == [100] and threshold_factor(100) == 0.01 == 1.0 / 100
                 and threshold_factor(99) == 1.0 / 99 and threshold_factor(101) == 0.01)
    fails += int(not switch_ok)
    return PropertyResult("tf_monotonicity", trials + 1, fails, detail=f"factor switch at {flips}")


def clipping_contract(trials: int = 1000, seed: int = 0) -> PropertyResult:
    """Clipped norms stay within the bound and in-bound updates pass untouched.

    Every trial also plants a majority group of similar norms and checks that
    the median bound lands inside that group's range.
    """
    rng = np.random.default_rng([seed, 4])
    fails, worst = 0, 0.0
    for _ in range(trials):
        n = int(rng.integers(3, 41))
        n_major = n // 2 + 1
        centre = 10.0 ** rng.uniform(-3, 3)
        norms = np.concatenate([centre * rng.uniform(0.5, 1.5, size=n_major),
                                centre * 10.0 ** rng.uniform(-4, 4, size=n - n_major)])
        dims = [int(rng.integers(1, 6)), int(rng.integers(2, 6))]
        updates = []
        for target in norms:
            flat = rng.normal(size=_n_params(dims))
            updates.append(ParamUpdate.from_flat(flat * (target / np.linalg.norm(flat)), dims))
        s = clipping_bound([u.l2 for u in updates])
        major = np.array([u.l2 for u in updates[:n_major]])
        ok = major.min() <= s <= major.max()
        for u in updates:
            c = clip(u, s)
            worst = max(worst, c.l2 - s)
            ok &= c.l2 <= s + 1e-9
            if u.l2 <= s:
                ok &= np.array_equal(c.flat(), u.flat())
        fails += int(not ok)
    return PropertyResult("clipping_contract", trials, fails, float(max(worst, 0.0)))


SUITE: dict[str, Callable[..., PropertyResult]] = {
    "neup_scaling_invariance": neup_scaling_invariance,
    "te_scaling_invariance": te_scaling_invariance,
    "cosine_scaling_stability": cosine_scaling_stability,
    "tf_monotonicity": tf_monotonicity,
    "clipping_contract": clipping_contract,
}


def run_all(seed: int = 0) -> list[PropertyResult]:
    return [check(seed=seed) for check in SUITE.values()]
