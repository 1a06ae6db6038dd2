"""Backdoor adversaries: data poisoning, constrain-and-scale and adaptive variants."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .nn import ModelParams, ParamUpdate, TrainConfig, diff, train_local

STRATEGIES = ("data_poison_only", "constrain_and_scale", "freeze_output",
              "noise_injection", "gap_bridging", "ddif_evasion")


@dataclass(frozen=True)
class AttackConfig:
    """Adversary settings.

    ``norm_cap`` is the L2 norm the attacker scales towards: a number, the
    string ``"median_benign"`` (resolved by the simulation each round from the
    benign updates), or ``None`` for no cap.
    """

    strategy: str = "constrain_and_scale"
    pdr: float = 0.5
    norm_cap: object = "median_benign"
    alpha: float = 0.7
    adv_learning_rate: float = 0.1
    adv_epochs: int = 2
    batch_size: int = 32
    noise_sigma: float = 0.0
    pdr_schedule: tuple = ()
    n_triggers: int = 1

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown attack strategy {self.strategy!r}")
        if not 0.0 < self.pdr <= 1.0:
            raise ValueError("pdr must lie in (0, 1]")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.strategy == "gap_bridging":
            if not self.pdr_schedule or any(not 0 < p <= 1 for p in self.pdr_schedule):
                raise ValueError("gap_bridging needs a pdr_schedule of values in (0, 1]")
        if isinstance(self.norm_cap, str) and self.norm_cap != "median_benign":
            raise ValueError(f"unknown norm_cap {self.norm_cap!r}")
        if isinstance(self.norm_cap, (int, float)) and self.norm_cap <= 0:
            raise ValueError("norm_cap must be positive")
        if self.n_triggers < 1:
            raise ValueError("n_triggers must be >= 1")

    def train_config(self) -> TrainConfig:
        if self.strategy == "data_poison_only":
            mode, kind = "plain", "cosine"
        elif self.strategy == "ddif_evasion":
            mode, kind = "anomaly_evasion", "ddif"
        else:
            mode, kind = "anomaly_evasion", "cosine"
        return TrainConfig(learning_rate=self.adv_learning_rate, epochs=self.adv_epochs,
                           batch_size=self.batch_size, loss_mode=mode, alpha=self.alpha,
                           anomaly_kind=kind,
                           freeze_output_layer=self.strategy == "freeze_output")


def scaling_factor(n_total: int, n_compromised: int, norm_cap: float, update_norm: float) -> float:
    """``max(1, min(N/n, S/||U||))``; a zero-norm update gets the ``N/n`` cap."""
    if not n_total > n_compromised >= 1:
        raise ValueError("need N > n >= 1")
    if norm_cap <= 0 or update_norm < 0:
        raise ValueError("need S > 0 and a non-negative norm")
    cap = n_total / n_compromised
    if update_norm == 0.0:
        return cap
    return max(1.0, min(cap, norm_cap / update_norm))


def gap_bridging_pdrs(client_ids: Sequence[int], schedule: Sequence[float]) -> dict[int, float]:
    """Split compromised clients into consecutive subgroups of ``ceil(n/len(schedule))``.

    Subgroup ``k`` poisons with ``schedule[k]``.
    """
    ids = list(client_ids)
    if not ids:
        return {}
    size = math.ceil(len(ids) / len(schedule))
    return {cid: float(schedule[i // size]) for i, cid in enumerate(ids)}


def adversarial_round(global_model: ModelParams, data, cfg: AttackConfig, n_total: int,
                      n_compromised: int, seed: int = 0, norm_cap: Optional[float] = None,
                      reference: Optional[ModelParams] = None) -> ParamUpdate:
    """Train a poisoned local model and return the (scaled, possibly noised) update.

    ``data`` must already be poisoned. ``norm_cap`` overrides ``cfg.norm_cap``
    once the simulation has resolved it. For ``ddif_evasion`` the ``reference``
    model is the one whose division differences the attacker imitates.
    """
    tcfg = cfg.train_config()
    if tcfg.loss_mode == "anomaly_evasion" and tcfg.anomaly_kind == "cosine":
        reference = global_model
    local = train_local(global_model, data, tcfg, reference=reference, seed=seed)
    update = diff(local, global_model)
    if cfg.strategy != "data_poison_only":
        cap = norm_cap if norm_cap is not None else cfg.norm_cap
        if cap is None:
            cap = math.inf
        if isinstance(cap, str):
            raise ValueError("norm_cap must be resolved to a number before training")
        gamma = scaling_factor(n_total, n_compromised, float(cap), update.l2)
        if gamma != 1.0:
            update = update.scaled(gamma)
    if cfg.strategy == "noise_injection" and cfg.noise_sigma > 0:
        rng = np.random.default_rng([seed, 11])
        flat = update.flat()
        update = ParamUpdate.from_flat(flat + rng.normal(0.0, cfg.noise_sigma, size=flat.size),
                                       update.layer_dims)
    return update
