"""Multi-round federated simulation with attacks, defenses and reporting.

All randomness derives from ``ExperimentConfig.rng_seed`` through fixed
integer paths passed to ``numpy.random.default_rng``:

* ``[seed, 200, t]`` client sampling in round ``t``
* ``[seed, 300, t, cid]`` local training of client ``cid`` in round ``t``
* ``[seed, 100]`` initial global model
* the federation spec uses ``rng_seed = seed``
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .attacks import AttackConfig, adversarial_round, gap_bridging_pdrs
from .data import (FederationSpec, GroupSpec, benign_testset, make_federation, make_triggers,
                   poison, trigger_testset)
from .defense import AggregationResult, DefenseConfig, classify, deepsight_aggregate
from .features import extract_features
from .nn import ModelParams, TrainConfig, apply_scaled, diff, fedavg, predict, train_local

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentConfig:
    federation: FederationSpec = FederationSpec()
    hidden: tuple = (32, 32)
    train: TrainConfig = TrainConfig()
    attack: AttackConfig = AttackConfig()
    trigger_size: int = 3
    trigger_value: float = 4.0
    defense: DefenseConfig = DefenseConfig()
    rounds: int = 15
    clients_per_round: int = 60
    attack_start_round: int = 5
    eval_benign: int = 2000
    eval_trigger: int = 1000
    rng_seed: int = 0

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not 1 <= self.clients_per_round <= self.federation.n_clients:
            raise ValueError("clients_per_round must lie in [1, n_clients]")
        if self.attack_start_round < 0:
            raise ValueError("attack_start_round must be >= 0")
        if self.federation.rng_seed != self.rng_seed:
            object.__setattr__(self, "federation",
                               dataclasses.replace(self.federation, rng_seed=self.rng_seed))

    @property
    def layer_dims(self) -> list[int]:
        f = self.federation
        return [f.in_dim, *self.hidden, f.n_classes]

    def replace(self, **flat) -> "ExperimentConfig":
        """Copy with dotted-key overrides, e.g. ``replace(**{"defense.mode": "none"})``."""
        d = self.to_flat()
        for k in flat:
            if k not in d:
                raise KeyError(f"unknown config key {k!r}")
        d.update(flat)
        return ExperimentConfig.from_flat(d)

    def to_flat(self) -> dict:
        f, t, a, d = self.federation, self.train, self.attack, self.defense
        return {
            "seed": self.rng_seed,
            "rounds": self.rounds,
            "clients_per_round": self.clients_per_round,
            "attack_start_round": self.attack_start_round,
            "eval.benign_size": self.eval_benign,
            "eval.trigger_size": self.eval_trigger,
            "federation.n_clients": f.n_clients,
            "federation.pmr": f.pmr,
            "federation.n_classes": f.n_classes,
            "federation.in_dim": f.in_dim,
            "federation.group_weights": [g.weight for g in f.groups],
            "federation.group_skew": [g.skew_alpha for g in f.groups],
            "federation.samples_min": f.samples_per_client[0],
            "federation.samples_max": f.samples_per_client[1],
            "federation.class_sep": f.class_sep,
            "federation.group_shift": f.group_shift,
            "federation.noise_std": f.noise_std,
            "model.hidden": list(self.hidden),
            "train.learning_rate": t.learning_rate,
            "train.epochs": t.epochs,
            "train.batch_size": t.batch_size,
            "attack.strategy": a.strategy,
            "attack.pdr": a.pdr,
            "attack.norm_cap": a.norm_cap,
            "attack.alpha": a.alpha,
            "attack.learning_rate": a.adv_learning_rate,
            "attack.epochs": a.adv_epochs,
            "attack.noise_sigma": a.noise_sigma,
            "attack.pdr_schedule": list(a.pdr_schedule),
            "attack.n_triggers": a.n_triggers,
            "attack.trigger_size": self.trigger_size,
            "attack.trigger_value": self.trigger_value,
            "defense.mode": d.mode,
            "defense.tau": d.tau,
            "defense.tf_override": d.tf_override,
            "defense.final_round_clusterwise": d.final_round_clusterwise,
            "defense.ddif_samples": d.ddif_samples,
            "defense.ddif_seeds": list(d.ddif_seeds),
            "defense.cosine_on": d.cosine_on,
            "defense.min_cluster_size": d.min_cluster_size,
            "defense.min_samples": d.min_samples,
        }

    @classmethod
    def from_flat(cls, d: dict) -> "ExperimentConfig":
        known = set(cls().to_flat())
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown config keys: {sorted(unknown)}")
        base = cls().to_flat()
        base.update(d)
        d = base
        weights, skew = list(d["federation.group_weights"]), d["federation.group_skew"]
        if not isinstance(skew, list):
            skew = [skew] * len(weights)
        if len(skew) != len(weights):
            raise ValueError("group_weights and group_skew differ in length")
        fed = FederationSpec(
            n_clients=int(d["federation.n_clients"]), pmr=float(d["federation.pmr"]),
            n_classes=int(d["federation.n_classes"]), in_dim=int(d["federation.in_dim"]),
            groups=tuple(GroupSpec(float(w), float(s)) for w, s in zip(weights, skew)),
            samples_per_client=(int(d["federation.samples_min"]), int(d["federation.samples_max"])),
            rng_seed=int(d["seed"]), class_sep=float(d["federation.class_sep"]),
            group_shift=float(d["federation.group_shift"]),
            noise_std=float(d["federation.noise_std"]))
        train = TrainConfig(learning_rate=float(d["train.learning_rate"]),
                            epochs=int(d["train.epochs"]), batch_size=int(d["train.batch_size"]))
        cap = d["attack.norm_cap"]
        attack = AttackConfig(
            strategy=d["attack.strategy"], pdr=float(d["attack.pdr"]),
            norm_cap=cap if cap is None or isinstance(cap, str) else float(cap),
            alpha=float(d["attack.alpha"]), adv_learning_rate=float(d["attack.learning_rate"]),
            adv_epochs=int(d["attack.epochs"]), batch_size=int(d["train.batch_size"]),
            noise_sigma=float(d["attack.noise_sigma"]),
            pdr_schedule=tuple(float(p) for p in d["attack.pdr_schedule"]),
            n_triggers=int(d["attack.n_triggers"]))
        tf = d["defense.tf_override"]
        defense = DefenseConfig(
            mode=d["defense.mode"], tau=float(d["defense.tau"]),
            tf_override=None if tf is None else float(tf),
            final_round_clusterwise=bool(d["defense.final_round_clusterwise"]),
            ddif_samples=int(d["defense.ddif_samples"]),
            ddif_seeds=tuple(int(s) for s in d["defense.ddif_seeds"]),
            cosine_on=d["defense.cosine_on"],
            min_cluster_size=int(d["defense.min_cluster_size"]),
            min_samples=None if d["defense.min_samples"] is None else int(d["defense.min_samples"]))
        return cls(federation=fed, hidden=tuple(int(h) for h in d["model.hidden"]), train=train,
                   attack=attack, trigger_size=int(d["attack.trigger_size"]),
                   trigger_value=float(d["attack.trigger_value"]), defense=defense,
                   rounds=int(d["rounds"]), clients_per_round=int(d["clients_per_round"]),
                   attack_start_round=int(d["attack_start_round"]),
                   eval_benign=int(d["eval.benign_size"]), eval_trigger=int(d["eval.trigger_size"]),
                   rng_seed=int(d["seed"]))


def parse_value(text: str):
    """Config value: JSON literal if it parses, otherwise the bare string."""
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_config(text: str) -> dict:
    """Flat ``dotted.key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = parse_value(value)
    return out


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    flat = parse_config(Path(path).read_text())
    flat.update(overrides or {})
    return ExperimentConfig.from_flat(flat)


def dump_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {json.dumps(v)}\n" for k, v in cfg.to_flat().items())


# calibrated desk-scale knobs; the attacker mirrors a careful constrain-and-scale
# adversary (small learning rate, many local epochs)
REFERENCE = {
    "federation.class_sep": 1.0,
    "train.epochs": 5,
    "attack.learning_rate": 0.01,
    "attack.epochs": 10,
    "attack.alpha": 0.7,
}


def reference_config(**overrides) -> ExperimentConfig:
    """Desk-scale reference scenario: 60 clients, 10 classes, 25% compromised."""
    cfg = ExperimentConfig(defense=DefenseConfig(ddif_samples=2000)).replace(**REFERENCE)
    return cfg.replace(**overrides) if overrides else cfg


@dataclass
class RoundReport:
    round: int
    ba: float
    ma: float
    ppr: Optional[float]
    bpr: Optional[float]
    s_bound: Optional[float]
    boundary: Optional[float]
    n_selected: int
    n_attackers: int
    n_accepted: int
    n_rejected: int
    accepted: list
    rejected: list
    suspicious: list
    attackers: list
    cluster_labels: list
    te: list
    skipped: bool = False
    cluster_models: Optional[list] = None

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


def evaluate(model: ModelParams, benign_x: np.ndarray, benign_y: np.ndarray,
             trigger_sets: Sequence[tuple]) -> tuple[float, float]:
    """Main-task accuracy and backdoor accuracy (mean over trigger sets)."""
    if len(benign_y) == 0 or not trigger_sets or any(len(ty) == 0 for _, ty in trigger_sets):
        raise ValueError("test sets must be non-empty")
    ma = float(np.mean(predict(model, benign_x) == benign_y))
    ba = float(np.mean([np.mean(predict(model, tx) == ty) for tx, ty in trigger_sets]))
    return ma, ba


def filter_metrics(accepted: Iterable[int], rejected: Iterable[int],
                   truth: Sequence[bool]) -> tuple[Optional[float], Optional[float]]:
    """Precision of the rejected set and negative predictive value of the accepted set."""
    truth = np.asarray(truth, dtype=bool)
    rejected, accepted = list(rejected), list(accepted)
    ppr = float(truth[rejected].mean()) if rejected else None
    bpr = float((~truth[accepted]).mean()) if accepted else None
    return ppr, bpr


@dataclass
class RoundContext:
    round: int
    global_model: ModelParams
    selected: list
    attackers: list  # positions within ``selected``
    locals: list


class Simulation:
    """Stateful round-by-round driver for one experiment."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        spec = cfg.federation
        self.clean = make_federation(spec)
        self.compromised = sorted(c.client_id for c in self.clean if c.is_compromised)
        self.triggers = make_triggers(spec, count=cfg.attack.n_triggers, size=cfg.trigger_size,
                                      value=cfg.trigger_value)
        if cfg.attack.strategy == "gap_bridging":
            pdrs = gap_bridging_pdrs(self.compromised, cfg.attack.pdr_schedule)
        else:
            pdrs = {cid: cfg.attack.pdr for cid in self.compromised}
        self.poisoned = {cid: poison(self.clean[cid], self.triggers, pdrs[cid], seed=cfg.rng_seed)
                         for cid in self.compromised}
        self.benign_x, self.benign_y = benign_testset(spec, cfg.eval_benign, seed=1)
        self.trigger_sets = [trigger_testset(t, cfg.eval_trigger, self.benign_x, self.benign_y,
                                             seed=k)
                             for k, t in enumerate(self.triggers)]
        self.global_model = ModelParams.init(cfg.layer_dims, seed=[cfg.rng_seed, 100])

    def attacking(self, t: int) -> bool:
        return t >= self.cfg.attack_start_round and len(self.compromised) > 0

    def local_models(self, t: int) -> RoundContext:
        cfg = self.cfg
        g = self.global_model
        rng = np.random.default_rng([cfg.rng_seed, 200, t])
        selected = sorted(rng.choice(cfg.federation.n_clients, size=cfg.clients_per_round,
                                     replace=False).tolist())
        comp = set(self.compromised) if self.attacking(t) else set()
        locals_: list = [None] * len(selected)
        benign_updates = []
        for pos, cid in enumerate(selected):
            if cid in comp:
                continue
            m = train_local(g, self.clean[cid], cfg.train, seed=[cfg.rng_seed, 300, t, cid])
            locals_[pos] = m
            benign_updates.append(diff(m, g))
        attackers = [pos for pos, cid in enumerate(selected) if cid in comp]
        if attackers:
            cap = cfg.attack.norm_cap
            if cap == "median_benign":
                cap = float(np.median([u.l2 for u in benign_updates])) if benign_updates else None
            reference = None
            if cfg.attack.strategy == "ddif_evasion" and benign_updates:
                reference = fedavg(g, benign_updates)
            for pos in attackers:
                cid = selected[pos]
                upd = adversarial_round(g, self.poisoned[cid], cfg.attack,
                                        n_total=cfg.federation.n_clients,
                                        n_compromised=len(self.compromised),
                                        seed=[cfg.rng_seed, 300, t, cid], norm_cap=cap,
                                        reference=reference)
                locals_[pos] = apply_scaled(g, upd, 1.0)
        return RoundContext(round=t, global_model=g, selected=selected, attackers=attackers,
                            locals=locals_)

    def step(self, t: int) -> RoundReport:
        cfg = self.cfg
        ctx = self.local_models(t)
        final = t == cfg.rounds - 1
        res = deepsight_aggregate(ctx.global_model, ctx.locals, cfg.defense, is_final_round=final)
        self.global_model = res.model
        return self._report(ctx, res)

    def _report(self, ctx: RoundContext, res: AggregationResult) -> RoundReport:
        n = len(ctx.selected)
        truth = np.zeros(n, dtype=bool)
        truth[ctx.attackers] = True
        v = res.verdict
        if v is None:
            accepted, rejected, suspicious, labels, te, boundary = list(range(n)), [], [], [], [], None
        else:
            accepted, rejected = v.accepted, v.rejected
            suspicious = np.flatnonzero(v.suspicious).tolist()
            labels, te, boundary = v.clusters.tolist(), res.features.te.tolist(), v.boundary
        ppr, bpr = filter_metrics(accepted, rejected, truth)
        ma, ba = evaluate(res.model, self.benign_x, self.benign_y, self.trigger_sets)
        cluster_models = None
        if res.client_models is not None:
            # metrics of the model each benign participant receives
            scores = {}
            per_client = []
            for pos, m in enumerate(res.client_models):
                key = id(m)
                if key not in scores:
                    scores[key] = evaluate(m, self.benign_x, self.benign_y, self.trigger_sets)
                per_client.append({"client": ctx.selected[pos], "ma": scores[key][0],
                                   "ba": scores[key][1]})
            cluster_models = per_client
            benign = [pc for pc, bad in zip(per_client, truth) if not bad]
            if benign:
                ma = float(np.mean([pc["ma"] for pc in benign]))
                ba = float(np.mean([pc["ba"] for pc in benign]))
        ids = ctx.selected
        return RoundReport(
            round=ctx.round, ba=ba, ma=ma, ppr=ppr, bpr=bpr, s_bound=res.s_bound,
            boundary=boundary, n_selected=n, n_attackers=len(ctx.attackers),
            n_accepted=len(accepted), n_rejected=len(rejected),
            accepted=[ids[i] for i in accepted], rejected=[ids[i] for i in rejected],
            suspicious=[ids[i] for i in suspicious], attackers=[ids[i] for i in ctx.attackers],
            cluster_labels=labels, te=te, skipped=res.skipped, cluster_models=cluster_models)


SUMMARY_FIELDS = ("round", "ba", "ma", "ppr", "bpr", "s_bound", "boundary", "n_attackers",
                  "n_accepted", "n_rejected")


def write_summary_csv(reports: Sequence[RoundReport], path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_FIELDS)
    for r in reports:
        w.writerow(["" if getattr(r, f) is None else getattr(r, f) for f in SUMMARY_FIELDS])
    Path(path).write_text(buf.getvalue())


def run_experiment(cfg: ExperimentConfig, out: Optional[Path] = None) -> list[RoundReport]:
    """Run all rounds; if ``out`` is given, stream JSONL there and write a CSV summary.

    The CSV goes next to the JSONL with a ``.csv`` suffix. A failing round
    leaves the reports of the completed rounds on disk.
    """
    sim = Simulation(cfg)
    reports = []
    fh = open(out, "w") if out is not None else None
    try:
        for t in range(cfg.rounds):
            r = sim.step(t)
            reports.append(r)
            log.info("round %d: ma=%.3f ba=%.3f accepted=%d rejected=%d", t, r.ma, r.ba,
                     r.n_accepted, r.n_rejected)
            if fh:
                fh.write(r.to_json() + "\n")
                fh.flush()
    finally:
        if fh:
            fh.close()
            write_summary_csv(reports, Path(out).with_suffix(".csv"))
    return reports


def ablate(cfg: ExperimentConfig, modes: Sequence[str] = ("none", "clipping_only",
                                                          "filtering_only", "deepsight"),
           complexities: Sequence[int] = (1, 2, 3), pdrs: Optional[Sequence[float]] = None) -> list[dict]:
    """Final BA/MA for every (mode, backdoor complexity, PDR) combination."""
    rows = []
    for pdr in (pdrs or [cfg.attack.pdr]):
        for k in complexities:
            for mode in modes:
                c = cfg.replace(**{"defense.mode": mode, "attack.n_triggers": k, "attack.pdr": pdr})
                final = run_experiment(c)[-1]
                rows.append({"mode": mode, "complexity": k, "pdr": pdr, "ba": final.ba,
                             "ma": final.ma})
    return rows


def sweep_threshold_factor(cfg: ExperimentConfig,
                           factors: Sequence[float] = (0.001, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2,
                                                       0.5)) -> list[dict]:
    """Exceedings, boundary, TPR and FPR per threshold factor in the first attack round.

    Rounds before the attack are aggregated with the configured defense.
    """
    sim = Simulation(cfg)
    t_attack = min(cfg.attack_start_round, cfg.rounds - 1)
    for t in range(t_attack):
        sim.step(t)
    ctx = sim.local_models(t_attack)
    truth = np.zeros(len(ctx.locals), dtype=bool)
    truth[ctx.attackers] = True
    rows = []
    for tf in factors:
        feats = extract_features(ctx.global_model, ctx.locals, seeds=(), tf_override=tf)
        labels, boundary = classify(feats.te)
        pos, neg = truth.sum(), (~truth).sum()
        rows.append({
            "tf": tf,
            "mean_benign_te": float(feats.te[~truth].mean()) if neg else None,
            "mean_malicious_te": float(feats.te[truth].mean()) if pos else None,
            "boundary": boundary,
            "tpr": float((labels & truth).sum() / pos) if pos else None,
            "fpr": float((labels & ~truth).sum() / neg) if neg else None,
        })
    return rows
