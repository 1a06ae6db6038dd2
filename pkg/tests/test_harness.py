import json

import numpy as np
import pytest

from deepsight.harness import (ExperimentConfig, Simulation, ablate, dump_config, evaluate,
                               filter_metrics, load_config, parse_config, parse_value,
                               reference_config, run_experiment, sweep_threshold_factor)
from deepsight.nn import ModelParams, diff

TINY = {
    "federation.n_clients": 8, "clients_per_round": 8, "federation.samples_min": 40,
    "federation.samples_max": 60, "model.hidden": [8], "rounds": 3, "attack_start_round": 1,
    "defense.ddif_samples": 100, "eval.benign_size": 300, "eval.trigger_size": 100,
}


def tiny(**extra):
    return reference_config(**{**TINY, **extra})


class TestFilterMetrics:
    def test_perfect(self):
        truth = [True] * 25 + [False] * 35
        assert filter_metrics(range(25, 60), range(25), truth) == (1.0, 1.0)

    def test_nothing_rejected(self):
        truth = [True, True, False, False, False]
        ppr, bpr = filter_metrics(range(5), [], truth)
        assert ppr is None and bpr == pytest.approx(3 / 5)

    def test_one_benign_rejected(self):
        truth = [True] * 4 + [False] * 6
        ppr, bpr = filter_metrics(range(5, 10), range(5), truth)
        assert ppr == pytest.approx(0.8) and bpr == 1.0

    def test_nothing_accepted(self):
        assert filter_metrics([], [0, 1], [True, False]) == (0.5, None)


class TestEvaluate:
    def test_uniform_random_model(self):
        # a zero model ties all logits; argmax then always picks class 0, so use
        # random logits via a large random first layer instead
        rng = np.random.default_rng(0)
        w = rng.normal(0, 100, size=(10, 20))
        model = ModelParams(((w, np.zeros(10)),))
        x = rng.normal(size=(10_000, 20))
        y = rng.integers(0, 10, size=10_000)
        ma, _ = evaluate(model, x, y, [(x[:10], y[:10])])
        sigma = np.sqrt(0.1 * 0.9 / 10_000)
        assert abs(ma - 0.1) <= 3 * sigma

    def test_everything_already_on_target(self):
        model = ModelParams(((np.zeros((3, 2)), np.array([5.0, 0.0, 0.0])),))
        x = np.zeros((50, 2))
        _, ba = evaluate(model, x, np.zeros(50, int), [(x, np.zeros(50, int))])
        assert ba == 1.0

    def test_empty_sets(self):
        model = ModelParams.init([2, 3])
        with pytest.raises(ValueError):
            evaluate(model, np.zeros((0, 2)), np.zeros(0, int), [(np.zeros((1, 2)), np.zeros(1, int))])


class TestConfig:
    def test_flat_roundtrip(self):
        cfg = reference_config()
        assert ExperimentConfig.from_flat(cfg.to_flat()).to_flat() == cfg.to_flat()

    def test_dump_and_load(self, tmp_path):
        cfg = tiny(**{"attack.strategy": "gap_bridging", "attack.pdr_schedule": [0.1, 0.4]})
        path = tmp_path / "c.cfg"
        path.write_text("# comment line\n" + dump_config(cfg))
        assert load_config(path).to_flat() == cfg.to_flat()
        assert load_config(path, {"seed": 7}).rng_seed == 7

    def test_parse(self):
        assert parse_value(" 0.5 ") == 0.5
        assert parse_value("deepsight") == "deepsight"
        assert parse_value("[1, 2]") == [1, 2]
        assert parse_value("null") is None
        assert parse_config("a.b = 3  # trailing\n\nc = x") == {"a.b": 3, "c": "x"}
        with pytest.raises(ValueError):
            parse_config("no equals sign")

    def test_unknown_key(self):
        with pytest.raises(KeyError):
            reference_config(**{"defense.nonsense": 1})

    def test_seed_propagates(self):
        assert reference_config(seed=5).federation.rng_seed == 5

    def test_validation(self):
        with pytest.raises(ValueError):
            tiny(clients_per_round=9)
        with pytest.raises(ValueError):
            tiny(rounds=0)


class TestSimulation:
    def test_single_client_single_round(self):
        cfg = tiny(**{"federation.n_clients": 1, "federation.pmr": 0.0, "clients_per_round": 1,
                      "rounds": 1, "defense.mode": "none"})
        sim = Simulation(cfg)
        g0 = sim.global_model
        ctx = sim.local_models(0)
        sim.step(0)
        np.testing.assert_allclose(sim.global_model.flat(), g0.flat() + diff(ctx.locals[0], g0).flat(),
                                   rtol=0, atol=1e-15)

    def test_attack_schedule(self):
        sim = Simulation(tiny())
        assert sim.local_models(0).attackers == []
        assert len(sim.local_models(1).attackers) == 2

    def test_reports(self):
        reports = run_experiment(tiny())
        assert [r.round for r in reports] == [0, 1, 2]
        r = reports[-1]
        assert r.n_accepted + r.n_rejected == r.n_selected == 8
        assert sorted(r.accepted + r.rejected) == list(range(8))
        assert 0.0 <= r.ma <= 1.0 and 0.0 <= r.ba <= 1.0
        assert len(r.te) == 8 and r.boundary is not None

    def test_byte_identical_outputs(self, tmp_path):
        run_experiment(tiny(), tmp_path / "a.jsonl")
        run_experiment(tiny(), tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        lines = (tmp_path / "a.jsonl").read_text().splitlines()
        assert len(lines) == 3 and json.loads(lines[0])["round"] == 0

    def test_seed_changes_output(self, tmp_path):
        a = run_experiment(tiny())[-1]
        b = run_experiment(tiny(seed=1))[-1]
        assert a.to_json() != b.to_json()

    def test_final_round_clusterwise(self):
        r = run_experiment(tiny(**{"defense.final_round_clusterwise": True}))
        assert r[-1].cluster_models is not None and len(r[-1].cluster_models) == 8
        assert r[0].cluster_models is None

    @pytest.mark.parametrize("strategy,extra", [
        ("data_poison_only", {}), ("freeze_output", {}), ("noise_injection", {"attack.noise_sigma": 0.01}),
        ("gap_bridging", {"attack.pdr_schedule": [0.1, 0.5]}), ("ddif_evasion", {}),
    ])
    def test_every_strategy_runs(self, strategy, extra):
        r = run_experiment(tiny(**{"attack.strategy": strategy, "rounds": 2, **extra}))
        assert r[-1].n_attackers == 2


class TestSweeps:
    def test_ablate_rows(self):
        rows = ablate(tiny(rounds=2), modes=("none", "deepsight"), complexities=(1, 2))
        assert [(r["mode"], r["complexity"]) for r in rows] == [
            ("none", 1), ("deepsight", 1), ("none", 2), ("deepsight", 2)]

    def test_threshold_sweep_monotone(self):
        rows = sweep_threshold_factor(tiny(), factors=(0.001, 0.01, 0.1, 0.5))
        benign = [r["mean_benign_te"] for r in rows]
        assert all(b <= a for a, b in zip(benign, benign[1:]))
        assert all(0.0 <= r["tpr"] <= 1.0 and 0.0 <= r["fpr"] <= 1.0 for r in rows)
