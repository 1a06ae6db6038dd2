import numpy as np
import pytest

from deepsight.attacks import AttackConfig, adversarial_round, gap_bridging_pdrs, scaling_factor
from deepsight.data import ClientDataset, FederationSpec, make_federation, make_triggers, poison
from deepsight.nn import ModelParams, TrainConfig, diff, train_local


@pytest.fixture(scope="module")
def setting():
    spec = FederationSpec(n_clients=4, pmr=0.25, samples_per_client=(80, 80), rng_seed=1)
    clients = make_federation(spec)
    trig = make_triggers(spec)[0]
    data = poison(clients[0], trig, 0.5, seed=2)
    model = ModelParams.init([spec.in_dim, 16, spec.n_classes], seed=0)
    return model, data


class TestScalingFactor:
    def test_capped_by_client_ratio(self):
        assert scaling_factor(100, 10, 1e9, 1.0) == 10.0

    def test_lower_clamp(self):
        assert scaling_factor(30, 3, 5.0, 10.0) == 1.0

    def test_norm_ratio(self):
        assert scaling_factor(3, 1, 5.0, 1.0) == 3.0
        assert scaling_factor(100, 10, 5.0, 2.0) == 2.5

    def test_zero_norm_takes_cap(self):
        assert scaling_factor(60, 15, 2.0, 0.0) == 4.0

    def test_validation(self):
        with pytest.raises(ValueError):
            scaling_factor(10, 10, 1.0, 1.0)
        with pytest.raises(ValueError):
            scaling_factor(10, 1, 0.0, 1.0)


class TestAttackConfig:
    def test_strategy_maps_to_training(self):
        assert AttackConfig(strategy="data_poison_only").train_config().loss_mode == "plain"
        c = AttackConfig(strategy="constrain_and_scale", alpha=0.6).train_config()
        assert (c.loss_mode, c.anomaly_kind, c.alpha) == ("anomaly_evasion", "cosine", 0.6)
        assert AttackConfig(strategy="ddif_evasion").train_config().anomaly_kind == "ddif"
        assert AttackConfig(strategy="freeze_output").train_config().freeze_output_layer

    def test_validation(self):
        with pytest.raises(ValueError):
            AttackConfig(strategy="unknown")
        with pytest.raises(ValueError):
            AttackConfig(pdr=0.0)
        with pytest.raises(ValueError):
            AttackConfig(strategy="gap_bridging")
        with pytest.raises(ValueError):
            AttackConfig(norm_cap="mean")
        with pytest.raises(ValueError):
            AttackConfig(noise_sigma=-1.0)

    def test_gap_bridging_groups(self):
        got = gap_bridging_pdrs([7, 3, 9, 1, 5], [0.1, 0.3])
        assert got == {7: 0.1, 3: 0.1, 9: 0.1, 1: 0.3, 5: 0.3}
        assert gap_bridging_pdrs([], [0.5]) == {}


class TestAdversarialRound:
    def test_data_poison_only_is_unscaled(self, setting):
        model, data = setting
        cfg = AttackConfig(strategy="data_poison_only", adv_epochs=1)
        u = adversarial_round(model, data, cfg, n_total=60, n_compromised=15, seed=3, norm_cap=1e-6)
        plain = diff(train_local(model, data, TrainConfig(epochs=1), seed=3), model)
        np.testing.assert_array_equal(u.flat(), plain.flat())

    def test_scaled_to_cap(self, setting):
        model, data = setting
        cfg = AttackConfig(adv_epochs=1)
        raw = adversarial_round(model, data, cfg, 60, 15, seed=3, norm_cap=1e-9)
        target = 2.5 * raw.l2  # within the N/n = 4 cap
        u = adversarial_round(model, data, cfg, 60, 15, seed=3, norm_cap=target)
        assert u.l2 == pytest.approx(target, rel=1e-6)

    def test_cap_equal_to_norm_is_identity(self, setting):
        model, data = setting
        cfg = AttackConfig(adv_epochs=1)
        raw = adversarial_round(model, data, cfg, 60, 15, seed=3, norm_cap=1e-9)
        u = adversarial_round(model, data, cfg, 60, 15, seed=3, norm_cap=raw.l2)
        assert u.l2 == pytest.approx(raw.l2, rel=1e-6)

    def test_noise_sigma_zero_matches_base(self, setting):
        model, data = setting
        a = adversarial_round(model, data, AttackConfig(adv_epochs=1), 60, 15, seed=4, norm_cap=1.0)
        b = adversarial_round(model, data, AttackConfig(strategy="noise_injection", adv_epochs=1),
                              60, 15, seed=4, norm_cap=1.0)
        np.testing.assert_array_equal(a.flat(), b.flat())

    def test_noise_is_added(self, setting):
        model, data = setting
        a = adversarial_round(model, data, AttackConfig(adv_epochs=1), 60, 15, seed=4, norm_cap=1.0)
        b = adversarial_round(model, data,
                              AttackConfig(strategy="noise_injection", noise_sigma=0.1, adv_epochs=1),
                              60, 15, seed=4, norm_cap=1.0)
        resid = b.flat() - a.flat()
        assert resid.std() == pytest.approx(0.1, rel=0.1)

    def test_freeze_output_has_zero_output_delta(self, setting):
        model, data = setting
        u = adversarial_round(model, data, AttackConfig(strategy="freeze_output", adv_epochs=1),
                              60, 15, seed=4, norm_cap=1.0)
        assert not np.any(u.deltas[-1][0]) and not np.any(u.deltas[-1][1])

    def test_unresolved_cap_rejected(self, setting):
        model, data = setting
        with pytest.raises(ValueError):
            adversarial_round(model, data, AttackConfig(), 60, 15)

    def test_ddif_evasion_runs_with_reference(self, setting):
        model, data = setting
        ref = ModelParams.init(model.layer_dims, seed=9)
        u = adversarial_round(model, data, AttackConfig(strategy="ddif_evasion", adv_epochs=1),
                              60, 15, seed=4, norm_cap=1.0, reference=ref)
        assert np.isfinite(u.l2) and u.l2 > 0
