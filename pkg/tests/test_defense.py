import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepsight.defense import (DefenseConfig, classify, clip, clipping_bound, deepsight_aggregate,
                               filter_updates, pci)
from deepsight.nn import ModelParams, ParamUpdate, apply_scaled, diff, fedavg

DIMS = [4, 6, 5]
FAST = dict(ddif_samples=200)


def _update(vec):
    return ParamUpdate.from_flat(np.asarray(vec, dtype=float), [1, 1, 2])


class TestClassify:
    def test_worked_example(self):
        labels, boundary = classify([57, 57, 57, 28])
        assert boundary == 28.5
        np.testing.assert_array_equal(labels, [False, False, False, True])

    def test_all_equal(self):
        labels, boundary = classify([8, 8, 8])
        assert boundary == 4.0 and not labels.any()

    def test_small_example(self):
        labels, boundary = classify([10, 10, 2])
        assert boundary == 5.0
        np.testing.assert_array_equal(labels, [False, False, True])

    def test_boundary_is_inclusive(self):
        labels, _ = classify([10, 10, 5])
        assert labels[2]

    def test_empty(self):
        with pytest.raises(ValueError):
            classify([])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, 100), min_size=1, max_size=60))
    def test_median_bound(self, te):
        # the median is at least the ceil(N/2)-th smallest count
        _, boundary = classify(te)
        k = (len(te) + 1) // 2
        assert 2 * boundary >= sorted(te)[k - 1]


class TestPci:
    def test_examples(self):
        labels = np.array([0] * 5)
        assert pci(labels, np.array([1, 0, 0, 0, 0], bool)) == [0, 1, 2, 3, 4]
        assert pci(labels, np.array([1, 1, 0, 0, 0], bool)) == []

    def test_singletons(self):
        assert pci(np.array([-1, -1]), np.array([True, False])) == [1]

    def test_exact_third_is_rejected(self):
        assert pci(np.array([0, 0, 0]), np.array([True, False, False])) == []

    def test_mismatch(self):
        with pytest.raises(ValueError):
            pci(np.array([0, 0]), np.array([True]))


class TestClipping:
    def test_bound(self):
        assert clipping_bound([1.0, 2.0, 3.0]) == 2.0
        assert clipping_bound([1.0, 2.0, 3.0, 10.0]) == 2.5

    def test_clip_down(self):
        u = _update([6.0, 8.0, 0, 0, 0, 0])
        c = clip(u, 5.0)
        assert c.l2 == pytest.approx(5.0)
        np.testing.assert_allclose(c.flat(), [3.0, 4.0, 0, 0, 0, 0])

    def test_within_bound_is_untouched(self):
        u = _update([1.0, 2.0, 2.0, 0, 0, 0])
        assert clip(u, 5.0) is u

    def test_zero_update(self):
        u = _update(np.zeros(6))
        assert clip(u, 1.0).l2 == 0.0

    def test_bad_bound(self):
        with pytest.raises(ValueError):
            clip(_update(np.ones(6)), 0.0)


class TestAggregate:
    def _locals(self, n=6, seed=0, scale=0.05):
        g = ModelParams.init(DIMS, seed=seed)
        rng = np.random.default_rng(seed)
        return g, [apply_scaled(g, ParamUpdate.from_flat(rng.normal(0, scale, g.n_params), DIMS), 1.0)
                   for _ in range(n)]

    def test_identical_updates(self):
        g = ModelParams.init(DIMS, seed=0)
        u = ParamUpdate.from_flat(np.random.default_rng(1).normal(0, 0.1, g.n_params), DIMS)
        local = apply_scaled(g, u, 1.0)
        res = deepsight_aggregate(g, [local] * 5, DefenseConfig(**FAST))
        assert res.verdict.accepted == [0, 1, 2, 3, 4]
        assert not res.verdict.suspicious.any()
        np.testing.assert_allclose(res.model.flat(), local.flat(), rtol=0, atol=1e-15)

    def test_none_is_fedavg(self):
        g, ms = self._locals()
        res = deepsight_aggregate(g, ms, DefenseConfig(mode="none"))
        assert res.model.equals(fedavg(g, [diff(m, g) for m in ms]))
        assert res.verdict is None and res.s_bound is None

    def test_single_client_none(self):
        g, ms = self._locals(n=1)
        res = deepsight_aggregate(g, ms, DefenseConfig(mode="none"))
        np.testing.assert_allclose(res.model.flat(), ms[0].flat(), atol=1e-15)

    def test_clipping_only_uses_median_of_all(self):
        g, ms = self._locals(n=5)
        big = apply_scaled(g, diff(ms[0], g), 50.0)
        res = deepsight_aggregate(g, ms + [big], DefenseConfig(mode="clipping_only"))
        norms = [diff(m, g).l2 for m in ms + [big]]
        assert res.s_bound == pytest.approx(np.median(norms))
        expect = fedavg(g, [clip(diff(m, g), res.s_bound) for m in ms + [big]])
        assert res.model.equals(expect)

    def test_filtering_only_does_not_clip(self):
        g = ModelParams.init(DIMS, seed=0)
        u = ParamUpdate.from_flat(np.random.default_rng(1).normal(0, 0.1, g.n_params), DIMS)
        ms = [apply_scaled(g, u, lam) for lam in (1.0, 1.0, 1.0, 3.0)]
        res = deepsight_aggregate(g, ms, DefenseConfig(mode="filtering_only", **FAST))
        assert res.s_bound is None
        accepted = res.verdict.accepted
        expect = fedavg(g, [diff(ms[i], g) for i in accepted])
        assert res.model.equals(expect)

    def test_clipping_bound_counts_rejected(self):
        g, ms = self._locals(n=8, seed=3)
        res = deepsight_aggregate(g, ms, DefenseConfig(**FAST))
        assert res.s_bound == pytest.approx(np.median([diff(m, g).l2 for m in ms]))

    def test_empty_acceptance_skips_round(self):
        # two models always form one cluster; one homogeneous update (TE = 1)
        # against a spread one (TE = 5) puts half the cluster under suspicion
        g = ModelParams.init(DIMS, seed=0)
        spread, single = np.zeros(g.n_params), np.zeros(g.n_params)
        spread[-5:] = 0.5  # output biases are the last five entries
        single[-5] = 0.5
        ms = [apply_scaled(g, ParamUpdate.from_flat(f, DIMS), 1.0) for f in (spread, single)]
        res = deepsight_aggregate(g, ms, DefenseConfig(**FAST))
        np.testing.assert_array_equal(res.features.te, [5, 1])
        np.testing.assert_array_equal(res.verdict.suspicious, [False, True])
        assert res.verdict.accepted == [] and res.verdict.rejected == [0, 1]
        assert res.skipped and res.model is g

    def test_final_round_clusterwise(self):
        g, ms = self._locals(n=6, seed=5)
        cfg = DefenseConfig(final_round_clusterwise=True, **FAST)
        res = deepsight_aggregate(g, ms, cfg, is_final_round=True)
        assert len(res.client_models) == 6
        labels = res.verdict.clusters
        for i in range(6):
            for j in range(6):
                same = labels[i] == labels[j] and labels[i] != -1
                if same or i == j:
                    assert res.client_models[i] is res.client_models[j]
        assert deepsight_aggregate(g, ms, cfg, is_final_round=False).client_models is None

    def test_filter_updates_partition(self):
        g, ms = self._locals(n=7, seed=2)
        verdict, feats = filter_updates(g, ms, DefenseConfig(**FAST))
        assert sorted(verdict.accepted + verdict.rejected) == list(range(7))
        assert feats.te.shape == (7,)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DefenseConfig(mode="krum")
        with pytest.raises(ValueError):
            DefenseConfig(tau=0.0)
