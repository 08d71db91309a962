import itertools

import numpy as np
import pytest

from mmcrl.metrics import MetricsReport, mcc, mcc_per_modality, r2, shd


def brute_force_mcc(z_true, z_est):
    d = z_true.shape[1]
    best = -1.0
    corr = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            c = np.corrcoef(z_true[:, i], z_est[:, j])[0, 1]
            corr[i, j] = 0.0 if np.isnan(c) else abs(c)
    for perm in itertools.permutations(range(d)):
        score = np.mean([corr[k, perm[k]] for k in range(d)])
        best = max(best, score)
    return best


class TestMcc:
    def test_identical(self):
        rng = np.random.default_rng(0)
        z = rng.normal(size=(500, 4))
        score, perm = mcc(z, z)
        assert score == pytest.approx(1.0, abs=1e-9)
        np.testing.assert_array_equal(perm, np.arange(4))

    def test_permuted_and_sign_flipped(self):
        rng = np.random.default_rng(1)
        z = rng.normal(size=(500, 4))
        order = np.array([2, 0, 3, 1])
        z_est = -z[:, order]
        score, perm = mcc(z, z_est)
        assert score == pytest.approx(1.0, abs=1e-9)
        # column perm[k] of z_est matches column k of z
        np.testing.assert_array_equal(order[perm], np.arange(4))

    def test_monotone_linear_rescale_invariant(self):
        rng = np.random.default_rng(2)
        z = rng.normal(size=(300, 3))
        z_est = rng.normal(size=(300, 3))
        base, _ = mcc(z, z_est)
        scaled, _ = mcc(z * np.array([2.0, -5.0, 0.1]),
                        z_est * np.array([-1.0, 3.0, 7.0]) + 4.0)
        assert scaled == pytest.approx(base, abs=1e-9)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            d = int(rng.integers(2, 7))
            n = int(rng.integers(10, 60))
            z = rng.normal(size=(n, d))
            mix = rng.normal(size=(d, d))
            z_est = z @ mix + 0.1 * rng.normal(size=(n, d))
            score, _ = mcc(z, z_est)
            assert score == pytest.approx(brute_force_mcc(z, z_est), abs=1e-9)

    def test_constant_column_contributes_zero(self):
        rng = np.random.default_rng(4)
        z = rng.normal(size=(100, 2))
        z_est = z.copy()
        z_est[:, 1] = 3.0
        score, _ = mcc(z, z_est)
        assert score == pytest.approx(0.5, abs=0.05)

    def test_analytic_mixture_value(self):
        # z_est = (z1 + z2, z2) for independent unit-variance z:
        # population MCC = (1/sqrt(2) + 1) / 2
        rng = np.random.default_rng(5)
        n = 10 ** 6
        z = rng.normal(size=(n, 2))
        z_est = np.stack([z[:, 0] + z[:, 1], z[:, 1]], axis=1)
        score, _ = mcc(z, z_est)
        expected = (1.0 / np.sqrt(2.0) + 1.0) / 2.0
        assert score == pytest.approx(expected, abs=0.01)

    def test_column_mismatch_rejected(self):
        with pytest.raises(ValueError):
            mcc(np.zeros((10, 2)), np.zeros((10, 3)))

    def test_per_modality_blocks(self):
        rng = np.random.default_rng(6)
        z = rng.normal(size=(400, 4))
        # cross-modality swap: global assignment could fix it, blockwise cannot
        z_est = z[:, [2, 3, 0, 1]]
        modality_of = np.array([0, 0, 1, 1])
        global_score, _ = mcc(z, z_est)
        block_score, block_perm = mcc_per_modality(z, z_est, modality_of)
        assert global_score == pytest.approx(1.0, abs=1e-9)
        assert block_score < 0.5
        assert set(block_perm[:2]) == {0, 1}
        assert set(block_perm[2:]) == {2, 3}


class TestR2:
    def test_identical(self):
        rng = np.random.default_rng(0)
        z = rng.normal(size=(1000, 3))
        assert r2(z, z) == pytest.approx(1.0, abs=1e-9)

    def test_invertible_linear_transform(self):
        rng = np.random.default_rng(1)
        z = rng.normal(size=(10000, 4))
        mix = rng.normal(size=(4, 4)) + np.eye(4)
        assert r2(z, z @ mix) > 0.999

    def test_independent_near_zero(self):
        rng = np.random.default_rng(2)
        z = rng.normal(size=(10000, 3))
        z_est = rng.normal(size=(10000, 3))
        assert abs(r2(z, z_est)) < 0.05


class TestShd:
    def _g(self, n, edges):
        adj = np.zeros((n, n), dtype=bool)
        for i, j in edges:
            adj[j, i] = True
        return adj

    def test_identical_zero(self):
        g = self._g(3, [(0, 1), (1, 2)])
        assert shd(g, g) == 0

    def test_one_move(self):
        true = self._g(3, [(0, 1), (1, 2)])
        est = self._g(3, [(0, 1), (0, 2)])
        assert shd(true, est) == 2

    def test_empty_vs_complete(self):
        true = np.zeros((3, 3), dtype=bool)
        est = ~np.eye(3, dtype=bool)
        assert shd(true, est) == 3

    def test_skeleton_ignores_direction(self):
        a = self._g(3, [(0, 1)])
        b = self._g(3, [(1, 0)])
        assert shd(a, b) == 0
        assert shd(a, b, directed=True) == 1

    def test_metric_axioms_on_random_triples(self):
        rng = np.random.default_rng(7)
        for _ in range(500):
            n = int(rng.integers(2, 9))
            gs = [rng.random((n, n)) < 0.3 for _ in range(3)]
            gs = [np.triu(g, 1) for g in gs]
            d01 = shd(gs[0], gs[1])
            d10 = shd(gs[1], gs[0])
            d02 = shd(gs[0], gs[2])
            d12 = shd(gs[1], gs[2])
            assert d01 == d10
            assert shd(gs[0], gs[0]) == 0
            assert d02 <= d01 + d12
            if d01 == 0:
                sym0 = gs[0] | gs[0].T
                sym1 = gs[1] | gs[1].T
                np.testing.assert_array_equal(sym0, sym1)


class TestMetricsReport:
    def test_json_round_trip(self):
        rep = MetricsReport(mcc=0.9, r2=0.8, shd=0, seed=3,
                            dataset_id="abc", checkpoint_id="def",
                            mcc_permutation=[1, 0])
        back = MetricsReport.from_json(rep.to_json())
        assert back == rep

    def test_absent_fields_serialize_as_null(self):
        rep = MetricsReport(shd=2)
        assert '"mcc": null' in rep.to_json()
