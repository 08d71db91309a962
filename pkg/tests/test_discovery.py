import numpy as np
import pytest

from mmcrl.discovery import (edges_json, fisher_z_test, pc_orient, pc_skeleton,
                             to_dot)


def chain_data(n, seed):
    """X -> Y -> Z with unit coefficients and unit noise."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    y = x + rng.normal(size=n)
    z = y + rng.normal(size=n)
    return np.stack([x, y, z], axis=1)


def collider_data(n, seed):
    """X -> Z <- Y with X independent of Y."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    y = rng.normal(size=n)
    z = x + y + rng.normal(size=n)
    return np.stack([x, y, z], axis=1)


class TestFisherZ:
    def test_partial_correlation_chain_vanishes(self):
        data = chain_data(5000, 0)
        corr = np.corrcoef(data, rowvar=False)
        p_marg, _ = fisher_z_test(corr, 5000, 0, 2, ())
        p_cond, _ = fisher_z_test(corr, 5000, 0, 2, (1,))
        assert p_marg < 0.01      # X, Z dependent marginally
        assert p_cond > 0.05      # independent given Y

    def test_singular_submatrix_flagged(self):
        corr = np.ones((3, 3))
        p, failed = fisher_z_test(corr, 100, 0, 1, (2,))
        assert failed


class TestPcSkeleton:
    def test_chain_recovered(self):
        data = chain_data(5000, 1)
        skel = pc_skeleton(data, alpha=0.01)
        assert skel.edge_list() == [(0, 1), (1, 2)]
        assert skel.separating_sets[(0, 2)] == (1,)

    def test_collider_recovered(self):
        data = collider_data(5000, 2)
        skel = pc_skeleton(data, alpha=0.01)
        assert skel.edge_list() == [(0, 2), (1, 2)]
        assert skel.separating_sets[(0, 1)] == ()

    def test_single_column_empty_graph(self):
        data = np.random.default_rng(0).normal(size=(100, 1))
        skel = pc_skeleton(data, alpha=0.01)
        assert skel.edge_list() == []

    def test_type_one_control_on_independent_null(self):
        hits = 0
        for trial in range(100):
            data = np.random.default_rng(1000 + trial).normal(size=(5000, 3))
            skel = pc_skeleton(data, alpha=0.01)
            if skel.edge_list():
                hits += 1
        assert hits <= 3  # empty skeleton in >= 97 of 100 trials

    def test_row_order_invariance(self):
        data = chain_data(3000, 3)
        skel_a = pc_skeleton(data, alpha=0.01)
        rng = np.random.default_rng(0)
        skel_b = pc_skeleton(data[rng.permutation(3000)], alpha=0.01)
        np.testing.assert_array_equal(skel_a.adjacency, skel_b.adjacency)

    def test_too_few_samples_rejected(self):
        with pytest.raises(ValueError):
            pc_skeleton(np.zeros((6, 4)), alpha=0.01)

    def test_faithful_recovery_rate_linear_gaussian(self):
        # random DAGs, p <= 6, n = 10000: exact skeleton in >= 95/100 trials
        from mmcrl.metrics import shd
        hits = 0
        for trial in range(100):
            rng = np.random.default_rng(2000 + trial)
            p = int(rng.integers(3, 7))
            adj = np.zeros((p, p), dtype=bool)
            for i in range(p):
                for j in range(i + 1, p):
                    adj[j, i] = rng.random() < 0.35
            data = np.zeros((10000, p))
            for j in range(p):
                parents = np.flatnonzero(adj[j])
                signal = sum(rng.uniform(0.7, 1.4) * data[:, k] for k in parents)
                data[:, j] = signal + rng.normal(size=10000)
            skel = pc_skeleton(data, alpha=0.01, max_cond_set=3)
            est = skel.adjacency
            if shd(adj, est) == 0:
                hits += 1
        assert hits >= 95, f"exact skeleton in only {hits}/100 trials"


class TestPcOrient:
    def test_collider_oriented(self):
        data = collider_data(5000, 4)
        skel = pc_skeleton(data, alpha=0.01)
        oriented = pc_orient(skel)
        assert oriented.directed[0, 2] and oriented.directed[1, 2]
        assert not oriented.directed[2, 0] and not oriented.directed[2, 1]

    def test_chain_stays_undirected(self):
        data = chain_data(5000, 5)
        skel = pc_skeleton(data, alpha=0.01)
        oriented = pc_orient(skel)
        assert not oriented.directed.any()
        assert oriented.undirected[0, 1] and oriented.undirected[1, 2]

    def test_empty_skeleton_empty_output(self):
        data = np.random.default_rng(7).normal(size=(5000, 3))
        skel = pc_skeleton(data, alpha=0.01)
        oriented = pc_orient(skel)
        assert oriented.edge_list() == []

    def test_meek_rule_one_propagates(self):
        # collider X -> Z <- Y plus Z - W: Meek 1 orients Z -> W
        rng = np.random.default_rng(8)
        n = 8000
        x = rng.normal(size=n)
        y = rng.normal(size=n)
        z = x + y + rng.normal(size=n)
        w = z + rng.normal(size=n)
        data = np.stack([x, y, z, w], axis=1)
        skel = pc_skeleton(data, alpha=0.01)
        oriented = pc_orient(skel)
        assert oriented.directed[2, 3]
        assert not oriented.directed[3, 2]


class TestExports:
    def test_edges_json_marks(self):
        data = collider_data(5000, 9)
        oriented = pc_orient(pc_skeleton(data, alpha=0.01))
        payload = edges_json(oriented, names=["x", "y", "z"])
        assert '"mark": "->"' in payload

    def test_dot_output(self):
        data = chain_data(3000, 10)
        oriented = pc_orient(pc_skeleton(data, alpha=0.01))
        dot = to_dot(oriented)
        assert dot.startswith("digraph") and "dir=none" in dot
