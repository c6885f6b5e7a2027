import numpy as np
import pytest

from catdisc.heads import ProjectionHead, ProxyBank, TrainError
from catdisc.pseudo import (ApConfig, affinity_propagation, ap_from_similarity,
                            grow_bank, label_new, label_old)


def blobs(seed, centers=None, n=20, sigma=0.1):
    rng = np.random.default_rng(seed)
    if centers is None:
        centers = np.array([[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]])
    pts = np.vstack([c + sigma * rng.standard_normal((n, len(c))) for c in centers])
    ids = np.repeat(np.arange(len(centers)), n)
    return pts, ids


class TestApConfig:
    def test_damping_bounds(self):
        with pytest.raises(TrainError):
            ApConfig(damping=0.5)
        with pytest.raises(TrainError):
            ApConfig(damping=1.0)

    def test_positive_iterations(self):
        with pytest.raises(TrainError):
            ApConfig(max_iter=0)
        with pytest.raises(TrainError):
            ApConfig(convergence_window=0)


class TestAffinityPropagation:
    def test_identical_points_single_exemplar(self):
        pts = np.tile([1.0, 2.0], (6, 1))
        ex, assign, info = affinity_propagation(pts, ApConfig())
        assert len(ex) == 1
        assert np.all(assign == ex[0])

    def test_three_blobs_recovered(self):
        pts, ids = blobs(0)
        ex, assign, info = affinity_propagation(pts, ApConfig())
        assert len(ex) == 3
        # purity: each cluster maps to one blob
        for e in ex:
            members = ids[assign == e]
            assert len(np.unique(members)) == 1
        assert info["converged"]

    def test_assignment_is_a_function_and_exemplars_self_assign(self):
        pts, _ = blobs(1)
        ex, assign, _ = affinity_propagation(pts, ApConfig())
        assert len(assign) == len(pts)
        assert np.all(np.isin(assign, ex))
        assert np.all(assign[ex] == ex)

    def test_shift_invariance_of_similarities(self):
        pts, _ = blobs(2)
        d2 = ((pts[:, None] - pts[None]) ** 2).sum(-1)
        S = -d2
        off = ~np.eye(len(S), dtype=bool)
        pref = np.median(S[off])
        S1 = S.copy(); np.fill_diagonal(S1, pref)
        S2 = S + 37.5; np.fill_diagonal(S2, pref + 37.5)
        ex1, _, _ = ap_from_similarity(S1, ApConfig())
        ex2, _, _ = ap_from_similarity(S2, ApConfig())
        assert len(ex1) == len(ex2)

    def test_two_point_case_matches_hand_iteration(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0]])
        cfg = ApConfig()
        ex, assign, _ = affinity_propagation(pts, cfg)

        # direct scalar iteration of the damped update equations
        s01 = s10 = -1.0
        pref = -1.0  # median of the off-diagonal similarities
        S = np.array([[pref, s01], [s10, pref]])
        R = np.zeros((2, 2)); A = np.zeros((2, 2))
        lam = cfg.damping
        for _ in range(cfg.max_iter):
            Rn = np.empty((2, 2))
            for i in range(2):
                for k in range(2):
                    others = [A[i, kk] + S[i, kk] for kk in range(2) if kk != k]
                    Rn[i, k] = S[i, k] - max(others)
            R = lam * R + (1 - lam) * Rn
            An = np.empty((2, 2))
            for i in range(2):
                for k in range(2):
                    if i == k:
                        An[k, k] = sum(max(0.0, R[j, k]) for j in range(2) if j != k)
                    else:
                        An[i, k] = min(0.0, R[k, k] + sum(max(0.0, R[j, k])
                                                          for j in range(2) if j not in (i, k)))
            A = lam * A + (1 - lam) * An
        hand_ex = [k for k in range(2) if A[k, k] + R[k, k] > 0]
        if not hand_ex:
            hand_ex = [int(np.argmax(np.diag(A + R)))]
        assert sorted(int(e) for e in ex) == hand_ex

    def test_non_convergence_flagged(self):
        pts, _ = blobs(3)
        ex, _, info = affinity_propagation(pts, ApConfig(max_iter=3))
        assert not info["converged"]
        assert info["iterations"] == 3

    def test_needs_two_points(self):
        with pytest.raises(TrainError):
            affinity_propagation(np.zeros((1, 2)), ApConfig())

    def test_explicit_preference_reduces_cluster_count(self):
        pts, _ = blobs(4, sigma=1.5)
        k_med = len(affinity_propagation(pts, ApConfig())[0])
        k_low = len(affinity_propagation(pts, ApConfig(preference=-4000.0))[0])
        assert k_low <= k_med

    def test_deterministic(self):
        pts, _ = blobs(5)
        a = affinity_propagation(pts, ApConfig())
        b = affinity_propagation(pts, ApConfig())
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


class TestLabelOld:
    def bank(self):
        return ProxyBank(np.eye(4)[:3], np.arange(3))

    def test_embedding_on_proxy_gets_its_class(self):
        head = ProjectionHead(np.eye(4))
        Z = np.eye(4)[:3]
        entries = label_old(np.array([0, 1, 2]), Z, head, self.bank())
        assert [e.pseudo_label for e in entries] == [0, 1, 2]
        assert all(e.provenance == "old-pred" for e in entries)

    def test_tie_breaks_to_lowest_class_id(self):
        bank = ProxyBank(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([0, 1]))
        head = ProjectionHead(np.eye(2))
        z = np.array([[1.0, 1.0]])  # equidistant from both proxies
        entries = label_old(np.array([0]), z, head, bank)
        assert entries[0].pseudo_label == 0

    def test_never_emits_unknown_id(self):
        rng = np.random.default_rng(0)
        head = ProjectionHead(rng.standard_normal((4, 4)))
        Z = rng.standard_normal((30, 4))
        entries = label_old(np.arange(30), Z, head, self.bank())
        assert all(e.pseudo_label in {0, 1, 2} for e in entries)

    def test_empty_split_allowed(self):
        head = ProjectionHead(np.eye(4))
        assert label_old(np.array([]), np.zeros((0, 4)), head, self.bank()) == []


class TestLabelNew:
    def test_three_blobs_with_offset_ids(self):
        pts, ids = blobs(6)
        entries, k, centroids, info = label_new(np.arange(len(pts)), pts, ApConfig(),
                                                existing_class_count=5)
        assert k == 3
        assert {e.pseudo_label for e in entries} == {5, 6, 7}
        assert all(e.provenance == "cluster" for e in entries)
        # each fresh label covers exactly one blob
        lab = np.array([e.pseudo_label for e in entries])
        for c in (5, 6, 7):
            assert len(np.unique(ids[lab == c])) == 1

    def test_centroids_are_unit_norm(self):
        pts, _ = blobs(7)
        _, k, centroids, _ = label_new(np.arange(len(pts)), pts, ApConfig(), 0)
        assert centroids.shape == (k, 2)
        assert np.allclose(np.linalg.norm(centroids, axis=1), 1.0)

    def test_single_sample(self):
        z = np.array([[3.0, 4.0]])
        entries, k, centroids, info = label_new(np.array([0]), z, ApConfig(), 2)
        assert k == 1 and entries[0].pseudo_label == 2
        assert np.allclose(centroids[0], [0.6, 0.8])

    def test_empty_split_rejected(self):
        with pytest.raises(TrainError):
            label_new(np.array([]), np.zeros((0, 2)), ApConfig(), 0)

    def test_never_emits_existing_id(self):
        pts, _ = blobs(8)
        entries, _, _, _ = label_new(np.arange(len(pts)), pts, ApConfig(), 9)
        assert all(e.pseudo_label >= 9 for e in entries)


class TestGrowBank:
    def test_appended_rows_equal_centroids_bit_exactly(self):
        bank = ProxyBank(np.eye(3), np.arange(3))
        cents = np.random.default_rng(1).standard_normal((2, 3))
        grown = grow_bank(bank, cents)
        assert np.array_equal(grown.proxies[3:], cents)
        assert np.array_equal(grown.class_ids, np.arange(5))

    def test_requires_centroids(self):
        with pytest.raises(TrainError):
            grow_bank(ProxyBank(np.eye(2), np.arange(2)), np.zeros((0, 2)))
