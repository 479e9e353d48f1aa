import math

import numpy as np
import pytest

from wassrec import GibbsKernel, conjugate_grad, entropy
from wassrec.wfilter import RankedList, UserInteractions, estimate_preference, infer_cold, rank_items
from oracles import entropic_value_many


class TestUserInteractions:
    def test_valid(self):
        u = UserInteractions(7, [0, 2], [3.0, 1.0])
        assert u.item_indices.dtype == np.int64

    def test_rejects_empty_duplicate_nonpositive(self):
        with pytest.raises(ValueError):
            UserInteractions(1, [], [])
        with pytest.raises(ValueError):
            UserInteractions(1, [0, 0], [1.0, 1.0])
        with pytest.raises(ValueError):
            UserInteractions(1, [0, 1], [1.0, 0.0])
        with pytest.raises(ValueError):
            UserInteractions(1, [-1], [1.0])


class TestEstimatePreference:
    def test_normalizes_strengths(self):
        u = UserInteractions("a", [0, 2], [3.0, 1.0])
        np.testing.assert_allclose(estimate_preference(u, 4), [0.75, 0.0, 0.25, 0.0])

    def test_rejects_out_of_range_index(self):
        u = UserInteractions("a", [5], [1.0])
        with pytest.raises(ValueError):
            estimate_preference(u, 3)


class TestInferCold:
    def test_single_interacted_item_soft_assignment(self):
        # one row: q_hat is the softmax of -M_1j / gamma, here a
        # near-certain vote for the cheap item with weight e^(-14)
        # leaking to the expensive one
        q = infer_cold([1.0], np.array([[0.2, 0.9]]), gamma=0.05)
        e = math.exp((0.2 - 0.9) / 0.05)
        np.testing.assert_allclose(q, [1 / (1 + e), e / (1 + e)], rtol=1e-12)
        assert q[1] == pytest.approx(8.315218e-07, rel=1e-5)

    def test_near_identity_cost_recovers_preference(self):
        p = np.array([0.5, 0.2, 0.3])
        M = 2.0 * (1.0 - np.eye(3))
        q = infer_cold(p, M, gamma=1e-3)
        np.testing.assert_allclose(q, p, atol=1e-3)

    def test_same_code_path_as_conjugate_grad(self, movies):
        M, p0, _, _ = movies
        kernel = GibbsKernel(M, 0.05)
        direct = infer_cold(p0, kernel)
        via_grad = conjugate_grad(p0, np.zeros(2), kernel)
        np.testing.assert_array_equal(direct, via_grad)

    def test_minimizes_transport_cost_refined_grid(self, movies):
        # q_hat should minimize W_gamma(p, .) over the simplex; for
        # s = 2 sweep q = (t, 1 - t) on a coarse grid and refine around
        # the argmin three times (the objective is convex in q, so
        # local refinement is sound)
        M, p0, _, _ = movies
        gamma = 0.1
        q_hat = infer_cold(p0, M, gamma=gamma)

        lo, hi, steps = 0.001, 0.999, 800
        for _ in range(4):
            ts = np.linspace(lo, hi, steps + 1)
            Q = np.stack([ts, 1.0 - ts])
            vals = entropic_value_many(p0, Q, M, gamma, tol=1e-11)
            j = int(np.argmin(vals))
            width = (hi - lo) / steps
            lo, hi = max(ts[j] - 2 * width, 1e-9), min(ts[j] + 2 * width, 1 - 1e-9)
        t_best = (lo + hi) / 2
        assert q_hat[0] == pytest.approx(t_best, abs=1e-6)

    def test_entropy_sharpens_as_gamma_shrinks(self, movies):
        M, p0, _, _ = movies
        ents = [entropy(infer_cold(p0, M, gamma=g)) for g in (1.0, 0.1, 0.01)]
        assert ents[0] >= ents[1] >= ents[2]

    def test_mass_conserved(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            n, s = int(rng.integers(1, 7)), int(rng.integers(1, 7))
            p = rng.dirichlet(np.ones(n))
            q = infer_cold(p, rng.uniform(0, 2, size=(n, s)), gamma=0.05)
            assert abs(q.sum() - 1.0) < 1e-10
            assert q.min() >= 0

    def test_gamma_handling(self, movies):
        M, p0, _, _ = movies
        kernel = GibbsKernel(M, 0.05)
        with pytest.raises(ValueError):
            infer_cold(p0, M)  # cost matrix without gamma
        with pytest.raises(ValueError):
            infer_cold(p0, kernel, gamma=0.1)  # conflicting gamma
        np.testing.assert_array_equal(infer_cold(p0, kernel, gamma=0.05),
                                      infer_cold(p0, kernel))


class TestRankItems:
    def test_sorts_descending(self):
        ranked = rank_items([0.1, 0.5, 0.4], [7, 3, 9])
        assert ranked.item_ids == (3, 9, 7)
        assert ranked.scores == (0.5, 0.4, 0.1)

    def test_ties_break_by_ascending_id(self):
        ranked = rank_items([0.25, 0.5, 0.25], [30, 10, 20])
        assert ranked.item_ids == (10, 20, 30)

    def test_rejects_duplicates_and_misalignment(self):
        with pytest.raises(ValueError):
            rank_items([0.5, 0.5], [1, 1])
        with pytest.raises(ValueError):
            rank_items([0.5, 0.5], [1, 2, 3])

    def test_ranked_list_validates(self):
        with pytest.raises(ValueError):
            RankedList(item_ids=(1, 2), scores=(0.1, 0.9))
        with pytest.raises(ValueError):
            RankedList(item_ids=(1, 1), scores=(0.9, 0.1))
        assert len(RankedList(item_ids=(1,), scores=(1.0,))) == 1
