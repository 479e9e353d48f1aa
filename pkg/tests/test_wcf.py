import numpy as np
import pytest
from scipy.special import logsumexp

import wassrec.wcf as wcf
from wassrec import (
    GibbsKernel,
    RankDeficiencyError,
    entropy,
    infer_cold,
    sinkhorn,
)
from wassrec.wcf import (
    DualState,
    FactorModel,
    TrainOptions,
    d_step,
    init_factors,
    lambda_step,
    load_model,
    predict_user,
    save_model,
    train_wcf,
)


def conj_values_grid(p, G, M, gamma):
    """Independent conjugate evaluation for a batch of potentials (s x N)."""
    logK = -M / gamma
    lse = logsumexp(logK[:, :, None] + (G / gamma)[None, :, :], axis=1)
    h = float(-(p * np.log(np.where(p > 0, p, 1.0))).sum())
    return gamma * (h + p @ lse)


def conj_grad_single(p, g, M, gamma):
    logits = -M / gamma + g[None, :] / gamma
    rows = np.exp(logits - logsumexp(logits, axis=1)[:, None])
    return rows.T @ p


class TestInitFactors:
    def test_columns_on_simplex_and_deterministic(self):
        D, lam = init_factors(5, 8, 3, seed=4)
        assert D.shape == (5, 3) and lam.shape == (3, 8)
        np.testing.assert_allclose(D.sum(axis=0), np.ones(3), atol=1e-12)
        assert D.min() > 0
        D2, lam2 = init_factors(5, 8, 3, seed=4)
        np.testing.assert_array_equal(D, D2)
        np.testing.assert_array_equal(lam, lam2)
        # all users start at the same loading vector
        assert np.ptp(lam, axis=1).max() == 0.0

    def test_rank_validation(self):
        with pytest.raises(ValueError, match="k must satisfy"):
            init_factors(4, 10, 5)
        with pytest.raises(ValueError, match="k must satisfy"):
            init_factors(4, 2, 3)
        with pytest.raises(ValueError, match="k must satisfy"):
            init_factors(4, 4, 0)


class TestBatchConjugate:
    def test_matches_single_user_grad(self):
        rng = np.random.default_rng(10)
        M = rng.uniform(size=(4, 3))
        kernel = GibbsKernel(M, 0.1)
        P = np.stack([rng.dirichlet(np.ones(4)) for _ in range(6)], axis=1)
        G = rng.normal(scale=0.3, size=(3, 6))
        ents = np.array([entropy(P[:, u]) for u in range(6)])
        vals, grads = wcf._batch_conjugate(P, G, kernel, ents, True)
        for u in range(6):
            np.testing.assert_allclose(
                grads[:, u], conj_grad_single(P[:, u], G[:, u], M, 0.1), atol=1e-12
            )
            assert vals[u] == pytest.approx(
                float(conj_values_grid(P[:, u], G[:, u][:, None], M, 0.1)[0]), abs=1e-12
            )

    def test_underflow_fallback_agrees(self):
        # min(-M/gamma) < -700 underflows the dense kernel, forcing the
        # per-user log-sum-exp loop; check it against direct formulas
        rng = np.random.default_rng(11)
        M = rng.uniform(70, 80, size=(3, 3))
        gamma = 0.1
        kernel = GibbsKernel(M, gamma)
        assert kernel.log_kernel.min() < wcf._BATCH_LOG_FLOOR
        P = np.stack([rng.dirichlet(np.ones(3)) for _ in range(4)], axis=1)
        G = rng.normal(scale=0.5, size=(3, 4))
        ents = np.array([entropy(P[:, u]) for u in range(4)])
        vals, grads = wcf._batch_conjugate(P, G, kernel, ents, True)
        assert np.all(np.isfinite(vals))
        for u in range(4):
            np.testing.assert_allclose(
                grads[:, u], conj_grad_single(P[:, u], G[:, u], M, gamma), atol=1e-12
            )
            assert vals[u] == pytest.approx(
                float(conj_values_grid(P[:, u], G[:, u][:, None], M, gamma)[0]), abs=1e-10
            )


class TestLambdaStep:
    def test_square_dictionary_recovers_closed_form(self):
        # k = s: the constraint D^T g = 0 pins g = 0, so every user's
        # histogram is the closed-form cold-start inference
        rng = np.random.default_rng(0)
        s, m = 5, 6
        M = rng.uniform(size=(4, s))
        kernel = GibbsKernel(M, 0.05)
        P = [rng.dirichlet(np.ones(4)) for _ in range(m)]
        D, _ = init_factors(s, m, s, seed=1)
        lam, state = lambda_step(D, P, kernel)
        for u, p in enumerate(P):
            np.testing.assert_allclose(D @ lam[:, u], infer_cold(p, kernel), atol=1e-10)
        assert len(state.objective_trace) == 1

    def test_matches_constrained_grid_search(self):
        # k = 1 and D uniform: the dual feasible set is {sum g = 0},
        # a plane spanned by an explicit orthonormal basis; refine a
        # dense grid on it (the conjugate is convex, so local
        # refinement is sound) and compare optima
        rng = np.random.default_rng(5)
        n, s = 3, 3
        gamma = 0.1
        M = rng.uniform(size=(n, s))
        kernel = GibbsKernel(M, gamma)
        p = rng.dirichlet(np.ones(n))
        D = np.full((s, 1), 1.0 / s)

        lam, state = lambda_step(D, [p], kernel)
        g_lib = state.potentials[:, 0]
        val_lib = float(conj_values_grid(p, g_lib[:, None], M, gamma)[0])

        B = np.stack([
            np.array([1.0, -1.0, 0.0]) / np.sqrt(2),
            np.array([1.0, 1.0, -2.0]) / np.sqrt(6),
        ], axis=1)
        center = np.zeros(2)
        radius = 1.0
        for _ in range(5):
            axes = [np.linspace(c - radius, c + radius, 51) for c in center]
            X, Y = np.meshgrid(*axes, indexing="ij")
            W = np.stack([X.ravel(), Y.ravel()])
            vals = conj_values_grid(p, B @ W, M, gamma)
            j = int(np.argmin(vals))
            center = W[:, j]
            radius *= 2 / 50 * 2  # keep a two-cell window each round

        g_grid = B @ center
        val_grid = float(conj_values_grid(p, g_grid[:, None], M, gamma)[0])
        assert abs(g_lib.sum()) < 1e-9  # feasibility
        assert val_lib == pytest.approx(val_grid, abs=1e-5)
        np.testing.assert_allclose(
            D @ lam[:, 0], conj_grad_single(p, g_grid, M, gamma), atol=1e-4
        )

    def test_rank_deficient_dictionary_rejected(self):
        kernel = GibbsKernel(np.ones((2, 3)), 0.1)
        D = np.ones((3, 2)) / 3  # duplicate columns
        with pytest.raises(RankDeficiencyError) as exc:
            lambda_step(D, [np.array([0.5, 0.5])], kernel)
        assert exc.value.factor == "dictionary"

    def test_dual_and_sinkhorn_traces_agree_at_optimum(self):
        rng = np.random.default_rng(14)
        M = rng.uniform(size=(3, 4))
        kernel = GibbsKernel(M, 0.1)
        P = [rng.dirichlet(np.ones(3)) for _ in range(3)]
        D, _ = init_factors(4, 3, 2, seed=2)
        _, state_primal = lambda_step(D, P, kernel, TrainOptions())
        _, state_dual = lambda_step(D, P, kernel, TrainOptions(objective_eval="dual"))
        assert state_primal.objective_trace[-1] == pytest.approx(
            state_dual.objective_trace[-1], abs=1e-6
        )


class TestDStep:
    def test_invertible_loadings_pin_potentials_to_zero(self):
        # k = m: G Lambda^T = 0 forces G = 0, so the targets are the
        # closed-form inferences and D Lambda reproduces them exactly
        rng = np.random.default_rng(3)
        n, s, m = 3, 4, 2
        M = rng.uniform(size=(n, s))
        kernel = GibbsKernel(M, 0.05)
        P = [rng.dirichlet(np.ones(n)) for _ in range(m)]
        lam = rng.uniform(0.5, 1.5, size=(m, m))
        D, state = d_step(lam, P, kernel)
        np.testing.assert_allclose(state.potentials, np.zeros((s, m)), atol=1e-12)
        for u, p in enumerate(P):
            np.testing.assert_allclose(D @ lam[:, u], infer_cold(p, kernel), atol=1e-10)

    def test_matches_constrained_grid_search(self):
        # s = 2, m = 2, k = 1: the feasible set {G : G Lambda^T = 0}
        # has dimension s * (m - k) = 2; sweep it exhaustively through
        # g_2 = -(a / b) g_1 and refine around the minimum
        rng = np.random.default_rng(21)
        n, s = 2, 2
        gamma = 0.1
        M = rng.uniform(size=(n, s))
        kernel = GibbsKernel(M, gamma)
        P = [rng.dirichlet(np.ones(n)) for _ in range(2)]
        # k = 1 loadings must be constant across users or no dictionary
        # can give every user a unit-mass prediction
        lam = np.array([[2.0, 2.0]])

        D, state = d_step(lam, P, kernel)
        val_lib = float(sum(
            conj_values_grid(P[u], state.potentials[:, u][:, None], M, gamma)[0]
            for u in range(2)
        ))

        ratio = lam[0, 0] / lam[0, 1]
        center = np.zeros(2)
        radius = 1.0
        for _ in range(5):
            axes = [np.linspace(c - radius, c + radius, 51) for c in center]
            X, Y = np.meshgrid(*axes, indexing="ij")
            W = np.stack([X.ravel(), Y.ravel()])  # candidate g_1 columns
            vals = conj_values_grid(P[0], W, M, gamma) + conj_values_grid(
                P[1], -ratio * W, M, gamma
            )
            j = int(np.argmin(vals))
            center = W[:, j]
            radius *= 2 / 50 * 2

        g1 = center
        g2 = -ratio * g1
        val_grid = float(
            conj_values_grid(P[0], g1[:, None], M, gamma)[0]
            + conj_values_grid(P[1], g2[:, None], M, gamma)[0]
        )
        assert val_lib == pytest.approx(val_grid, abs=1e-5)
        np.testing.assert_allclose(
            D @ lam[:, 0], conj_grad_single(P[0], g1, M, gamma), atol=1e-4
        )
        np.testing.assert_allclose(
            D @ lam[:, 1], conj_grad_single(P[1], g2, M, gamma), atol=1e-4
        )

    def test_rank_deficient_loadings_rejected(self):
        kernel = GibbsKernel(np.ones((2, 3)), 0.1)
        lam = np.array([[1.0, 2.0], [2.0, 4.0]])  # rank 1
        with pytest.raises(RankDeficiencyError) as exc:
            d_step(lam, [np.array([0.5, 0.5])] * 2, kernel)
        assert exc.value.factor == "loadings"

    def test_mass_inconsistent_loadings_rejected(self):
        # lam = [[1, 2]] asks one dictionary column to have total mass
        # 1 and 1/2 at once; the dual is then unbounded along the
        # all-ones shift direction and must be refused up front
        kernel = GibbsKernel(np.ones((2, 2)), 0.1)
        lam = np.array([[1.0, 2.0]])
        with pytest.raises(ValueError, match="unit-mass"):
            d_step(lam, [np.array([0.5, 0.5])] * 2, kernel)


class TestTrainWcf:
    def test_full_rank_matches_closed_form(self):
        # k = s leaves the factorization unconstrained, so the trained
        # model must reproduce the closed-form inference per user;
        # needs n >= s or the fitted loadings (a linear image of the
        # n-dimensional preference space) cannot reach rank s
        rng = np.random.default_rng(7)
        n, s, m = 6, 5, 10
        M = rng.uniform(size=(n, s))
        P = [rng.dirichlet(np.ones(n)) for _ in range(m)]
        model = train_wcf(P, M, k=s, gamma=0.05)
        kernel = GibbsKernel(M, 0.05)
        for u, p in enumerate(P):
            np.testing.assert_allclose(
                predict_user(model, u), infer_cold(p, kernel), atol=1e-8
            )

    def test_shared_preference_rank_one(self):
        # identical users compress into one dictionary atom equal to
        # their common closed-form inference
        rng = np.random.default_rng(9)
        n, s, m = 3, 4, 5
        M = rng.uniform(size=(n, s))
        p = rng.dirichlet(np.ones(n))
        model = train_wcf([p] * m, M, k=1, gamma=0.05)
        target = infer_cold(p, M, gamma=0.05)
        for u in range(m):
            np.testing.assert_allclose(predict_user(model, u), target, atol=1e-4)

    def test_trace_non_increasing_and_grows_per_half_step(self):
        rng = np.random.default_rng(13)
        n, s, m, k = 3, 5, 8, 2
        M = rng.uniform(size=(n, s))
        P = [rng.dirichlet(np.ones(n)) for _ in range(m)]
        model = train_wcf(P, M, k=k, gamma=0.05)
        trace = np.array(model.objective_trace)
        assert trace.size >= 3 and trace.size % 2 == 1
        assert np.all(np.diff(trace) <= 1e-6)

    def test_user_and_item_ids_attached(self):
        rng = np.random.default_rng(2)
        M = rng.uniform(size=(3, 4))
        P = [rng.dirichlet(np.ones(3)) for _ in range(4)]
        model = train_wcf(P, M, k=2, gamma=0.1, user_ids=(7, 8, 9, 10))
        assert model.user_ids == (7, 8, 9, 10)
        assert model.item_ids == (0, 1, 2, 3)
        assert model.k == 2

    def test_redraw_on_rank_deficiency(self, monkeypatch):
        calls = {"n": 0}
        real_init = wcf.init_factors

        def flaky_init(s, m, k, seed=0):
            calls["n"] += 1
            D, lam = real_init(s, m, k, seed=seed)
            if calls["n"] == 1:
                D = D.copy()
                D[:, -1] = D[:, 0]  # duplicate column: rank deficient
            return D, lam

        monkeypatch.setattr(wcf, "init_factors", flaky_init)
        rng = np.random.default_rng(1)
        M = rng.uniform(size=(3, 4))
        P = [rng.dirichlet(np.ones(3)) for _ in range(4)]
        with pytest.warns(UserWarning, match="redrawing dictionary"):
            model = train_wcf(P, M, k=2, gamma=0.1)
        assert calls["n"] >= 2
        assert np.all(np.isfinite(model.dictionary))

    def test_rejects_bad_inputs(self):
        M = np.ones((2, 3))
        P = [np.array([0.5, 0.5])]
        with pytest.raises(ValueError):
            train_wcf(P, M, k=2, gamma=0.05)  # k > min(s, m)
        with pytest.raises(ValueError):
            train_wcf(P, M, k=1, gamma=0.05, user_ids=(1, 2))
        with pytest.raises(ValueError):
            TrainOptions(tol=-1.0)
        with pytest.raises(ValueError):
            TrainOptions(objective_eval="midpoint")


class TestPredictAndPersistence:
    def _model(self):
        D = np.array([[0.6, 0.1], [0.3, 0.2], [0.1, 0.7]])
        lam = np.array([[1.2, -0.1], [-0.2, 1.1]])
        return FactorModel(dictionary=D, loadings=lam, gamma=0.05,
                           item_ids=(11, 12, 13), user_ids=(1, 2),
                           objective_trace=(0.5, 0.25))

    def test_predict_cleans_negatives(self):
        model = self._model()
        raw = model.dictionary @ model.loadings[:, 0]
        assert raw.min() < 0
        q = predict_user(model, 1)
        assert q.min() >= 0
        assert q.sum() == pytest.approx(1.0, abs=1e-12)

    def test_unknown_user(self):
        with pytest.raises(KeyError):
            predict_user(self._model(), 99)

    def test_round_trip_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(33)
        D = rng.uniform(size=(4, 2))
        lam = rng.normal(size=(2, 3))
        model = FactorModel(D, lam, 0.05, item_ids=(5, 6, 7, 8),
                            user_ids=(1, 2, 3), objective_trace=(1.0, 0.5, 0.25))
        save_model(model, tmp_path / "model")
        loaded = load_model(tmp_path / "model")
        assert np.array_equal(loaded.dictionary, model.dictionary)
        assert np.array_equal(loaded.loadings, model.loadings)
        assert loaded.gamma == model.gamma
        assert loaded.item_ids == model.item_ids
        assert loaded.user_ids == model.user_ids
        assert loaded.objective_trace == model.objective_trace

    def test_save_is_deterministic(self, tmp_path):
        model = self._model()
        save_model(model, tmp_path / "a")
        save_model(model, tmp_path / "b")
        for name in ("dictionary.tsv", "loadings.tsv", "manifest.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_format_guard(self, tmp_path):
        model = self._model()
        save_model(model, tmp_path / "m")
        manifest = tmp_path / "m" / "manifest.json"
        manifest.write_text(manifest.read_text().replace("factor-model/1", "factor-model/9"))
        with pytest.raises(ValueError, match="format"):
            load_model(tmp_path / "m")


class TestDualityEndToEnd:
    def test_primal_objective_matches_negated_dual(self):
        # after one full outer pass the traced primal equals the
        # negated dual value within inner-solve slack
        rng = np.random.default_rng(19)
        n, s, m, k = 3, 4, 6, 2
        M = rng.uniform(size=(n, s))
        kernel = GibbsKernel(M, 0.1)
        P = [rng.dirichlet(np.ones(n)) for _ in range(m)]
        D, _ = init_factors(s, m, k, seed=0)
        lam, state = lambda_step(D, P, kernel)
        primal = sum(
            sinkhorn(P[u], wcf._clean_histogram(D @ lam[:, u]), M, 0.1,
                     tol=1e-10, max_iter=100_000).regularized_value
            for u in range(m)
        )
        vals, _ = wcf._batch_conjugate(
            np.stack(P, axis=1), state.potentials, kernel,
            np.array([entropy(p) for p in P]), False,
        )
        assert primal == pytest.approx(float(-vals.sum()), abs=1e-6)
