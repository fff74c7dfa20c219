import math

import numpy as np
import pytest

from metahpo.data import generate_synthetic_metadataset
from metahpo.gbt import GbtParams
from metahpo.hpo import (
    GpSurrogate,
    OptimizationTrace,
    SearchSpace,
    TraceEntry,
    draw_candidates,
    expected_improvement,
    gp_fit,
    load_trace,
    matern52,
    propose_next,
    run_hpo,
    run_random_search,
    sample_config,
    save_trace,
)


class TestSearchSpace:
    def test_samples_within_bounds(self):
        space = SearchSpace.default()
        rng = np.random.default_rng(0)
        for _ in range(500):
            sample_config(space, rng)  # GbtParams validates bounds itself

    def test_max_depth_covers_support(self):
        space = SearchSpace.default()
        rng = np.random.default_rng(1)
        seen = {sample_config(space, rng).max_depth for _ in range(2000)}
        assert seen == {3, 4, 5, 6, 7, 8}

    def test_log_midpoint_of_eta(self):
        # log-uniform on [1e-5, 1]: half the draws fall below 10^-2.5
        space = SearchSpace.default()
        rng = np.random.default_rng(2)
        draws = np.array([sample_config(space, rng).eta for _ in range(10000)])
        frac = float((draws <= 10**-2.5).mean())
        assert frac == pytest.approx(0.5, abs=0.02)

    def test_unit_endpoints(self):
        space = SearchSpace.default()
        lows = GbtParams(
            n_estimators=10, eta=1e-5, gamma=1e-5, max_depth=3,
            min_child_weight=1e-5, reg_lambda=1e-5, reg_alpha=1e-5,
        )
        highs = GbtParams(
            n_estimators=1000, eta=1.0, gamma=1.0, max_depth=8,
            min_child_weight=100.0, reg_lambda=1000.0, reg_alpha=1000.0,
        )
        np.testing.assert_allclose(space.to_unit(lows), 0.0, atol=1e-12)
        np.testing.assert_allclose(space.to_unit(highs), 1.0, atol=1e-12)

    def test_eta_log_interpolation(self):
        space = SearchSpace.default()
        config = GbtParams(eta=10**-2.5)
        u = space.to_unit(config)
        assert u[1] == pytest.approx(0.5)

    def test_round_trip(self):
        space = SearchSpace.default()
        rng = np.random.default_rng(3)
        for _ in range(50):
            c = sample_config(space, rng)
            back = space.from_unit(space.to_unit(c))
            assert back.n_estimators == c.n_estimators
            assert back.max_depth == c.max_depth
            assert back.eta == pytest.approx(c.eta, rel=1e-9)
            assert back.reg_alpha == pytest.approx(c.reg_alpha, rel=1e-9)

    def test_out_of_bounds_rejected(self):
        space = SearchSpace.default()
        good = GbtParams()
        bad = dict(good.to_dict())
        bad["eta"] = 2.0
        with pytest.raises(ValueError):
            space.to_unit(type("C", (), bad)())


def dense_posterior_oracle(X, y, lengthscales, signal, noise, Xq):
    """Direct dense solve (no Cholesky) for the GP posterior."""
    X, Xq = np.atleast_2d(X), np.atleast_2d(Xq)
    ls = np.broadcast_to(np.asarray(lengthscales, dtype=float), (X.shape[1],))

    def kern(A, B):
        diff = A[:, None, :] - B[None, :, :]
        r = np.sqrt(((diff / ls) ** 2).sum(axis=2))
        return signal**2 * matern52(r)

    K = kern(X, X) + noise * np.eye(len(X))
    Kinv = np.linalg.inv(K)
    Ks = kern(X, Xq)
    mean = Ks.T @ Kinv @ np.asarray(y, dtype=float)
    var = signal**2 - np.einsum("ij,ik,kj->j", Ks, Kinv, Ks)
    return mean, np.maximum(var, 0.0)


class TestGpSurrogate:
    def test_interpolates_at_low_noise(self):
        rng = np.random.default_rng(0)
        X = rng.random((8, 3))
        y = np.sin(X.sum(axis=1))
        gp = GpSurrogate.build(X, y, 0.5, 1.0, 1e-10, standardize=True)
        mean, _ = gp.posterior(X)
        np.testing.assert_allclose(mean, y, atol=1e-6)

    def test_far_query_reverts_to_prior(self):
        X = np.zeros((3, 2)) + 0.01 * np.arange(6).reshape(3, 2)
        y = np.array([1.0, 1.2, 0.8])
        gp = GpSurrogate.build(X, y, 0.05, 1.0, 1e-8, standardize=True)
        mean, var = gp.posterior(np.full((1, 2), 50.0))
        assert mean[0] == pytest.approx(y.mean(), abs=1e-6)
        # in standardized units the prior variance is signal^2
        assert var[0] == pytest.approx(gp.y_std**2 * 1.0**2, rel=1e-6)

    def test_single_observation_matern_value(self):
        # one observation at 0 with y=1, unit hyperparameters, no noise:
        # posterior mean at distance 1 equals the Matern 5/2 correlation
        gp = GpSurrogate.build(np.array([[0.0]]), np.array([1.0]), 1.0, 1.0, 0.0)
        mean, _ = gp.posterior(np.array([[1.0]]))
        expected = (1 + math.sqrt(5) + 5 / 3) * math.exp(-math.sqrt(5))
        assert expected == pytest.approx(0.5240, abs=1e-4)
        assert mean[0] == pytest.approx(expected, rel=1e-9)

    def test_posterior_matches_dense_oracle(self):
        rng = np.random.default_rng(4)
        X = rng.random((15, 4))
        y = rng.random(15)
        ls, signal, noise = 0.4, 0.9, 1e-4
        gp = GpSurrogate.build(X, y, ls, signal, noise)
        Xq = rng.random((6, 4))
        mean, var = gp.posterior(Xq)
        o_mean, o_var = dense_posterior_oracle(X, y, ls, signal, noise, Xq)
        np.testing.assert_allclose(mean, o_mean, atol=1e-8)
        np.testing.assert_allclose(var, o_var, atol=1e-8)

    def test_gp_fit_standardizes_and_interpolates(self):
        rng = np.random.default_rng(5)
        X = rng.random((10, 2))
        y = 0.5 + 0.2 * np.sin(6 * X[:, 0])
        gp = gp_fit(X, y)
        mean, _ = gp.posterior(X)
        assert float(np.abs(mean - y).max()) < 0.05

    def test_constant_objective_handled(self):
        X = np.random.default_rng(0).random((5, 2))
        y = np.full(5, 0.7)
        gp = gp_fit(X, y)
        mean, _ = gp.posterior(np.random.default_rng(1).random((3, 2)))
        np.testing.assert_allclose(mean, 0.7, atol=1e-6)


class TestExpectedImprovement:
    def make_gp(self):
        X = np.array([[0.0], [0.5]])
        y = np.array([0.4, 0.2])
        return GpSurrogate.build(X, y, 1.0, 1.0, 1e-6)

    def test_zero_sigma_at_or_below_best(self):
        gp = self.make_gp()
        # at an observed point the posterior std is ~0 and mu <= best
        assert expected_improvement(gp, np.array([0.5]), best=0.4) == pytest.approx(0.0, abs=1e-3)

    def test_phi_zero_case(self):
        # mu == best, sigma == 1: EI = standard normal density at 0
        class Fake:
            def posterior(self, Xq):
                return np.array([0.4]), np.array([1.0])

        ei = expected_improvement(Fake(), np.array([0.0]), best=0.4)
        assert ei == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-9)
        assert ei == pytest.approx(0.39894, abs=1e-5)

    def test_worked_example(self):
        class Fake:
            def posterior(self, Xq):
                return np.array([0.5]), np.array([0.01])

        ei = expected_improvement(Fake(), np.array([0.0]), best=0.4)
        from scipy.stats import norm

        expected = 0.1 * (1.0 * norm.cdf(1.0) + norm.pdf(1.0))
        assert ei == pytest.approx(expected, rel=1e-9)
        assert ei == pytest.approx(0.10833, abs=1e-5)

    def test_non_negative_everywhere(self):
        gp = self.make_gp()
        rng = np.random.default_rng(0)
        for _ in range(50):
            assert expected_improvement(gp, rng.random(1), best=0.5) >= 0.0


class TestProposeNext:
    def test_single_candidate_returned(self):
        gp = GpSurrogate.build(np.array([[0.2] * 7]), np.array([0.5]), 1.0, 1.0, 1e-6)
        space = SearchSpace.default()
        a = propose_next(gp, space, np.random.default_rng(3), n_candidates=1)
        b = sample_config(space, np.random.default_rng(3))
        assert a == b

    def test_deterministic(self):
        gp = GpSurrogate.build(
            np.random.default_rng(0).random((5, 7)), np.random.default_rng(1).random(5), 0.5, 1.0, 1e-4
        )
        space = SearchSpace.default()
        a = propose_next(gp, space, np.random.default_rng(9))
        b = propose_next(gp, space, np.random.default_rng(9))
        assert a == b

    def test_argmax_property(self):
        rng = np.random.default_rng(2)
        gp = GpSurrogate.build(rng.random((6, 7)), rng.random(6), 0.5, 1.0, 1e-4)
        space = SearchSpace.default()
        pick = propose_next(gp, space, np.random.default_rng(5), n_candidates=64)
        pick_ei = expected_improvement(gp, space.to_unit(pick), float(gp.y.max()))
        others = [
            expected_improvement(
                gp,
                space.to_unit(sample_config(space, np.random.default_rng(100 + i))),
                float(gp.y.max()),
            )
            for i in range(50)
        ]
        assert pick_ei >= np.quantile(others, 0.95) - 1e-12


class FixedEvaluator:
    """Deterministic fake objective keyed on a config hash."""

    def __call__(self, ds, config):
        u = SearchSpace.default().to_unit(config)
        return float(0.5 + 0.4 * math.sin(10 * u[0]) * math.cos(5 * u[1]) ** 2)


class TestRunHpo:
    def setup_method(self):
        self.ds = generate_synthetic_metadataset(4, seed=0).meta_train[0]
        self.space = SearchSpace.default()
        self.evaluator = FixedEvaluator()

    def test_pure_warmstart_budget(self):
        ws = draw_candidates(self.space, 5, seed=1)
        trace = run_hpo(self.ds, ws, budget=5, evaluator=self.evaluator, seed=0)
        assert trace.budget == 5
        assert all(e.phase == "warmstart" for e in trace.entries)

    def test_twenty_with_five_warmstart(self):
        ws = draw_candidates(self.space, 5, seed=1)
        trace = run_hpo(self.ds, ws, budget=20, evaluator=self.evaluator, seed=0)
        phases = [e.phase for e in trace.entries]
        assert phases.count("warmstart") == 5
        assert phases.count("bo") == 15
        assert phases[:5] == ["warmstart"] * 5

    def test_incumbent_monotone_and_at_least_warmstart_best(self):
        ws = draw_candidates(self.space, 5, seed=2)
        trace = run_hpo(self.ds, ws, budget=12, evaluator=self.evaluator, seed=3)
        best = trace.best_so_far()
        assert np.all(np.diff(best) >= 0)
        ws_best = max(e.objective for e in trace.entries[:5])
        assert best[-1] >= ws_best

    def test_failures_become_half(self):
        def broken(ds, config):
            raise RuntimeError("nope")

        ws = draw_candidates(self.space, 2, seed=1)
        trace = run_hpo(self.ds, ws, budget=4, evaluator=broken, seed=0)
        assert all(e.objective == 0.5 for e in trace.entries)

    def test_warmstart_longer_than_budget_rejected(self):
        ws = draw_candidates(self.space, 6, seed=1)
        with pytest.raises(ValueError):
            run_hpo(self.ds, ws, budget=5, evaluator=self.evaluator, seed=0)


class TestRandomSearch:
    def setup_method(self):
        self.ds = generate_synthetic_metadataset(4, seed=0).meta_train[0]
        self.evaluator = FixedEvaluator()

    def test_trace_shape_and_phases(self):
        trace = run_random_search(self.ds, budget=8, evaluator=self.evaluator, seed=5)
        phases = [e.phase for e in trace.entries]
        assert phases == ["warmstart"] * 5 + ["bo"] * 3

    def test_determinism(self):
        a = run_random_search(self.ds, budget=6, evaluator=self.evaluator, seed=1)
        b = run_random_search(self.ds, budget=6, evaluator=self.evaluator, seed=1)
        assert [e.config for e in a.entries] == [e.config for e in b.entries]

    def test_expected_best_matches_closed_form(self):
        # replay over 8 stored configs: random-search draws snap to the
        # nearest stored config, so the induced column distribution plus the
        # closed-form E[max of 20 iid draws] gives the oracle expectation
        from metahpo.portfolio import ReplayEvaluator

        space = SearchSpace.default()
        stored = draw_candidates(space, 8, seed=7)
        rng = np.random.default_rng(8)
        row = rng.uniform(0.3, 0.9, size=8)
        replay = ReplayEvaluator.from_grid(
            [self.ds], stored, row.reshape(1, -1), space=space, fallback=True
        )
        # induced probabilities by Monte Carlo over the snapping map
        probe = np.random.default_rng(99)
        counts = np.zeros(8)
        units = np.stack([space.to_unit(c) for c in stored])
        for _ in range(20000):
            q = space.to_unit(sample_config(space, probe))
            counts[int(np.argmin(((units - q) ** 2).sum(axis=1)))] += 1
        probs = counts / counts.sum()
        order = np.argsort(row)
        cdf = 0.0
        expect = 0.0
        prev_cdf = 0.0
        for idx in order:
            cdf += probs[idx]
        # E[max] = sum v * (F(v)^n - F(v-)^n) over sorted support
        cdf_sorted = np.cumsum(probs[order])
        pow_n = cdf_sorted**20
        mass = np.diff(np.concatenate([[0.0], pow_n]))
        expect = float((row[order] * mass).sum())

        bests = []
        for seed in range(100):
            trace = run_random_search(self.ds, budget=20, evaluator=replay, seed=seed)
            bests.append(trace.best_so_far()[-1])
        mc = float(np.mean(bests))
        se = float(np.std(bests, ddof=1) / math.sqrt(len(bests)))
        assert abs(mc - expect) < 4 * se + 1e-3


class TestTraceStructure:
    def test_phase_order_enforced(self):
        c = GbtParams()
        entries = (
            TraceEntry(1, c, 0.5, "bo"),
            TraceEntry(2, c, 0.6, "warmstart"),
        )
        with pytest.raises(ValueError, match="precede"):
            OptimizationTrace("d", "s", 0, entries)

    def test_iteration_numbering_enforced(self):
        c = GbtParams()
        with pytest.raises(ValueError, match="1..budget"):
            OptimizationTrace("d", "s", 0, (TraceEntry(3, c, 0.5, "warmstart"),))

    def test_save_load_round_trip(self, tmp_path):
        ds = generate_synthetic_metadataset(4, seed=0).meta_train[0]
        trace = run_random_search(ds, budget=6, evaluator=FixedEvaluator(), seed=2)
        save_trace(trace, tmp_path / "t.csv")
        loaded = load_trace(tmp_path / "t.csv", ds.name, trace.strategy, trace.seed)
        assert loaded.entries == trace.entries
