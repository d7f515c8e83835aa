import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_instance, random_stack
from simuplink.channel import NoiseBudget, build_correlation
from simuplink.combiner import PhaseProfile, compose_sim, matched_filter_phases
from simuplink.harness import finite_difference_gradient
from simuplink.metrics import sinr
from simuplink.optim import (
    OptimizerConfig,
    SumRateProblem,
    analytic_gradient,
    ascend_gradient,
    ascend_quasi_newton,
    gradient_ascent,
    normalize_gradient,
    quasi_newton,
    two_way_backtracking,
)


def rate(stack, phases, H, noise, U):
    return sinr(compose_sim(stack, phases, noise.T_sim), H, noise, U).sum_rate


def max_rel_error(analytic, fd):
    return float(np.max(np.abs(analytic - fd) / (1e-8 + np.abs(fd))))


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs", [dict(max_iterations=0), dict(backtrack_factor=1.0), dict(armijo_c=0.0), dict(alpha_init=-1.0)]
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            OptimizerConfig(**kwargs)

    def test_defaults(self):
        assert OptimizerConfig.gradient_ascent_defaults(1).alpha_init == 1.8
        assert OptimizerConfig.gradient_ascent_defaults(2).alpha_init == 2.2
        assert OptimizerConfig.gradient_ascent_defaults(1).max_iterations == 500
        qn = OptimizerConfig.quasi_newton_defaults()
        assert qn.max_iterations == 100 and not qn.mirror_probe


class TestNormalize:
    def test_single_layer(self):
        np.testing.assert_array_equal(normalize_gradient(np.array([[2.0, -4.0]])), [[0.5, -1.0]])

    def test_zero_layer(self):
        np.testing.assert_array_equal(normalize_gradient(np.zeros((1, 3))), np.zeros((1, 3)))

    def test_per_layer(self):
        out = normalize_gradient(np.array([[1.0, 1.0], [10.0, -10.0]]))
        np.testing.assert_array_equal(out, [[1.0, 1.0], [1.0, -1.0]])

    @given(st.lists(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3), min_size=1, max_size=4))
    def test_max_abs_one(self, rows):
        g = np.array(rows)
        out = normalize_gradient(g)
        for row_in, row_out in zip(g, out):
            if np.any(row_in):
                assert np.max(np.abs(row_out)) == 1.0
            else:
                assert not np.any(row_out)


class TestLineSearch:
    # R(theta) = -(theta - 1)^2 from theta = 0: gradient 2, normalized direction +1
    objective = staticmethod(lambda th: float(-np.sum((th - 1.0) ** 2)))
    theta0 = np.zeros((1, 1))
    grad = np.full((1, 1), 2.0)
    direction = np.ones((1, 1))

    def search(self, step0, **kwargs):
        cfg = OptimizerConfig(**kwargs)
        return two_way_backtracking(self.objective, self.theta0, self.direction, step0, cfg, gradient=self.grad)

    def test_large_step_shrinks(self):
        # 10 -> 5 -> 2.5 -> 1.25; Armijo first holds at 1.25
        res = self.search(10.0)
        assert res.step == pytest.approx(1.25)
        assert res.value > self.objective(self.theta0)
        assert not res.stalled

    def test_tiny_step_grows(self):
        # Armijo holds for mu <= 2 - 2c = 1.9998: 0.01 * 2^7 = 1.28 is the last doubling that holds
        res = self.search(0.01)
        assert res.step == pytest.approx(1.28)
        assert res.value == pytest.approx(-(0.28**2))

    def test_mirror_probe_picks_better_side(self):
        # mild ascent along +d near 0, but a far better plateau on the mirrored side
        obj = lambda th: float(np.sum(np.where(th > -0.01, 0.1 * th - th**2, 1.0)))
        grad = np.full((1, 1), 0.1)
        res = two_way_backtracking(obj, self.theta0, self.direction, 0.05, OptimizerConfig(), gradient=grad)
        assert res.step == pytest.approx(-0.05)
        assert res.value == 1.0
        no_probe = OptimizerConfig(mirror_probe=False)
        res = two_way_backtracking(obj, self.theta0, self.direction, 0.05, no_probe, gradient=grad)
        assert res.step == pytest.approx(0.05)

    def test_stationary_point_stalls(self):
        res = two_way_backtracking(self.objective, np.ones((1, 1)), np.zeros((1, 1)), 1.0, OptimizerConfig())
        assert res.step == 0.0 and res.stalled

    def test_underflow_stalls(self):
        # the direction is "ascent" according to the supplied gradient but the objective disagrees
        obj = lambda th: float(-np.sum(th**2))
        res = two_way_backtracking(obj, np.zeros((1, 1)), np.ones((1, 1)), 1.0, OptimizerConfig(), gradient=np.ones((1, 1)))
        assert res.step == 0.0 and res.stalled


class TestAnalyticGradient:
    def test_finite_difference_agreement(self):
        rng = np.random.default_rng(7)
        stack, H, noise, corr = make_instance(rng, L=3, side=3, K=2)
        # N = 9 here; the N = 8 case is covered by the unstructured stack below
        theta = rng.uniform(0, 2 * np.pi, (3, 9))
        problem = SumRateProblem(stack, H, noise, corr.factor)
        grad = analytic_gradient(stack, PhaseProfile(theta), H, noise, corr.factor)
        fd = finite_difference_gradient(problem.value, theta, 1e-6)
        assert max_rel_error(grad, fd) <= 1e-5

    def test_finite_difference_unstructured_n8(self):
        rng = np.random.default_rng(8)
        stack = random_stack(rng, 3, 8, 2)
        H = rng.standard_normal((8, 2)) + 1j * rng.standard_normal((8, 2))
        U = build_correlation(np.column_stack([np.arange(8) * 0.03, np.zeros(8), np.zeros(8)]), 0.1).factor
        noise = NoiseBudget(sigma2_ant=0.5, sigma2_rf=10.0, P_T=1.0, A_eff=1.0, T_sim=0.7)
        theta = rng.uniform(0, 2 * np.pi, (3, 8))
        problem = SumRateProblem(stack, H, noise, U)
        fd = finite_difference_gradient(problem.value, theta, 1e-6)
        assert max_rel_error(problem.value_and_gradient(theta)[1], fd) <= 1e-5

    def test_zero_channel(self, rng):
        stack, H, noise, corr = make_instance(rng, L=2, side=2, K=2)
        grad = analytic_gradient(stack, PhaseProfile.random(2, 4, rng), np.zeros_like(H), noise, corr.factor)
        np.testing.assert_array_equal(grad, 0.0)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32), st.integers(1, 4), st.integers(1, 3))
    def test_global_phase_direction(self, seed, L, K):
        rng = np.random.default_rng(seed)
        stack, H, noise, corr = make_instance(rng, L=L, side=2, K=K)
        theta = rng.uniform(0, 2 * np.pi, (L, 4))
        problem = SumRateProblem(stack, H, noise, corr.factor)
        value, grad = problem.value_and_gradient(theta)
        shifted = theta.copy()
        shifted[-1] += 0.77
        assert problem.value(shifted) == pytest.approx(value, abs=1e-12)
        # a common phase on any layer factors out of G
        scale = max(1.0, np.max(np.abs(grad)))
        assert np.all(np.abs(grad.sum(axis=1)) <= 1e-8 * scale)

    def test_value_matches_metrics(self, rng):
        stack, H, noise, corr = make_instance(rng, L=2, side=3, K=3)
        phases = PhaseProfile.random(2, 9, rng)
        problem = SumRateProblem(stack, H, noise, corr.factor)
        assert problem.value(phases.theta) == pytest.approx(rate(stack, phases, H, noise, corr.factor), rel=1e-12)


class TestGradientAscent:
    def test_single_layer_alignment(self):
        rng = np.random.default_rng(21)
        stack = random_stack(rng, 1, 4, 1)
        h = rng.standard_normal((4, 1)) + 1j * rng.standard_normal((4, 1))
        noise = NoiseBudget(sigma2_ant=1e-12, sigma2_rf=1.0, P_T=1.0, A_eff=1.0, T_sim=1.0)
        phases, trace = gradient_ascent(stack, h, noise, OptimizerConfig.gradient_ascent_defaults(1, seed=3))
        achieved = abs(compose_sim(stack, phases).G @ h)[0, 0]
        oracle = np.sum(np.abs(stack.matrices[0][0]) * np.abs(h[:, 0]))
        assert achieved == pytest.approx(oracle, rel=1e-3)

    def test_exhaustive_grid_oracle(self):
        rng = np.random.default_rng(4)
        stack = random_stack(rng, 1, 3, 1)
        h = rng.standard_normal((3, 1)) + 1j * rng.standard_normal((3, 1))
        U = build_correlation(np.column_stack([np.arange(3) * 0.03, np.zeros(3), np.zeros(3)]), 0.1).factor
        noise = NoiseBudget(sigma2_ant=2.0, sigma2_rf=0.5, P_T=1.0, A_eff=1.0, T_sim=0.7)
        levels = np.arange(64) * 2 * np.pi / 64
        grid = np.stack(np.meshgrid(levels, levels, levels, indexing="ij"), axis=-1).reshape(-1, 3)
        g = np.sqrt(0.7) * stack.matrices[0][0] * np.exp(1j * grid)  # (64^3, 3)
        Sigma = U @ U.T
        gamma = np.abs(g @ h[:, 0]) ** 2 / (noise.sigma2_ant * np.real(np.einsum("in,nm,im->i", g.conj(), Sigma, g)) + 0.5)
        best_grid = float(np.max(np.log2(1 + gamma)))
        phases, _ = gradient_ascent(stack, h, noise, OptimizerConfig.gradient_ascent_defaults(1, seed=0), U=U)
        assert rate(stack, phases, h, noise, U) >= best_grid - 1e-2

    def test_monotone_and_improves_init(self, rng):
        stack, H, noise, corr = make_instance(rng, L=2, side=4, K=2)
        init = PhaseProfile.random(2, 16, rng)
        phases, trace = gradient_ascent(stack, H, noise, OptimizerConfig.gradient_ascent_defaults(2), init=init,
                                        U=corr.factor)
        assert np.all(np.diff(trace.sum_rate) >= 0)
        assert trace.sum_rate[-1] >= rate(stack, init, H, noise, corr.factor)
        assert trace.sum_rate[-1] == pytest.approx(rate(stack, phases, H, noise, corr.factor), rel=1e-12)
        assert len(trace.grad_norms) >= trace.iterations
        assert trace.termination in ("converged", "max_iterations", "stalled", "stationary")

    def test_dominates_matched_filter(self):
        wins = 0
        for seed in range(100):
            rng = np.random.default_rng(1000 + seed)
            stack, H, noise, corr = make_instance(rng, L=2, side=4, K=1)
            U = corr.factor
            mf = rate(stack, matched_filter_phases(stack, H, 0), H, noise, U)
            phases, _ = gradient_ascent(stack, H, noise, OptimizerConfig.gradient_ascent_defaults(1, seed=seed), U=U)
            wins += rate(stack, phases, H, noise, U) >= mf
        assert wins >= 95

    def test_deterministic(self, rng):
        stack, H, noise, corr = make_instance(rng, L=2, side=3, K=2)
        cfg = OptimizerConfig.gradient_ascent_defaults(2, seed=5, max_iterations=50)
        _, a = gradient_ascent(stack, H, noise, cfg, U=corr.factor)
        _, b = gradient_ascent(stack, H, noise, cfg, U=corr.factor)
        assert a.sum_rate == b.sum_rate and a.step == b.step

    def test_periodic_in_init(self, rng):
        stack, H, noise, corr = make_instance(rng, L=2, side=3, K=2)
        init = rng.uniform(0, 2 * np.pi, (2, 9))
        cfg = OptimizerConfig.gradient_ascent_defaults(2, max_iterations=50)
        _, a = gradient_ascent(stack, H, noise, cfg, init=init, U=corr.factor)
        _, b = gradient_ascent(stack, H, noise, cfg, init=init + 2 * np.pi, U=corr.factor)
        np.testing.assert_allclose(a.sum_rate, b.sum_rate, rtol=1e-9)
        assert a.iterations == b.iterations

    def test_zero_gradient_start(self, rng):
        stack, H, noise, corr = make_instance(rng, L=2, side=2, K=1)
        for run in (gradient_ascent, quasi_newton):
            phases, trace = run(stack, np.zeros_like(H), noise, OptimizerConfig(seed=1), U=corr.factor)
            assert trace.iterations == 0 and trace.termination == "stationary"


class TestQuasiNewton:
    def test_strongly_concave_synthetic(self):
        rng = np.random.default_rng(0)
        a = rng.uniform(1, 10, (2, 5))
        target = rng.uniform(-1, 1, (2, 5))
        f = lambda th: float(-np.sum(a * (th - target) ** 2))
        fg = lambda th: (f(th), -2 * a * (th - target))
        theta0 = np.zeros((2, 5))
        th_ga, ga = ascend_gradient(f, fg, theta0, OptimizerConfig(max_iterations=5000, alpha_init=1.0))
        th_qn, qn = ascend_quasi_newton(f, fg, theta0, OptimizerConfig.quasi_newton_defaults())
        assert np.max(np.abs(th_qn - target)) <= 1e-6
        assert np.max(np.abs(th_ga - target)) <= 1e-6
        assert qn.iterations < ga.iterations

    def test_monotone_on_nonconcave(self):
        # cos has negative curvature regions, exercising the curvature-pair guard
        f = lambda th: float(np.sum(np.cos(th) + 0.3 * np.sin(3 * th)))
        fg = lambda th: (f(th), -np.sin(th) + 0.9 * np.cos(3 * th))
        theta0 = np.random.default_rng(2).uniform(0, 2 * np.pi, (3, 6))
        _, trace = ascend_quasi_newton(f, fg, theta0, OptimizerConfig.quasi_newton_defaults())
        assert np.all(np.diff(trace.sum_rate) >= 0)
        assert trace.sum_rate[-1] > trace.sum_rate[0]

    def test_not_worse_than_gradient_ascent_two_users(self):
        ga_rates, qn_rates = [], []
        # single instances land in different local optima; compare means over 50
        for seed in range(50):
            rng = np.random.default_rng(500 + seed)
            stack, H, noise, corr = make_instance(rng, L=2, side=4, K=2)
            init = PhaseProfile.random(2, 16, rng)
            U = corr.factor
            p_ga, _ = gradient_ascent(stack, H, noise, OptimizerConfig.gradient_ascent_defaults(2), init=init, U=U)
            p_qn, _ = quasi_newton(stack, H, noise, OptimizerConfig.quasi_newton_defaults(), init=init, U=U)
            ga_rates.append(rate(stack, p_ga, H, noise, U))
            qn_rates.append(rate(stack, p_qn, H, noise, U))
        assert np.mean(qn_rates) >= np.mean(ga_rates) - 0.1

    def test_monotone_and_capped(self, rng):
        stack, H, noise, corr = make_instance(rng, L=3, side=3, K=2)
        _, trace = quasi_newton(stack, H, noise, OptimizerConfig.quasi_newton_defaults(seed=2), U=corr.factor)
        assert trace.iterations <= 100
        assert np.all(np.diff(trace.sum_rate) >= 0)
