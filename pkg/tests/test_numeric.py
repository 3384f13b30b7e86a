"""Tests for the general-constraint numeric path and its inner solver."""

import numpy as np
import pytest

from helpers import corridor_spec, quintic_spec, random_equality_spec
from trajadmm.admm import init_state, optimize
from trajadmm.numeric import (
    ConvexConstraint,
    UserBlock,
    aug_lagrangian,
    lbfgs_minimize,
    numeric_segment_update,
    segment_constraint_blocks,
    transform,
)
from trajadmm.problem import ProblemSpec, SolverConfig, build_segment_matrices


def with_solver(spec, **kw):
    return ProblemSpec(
        cfg=spec.cfg, path=spec.path, segments=spec.segments,
        boundary_start=spec.boundary_start, boundary_end=spec.boundary_end,
        v_max=spec.v_max, weights=spec.weights,
        solver=SolverConfig(**kw), pin_waypoints=spec.pin_waypoints,
    )


class TestTransform:
    def test_satisfied_maps_to_zero(self):
        assert transform(-3.0) == 0.0

    def test_violated_squares(self):
        assert transform(2.0) == 4.0

    def test_smooth_splice_at_zero(self):
        h = 1e-7
        left = (transform(0.0) - transform(-h)) / h
        right = (transform(h) - transform(0.0)) / h
        assert left == pytest.approx(0.0, abs=1e-6)
        assert right == pytest.approx(0.0, abs=1e-6)

    def test_feasibility_equivalence(self):
        for g0 in (-10.0, -1e-12, 0.0, 1e-12, 5.0):
            assert (transform(g0) == 0.0) == (g0 <= 0.0)


class TestAugLagrangian:
    def setup_instance(self, seed=0, v_max=1.2):
        rng = np.random.default_rng(seed)
        spec = corridor_spec(rng, 2, v_max=v_max, sample_count=4)
        mats = [build_segment_matrices(spec, i) for i in range(2)]
        blocks = segment_constraint_blocks(mats[0], spec.v_max)
        y = [np.abs(rng.normal(size=b.size)) for b in blocks]
        states, consensus, _ = init_state(spec, mats)
        return spec, mats[0], blocks, y, consensus, rng

    def test_strictly_feasible_matches_equality_only(self):
        spec, mats, blocks, _, consensus, _ = self.setup_instance()
        y0 = [np.zeros(b.size) for b in blocks]
        c = np.zeros(18)
        c[[0, 6, 12]] = spec.path[0] + 0.01  # rest near the start, inside the box
        zt = consensus.ztilde(0)
        u = np.zeros(30)
        val, _ = aug_lagrangian(c, zt, u, mats, blocks, y0, rho=1.3)
        val_eq, _ = aug_lagrangian(c, zt, u, mats, [], [], rho=1.3)
        assert val == pytest.approx(val_eq, rel=1e-12)

    def test_violated_linear_row_adds_quartic_penalty(self):
        spec, mats, blocks, _, consensus, _ = self.setup_instance()
        corr = blocks[0]
        c = np.zeros(18)
        g0 = corr.values(c)
        # push one row to violation 0.1 by shifting along its normal
        row = corr.rows[0, :]
        c = c + row / (row @ row) * (0.1 - g0[0])
        g0 = corr.values(c)
        assert g0[0] == pytest.approx(0.1)
        y0 = [np.zeros(b.size) for b in blocks]
        rho = 2.0
        val, _ = aug_lagrangian(c, consensus.ztilde(0), np.zeros(30), mats,
                                [corr], [y0[0]], rho)
        val_ref, _ = aug_lagrangian(c, consensus.ztilde(0), np.zeros(30), mats, [], [], rho)
        extra = val - val_ref
        expected = 0.0
        for g in np.maximum(0.0, g0):
            expected += 0.5 * rho * g**4
        assert extra == pytest.approx(expected, rel=1e-9)

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_gradient_matches_finite_differences(self, seed):
        spec, mats, blocks, y, consensus, rng = self.setup_instance(seed)
        c = rng.normal(size=18) * 0.5
        zt = consensus.ztilde(0)
        u = rng.normal(size=30) * 0.1
        rho = 1.7
        _, grad = aug_lagrangian(c, zt, u, mats, blocks, y, rho)
        fd = np.zeros_like(grad)
        h = 1e-6
        for j in range(18):
            e = np.zeros(18)
            e[j] = h
            fp, _ = aug_lagrangian(c + e, zt, u, mats, blocks, y, rho)
            fm, _ = aug_lagrangian(c - e, zt, u, mats, blocks, y, rho)
            fd[j] = (fp - fm) / (2 * h)
        scale = max(1.0, np.abs(grad).max())
        assert np.abs(grad - fd).max() / scale < 1e-5

    def test_gradient_near_constraint_boundary(self):
        # g0 near 0 is where the max-squared splice must stay smooth
        spec, mats, blocks, _, consensus, rng = self.setup_instance(4)
        corr = blocks[0]
        c = rng.normal(size=18) * 0.1
        row = corr.rows[2, :]
        g0 = corr.values(c)[2]
        c = c + row / (row @ row) * (1e-9 - g0)
        y = [np.zeros(b.size) for b in blocks]
        _, grad = aug_lagrangian(c, consensus.ztilde(0), np.zeros(30), mats, blocks, y, 1.0)
        fd = np.zeros_like(grad)
        h = 1e-6
        for j in range(18):
            e = np.zeros(18)
            e[j] = h
            fp, _ = aug_lagrangian(c + e, consensus.ztilde(0), np.zeros(30), mats, blocks, y, 1.0)
            fm, _ = aug_lagrangian(c - e, consensus.ztilde(0), np.zeros(30), mats, blocks, y, 1.0)
            fd[j] = (fp - fm) / (2 * h)
        scale = max(1.0, np.abs(grad).max())
        assert np.abs(grad - fd).max() / scale < 1e-5

    def test_non_finite_evaluation_reports_tag(self):
        spec, mats, _, _, consensus, _ = self.setup_instance()
        bad = UserBlock([ConvexConstraint(
            evaluator=lambda c: float("nan"), gradient=lambda c: np.zeros(18),
            tag="user")])
        with pytest.raises(FloatingPointError, match="user"):
            aug_lagrangian(np.zeros(18), consensus.ztilde(0), np.zeros(30), mats,
                           [bad], [np.zeros(1)], 1.0)


class TestLbfgs:
    def test_convex_quadratic_matches_direct_solve(self):
        rng = np.random.default_rng(5)
        A = rng.normal(size=(12, 12))
        H = A @ A.T + 12 * np.eye(12)
        g = rng.normal(size=12)

        def fg(x):
            return 0.5 * x @ H @ x - g @ x, H @ x - g

        res = lbfgs_minimize(fg, np.zeros(12))
        direct = np.linalg.solve(H, g)
        assert res.converged
        assert np.abs(res.x - direct).max() < 1e-6

    def test_starts_at_minimizer_returns_immediately(self):
        def fg(x):
            return float(x @ x), 2 * x

        res = lbfgs_minimize(fg, np.zeros(3))
        assert res.converged
        assert res.iterations == 0

    def test_rosenbrock(self):
        def fg(x):
            a, b = x
            f = (1 - a) ** 2 + 100 * (b - a**2) ** 2
            g = np.array([
                -2 * (1 - a) - 400 * a * (b - a**2),
                200 * (b - a**2),
            ])
            return f, g

        res = lbfgs_minimize(fg, np.array([-1.2, 1.0]), max_iters=400)
        assert np.abs(res.x - 1.0).max() < 1e-4

    def test_line_search_failure_returns_best(self):
        # non-smooth kink the Wolfe search cannot satisfy
        def fg(x):
            return float(np.abs(x).sum()), np.sign(x)

        res = lbfgs_minimize(fg, np.array([1.0, -2.0]), max_iters=50)
        assert not res.converged
        assert res.value <= 3.0


class TestNumericSegmentUpdate:
    def test_strictly_feasible_start_matches_unconstrained_minimum(self):
        rng = np.random.default_rng(8)
        spec = corridor_spec(rng, 2, v_max=50.0, margin=100.0, sample_count=3)
        mats = build_segment_matrices(spec, 0)
        blocks = segment_constraint_blocks(mats, spec.v_max)
        y = [np.zeros(b.size) for b in blocks]
        states, consensus, _ = init_state(spec, [mats, build_segment_matrices(spec, 1)])
        st = states.segment(0)
        zt = consensus.ztilde(0)
        c_new, _ = numeric_segment_update(st, zt, mats, blocks, y, rho=1.0)
        # with g identically zero the subproblem is the consensus-only
        # quadratic; solve it densely
        A = 2 * mats.gram + 1.0 * (mats.bmap.T @ mats.bmap)
        c_ref = np.linalg.solve(A, 1.0 * mats.bmap.T @ (zt - st.u))
        assert np.abs(c_new - c_ref).max() < 1e-5

    def test_multiplier_ascent_is_nonnegative(self):
        rng = np.random.default_rng(9)
        spec = corridor_spec(rng, 2, v_max=0.4, margin=0.05, sample_count=4)
        mats = build_segment_matrices(spec, 0)
        blocks = segment_constraint_blocks(mats, spec.v_max)
        y = [np.zeros(b.size) for b in blocks]
        states, consensus, _ = init_state(spec, [mats, build_segment_matrices(spec, 1)])
        st = states.segment(0)
        st.c[:] = rng.normal(size=18)
        _, y_new = numeric_segment_update(st, consensus.ztilde(0), mats, blocks, y, 1.0)
        for arr in y_new:
            assert np.all(arr >= 0)


class TestNumericalMode:
    def test_equality_only_matches_closed_form(self):
        rng = np.random.default_rng(10)
        base = random_equality_spec(rng, 2, dims=1)
        closed = optimize(with_solver(base, epsilon=3e-4, max_iters=60000, threads=1))
        numeric = optimize(with_solver(base, mode="numerical", epsilon=3e-4,
                                       max_iters=60000, threads=1))
        assert closed.converged and numeric.converged
        assert np.abs(numeric.coefficients - closed.coefficients).max() < 1e-4
        assert abs(numeric.objective - closed.objective) / closed.objective < 1e-3

    def test_corridor_instance_feasible_at_samples(self):
        # corridor wide enough that the optimum is interior: the multiplier
        # machinery engages transiently but the converged samples must sit
        # strictly inside every hyperplane
        rng = np.random.default_rng(11)
        base = corridor_spec(rng, 2, v_max=8.0, margin=1.5, sample_count=3)
        spec = with_solver(base, mode="numerical", epsilon=2e-3, max_iters=20000,
                           threads=1)
        res = optimize(spec)
        assert res.converged
        for i, seg in enumerate(spec.segments):
            coeffs = res.coefficients[i]
            for t in np.linspace(0, seg.duration, seg.sample_count):
                pos = coeffs @ t ** np.arange(6)
                assert seg.polytope.violation(pos) <= 1e-3
