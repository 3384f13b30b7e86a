import numpy as np
import pytest

from trajadmm.basis import BasisConfig
from trajadmm.oracle import (
    OracleError,
    active_set_qp,
    kkt_solve,
    quintic_reference,
    similarity_metric,
)
from trajadmm.problem import (
    BoundaryCondition,
    Polytope,
    ProblemSpec,
    SegmentSpec,
)
from trajadmm.trajectory import Trajectory


def rest_to_rest_spec(n_segments=1, dims=1, fill="free_single_sided"):
    cfg = BasisConfig(dims=dims)
    path = np.zeros((n_segments + 1, dims))
    path[:, 0] = np.linspace(0, 1, n_segments + 1)
    segs = [SegmentSpec(duration=1.0 / n_segments) for _ in range(n_segments)]
    bc0 = BoundaryCondition(np.zeros((3, dims)), fill_policy=fill)
    end = np.zeros((3, dims))
    end[0] = path[-1]
    bc1 = BoundaryCondition(end, fill_policy=fill)
    return ProblemSpec(cfg=cfg, path=path, segments=segs,
                       boundary_start=bc0, boundary_end=bc1)


class TestQuinticReference:
    def test_rest_to_rest(self):
        c = quintic_reference([0], [0], [0], [1], [0], [0], 1.0)
        assert np.allclose(c[0], [0, 0, 0, 10, -15, 6], atol=1e-12)

    def test_zero_data_gives_zero(self):
        c = quintic_reference([0, 0], [0, 0], [0, 0], [0, 0], [0, 0], [0, 0], 2.0)
        assert np.array_equal(c, np.zeros((2, 6)))

    def test_time_scaling_identity(self):
        # solution for T=2 equals the T=1 solution composed with t/2 when the
        # derivative data is scaled accordingly
        c1 = quintic_reference([0], [0.3], [-0.2], [1], [0.1], [0.4], 1.0)
        c2 = quintic_reference([0], [0.15], [-0.05], [1], [0.05], [0.1], 2.0)
        scaled = c1[0] / 2.0 ** np.arange(6)
        assert np.allclose(c2[0], scaled, atol=1e-12)

    def test_rejects_bad_duration(self):
        with pytest.raises(ValueError):
            quintic_reference([0], [0], [0], [1], [0], [0], 0.0)


class TestKktSolve:
    def test_single_segment_quintic(self):
        traj, obj = kkt_solve(rest_to_rest_spec())
        assert np.allclose(traj.coefficients[0, 0], [0, 0, 0, 10, -15, 6], atol=1e-9)
        assert obj == pytest.approx(720.0, rel=1e-9)

    def test_split_preserves_quintic(self):
        # the single quintic is the global minimizer; splitting cannot improve
        traj, obj = kkt_solve(rest_to_rest_spec(n_segments=2))
        assert obj == pytest.approx(720.0, rel=1e-9)
        ts = np.linspace(0, 1, 200)
        ref = 10 * ts**3 - 15 * ts**4 + 6 * ts**5
        assert np.abs(traj.eval(ts)[:, 0] - ref).max() < 1e-8

    def test_pins_recover_sampled_quintic(self):
        n = 4
        spec = rest_to_rest_spec(n_segments=n)
        ts = np.linspace(0, 1, n + 1)
        quintic = 10 * ts**3 - 15 * ts**4 + 6 * ts**5
        spec = ProblemSpec(cfg=spec.cfg, path=quintic[:, None], segments=spec.segments,
                           boundary_start=spec.boundary_start,
                           boundary_end=spec.boundary_end)
        traj, obj = kkt_solve(spec, pins=True)
        assert obj == pytest.approx(720.0, rel=1e-9)
        tt = np.linspace(0, 1, 300)
        ref = 10 * tt**3 - 15 * tt**4 + 6 * tt**5
        assert np.abs(traj.eval(tt)[:, 0] - ref).max() < 1e-8
        wp = traj.eval(ts)[:, 0]
        assert np.abs(wp - quintic).max() < 1e-9

    def test_lower_bound_property(self):
        # any feasible interpolant has objective >= the KKT optimum
        rng = np.random.default_rng(1)
        spec = rest_to_rest_spec(n_segments=2)
        _, obj = kkt_solve(spec)
        from trajadmm.oracle import _equality_rows, _global_gram, _solve_eq_qp

        H = _global_gram(spec)
        A, b = _equality_rows(spec, pins=False)
        for _ in range(5):
            # random feasible point: particular solution + nullspace component
            import scipy.linalg

            x0 = np.linalg.lstsq(A, b, rcond=None)[0]
            Z = scipy.linalg.null_space(A)
            x = x0 + Z @ rng.normal(size=Z.shape[1])
            assert 0.5 * x @ H @ x >= obj - 1e-9

    def test_size_guard(self):
        with pytest.raises(OracleError):
            kkt_solve(rest_to_rest_spec(n_segments=9))


class TestActiveSetQp:
    def test_inactive_constraints_match_kkt(self):
        spec = rest_to_rest_spec(n_segments=2, dims=1)
        loose = Polytope(np.array([[1.0], [-1.0]]), np.array([10.0, 10.0]))
        segs = [SegmentSpec(duration=s.duration, polytope=loose, sample_count=3)
                for s in spec.segments]
        spec = ProblemSpec(cfg=spec.cfg, path=spec.path, segments=segs,
                           boundary_start=spec.boundary_start,
                           boundary_end=spec.boundary_end)
        traj, obj = active_set_qp(spec)
        _, obj_eq = kkt_solve(spec)
        assert obj == pytest.approx(obj_eq, rel=1e-10)

    def test_binding_halfspace(self):
        # cap the quintic's overshoot-free midpoint region from above so the
        # constraint binds: x(t) <= 0.45 sampled at t=0.5 of segment 1 of 2
        spec = rest_to_rest_spec(n_segments=2, dims=1)
        cap = Polytope(np.array([[1.0]]), np.array([0.45]))
        segs = (SegmentSpec(0.5, polytope=cap, sample_count=2), spec.segments[1])
        spec = ProblemSpec(cfg=spec.cfg, path=spec.path, segments=segs,
                           boundary_start=spec.boundary_start,
                           boundary_end=spec.boundary_end)
        traj, obj = active_set_qp(spec)
        _, obj_eq = kkt_solve(spec)
        assert obj > obj_eq  # constraint is active, cost must rise
        # the binding sample sits exactly on the plane
        end_pos = traj.eval(0.5)[0]
        assert end_pos == pytest.approx(0.45, abs=1e-10)

    def test_feasibility_and_complementary_slackness(self):
        # cap only segment 1 from above so the constraint binds but the end
        # boundary condition stays reachable
        spec = rest_to_rest_spec(n_segments=2, dims=1)
        poly = Polytope(np.array([[1.0], [-1.0]]), np.array([0.45, 0.15]))
        segs = (SegmentSpec(0.5, polytope=poly, sample_count=3), spec.segments[1])
        spec = ProblemSpec(cfg=spec.cfg, path=spec.path, segments=segs,
                           boundary_start=spec.boundary_start,
                           boundary_end=spec.boundary_end)
        traj, obj = active_set_qp(spec)
        times = np.linspace(0, 0.5, 3)
        for t in times:
            x = traj.eval(t)[0]
            assert x <= 0.45 + 1e-10
            assert -x <= 0.15 + 1e-10
        _, obj_eq = kkt_solve(spec)
        assert obj > obj_eq  # the 0.45 cap binds at the t=0.5 sample

    def test_size_guards(self):
        spec = rest_to_rest_spec(n_segments=4)
        with pytest.raises(OracleError):
            active_set_qp(spec)


class TestSimilarityMetric:
    def flat_traj(self, value=0.0, T=1.0):
        coeffs = np.zeros((1, 3, 6))
        coeffs[0, :, 0] = value
        return Trajectory(coeffs, [T])

    def test_exact_match_flagged(self):
        a = self.flat_traj(1.0)
        b = self.flat_traj(1.0)
        res = similarity_metric(a, b)
        assert res.exact
        assert res.value == pytest.approx(-300.0)

    def test_constant_offset(self):
        a = self.flat_traj(0.0)

        def ref(t):
            return np.array([0.001, 0.0, 0.0])

        res = similarity_metric(a, ref, ref_duration=1.0)
        assert res.value == pytest.approx(np.log10(8192 * 0.001), abs=1e-9)

    def test_duration_mismatch_rejected(self):
        a = self.flat_traj(0.0, T=1.0)
        b = self.flat_traj(0.0, T=2.0)
        with pytest.raises(ValueError):
            similarity_metric(a, b)
