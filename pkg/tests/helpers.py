"""Shared instance builders and a pure-numpy reference iteration loop."""

import numpy as np

from trajadmm.admm import (
    ball_project,
    closed_form_segment_update,
    consensus_update,
    dual_update_u,
    dual_update_v,
    dual_update_w,
    init_state,
    objective,
    residuals,
    slack_project,
    stopping_check,
    update_rho,
)
from trajadmm.basis import BasisConfig
from trajadmm.problem import (
    BoundaryCondition,
    Polytope,
    ProblemSpec,
    SegmentSpec,
    SolverConfig,
    build_segment_matrices,
)


def box_polytope(lo, hi):
    m = len(lo)
    return Polytope(np.vstack([np.eye(m), -np.eye(m)]),
                    np.concatenate([hi, -np.asarray(lo)]))


def quintic_spec(n_segments=1, dims=1, solver=None, path_scale=1.0):
    """Rest-to-rest 0 -> path_scale in dim 0, equality-only."""
    cfg = BasisConfig(dims=dims)
    path = np.zeros((n_segments + 1, dims))
    path[:, 0] = np.linspace(0.0, path_scale, n_segments + 1)
    segs = [SegmentSpec(duration=1.0 / n_segments) for _ in range(n_segments)]
    b0 = np.zeros((3, dims))
    b0[0] = path[0]
    b1 = np.zeros((3, dims))
    b1[0] = path[-1]
    return ProblemSpec(
        cfg=cfg, path=path, segments=segs,
        boundary_start=BoundaryCondition(b0, fill_policy="free_single_sided"),
        boundary_end=BoundaryCondition(b1, fill_policy="free_single_sided"),
        solver=solver or SolverConfig(),
    )


def random_equality_spec(rng, n_segments, dims=3, solver=None, pin_waypoints=False):
    """Random waypoints/durations, no corridor or velocity constraints."""
    cfg = BasisConfig(dims=dims)
    path = rng.normal(0.0, 2.0, (n_segments + 1, dims))
    segs = [SegmentSpec(duration=float(rng.uniform(0.6, 1.6)))
            for _ in range(n_segments)]
    b0 = np.zeros((3, dims))
    b0[0] = path[0]
    b0[1] = rng.normal(0.0, 0.5, dims)
    b1 = np.zeros((3, dims))
    b1[0] = path[-1]
    b1[1] = rng.normal(0.0, 0.5, dims)
    return ProblemSpec(
        cfg=cfg, path=path, segments=segs,
        boundary_start=BoundaryCondition(b0, fill_policy="free_single_sided"),
        boundary_end=BoundaryCondition(b1, fill_policy="free_single_sided"),
        solver=solver or SolverConfig(), pin_waypoints=pin_waypoints,
    )


def corridor_spec(rng, n_segments, dims=3, v_max=1.5, margin=0.45, sample_count=8,
                  solver=None, step=1.0):
    """Random forward path with per-segment bounding-box corridors."""
    cfg = BasisConfig(dims=dims)
    path = np.zeros((n_segments + 1, dims))
    for i in range(1, n_segments + 1):
        delta = np.concatenate([[step], rng.uniform(-0.5, 0.5, dims - 1)])
        path[i] = path[i - 1] + delta[:dims]
    segs = []
    for i in range(n_segments):
        lo = np.minimum(path[i], path[i + 1]) - margin
        hi = np.maximum(path[i], path[i + 1]) + margin
        segs.append(SegmentSpec(duration=1.0, polytope=box_polytope(lo, hi),
                                sample_count=sample_count))
    b0 = np.zeros((3, dims))
    b0[0] = path[0]
    b1 = np.zeros((3, dims))
    b1[0] = path[-1]
    return ProblemSpec(
        cfg=cfg, path=path, segments=segs,
        boundary_start=BoundaryCondition(b0, fill_policy="free_single_sided"),
        boundary_end=BoundaryCondition(b1, fill_policy="free_single_sided"),
        v_max=v_max, solver=solver or SolverConfig(),
    )


def reference_closed_form_loop(spec, max_iters, invariant_hook=None):
    """Closed-form iteration composed from the public single-segment ops.

    Mirrors the fused kernel phase by phase; used to pin the compiled loop
    and to observe per-iteration invariants. Returns (states, consensus,
    history) where history rows are (rp_norm, rd_norm, rho, objective).
    """
    N = spec.n_segments
    mats = [build_segment_matrices(spec, i) for i in range(N)]
    states, consensus, rho_state = init_state(spec, mats)
    history = []
    for _ in range(max_iters):
        rho = rho_state.rho
        for i in range(N):
            st = states.segment(i)
            zt = consensus.ztilde(i)
            states.c[i] = closed_form_segment_update(st, zt, mats[i], rho)
            for j in range(mats[i].velocity.shape[0]):
                av = mats[i].velocity[j]
                phi = ball_project(states.c[i], st.w[j], av, spec.v_max)
                states.w[i, j] = dual_update_w(st.w[j], states.c[i], phi, av)
                states.phi[i, j] = phi
        stacks = np.vstack([mats[i].bmap @ states.c[i] for i in range(N)])
        z_old = consensus.z.copy()
        consensus_update(stacks, consensus)
        rp, rd = residuals(stacks, consensus.z, z_old, rho, mats)
        rp_n, rd_n = float(np.linalg.norm(rp)), float(np.linalg.norm(rd))
        for i in range(N):
            st = states.segment(i)
            nrows = mats[i].corridor.shape[0]
            if nrows:
                s = slack_project(states.c[i], st.v[:nrows], mats[i])
                states.v[i, :nrows] = dual_update_v(st.v[:nrows], states.c[i], s, mats[i])
                states.slack[i, :nrows] = s
            states.u[i] = dual_update_u(st.u, states.c[i], consensus.ztilde(i), mats[i])
        history.append((rp_n, rd_n, rho, objective(states.c, mats)))
        if invariant_hook is not None:
            invariant_hook(states, consensus)
        if stopping_check(rp_n, rd_n, N, spec.solver.epsilon):
            break
        if spec.solver.adaptive_rho and N > 1:
            update_rho(rho_state, rp_n, rd_n,
                       duals=(states.u, states.v, states.w))
    return states, consensus, history
