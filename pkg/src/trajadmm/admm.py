"""Consensus ADMM engine for segmented trajectory optimization.

Each iteration solves every segment's quadratic subproblem independently
(closed form or numerically), averages boundary derivative stacks into
consensus variables, projects slack/velocity variables, updates scaled
duals, and adapts the penalty parameter from the residual balance. The
single-segment update rules live here as plain numpy functions; the
closed-form production path executes the same arithmetic through the fused
kernels in :mod:`trajadmm._kernels`.
"""

from __future__ import annotations

import math
import os
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from . import _kernels
from .problem import ProblemSpec, SegmentMatrices, build_segment_matrices, validate_problem
from .trajectory import Trajectory

__all__ = [
    "SegmentState",
    "SegmentStates",
    "ConsensusState",
    "RhoState",
    "TraceRow",
    "OptimizeResult",
    "FactorizationError",
    "init_state",
    "closed_form_segment_update",
    "consensus_update",
    "dual_update_u",
    "slack_project",
    "dual_update_v",
    "ball_project",
    "dual_update_w",
    "residuals",
    "stopping_check",
    "update_rho",
    "objective",
    "optimize",
]

STATUS_CONVERGED = "converged"
STATUS_ITERATION_LIMITED = "iteration-limited"


class FactorizationError(RuntimeError):
    """2 Q~ + rho S failed its positive-definite factorization."""


@dataclass
class SegmentState:
    """One segment's iterates (views into the batched state)."""

    c: NDArray[np.float64]      # (n,)
    u: NDArray[np.float64]      # (2ms,) scaled continuity dual
    slack: NDArray[np.float64]  # (R,)
    v: NDArray[np.float64]      # (R,) scaled corridor dual
    phi: NDArray[np.float64]    # (Mv, m) projected velocities
    w: NDArray[np.float64]      # (Mv, m) scaled velocity duals


class SegmentStates:
    """Batched per-segment iterates, padded to uniform row counts."""

    def __init__(self, n_segments, n, mc, n_rows, n_samples, dims):
        self.c = np.zeros((n_segments, n))
        self.u = np.zeros((n_segments, mc))
        self.slack = np.zeros((n_segments, n_rows))
        self.v = np.zeros((n_segments, n_rows))
        self.phi = np.zeros((n_segments, n_samples, dims))
        self.w = np.zeros((n_segments, n_samples, dims))

    @property
    def n_segments(self) -> int:
        return self.c.shape[0]

    def segment(self, i: int) -> SegmentState:
        return SegmentState(self.c[i], self.u[i], self.slack[i], self.v[i],
                            self.phi[i], self.w[i])


@dataclass
class ConsensusState:
    """Split-point derivative stacks with their immutable-entry mask.

    ``z`` has shape (N+1, m*s) in dimension-major order; entries flagged in
    ``fixed`` keep their initial value for the whole run.
    """

    z: NDArray[np.float64]
    fixed: NDArray[np.bool_]

    def ztilde(self, i: int) -> NDArray[np.float64]:
        """Segment i's stacked consensus boundary (z_i; z_{i+1})."""
        return np.concatenate([self.z[i], self.z[i + 1]])


@dataclass
class RhoState:
    """Penalty parameter and its adaptation constants."""

    rho: float = 1.0
    mu: float = 10.0
    tau_incr: float = 1.1
    tau_decr: float = 1.1
    rho_min: float = 1e-4
    rho_max: float = 1e8

    def __post_init__(self):
        if not (self.rho_min <= self.rho <= self.rho_max):
            raise ValueError("rho outside [rho_min, rho_max]")
        if self.mu <= 1 or self.tau_incr <= 1 or self.tau_decr <= 1:
            raise ValueError("mu and tau factors must exceed 1")


@dataclass(frozen=True)
class TraceRow:
    """Diagnostics of one completed iteration."""

    iteration: int
    rp_norm: float
    rd_norm: float
    rho: float
    objective: float
    max_corridor_violation: float
    max_velocity_excess: float
    wall_ms: float

    CSV_HEADER = "iter,r_p,r_d,rho,objective,max_corridor_violation,max_velocity_excess,wall_ms"

    def csv_row(self) -> str:
        return (
            f"{self.iteration},{self.rp_norm!r},{self.rd_norm!r},{self.rho!r},"
            f"{self.objective!r},{self.max_corridor_violation!r},"
            f"{self.max_velocity_excess!r},{self.wall_ms!r}"
        )


@dataclass(frozen=True)
class OptimizeResult:
    trajectory: Trajectory
    coefficients: NDArray[np.float64]  # (N, m, D+1)
    consensus: ConsensusState
    trace: list[TraceRow]
    status: str
    iterations: int
    objective: float
    rp_norm: float
    rd_norm: float
    rho_final: float

    @property
    def converged(self) -> bool:
        return self.status == STATUS_CONVERGED


# ---------------------------------------------------------------------------
# initialization


def init_state(spec: ProblemSpec, matrices: list[SegmentMatrices]):
    """Initial iterates: consensus from path/boundary, everything else zero.

    Interior consensus positions come from the path with higher orders zero;
    the end stacks hold the boundary conditions with orders beyond the
    supplied ones following each end's fill policy. Waypoint pinning fixes
    interior position entries.
    """
    cfg = spec.cfg
    N, m, s = spec.n_segments, cfg.dims, cfg.cont_orders
    ms = m * s
    n_rows = max((mats.corridor.shape[0] for mats in matrices), default=0)
    n_samp = max((mats.velocity.shape[0] for mats in matrices), default=0)
    states = SegmentStates(N, cfg.n_coef, 2 * ms, n_rows, n_samp, m)

    z = np.zeros((N + 1, ms))
    fixed = np.zeros((N + 1, ms), dtype=bool)
    for i in range(1, N):
        for d in range(m):
            z[i, d * s] = spec.path[i, d]
            if spec.pin_waypoints:
                fixed[i, d * s] = True
    for idx, bc in ((0, spec.boundary_start), (N, spec.boundary_end)):
        vals, fix = bc.stack(cfg)
        for d in range(m):
            for r in range(s):
                if fix[r]:
                    z[idx, d * s + r] = vals[r, d]
                    fixed[idx, d * s + r] = True
    consensus = ConsensusState(z=z, fixed=fixed)
    rho_state = RhoState(
        rho=spec.solver.rho0,
        mu=spec.solver.mu,
        tau_incr=spec.solver.tau_incr,
        tau_decr=spec.solver.tau_decr,
        rho_min=spec.solver.rho_min,
        rho_max=spec.solver.rho_max,
    )
    return states, consensus, rho_state


# ---------------------------------------------------------------------------
# single-segment update rules (reference implementations)


def closed_form_segment_update(state: SegmentState, ztilde, mats: SegmentMatrices,
                               rho: float) -> NDArray[np.float64]:
    """Exact minimizer of the segment's augmented Lagrangian.

    c = (2 Q~ + rho S)^-1 rho [M~^T (z~ - u) + Ao^T (b - s - v)
        + sum_j Av_j^T (phi_j - w_j)], via a Cholesky factorization of the
    positive-definite system matrix.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    rhs = mats.bmap.T @ (ztilde - state.u)
    if mats.corridor.shape[0]:
        rhs = rhs + mats.corridor.T @ (mats.corridor_offsets - state.slack - state.v)
    for j in range(mats.velocity.shape[0]):
        rhs = rhs + mats.velocity[j].T @ (state.phi[j] - state.w[j])
    A = 2.0 * mats.gram + rho * mats.normal_sum
    try:
        factor = scipy.linalg.cho_factor(A, lower=True)
    except scipy.linalg.LinAlgError as e:
        raise FactorizationError(f"2Q + rho*S not positive definite: {e}") from e
    return scipy.linalg.cho_solve(factor, rho * rhs)


def consensus_update(boundary_stacks: NDArray[np.float64],
                     consensus: ConsensusState) -> ConsensusState:
    """Average adjacent boundary stacks into the free consensus entries.

    ``boundary_stacks`` has shape (N, 2ms): row i holds M~(T_i) c_i, i.e.
    segment i's start and end derivative stacks. Interior free entries get
    the mean of the two neighbors; free end entries track their single
    adjacent segment; fixed entries are left untouched.
    """
    z, fixed = consensus.z, consensus.fixed
    N = boundary_stacks.shape[0]
    ms = z.shape[1]
    free = ~fixed
    if N > 1:
        interior = 0.5 * (boundary_stacks[:-1, ms:] + boundary_stacks[1:, :ms])
        z[1:N][free[1:N]] = interior[free[1:N]]
    z[0][free[0]] = boundary_stacks[0, :ms][free[0]]
    z[N][free[N]] = boundary_stacks[N - 1, ms:][free[N]]
    return consensus


def dual_update_u(u, c, ztilde, mats: SegmentMatrices) -> NDArray[np.float64]:
    """u + M~ c - z~ (scaled continuity dual ascent)."""
    return u + mats.bmap @ c - ztilde


def slack_project(c, v, mats: SegmentMatrices) -> NDArray[np.float64]:
    """Componentwise s = max(0, -(Ao c - b + v)); the nonneg-orthant prox."""
    if mats.corridor.shape[0] == 0:
        return np.zeros(0)
    return np.maximum(0.0, -(mats.corridor @ c - mats.corridor_offsets + v))


def dual_update_v(v, c, s, mats: SegmentMatrices) -> NDArray[np.float64]:
    """v + Ao c + s - b (scaled corridor dual ascent)."""
    if mats.corridor.shape[0] == 0:
        return np.zeros(0)
    return v + mats.corridor @ c + s - mats.corridor_offsets


def ball_project(c, w, av, v_max: float) -> NDArray[np.float64]:
    """Project y = Av c + w onto the speed ball of radius v_max."""
    if v_max <= 0:
        raise ValueError("v_max must be positive")
    y = av @ c + w
    nrm2 = float(y @ y)
    if nrm2 <= v_max * v_max:
        return y
    return y * (v_max / math.sqrt(nrm2))


def dual_update_w(w, c, phi, av) -> NDArray[np.float64]:
    """w + Av c - phi (scaled velocity dual ascent)."""
    return w + av @ c - phi


def residuals(boundary_stacks, z_new, z_old, rho, matrices):
    """Primal splice gaps and rho-scaled consensus change, stacked.

    Returns (r_p, r_d): r_p stacks the end/start derivative-stack gaps of
    the N-1 interior splits; r_d stacks -rho M~^T (z~new - z~old) per
    segment, both in fixed segment order.
    """
    N = boundary_stacks.shape[0]
    ms = z_new.shape[1]
    if N > 1:
        rp = (boundary_stacks[:-1, ms:] - boundary_stacks[1:, :ms]).ravel()
    else:
        rp = np.zeros(0)
    dz = np.hstack([z_new[:-1] - z_old[:-1], z_new[1:] - z_old[1:]])
    rd = np.concatenate([-rho * (matrices[i].bmap.T @ dz[i]) for i in range(N)])
    return rp, rd


def stopping_check(rp_norm: float, rd_norm: float, n_segments: int, eps: float) -> bool:
    """True when both squared residual norms are under (N eps)^2."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    thr2 = (n_segments * eps) ** 2
    return rp_norm**2 < thr2 and rd_norm**2 < thr2


def update_rho(state: RhoState, rp_norm: float, rd_norm: float, duals=()) -> float:
    """Residual-balancing penalty update with scaled-dual rescaling.

    Multiplies rho by tau_incr when the primal residual dominates, divides
    by tau_decr when the dual residual dominates, clamps to the configured
    bounds, and rescales every scaled dual array in ``duals`` (in place) by
    rho_old/rho_new so the underlying multipliers are preserved. Returns the
    new rho (also stored on ``state``).
    """
    factor = 1.0
    if rp_norm > state.mu * rd_norm:
        factor = state.tau_incr
    elif rd_norm > state.mu * rp_norm:
        factor = 1.0 / state.tau_decr
    new_rho = min(max(state.rho * factor, state.rho_min), state.rho_max)
    if new_rho != state.rho:
        scale = state.rho / new_rho
        for arr in duals:
            arr *= scale
        state.rho = new_rho
    return state.rho


def objective(coefficients, matrices) -> float:
    """Total control effort sum_i c_i^T Q~_i c_i, accumulated in segment order."""
    total = 0.0
    for i, mats in enumerate(matrices):
        c = np.asarray(coefficients[i]).ravel()
        total += float(c @ mats.gram @ c)
    return total


# ---------------------------------------------------------------------------
# batched driver


class _Batch:
    """Stacked, padded, C-contiguous problem arrays for the kernels."""

    def __init__(self, spec: ProblemSpec, matrices: list[SegmentMatrices]):
        cfg = spec.cfg
        N = spec.n_segments
        n = cfg.n_coef
        ms = cfg.dims * cfg.cont_orders
        mc = 2 * ms
        R = max((m.corridor.shape[0] for m in matrices), default=0)
        Mv = max((m.velocity.shape[0] for m in matrices), default=0)
        self.n, self.ms, self.mc, self.R, self.Mv = n, ms, mc, R, Mv
        self.Qt = np.zeros((N, n, n))
        self.Mt = np.zeros((N, mc, n))
        self.S = np.zeros((N, n, n))
        self.Ao = np.zeros((N, R, n))
        self.bo = np.ones((N, R))  # padded rows: 0 <= 1, exactly inert
        self.rmask = np.zeros((N, R))
        self.Av = np.zeros((N, Mv * cfg.dims, n))
        for i, m in enumerate(matrices):
            self.Qt[i] = m.gram
            self.Mt[i] = m.bmap
            self.S[i] = m.normal_sum
            r = m.corridor.shape[0]
            if r:
                self.Ao[i, :r] = m.corridor
                self.bo[i, :r] = m.corridor_offsets
                self.rmask[i, :r] = 1.0
            nv = m.velocity.shape[0]
            if nv:
                self.Av[i, : nv * cfg.dims] = m.velocity.reshape(nv * cfg.dims, n)


def _worker_count(requested: int) -> int:
    if requested and requested > 0:
        return requested
    return os.cpu_count() or 1


def _run_closed_form(spec, matrices, states, consensus, rho_state, trace_callback):
    import numba

    solver = spec.solver
    N = spec.n_segments
    batch = _Batch(spec, matrices)
    workers = _worker_count(solver.threads)
    hard_max = numba.config.NUMBA_NUM_THREADS
    if workers > 1:
        if workers > hard_max:
            warnings.warn(
                f"requested {workers} workers but the threading runtime allows "
                f"{hard_max}; clamping",
                stacklevel=3,
            )
            workers = hard_max
        numba.set_num_threads(workers)
        kernel = _kernels.iterate_parallel
    else:
        kernel = _kernels.iterate_serial

    zold = np.zeros_like(consensus.z)
    zfix = consensus.fixed.astype(np.uint8)
    rs = np.array([rho_state.rho, 1.0, 1.0])  # factorize on entry
    Ainv = np.zeros((N, batch.n, batch.n))
    MtC = np.zeros((N, batch.mc))
    AoC = np.zeros((N, batch.R))
    SPEED = np.zeros((N, batch.Mv))
    obj_part = np.zeros(N)
    rd_part = np.zeros(N)
    cor_part = np.zeros(N)
    vex_part = np.zeros(N)
    fail = np.zeros(N, dtype=np.int64)
    trace_arr = np.zeros((solver.max_iters, 6))
    thr2 = (N * solver.epsilon) ** 2
    adapt = 1 if (solver.adaptive_rho and N > 1) else 0
    v_max = spec.v_max if math.isfinite(spec.v_max) else np.inf

    trace: list[TraceRow] = []
    status = _kernels.RUNNING
    done_total = 0
    chunk = 1024
    while done_total < solver.max_iters and status == _kernels.RUNNING:
        todo = min(chunk, solver.max_iters - done_total)
        t0 = time.perf_counter()
        done, status = kernel(
            todo, done_total,
            batch.Qt, batch.Mt, batch.S, batch.Ao, batch.bo, batch.rmask, batch.Av,
            consensus.z, zold, zfix,
            states.c, states.u, states.slack, states.v, states.phi, states.w,
            Ainv, rs,
            MtC, AoC, SPEED, obj_part, rd_part, cor_part, vex_part, fail,
            v_max, thr2, rho_state.mu, rho_state.tau_incr, rho_state.tau_decr,
            rho_state.rho_min, rho_state.rho_max, adapt,
            trace_arr,
        )
        wall_ms = (time.perf_counter() - t0) * 1e3 / max(done, 1)
        new_rows = [
            TraceRow(
                iteration=done_total + j + 1,
                rp_norm=float(trace_arr[done_total + j, 0]),
                rd_norm=float(trace_arr[done_total + j, 1]),
                rho=float(trace_arr[done_total + j, 2]),
                objective=float(trace_arr[done_total + j, 3]),
                max_corridor_violation=float(trace_arr[done_total + j, 4]),
                max_velocity_excess=float(trace_arr[done_total + j, 5]),
                wall_ms=wall_ms,
            )
            for j in range(done)
        ]
        trace.extend(new_rows)
        if trace_callback is not None:
            for row in new_rows:
                trace_callback(row)
        done_total += done
        if status == _kernels.FACTORIZATION_FAILED:
            raise FactorizationError(
                "positive-definite factorization of 2Q + rho*S failed; "
                "instance violates the full-rank boundary-map contract"
            )
    rho_state.rho = float(rs[0])
    final_status = STATUS_CONVERGED if status == _kernels.CONVERGED else STATUS_ITERATION_LIMITED
    return trace, final_status, done_total


def _run_numerical(spec, matrices, states, consensus, rho_state, trace_callback):
    from .numeric import segment_constraint_blocks, numeric_segment_update

    solver = spec.solver
    N = spec.n_segments
    blocks = [segment_constraint_blocks(matrices[i], spec.v_max) for i in range(N)]
    mult = [[np.zeros(b.size) for b in blocks[i]] for i in range(N)]
    mc = 2 * spec.cfg.dims * spec.cfg.cont_orders
    ms = mc // 2

    trace: list[TraceRow] = []
    status = STATUS_ITERATION_LIMITED
    k = 0
    for k in range(1, solver.max_iters + 1):
        t0 = time.perf_counter()
        rho = rho_state.rho
        for i in range(N):
            ztilde = consensus.ztilde(i)
            c_new, y_new = numeric_segment_update(
                states.segment(i), ztilde, matrices[i], blocks[i], mult[i], rho
            )
            states.c[i] = c_new
            mult[i] = y_new
        stacks = np.vstack([matrices[i].bmap @ states.c[i] for i in range(N)])
        z_old = consensus.z.copy()
        consensus_update(stacks, consensus)
        rp, rd = residuals(stacks, consensus.z, z_old, rho, matrices)
        rp_n, rd_n = float(np.linalg.norm(rp)), float(np.linalg.norm(rd))
        for i in range(N):
            ztilde = consensus.ztilde(i)
            states.u[i] = states.u[i] + stacks[i] - ztilde
        cor = 0.0
        vex = 0.0
        for i in range(N):
            mats = matrices[i]
            if mats.corridor.shape[0]:
                cor = max(cor, float(np.max(mats.corridor @ states.c[i]
                                            - mats.corridor_offsets)))
            for j in range(mats.velocity.shape[0]):
                vex = max(vex, float(np.linalg.norm(mats.velocity[j] @ states.c[i]))
                          - spec.v_max)
        obj = objective(states.c, matrices)
        row = TraceRow(
            iteration=k, rp_norm=rp_n, rd_norm=rd_n, rho=rho, objective=obj,
            max_corridor_violation=max(cor, 0.0), max_velocity_excess=max(vex, 0.0),
            wall_ms=(time.perf_counter() - t0) * 1e3,
        )
        trace.append(row)
        if trace_callback is not None:
            trace_callback(row)
        if stopping_check(rp_n, rd_n, N, solver.epsilon):
            status = STATUS_CONVERGED
            break
        if solver.adaptive_rho and N > 1:
            update_rho(rho_state, rp_n, rd_n, duals=(states.u,))
    return trace, status, k


def optimize(spec: ProblemSpec, trace_callback=None) -> OptimizeResult:
    """Run the consensus iteration until the residual tolerance or the
    iteration cap is reached.

    The closed-form mode runs the fused compiled loop (bit-identical for
    any worker count); the numerical mode solves each segment subproblem
    with the quasi-Newton inner solver. ``trace_callback`` receives each
    :class:`TraceRow` as it is produced.
    """
    report = validate_problem(spec)
    for msg in report.warnings:
        warnings.warn(msg, stacklevel=2)
    report.raise_if_failed()

    matrices = [build_segment_matrices(spec, i) for i in range(spec.n_segments)]
    states, consensus, rho_state = init_state(spec, matrices)
    if spec.solver.mode == "closed-form":
        trace, status, iters = _run_closed_form(
            spec, matrices, states, consensus, rho_state, trace_callback
        )
    else:
        trace, status, iters = _run_numerical(
            spec, matrices, states, consensus, rho_state, trace_callback
        )
    n1 = spec.cfg.degree + 1
    coeffs = states.c.reshape(spec.n_segments, spec.cfg.dims, n1).copy()
    last = trace[-1]
    return OptimizeResult(
        trajectory=Trajectory(coeffs, spec.durations),
        coefficients=coeffs,
        consensus=consensus,
        trace=trace,
        status=status,
        iterations=iters,
        objective=last.objective,
        rp_norm=last.rp_norm,
        rd_norm=last.rd_norm,
        rho_final=rho_state.rho,
    )
