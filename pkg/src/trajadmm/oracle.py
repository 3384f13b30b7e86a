"""Independent ground-truth solvers and metrics.

These never call into the consensus engine: the coupled problem is solved
directly through dense KKT systems and active-set enumeration so tests and
the CLI ``oracle`` command can cross-check the iterative results against an
unrelated code path. Desk scale only (dense factorizations).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .basis import basis_row
from .problem import ProblemSpec
from .trajectory import Trajectory

__all__ = [
    "OracleError",
    "kkt_solve",
    "quintic_reference",
    "active_set_qp",
    "similarity_metric",
    "SimilarityResult",
]

ORACLE_MAX_SEGMENTS = 8


class OracleError(RuntimeError):
    """Raised for infeasible/rank-deficient instances or size-limit breaches."""


def _global_gram(spec: ProblemSpec):
    from .problem import build_segment_matrices

    N = spec.n_segments
    n = spec.cfg.n_coef
    H = np.zeros((N * n, N * n))
    for i in range(N):
        H[i * n : (i + 1) * n, i * n : (i + 1) * n] = 2 * build_segment_matrices(spec, i).gram
    return H


def _equality_rows(spec: ProblemSpec, pins: bool):
    """Boundary, continuity, and optional waypoint-pin equality constraints."""
    cfg = spec.cfg
    N, m = spec.n_segments, cfg.dims
    n1 = cfg.degree + 1
    n = cfg.n_coef
    s, p = cfg.cont_orders, cfg.control_order
    rows, rhs = [], []

    def single_row(i, t, r, d):
        row = np.zeros(N * n)
        row[i * n + d * n1 : i * n + (d + 1) * n1] = basis_row(t, r, cfg.degree)
        return row

    for which, bc, i, t in (
        ("start", spec.boundary_start, 0, 0.0),
        ("end", spec.boundary_end, N - 1, spec.segments[N - 1].duration),
    ):
        vals, fixed = bc.stack(cfg)
        for r in range(s):
            if not fixed[r]:
                continue
            for d in range(m):
                rows.append(single_row(i, t, r, d))
                rhs.append(vals[r, d])
    for i in range(N - 1):
        T = spec.segments[i].duration
        for d in range(m):
            for r in range(s):
                row = single_row(i, T, r, d)
                row[(i + 1) * n + d * n1 : (i + 1) * n + (d + 1) * n1] -= basis_row(
                    0.0, r, cfg.degree
                )
                rows.append(row)
                rhs.append(0.0)
    if pins:
        for i in range(1, N):
            for d in range(m):
                rows.append(single_row(i, 0.0, 0, d))
                rhs.append(spec.path[i, d])
    return np.asarray(rows), np.asarray(rhs)


def _drop_redundant(A, b):
    """Keep an independent row subset via pivoted QR of A^T."""
    if A.shape[0] == 0:
        return A, b
    R, piv = scipy.linalg.qr(A.T, mode="r", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0:
        raise OracleError("constraint matrix is zero")
    rank = int(np.sum(diag > diag[0] * 1e-12))
    keep = np.sort(piv[:rank])
    return A[keep], b[keep]


def _solve_eq_qp(H, A, b):
    """min 1/2 x^T H x subject to A x = b via a dense symmetric KKT system.

    Returns (x, multipliers). Raises OracleError when the reduced system is
    singular or the full constraint set is inconsistent.
    """
    Ak, bk = _drop_redundant(A, b)
    nv, nc = H.shape[0], Ak.shape[0]
    K = np.zeros((nv + nc, nv + nc))
    K[:nv, :nv] = H
    K[:nv, nv:] = Ak.T
    K[nv:, :nv] = Ak
    rhs = np.concatenate([np.zeros(nv), bk])
    try:
        sol = scipy.linalg.solve(K, rhs, assume_a="sym")
    except (scipy.linalg.LinAlgError, ValueError) as e:
        raise OracleError(f"KKT system singular: {e}") from e
    x = sol[:nv]
    if A.shape[0]:
        scale = max(1.0, float(np.abs(b).max()))
        resid = float(np.abs(A @ x - b).max())
        if not np.isfinite(resid) or resid > 1e-6 * scale:
            raise OracleError(
                f"constraints inconsistent after redundancy elimination (residual {resid:.3g})"
            )
    # recover multipliers of the kept rows only; callers that need them pass
    # pre-reduced constraint sets
    return x, sol[nv:]


def kkt_solve(spec: ProblemSpec, pins: bool = False):
    """Exact solution of the coupled equality-only problem.

    Minimizes the control-effort objective subject to the instance's fixed
    boundary orders, full continuity at splits, and (optionally) waypoint
    position pins. Corridor and velocity constraints are ignored.

    Returns (trajectory, objective).
    """
    if spec.n_segments > ORACLE_MAX_SEGMENTS:
        raise OracleError(
            f"oracle limited to {ORACLE_MAX_SEGMENTS} segments, got {spec.n_segments}"
        )
    H = _global_gram(spec)
    A, b = _equality_rows(spec, pins)
    x, _ = _solve_eq_qp(H, A, b)
    obj = 0.5 * float(x @ H @ x)
    n1 = spec.cfg.degree + 1
    coeffs = x.reshape(spec.n_segments, spec.cfg.dims, n1)
    return Trajectory(coeffs, spec.durations), obj


def quintic_reference(p0, v0, a0, p1, v1, a1, T: float):
    """Unique quintic matching position/velocity/acceleration at both ends.

    Inputs are m-vectors (or scalars); returns ascending-power coefficients
    with shape (m, 6).
    """
    if T <= 0:
        raise ValueError("T must be positive")
    p0, v0, a0 = np.atleast_1d(p0), np.atleast_1d(v0), np.atleast_1d(a0)
    p1, v1, a1 = np.atleast_1d(p1), np.atleast_1d(v1), np.atleast_1d(a1)
    A = np.vstack(
        [basis_row(0.0, r, 5) for r in range(3)] + [basis_row(T, r, 5) for r in range(3)]
    )
    rhs = np.vstack([p0, v0, a0, p1, v1, a1])
    return np.linalg.solve(A, rhs).T


def active_set_qp(spec: ProblemSpec, pins: bool = False):
    """Brute-force corridor-constrained optimum by active-set enumeration.

    Solves the same equality structure as :func:`kkt_solve` plus the sampled
    corridor rows as linear inequalities, by enumerating candidate active
    sets and keeping the feasible candidate with nonnegative multipliers and
    the lowest objective. Velocity constraints are not covered. Limited to
    3 segments and 20 inequality rows.

    Returns (trajectory, objective).
    """
    from .problem import build_segment_matrices, sample_times

    N = spec.n_segments
    if N > 3:
        raise OracleError(f"active-set oracle limited to 3 segments, got {N}")
    n = spec.cfg.n_coef
    H = _global_gram(spec)
    A, b = _equality_rows(spec, pins)
    A, b = _drop_redundant(A, b)
    G_blocks, h_blocks = [], []
    for i in range(N):
        mats = build_segment_matrices(spec, i)
        if mats.corridor.shape[0] == 0:
            continue
        Gi = np.zeros((mats.corridor.shape[0], N * n))
        Gi[:, i * n : (i + 1) * n] = mats.corridor
        G_blocks.append(Gi)
        h_blocks.append(mats.corridor_offsets)
    if G_blocks:
        G = np.vstack(G_blocks)
        h = np.concatenate(h_blocks)
    else:
        G = np.zeros((0, N * n))
        h = np.zeros(0)
    nG = G.shape[0]
    if nG > 20:
        raise OracleError(f"active-set oracle limited to 20 inequality rows, got {nG}")

    best = None
    for r in range(nG + 1):
        for active in itertools.combinations(range(nG), r):
            act = list(active)
            Aa = np.vstack([A, G[act]]) if act else A
            ba = np.concatenate([b, h[act]]) if act else b
            try:
                Ared, bred = _drop_redundant(Aa, ba)
                x, lam = _solve_eq_qp(H, Ared, bred)
            except OracleError:
                continue
            # multipliers of the active inequality rows must be >= 0; map
            # them back through the reduced system by re-solving with the
            # active rows kept explicitly when none were dropped
            if Ared.shape[0] != Aa.shape[0]:
                continue  # degenerate active set; a smaller one covers it
            lam_act = lam[A.shape[0] :]
            if np.any(lam_act < -1e-8):
                continue
            if nG and np.any(G @ x - h > 1e-10):
                continue
            obj = 0.5 * float(x @ H @ x)
            if best is None or obj < best[1] - 1e-12:
                best = (x, obj)
    if best is None:
        raise OracleError("no feasible active set found; instance infeasible")
    x, obj = best
    coeffs = x.reshape(N, spec.cfg.dims, spec.cfg.degree + 1)
    return Trajectory(coeffs, spec.durations), obj


@dataclass(frozen=True)
class SimilarityResult:
    value: float
    exact: bool


def similarity_metric(traj: Trajectory, reference, ref_duration: float | None = None,
                      samples: int = 8192) -> SimilarityResult:
    """Base-10 log of the summed componentwise position error to a reference.

    ``reference`` is either another :class:`Trajectory` or a callable
    t -> position; for callables ``ref_duration`` is required and must match
    the trajectory's total duration. An exact match returns the log of a
    1e-300 floor with ``exact=True``.
    """
    if isinstance(reference, Trajectory):
        ref_fn = lambda t: reference.eval(t)  # noqa: E731
        dur = reference.total_duration
    else:
        if ref_duration is None:
            raise ValueError("ref_duration is required for callable references")
        ref_fn = reference
        dur = float(ref_duration)
    if abs(dur - traj.total_duration) > 1e-9 * max(1.0, dur):
        raise ValueError(
            f"duration mismatch: trajectory {traj.total_duration}, reference {dur}"
        )
    times = np.linspace(0.0, traj.total_duration, samples)
    pos = traj.eval(times)
    ref = np.vstack([np.atleast_1d(ref_fn(t)) for t in times])
    total = float(np.abs(pos - ref).sum())
    if total == 0.0:
        return SimilarityResult(math.log10(1e-300), True)
    return SimilarityResult(math.log10(total), False)
