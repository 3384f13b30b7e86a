"""Problem instance definition, validation, and per-segment matrix assembly."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .basis import BasisConfig, basis_row, boundary_map, deriv_stack, gram_matrix, kron_expand

__all__ = [
    "Polytope",
    "SegmentSpec",
    "BoundaryCondition",
    "SolverConfig",
    "ProblemSpec",
    "SegmentMatrices",
    "ValidationReport",
    "sample_times",
    "corridor_rows",
    "velocity_rows",
    "build_segment_matrices",
    "validate_problem",
]

FILL_ZERO_FIXED = "zero_fixed"
FILL_FREE = "free_single_sided"


@dataclass(frozen=True)
class Polytope:
    """Convex free-space region {x : A x <= b}.

    ``normals`` has shape (K, m); ``offsets`` has shape (K,). Rows need not
    be normalized but must be nonzero.
    """

    normals: NDArray[np.float64]
    offsets: NDArray[np.float64]

    def __post_init__(self):
        object.__setattr__(self, "normals", np.asarray(self.normals, dtype=float))
        object.__setattr__(self, "offsets", np.asarray(self.offsets, dtype=float))
        if self.normals.ndim != 2 or self.offsets.shape != (self.normals.shape[0],):
            raise ValueError("polytope needs normals (K, m) and offsets (K,)")
        if self.normals.shape[0] < 1:
            raise ValueError("polytope needs at least one hyperplane")
        if np.any(np.linalg.norm(self.normals, axis=1) == 0):
            raise ValueError("polytope normals must be nonzero")

    @property
    def n_planes(self) -> int:
        return self.normals.shape[0]

    def violation(self, point) -> float:
        """Largest signed violation of A p <= b at ``point`` (<= 0 inside)."""
        return float(np.max(self.normals @ np.asarray(point, float) - self.offsets))


@dataclass(frozen=True)
class SegmentSpec:
    """One trajectory piece: duration, its corridor polytope, sampling density.

    ``polytope=None`` means the segment carries no corridor constraint.
    """

    duration: float
    polytope: Polytope | None = None
    sample_count: int = 8

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError(f"segment duration must be positive, got {self.duration}")
        if self.sample_count < 2:
            raise ValueError("sample_count must be >= 2")


@dataclass(frozen=True)
class BoundaryCondition:
    """Derivative values clamped at one trajectory end.

    ``derivatives`` has shape (k, m) holding orders 0..k-1 with
    p <= k <= s; orders 0..p-1 are mandatory. Orders p..s-1 beyond the
    supplied rows follow ``fill_policy``: 'zero_fixed' pins them at zero,
    'free_single_sided' leaves them to track the adjacent segment.
    Supplied rows at orders >= p are always pinned at their given values.
    """

    derivatives: NDArray[np.float64]
    fill_policy: str = FILL_ZERO_FIXED

    def __post_init__(self):
        object.__setattr__(self, "derivatives", np.atleast_2d(np.asarray(self.derivatives, float)))
        if self.fill_policy not in (FILL_ZERO_FIXED, FILL_FREE):
            raise ValueError(f"unknown fill_policy {self.fill_policy!r}")

    def stack(self, cfg: BasisConfig):
        """(values (s, m), fixed-mask (s,)) for consensus initialization."""
        s, p, m = cfg.cont_orders, cfg.control_order, cfg.dims
        k = self.derivatives.shape[0]
        if self.derivatives.shape[1] != m:
            raise ValueError(
                f"boundary condition has {self.derivatives.shape[1]} dims, expected {m}"
            )
        if k < p:
            raise ValueError(f"boundary condition must supply orders 0..{p - 1}")
        if k > s:
            raise ValueError(f"boundary condition supplies {k} orders, limit is s={s}")
        vals = np.zeros((s, m))
        vals[:k] = self.derivatives
        fixed = np.zeros(s, dtype=bool)
        fixed[:k] = True
        if self.fill_policy == FILL_ZERO_FIXED:
            fixed[:] = True
        return vals, fixed


@dataclass(frozen=True)
class SolverConfig:
    """Iteration parameters of the consensus engine."""

    mode: str = "closed-form"  # or "numerical"
    epsilon: float = 0.05
    rho0: float = 1.0
    mu: float = 10.0
    tau_incr: float = 1.1
    tau_decr: float = 1.1
    max_iters: int = 5000
    rho_min: float = 1e-4
    rho_max: float = 1e8
    adaptive_rho: bool = True
    threads: int = 0  # 0 = available parallelism

    def __post_init__(self):
        if self.mode not in ("closed-form", "numerical"):
            raise ValueError(f"unknown solver mode {self.mode!r}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.rho0 <= 0:
            raise ValueError("rho0 must be positive")
        if self.mu <= 1 or self.tau_incr <= 1 or self.tau_decr <= 1:
            raise ValueError("mu, tau_incr, tau_decr must exceed 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not (0 < self.rho_min <= self.rho0 <= self.rho_max):
            raise ValueError("need rho_min <= rho0 <= rho_max, all positive")


@dataclass(frozen=True)
class ProblemSpec:
    """Full optimization instance."""

    cfg: BasisConfig
    path: NDArray[np.float64]  # (N+1, m) waypoints
    segments: tuple[SegmentSpec, ...]
    boundary_start: BoundaryCondition
    boundary_end: BoundaryCondition
    v_max: float = math.inf
    weights: NDArray[np.float64] | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    pin_waypoints: bool = False

    def __post_init__(self):
        object.__setattr__(self, "path", np.asarray(self.path, dtype=float))
        object.__setattr__(self, "segments", tuple(self.segments))
        w = np.ones(self.cfg.dims) if self.weights is None else np.asarray(self.weights, float)
        object.__setattr__(self, "weights", w)

    @property
    def n_segments(self) -> int:
        return len(self.segments)

    @property
    def durations(self) -> NDArray[np.float64]:
        return np.array([seg.duration for seg in self.segments])


@dataclass(frozen=True)
class SegmentMatrices:
    """Constant matrices of one segment's subproblem.

    S is the fixed normal-equation sum M~^T M~ + Ao^T Ao + sum_j Av_j^T Av_j;
    the closed-form update factors 2 Q~ + rho S.
    """

    gram: NDArray[np.float64]  # (n, n) weighted
    bmap: NDArray[np.float64]  # (2ms, n)
    corridor: NDArray[np.float64]  # (Ms*K, n)
    corridor_offsets: NDArray[np.float64]  # (Ms*K,)
    velocity: NDArray[np.float64]  # (Ms, m, n); empty when v_max is inf
    normal_sum: NDArray[np.float64]  # (n, n)
    duration: float


class ValidationReport:
    """Fatal errors and warnings accumulated while checking an instance."""

    def __init__(self):
        self.errors: list[str] = []
        self.warnings: list[str] = []

    @property
    def ok(self) -> bool:
        return not self.errors

    def raise_if_failed(self):
        if self.errors:
            raise ValueError("invalid problem: " + "; ".join(self.errors))

    def __repr__(self):
        return f"ValidationReport(errors={self.errors!r}, warnings={self.warnings!r})"


def sample_times(duration: float, sample_count: int) -> NDArray[np.float64]:
    """Uniform sample grid on [0, duration] including both endpoints."""
    if sample_count < 2:
        raise ValueError("sample_count must be >= 2")
    if duration <= 0:
        raise ValueError("duration must be positive")
    return np.linspace(0.0, duration, sample_count)


def corridor_rows(poly: Polytope, times, cfg: BasisConfig):
    """Stack position half-space constraints at each sample time.

    Row (sample j, hyperplane k) concatenates a_{k,d} * beta(t_j)^T over
    dimensions d, ordered sample-major. Returns (rows, offsets).
    """
    times = np.asarray(times, dtype=float)
    K, m = poly.normals.shape
    if m != cfg.dims:
        raise ValueError(f"polytope dimension {m} != problem dims {cfg.dims}")
    n1 = cfg.degree + 1
    rows = np.zeros((times.size * K, cfg.n_coef))
    offsets = np.zeros(times.size * K)
    for j, t in enumerate(times):
        beta = basis_row(t, 0, cfg.degree)
        for k in range(K):
            r = j * K + k
            for d in range(m):
                rows[r, d * n1 : (d + 1) * n1] = poly.normals[k, d] * beta
            offsets[r] = poly.offsets[k]
    return rows, offsets


def velocity_rows(times, cfg: BasisConfig) -> NDArray[np.float64]:
    """Velocity maps A^v(t_j) = I_m (x) basis_row(t_j, 1)^T, shape (Ms, m, n)."""
    times = np.asarray(times, dtype=float)
    out = np.zeros((times.size, cfg.dims, cfg.n_coef))
    for j, t in enumerate(times):
        out[j] = kron_expand(basis_row(t, 1, cfg.degree)[None, :], cfg.dims)
    return out


def build_segment_matrices(spec: ProblemSpec, i: int) -> SegmentMatrices:
    """Assemble and cache all constant matrices of segment i."""
    cfg = spec.cfg
    seg = spec.segments[i]
    T = seg.duration
    gram = kron_expand(gram_matrix(T, cfg), cfg.dims, spec.weights)
    # boundary map stacked as (start stack; end stack) to match the
    # dimension-major consensus layout
    bmap = np.vstack([deriv_stack(0.0, cfg), deriv_stack(T, cfg)])
    times = sample_times(T, seg.sample_count)
    if seg.polytope is not None:
        corr, offs = corridor_rows(seg.polytope, times, cfg)
    else:
        corr = np.zeros((0, cfg.n_coef))
        offs = np.zeros(0)
    if math.isfinite(spec.v_max):
        vel = velocity_rows(times, cfg)
    else:
        vel = np.zeros((0, cfg.dims, cfg.n_coef))
    S = bmap.T @ bmap + corr.T @ corr
    for j in range(vel.shape[0]):
        S = S + vel[j].T @ vel[j]
    return SegmentMatrices(
        gram=gram,
        bmap=bmap,
        corridor=corr,
        corridor_offsets=offs,
        velocity=vel,
        normal_sum=S,
        duration=T,
    )


def validate_problem(spec: ProblemSpec) -> ValidationReport:
    """Check an instance; fatal errors and warnings are kept separate.

    Path points outside their segment polytope and a non-default degree
    only warn, everything structural is fatal.
    """
    rep = ValidationReport()
    cfg = spec.cfg
    N = spec.n_segments
    if N < 1:
        rep.errors.append("at least one segment is required")
        return rep
    if spec.path.ndim != 2 or spec.path.shape != (N + 1, cfg.dims):
        rep.errors.append(
            f"path must have shape ({N + 1}, {cfg.dims}), got {spec.path.shape}"
        )
    if not (spec.v_max > 0):
        rep.errors.append(f"v_max must be positive, got {spec.v_max}")
    if spec.weights.shape != (cfg.dims,):
        rep.errors.append(f"weights must have shape ({cfg.dims},)")
    elif np.any(spec.weights <= 0):
        rep.errors.append("weights must be positive")
    for i, seg in enumerate(spec.segments):
        if seg.duration <= 0:
            rep.errors.append(f"segments[{i}].duration must be positive")
        if seg.polytope is not None and seg.polytope.normals.shape[1] != cfg.dims:
            rep.errors.append(f"segments[{i}].polytope dimension mismatch")
    for which, bc in (("start", spec.boundary_start), ("end", spec.boundary_end)):
        try:
            bc.stack(cfg)
        except ValueError as e:
            rep.errors.append(f"boundary_{which}: {e}")
    if cfg.degree != 2 * cfg.control_order - 1:
        rep.warnings.append(
            f"degree {cfg.degree} != 2p-1 = {2 * cfg.control_order - 1}"
        )
    if rep.errors:
        return rep
    for i, seg in enumerate(spec.segments):
        if seg.polytope is None:
            continue
        for j in (i, i + 1):
            v = seg.polytope.violation(spec.path[j])
            if v > 1e-6:
                rep.warnings.append(
                    f"path[{j}] violates segments[{i}].polytope by {v:.3g}"
                )
    return rep
