"""Monomial basis evaluation and the per-segment constant matrices.

Every solver in this package works on piecewise polynomials expressed in the
monomial basis (1, t, ..., t^D) in local segment time. This module provides
the basis/derivative rows, the control-effort Gram matrix, the boundary map
that sends coefficients to end-point derivative stacks, and the Kronecker
block expansion used to lift single-dimension matrices to m dimensions.

Coefficient layout is dimension-major throughout: a segment's coefficient
vector is (c_x; c_y; c_z), each block of length D+1.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from math import factorial

import numpy as np
from numpy.typing import NDArray

__all__ = [
    "BasisConfig",
    "basis_row",
    "gram_matrix",
    "boundary_map",
    "deriv_stack",
    "kron_expand",
]


@dataclass(frozen=True)
class BasisConfig:
    """Polynomial parameterization shared by all segments.

    Attributes:
        degree: polynomial degree D (default 5).
        control_order: order p of the minimized derivative (default 3, jerk).
        dims: number of flat-output dimensions m.
        cont_orders: number s of derivative orders (0..s-1) entering
            consensus at split points. Defaults to ``degree``.
    """

    degree: int = 5
    control_order: int = 3
    dims: int = 3
    cont_orders: int = field(default=-1)

    def __post_init__(self):
        if self.cont_orders == -1:
            object.__setattr__(self, "cont_orders", self.degree)
        D, p, m, s = self.degree, self.control_order, self.dims, self.cont_orders
        if not (1 <= p <= D):
            raise ValueError(f"control_order must satisfy 1 <= p <= degree, got p={p}, D={D}")
        if not (1 <= s <= D):
            raise ValueError(f"cont_orders must satisfy 1 <= s <= degree, got s={s}, D={D}")
        if m < 1:
            raise ValueError(f"dims must be >= 1, got {m}")
        if D != 2 * p - 1:
            warnings.warn(
                f"degree {D} != 2*control_order-1 = {2 * p - 1}; optimality of the "
                "piecewise representation is only guaranteed at the default degree",
                stacklevel=2,
            )

    @property
    def n_coef(self) -> int:
        """Length of one segment's squeezed coefficient vector, m*(D+1)."""
        return self.dims * (self.degree + 1)


def basis_row(t: float, r: int, degree: int) -> NDArray[np.float64]:
    """r-th derivative of the monomial basis (1, t, ..., t^degree) at t.

    Entry a equals d^r/dt^r t^a; entries with a < r are zero. r > degree
    yields the zero vector.
    """
    if r < 0:
        raise ValueError("derivative order must be >= 0")
    row = np.zeros(degree + 1)
    for a in range(r, degree + 1):
        row[a] = factorial(a) // factorial(a - r) * t ** (a - r)
    return row


def gram_matrix(T: float, cfg: BasisConfig) -> NDArray[np.float64]:
    """Gram matrix of the p-th basis derivative integrated over [0, T].

    Closed form: Q[a,b] = a!/(a-p)! * b!/(b-p)! * T^(a+b-2p+1) / (a+b-2p+1)
    for a, b >= p, zero otherwise. Symmetric positive semidefinite.
    """
    if T <= 0:
        raise ValueError(f"segment duration must be positive, got {T}")
    D, p = cfg.degree, cfg.control_order
    Q = np.zeros((D + 1, D + 1))
    for a in range(p, D + 1):
        fa = factorial(a) // factorial(a - p)
        for b in range(a, D + 1):
            fb = factorial(b) // factorial(b - p)
            e = a + b - 2 * p + 1
            Q[a, b] = Q[b, a] = fa * fb * T**e / e
    return Q


def boundary_map(T: float, cfg: BasisConfig) -> NDArray[np.float64]:
    """Map from coefficients to derivative orders 0..s-1 at t=0 and t=T.

    Rows 0..s-1 evaluate at 0, rows s..2s-1 at T. Full column rank D+1
    whenever 2s >= D+1 and T > 0.
    """
    if T <= 0:
        raise ValueError(f"segment duration must be positive, got {T}")
    s = cfg.cont_orders
    return np.vstack(
        [basis_row(0.0, r, cfg.degree) for r in range(s)]
        + [basis_row(T, r, cfg.degree) for r in range(s)]
    )


def deriv_stack(t: float, cfg: BasisConfig) -> NDArray[np.float64]:
    """Multi-dimensional derivative stack matrix at local time t.

    Block-diagonal expansion I_m (x) B(t) where B(t) stacks basis_row(t, r)
    for r = 0..s-1. Applied to a dimension-major coefficient vector it
    returns derivative orders 0..s-1 for each dimension, dimension-major.
    """
    if t < 0:
        raise ValueError("local time must be >= 0")
    B = np.vstack([basis_row(t, r, cfg.degree) for r in range(cfg.cont_orders)])
    return kron_expand(B, cfg.dims)


def kron_expand(X: NDArray, m: int, weights=None) -> NDArray[np.float64]:
    """Block-diagonal matrix with m copies of X, block k scaled by weights[k].

    Realizes the lift of single-dimension constant matrices to the
    dimension-major layout; the optional positive weights implement the
    per-dimension cost scaling of the control-effort objective.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    X = np.asarray(X, dtype=float)
    if weights is None:
        w = np.ones(m)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (m,):
            raise ValueError(f"weights must have shape ({m},), got {w.shape}")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
    r, c = X.shape
    out = np.zeros((m * r, m * c))
    for k in range(m):
        out[k * r : (k + 1) * r, k * c : (k + 1) * c] = w[k] * X
    return out
