"""Numeric segment subproblems for general convex inequality constraints.

Inequalities g0(c) <= 0 are folded into the smooth equality surrogate
g = max(0, g0)^2 and handled through an augmented Lagrangian with unscaled
multipliers, minimized per segment by a limited-memory quasi-Newton solver.
The built-in catalog covers the corridor rows (affine g0) and the sampled
velocity balls (quadratic g0); arbitrary user constraints plug in through
the same evaluator interface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from .problem import SegmentMatrices

__all__ = [
    "ConvexConstraint",
    "ConstraintBlock",
    "CorridorBlock",
    "VelocityBallBlock",
    "UserBlock",
    "transform",
    "segment_constraint_blocks",
    "aug_lagrangian",
    "lbfgs_minimize",
    "LbfgsResult",
    "numeric_segment_update",
]


@dataclass(frozen=True)
class ConvexConstraint:
    """A single convex inequality g0(c) <= 0 given by value and gradient.

    Convexity of ``evaluator`` is the caller's responsibility; the gradient
    must be consistent with the value under finite differences.
    """

    evaluator: Callable[[NDArray], float]
    gradient: Callable[[NDArray], NDArray]
    tag: str = "user"


class ConstraintBlock:
    """A family of constraints sharing a vectorized evaluator."""

    tag = "user"

    @property
    def size(self) -> int:
        raise NotImplementedError

    def values(self, c) -> NDArray[np.float64]:
        """g0 for every constraint in the block."""
        raise NotImplementedError

    def accumulate_gradient(self, c, coef, out) -> None:
        """out += sum_q coef[q] * grad g0_q(c)."""
        raise NotImplementedError


class CorridorBlock(ConstraintBlock):
    """Affine rows a^T c - b <= 0 from the sampled corridor polytope."""

    tag = "corridor-row"

    def __init__(self, rows, offsets):
        self.rows = np.asarray(rows, float)
        self.offsets = np.asarray(offsets, float)

    @property
    def size(self) -> int:
        return self.rows.shape[0]

    def values(self, c):
        return self.rows @ c - self.offsets

    def accumulate_gradient(self, c, coef, out):
        out += self.rows.T @ coef


class VelocityBallBlock(ConstraintBlock):
    """Quadratic speed bounds ||Av_j c||^2 - v_max^2 <= 0 per sample."""

    tag = "velocity-ball"

    def __init__(self, velocity, v_max):
        self.velocity = np.asarray(velocity, float)  # (Mv, m, n)
        self.v_max = float(v_max)

    @property
    def size(self) -> int:
        return self.velocity.shape[0]

    def values(self, c):
        sp = self.velocity @ c  # (Mv, m)
        return np.sum(sp * sp, axis=1) - self.v_max**2

    def accumulate_gradient(self, c, coef, out):
        sp = self.velocity @ c
        for j in range(self.size):
            if coef[j] != 0.0:
                out += coef[j] * 2.0 * (self.velocity[j].T @ sp[j])


class UserBlock(ConstraintBlock):
    """Adapter turning scalar :class:`ConvexConstraint` objects into a block."""

    def __init__(self, constraints):
        self.constraints = list(constraints)
        self.tag = self.constraints[0].tag if self.constraints else "user"

    @property
    def size(self) -> int:
        return len(self.constraints)

    def values(self, c):
        return np.array([cc.evaluator(c) for cc in self.constraints])

    def accumulate_gradient(self, c, coef, out):
        for q, cc in enumerate(self.constraints):
            if coef[q] != 0.0:
                out += coef[q] * np.asarray(cc.gradient(c))


def transform(g0_value: float) -> float:
    """Equality surrogate g = max(0, g0)^2; C^1 with gradient 2 max(0,g0) g0'."""
    h = max(0.0, g0_value)
    return h * h


def segment_constraint_blocks(mats: SegmentMatrices, v_max: float):
    """Built-in constraint blocks of one segment."""
    blocks: list[ConstraintBlock] = []
    if mats.corridor.shape[0]:
        blocks.append(CorridorBlock(mats.corridor, mats.corridor_offsets))
    if math.isfinite(v_max) and mats.velocity.shape[0]:
        blocks.append(VelocityBallBlock(mats.velocity, v_max))
    return blocks


def aug_lagrangian(c, ztilde, u, mats: SegmentMatrices, blocks, multipliers, rho):
    """Value and analytic gradient of the segment's augmented Lagrangian.

    value = c^T Q~ c + (rho/2) ||M~ c - z~ + u||^2
          + sum_q [(rho/2) g_q(c)^2 + y_q g_q(c)],  g_q = max(0, g0_q)^2.

    Non-finite evaluations raise with the offending block's tag.
    """
    qc = mats.gram @ c
    value = float(c @ qc)
    e = mats.bmap @ c - ztilde + u
    value += 0.5 * rho * float(e @ e)
    grad = 2.0 * qc + rho * (mats.bmap.T @ e)
    for block, y in zip(blocks, multipliers):
        g0 = block.values(c)
        if not np.all(np.isfinite(g0)):
            raise FloatingPointError(f"constraint block {block.tag!r} evaluated non-finite")
        gpos = np.maximum(0.0, g0)
        g = gpos * gpos
        value += float(0.5 * rho * (g @ g) + y @ g)
        coef = (rho * g + y) * 2.0 * gpos
        block.accumulate_gradient(c, coef, grad)
    return value, grad


@dataclass(frozen=True)
class LbfgsResult:
    x: NDArray[np.float64]
    value: float
    iterations: int
    converged: bool
    message: str


def _wolfe_line_search(fg, x, f0, g0, direction, c1=1e-4, c2=0.9, max_evals=40):
    """Strong-Wolfe step via bracketing and interpolation zoom.

    Returns (alpha, f, g, evals) with alpha=None on failure.
    """
    d0 = float(g0 @ direction)
    if d0 >= 0:
        return None, f0, g0, 0

    def phi(alpha):
        f, g = fg(x + alpha * direction)
        return f, g, float(g @ direction)

    alpha_prev, f_prev, d_prev = 0.0, f0, d0
    alpha = 1.0
    evals = 0
    bracket = None
    while evals < max_evals:
        f, g, d = phi(alpha)
        evals += 1
        if f > f0 + c1 * alpha * d0 or (alpha_prev > 0.0 and f >= f_prev):
            bracket = (alpha_prev, f_prev, d_prev, alpha, f)
            break
        if abs(d) <= -c2 * d0:
            return alpha, f, g, evals
        if d >= 0:
            bracket = (alpha, f, d, alpha_prev, f_prev)
            break
        alpha_prev, f_prev, d_prev = alpha, f, d
        alpha *= 2.0
    if bracket is None:
        return None, f0, g0, evals

    lo, f_lo, d_lo, hi, f_hi = bracket
    while evals < max_evals:
        # quadratic through (lo, f_lo, d_lo) and (hi, f_hi), guarded to
        # stay well inside the bracket
        dalpha = hi - lo
        denom = 2.0 * (f_hi - f_lo - d_lo * dalpha)
        alpha = lo + 0.5 * dalpha
        if denom != 0.0:
            cand = lo - d_lo * dalpha * dalpha / denom
            t = (cand - lo) / dalpha if dalpha != 0.0 else -1.0
            if 0.1 <= t <= 0.9:
                alpha = cand
        f, g, d = phi(alpha)
        evals += 1
        if f > f0 + c1 * alpha * d0 or f >= f_lo:
            hi, f_hi = alpha, f
        else:
            if abs(d) <= -c2 * d0:
                return alpha, f, g, evals
            if d * (hi - lo) >= 0:
                hi, f_hi = lo, f_lo
            lo, f_lo, d_lo = alpha, f, d
        if abs(hi - lo) < 1e-14 * max(1.0, abs(lo)):
            break
    return None, f0, g0, evals


def lbfgs_minimize(fg, x0, gtol=1e-6, max_iters=200, memory=8) -> LbfgsResult:
    """Limited-memory BFGS with a strong-Wolfe line search.

    ``fg`` maps x to (value, gradient). Terminates when the gradient norm
    drops below gtol * max(1, ||x||) or after ``max_iters`` iterations; a
    failed line search returns the best iterate seen with a flag.
    """
    x = np.array(x0, dtype=float)
    f, g = fg(x)
    best_x, best_f = x.copy(), f
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []

    for k in range(max_iters):
        if np.linalg.norm(g) <= gtol * max(1.0, float(np.linalg.norm(x))):
            return LbfgsResult(best_x, best_f, k, True, "gradient tolerance reached")
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, r in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = r * float(s @ q)
            alphas.append(a)
            q -= a * y
        if y_hist:
            gamma = float(s_hist[-1] @ y_hist[-1]) / float(y_hist[-1] @ y_hist[-1])
            q *= gamma
        for (s, y, r), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
            b = r * float(y @ q)
            q += (a - b) * s
        direction = -q
        alpha, f_new, g_new, _ = _wolfe_line_search(fg, x, f, g, direction)
        if alpha is None:
            return LbfgsResult(best_x, best_f, k, False, "line search failed")
        x_new = x + alpha * direction
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-10 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)
        x, f, g = x_new, f_new, g_new
        if f < best_f:
            best_x, best_f = x.copy(), f
    return LbfgsResult(best_x, best_f, max_iters, False, "iteration limit")


def numeric_segment_update(state, ztilde, mats: SegmentMatrices, blocks, multipliers,
                           rho):
    """One numeric subproblem solve plus multiplier ascent.

    Minimizes the augmented Lagrangian from the previous coefficients (warm
    start), then updates each constraint multiplier by y += rho * g(c).
    Returns (c_new, multipliers_new).
    """

    def fg(c):
        return aug_lagrangian(c, ztilde, state.u, mats, blocks, multipliers, rho)

    result = lbfgs_minimize(fg, state.c)
    c_new = result.x
    new_mult = []
    for block, y in zip(blocks, multipliers):
        gpos = np.maximum(0.0, block.values(c_new))
        new_mult.append(y + rho * gpos * gpos)
    return c_new, new_mult
