"""Piecewise-polynomial trajectory container and evaluation."""

from __future__ import annotations

from math import factorial

import numpy as np
from numpy.typing import NDArray

__all__ = ["Trajectory"]


class Trajectory:
    """A piecewise polynomial in dimension-major coefficient layout.

    Args:
        coefficients: array (N, m, D+1); ``coefficients[i, d]`` holds the
            ascending-power monomial coefficients of segment i, dimension d,
            in local segment time.
        durations: array (N,) of positive segment durations.
    """

    def __init__(self, coefficients, durations):
        self.coefficients = np.asarray(coefficients, dtype=float)
        self.durations = np.asarray(durations, dtype=float)
        if self.coefficients.ndim != 3:
            raise ValueError("coefficients must have shape (N, m, D+1)")
        if self.durations.shape != (self.coefficients.shape[0],):
            raise ValueError("durations length must match segment count")
        if np.any(self.durations <= 0):
            raise ValueError("durations must be positive")
        self._starts = np.concatenate([[0.0], np.cumsum(self.durations)])

    @property
    def n_segments(self) -> int:
        return self.coefficients.shape[0]

    @property
    def dims(self) -> int:
        return self.coefficients.shape[1]

    @property
    def degree(self) -> int:
        return self.coefficients.shape[2] - 1

    @property
    def total_duration(self) -> float:
        return float(self._starts[-1])

    def segment_index(self, t: float) -> int:
        """Segment owning global time t; splice points belong to the left segment."""
        if t < 0 or t > self._starts[-1] * (1 + 1e-12) + 1e-12:
            raise ValueError(f"time {t} outside [0, {self._starts[-1]}]")
        # side='left' makes exact split times resolve to the earlier segment
        i = int(np.searchsorted(self._starts, t, side="left")) - 1
        return min(max(i, 0), self.n_segments - 1)

    def eval(self, t, order: int = 0) -> NDArray[np.float64]:
        """Evaluate the order-th derivative at global time(s) t.

        Returns shape (m,) for scalar t, else (len(t), m).
        """
        tarr = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((tarr.size, self.dims))
        D = self.degree
        fac = np.array(
            [factorial(a) / factorial(a - order) if a >= order else 0.0 for a in range(D + 1)]
        )
        for j, tj in enumerate(tarr):
            i = self.segment_index(tj)
            tl = tj - self._starts[i]
            powers = np.array(
                [tl ** (a - order) if a >= order else 0.0 for a in range(D + 1)]
            )
            out[j] = self.coefficients[i] @ (fac * powers)
        if np.isscalar(t) or np.ndim(t) == 0:
            return out[0]
        return out

    def splice_gaps(self, orders: int) -> NDArray[np.float64]:
        """Derivative mismatch at interior splits, orders 0..orders-1.

        Returns array (N-1, orders, m): left-segment end value minus
        right-segment start value.
        """
        N = self.n_segments
        gaps = np.zeros((N - 1, orders, self.dims))
        for i in range(N - 1):
            T = self.durations[i]
            for r in range(orders):
                fac = np.array(
                    [
                        factorial(a) / factorial(a - r) if a >= r else 0.0
                        for a in range(self.degree + 1)
                    ]
                )
                tp = np.array(
                    [T ** (a - r) if a >= r else 0.0 for a in range(self.degree + 1)]
                )
                left = self.coefficients[i] @ (fac * tp)
                right = self.coefficients[i + 1, :, r] * factorial(r)
                gaps[i, r] = left - right
        return gaps

    def sample_grid(self, dt: float):
        """Global time grid 0, dt, 2dt, ... not exceeding the total duration."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        total = self.total_duration
        if dt > total:
            raise ValueError(f"dt={dt} exceeds total duration {total}")
        count = int(np.floor(total / dt + 1e-12)) + 1
        return np.arange(count) * dt
