"""Synthetic corridor instances and the scaling benchmark harness."""

from __future__ import annotations

import time

import numpy as np

from .admm import optimize
from .basis import BasisConfig
from .problem import (
    BoundaryCondition,
    Polytope,
    ProblemSpec,
    SegmentSpec,
    SolverConfig,
)

__all__ = ["synthetic_instance", "run_bench", "BENCH_FIELDS"]

BENCH_FIELDS = (
    "n_segments", "threads", "repetition", "seed", "status", "iterations",
    "total_ms", "per_iter_ms", "per_iter_per_segment_us", "objective",
)


def synthetic_instance(n_segments, seed=0, dims=3, hyperplanes=24, samples=24,
                       v_max=2.5, solver=None) -> ProblemSpec:
    """Random forward-progress corridor instance.

    Each segment gets a polytope with ``hyperplanes`` faces: an axis-aligned
    bounding box around its endpoints plus randomly oriented cut planes
    pushed out far enough to keep the straight-line path feasible.
    """
    rng = np.random.default_rng(seed)
    cfg = BasisConfig(dims=dims)
    path = np.zeros((n_segments + 1, dims))
    for i in range(1, n_segments + 1):
        step = np.concatenate([[1.0], rng.uniform(-0.5, 0.5, dims - 1)])
        path[i] = path[i - 1] + step[:dims]
    margin = 0.6
    segments = []
    for i in range(n_segments):
        lo = np.minimum(path[i], path[i + 1]) - margin
        hi = np.maximum(path[i], path[i + 1]) + margin
        normals = [np.eye(dims), -np.eye(dims)]
        offsets = [hi, -lo]
        extra = hyperplanes - 2 * dims
        if extra > 0:
            dirs = rng.normal(size=(extra, dims))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            mid = 0.5 * (path[i] + path[i + 1])
            reach = 0.5 * np.linalg.norm(path[i + 1] - path[i]) + margin
            normals.append(dirs)
            offsets.append(dirs @ mid + reach)
        poly = Polytope(np.vstack(normals)[:hyperplanes],
                        np.concatenate(offsets)[:hyperplanes])
        segments.append(SegmentSpec(duration=1.0, polytope=poly,
                                    sample_count=samples))
    b0 = np.zeros((3, dims))
    b0[0] = path[0]
    b1 = np.zeros((3, dims))
    b1[0] = path[-1]
    return ProblemSpec(
        cfg=cfg, path=path, segments=segments,
        boundary_start=BoundaryCondition(b0, fill_policy="free_single_sided"),
        boundary_end=BoundaryCondition(b1, fill_policy="free_single_sided"),
        v_max=v_max, solver=solver or SolverConfig(),
    )


def run_bench(sizes, threads_list=(1,), repetitions=1, seed=0, iterations=50,
              hyperplanes=24, samples=24, warmup=True, progress=None):
    """Time fixed-iteration optimization runs across segment counts.

    Runs exactly ``iterations`` iterations per run (the stopping tolerance is
    set unreachably tight) so per-iteration figures are comparable across
    sizes. Returns a list of row dicts with BENCH_FIELDS keys.
    """
    rows = []
    if warmup:
        spec = synthetic_instance(4, seed=seed, hyperplanes=hyperplanes,
                                  samples=samples,
                                  solver=SolverConfig(epsilon=1e-300, max_iters=5,
                                                      threads=1))
        optimize(spec)
    for n in sizes:
        for threads in threads_list:
            for rep in range(repetitions):
                solver = SolverConfig(epsilon=1e-300, max_iters=iterations,
                                      threads=threads)
                spec = synthetic_instance(n, seed=seed, hyperplanes=hyperplanes,
                                          samples=samples, solver=solver)
                t0 = time.perf_counter()
                res = optimize(spec)
                total_ms = (time.perf_counter() - t0) * 1e3
                row = {
                    "n_segments": n,
                    "threads": threads,
                    "repetition": rep,
                    "seed": seed,
                    "status": res.status,
                    "iterations": res.iterations,
                    "total_ms": total_ms,
                    "per_iter_ms": total_ms / res.iterations,
                    "per_iter_per_segment_us": total_ms / res.iterations / n * 1e3,
                    "objective": res.objective,
                }
                rows.append(row)
                if progress is not None:
                    progress(row)
    return rows
