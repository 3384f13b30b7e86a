"""Problem and result file formats.

The problem format is a JSON document validated structurally before any
numerics run; unknown or ill-typed keys are rejected with the path of the
offending entry. Coefficients round-trip losslessly (floats serialized via
repr, which is exact for binary64), and trace/sample output is plain CSV.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .basis import BasisConfig
from .problem import (
    BoundaryCondition,
    Polytope,
    ProblemSpec,
    SegmentSpec,
    SolverConfig,
)
from .trajectory import Trajectory

__all__ = [
    "SchemaError",
    "load_problem",
    "parse_problem",
    "save_coefficients",
    "load_coefficients",
    "coefficients_document",
    "sample_csv_rows",
    "SAMPLE_FIELDS",
]


class SchemaError(ValueError):
    """Problem-file validation failure; ``path`` names the offending key."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


def _require(cond, path, message):
    if not cond:
        raise SchemaError(path, message)


def _check_keys(obj, path, allowed):
    _require(isinstance(obj, dict), path, "must be an object")
    for key in obj:
        if key not in allowed:
            raise SchemaError(f"{path}.{key}" if path else key, "unknown key")


def _number(obj, path, positive=False):
    _require(isinstance(obj, (int, float)) and not isinstance(obj, bool), path,
             "must be a number")
    v = float(obj)
    _require(math.isfinite(v), path, "must be finite")
    if positive:
        _require(v > 0, path, "must be positive")
    return v


def _integer(obj, path, minimum=None):
    _require(isinstance(obj, int) and not isinstance(obj, bool), path,
             "must be an integer")
    if minimum is not None:
        _require(obj >= minimum, path, f"must be >= {minimum}")
    return obj


def _vector(obj, path, length=None):
    _require(isinstance(obj, list), path, "must be an array of numbers")
    vals = [_number(v, f"{path}[{i}]") for i, v in enumerate(obj)]
    if length is not None:
        _require(len(vals) == length, path, f"must have length {length}")
    return np.array(vals)


def _matrix(obj, path, cols=None):
    _require(isinstance(obj, list) and len(obj) >= 1, path,
             "must be a non-empty array of rows")
    rows = [_vector(r, f"{path}[{i}]", length=cols) for i, r in enumerate(obj)]
    width = rows[0].size
    for i, r in enumerate(rows):
        _require(r.size == width, f"{path}[{i}]", "ragged row")
    return np.vstack(rows)


_BOUNDARY_KEYS = {"pos", "vel", "acc", "higher", "fill_policy"}
_SOLVER_KEYS = {"mode", "epsilon", "rho0", "mu", "tau", "max_iters",
                "pin_waypoints", "threads"}
_SEGMENT_KEYS = {"duration", "polytope", "samples"}
_TOP_KEYS = {"dims", "degree", "control_order", "v_max", "weights", "boundary",
             "path", "segments", "solver"}


def _parse_boundary(obj, path, dims, control_order):
    _check_keys(obj, path, _BOUNDARY_KEYS)
    _require("pos" in obj, path, "missing required key 'pos'")
    rows = [_vector(obj["pos"], f"{path}.pos", length=dims)]
    for key, order in (("vel", 1), ("acc", 2)):
        if key in obj:
            _require(len(rows) == order, f"{path}.{key}",
                     "orders must be supplied consecutively")
            rows.append(_vector(obj[key], f"{path}.{key}", length=dims))
    _require(len(rows) >= control_order, path,
             f"orders 0..{control_order - 1} are required")
    if "higher" in obj:
        higher = obj["higher"]
        _require(isinstance(higher, list), f"{path}.higher", "must be an array")
        for i, row in enumerate(higher):
            rows.append(_vector(row, f"{path}.higher[{i}]", length=dims))
    policy = obj.get("fill_policy", "zero_fixed")
    _require(policy in ("zero_fixed", "free_single_sided"), f"{path}.fill_policy",
             "must be 'zero_fixed' or 'free_single_sided'")
    return BoundaryCondition(np.vstack(rows), fill_policy=policy)


def parse_problem(doc: dict) -> ProblemSpec:
    """Validate a problem document and build the instance."""
    _check_keys(doc, "", _TOP_KEYS)
    for key in ("path", "segments", "boundary"):
        _require(key in doc, key, "missing required key")
    dims = _integer(doc.get("dims", 3), "dims", minimum=1)
    degree = _integer(doc.get("degree", 5), "degree", minimum=1)
    control_order = _integer(doc.get("control_order", 3), "control_order", minimum=1)
    try:
        cfg = BasisConfig(degree=degree, control_order=control_order, dims=dims)
    except ValueError as e:
        raise SchemaError("degree", str(e)) from e

    path = _matrix(doc["path"], "path", cols=dims)
    _require(path.shape[0] >= 2, "path", "needs at least two waypoints")

    segments = []
    _require(isinstance(doc["segments"], list) and doc["segments"], "segments",
             "must be a non-empty array")
    for i, seg in enumerate(doc["segments"]):
        spath = f"segments[{i}]"
        _check_keys(seg, spath, _SEGMENT_KEYS)
        _require("duration" in seg, spath, "missing required key 'duration'")
        duration = _number(seg["duration"], f"{spath}.duration")
        _require(duration > 0, f"{spath}.duration", "must be positive")
        polytope = None
        if "polytope" in seg and seg["polytope"] is not None:
            ppath = f"{spath}.polytope"
            _check_keys(seg["polytope"], ppath, {"A", "b"})
            _require("A" in seg["polytope"] and "b" in seg["polytope"], ppath,
                     "needs keys 'A' and 'b'")
            A = _matrix(seg["polytope"]["A"], f"{ppath}.A", cols=dims)
            b = _vector(seg["polytope"]["b"], f"{ppath}.b", length=A.shape[0])
            try:
                polytope = Polytope(A, b)
            except ValueError as e:
                raise SchemaError(ppath, str(e)) from e
        samples = _integer(seg.get("samples", 8), f"{spath}.samples", minimum=2)
        segments.append(SegmentSpec(duration=duration, polytope=polytope,
                                    sample_count=samples))
    _require(path.shape[0] == len(segments) + 1, "path",
             f"must have {len(segments) + 1} waypoints for {len(segments)} segments")

    _check_keys(doc["boundary"], "boundary", {"start", "end"})
    _require("start" in doc["boundary"] and "end" in doc["boundary"], "boundary",
             "needs keys 'start' and 'end'")
    b_start = _parse_boundary(doc["boundary"]["start"], "boundary.start", dims,
                              control_order)
    b_end = _parse_boundary(doc["boundary"]["end"], "boundary.end", dims,
                            control_order)

    v_max = math.inf
    if doc.get("v_max") is not None:
        v_max = _number(doc["v_max"], "v_max", positive=True)
    weights = None
    if "weights" in doc:
        weights = _vector(doc["weights"], "weights", length=dims)
        _require(bool(np.all(weights > 0)), "weights", "must be positive")

    solver_doc = doc.get("solver", {})
    _check_keys(solver_doc, "solver", _SOLVER_KEYS)
    kw = {}
    if "mode" in solver_doc:
        _require(solver_doc["mode"] in ("closed-form", "numerical"), "solver.mode",
                 "must be 'closed-form' or 'numerical'")
        kw["mode"] = solver_doc["mode"]
    if "epsilon" in solver_doc:
        kw["epsilon"] = _number(solver_doc["epsilon"], "solver.epsilon", positive=True)
    if "rho0" in solver_doc:
        kw["rho0"] = _number(solver_doc["rho0"], "solver.rho0", positive=True)
    if "mu" in solver_doc:
        kw["mu"] = _number(solver_doc["mu"], "solver.mu")
    if "tau" in solver_doc:
        tau = _number(solver_doc["tau"], "solver.tau")
        kw["tau_incr"] = kw["tau_decr"] = tau
    if "max_iters" in solver_doc:
        kw["max_iters"] = _integer(solver_doc["max_iters"], "solver.max_iters",
                                   minimum=1)
    if "threads" in solver_doc:
        kw["threads"] = _integer(solver_doc["threads"], "solver.threads", minimum=0)
    pin = bool(solver_doc.get("pin_waypoints", False))
    try:
        solver = SolverConfig(**kw)
    except ValueError as e:
        raise SchemaError("solver", str(e)) from e

    try:
        return ProblemSpec(
            cfg=cfg, path=path, segments=segments, boundary_start=b_start,
            boundary_end=b_end, v_max=v_max, weights=weights, solver=solver,
            pin_waypoints=pin,
        )
    except ValueError as e:
        raise SchemaError("", str(e)) from e


def load_problem(path) -> ProblemSpec:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise SchemaError("", f"not valid JSON: {e}") from e
    return parse_problem(doc)


def coefficients_document(traj: Trajectory, status=None, objective=None,
                          rp_norm=None, rd_norm=None, iterations=None) -> dict:
    doc = {
        "dims": traj.dims,
        "degree": traj.degree,
        "durations": [float(d) for d in traj.durations],
        "segments": [
            {"coefficients": [[float(v) for v in dim_row] for dim_row in seg]}
            for seg in traj.coefficients
        ],
    }
    if status is not None:
        doc["status"] = status
        doc["objective"] = float(objective)
        doc["residuals"] = {"r_p": float(rp_norm), "r_d": float(rd_norm)}
        doc["iterations"] = int(iterations)
    return doc


def save_coefficients(path, traj: Trajectory, **meta):
    with open(path, "w") as fh:
        json.dump(coefficients_document(traj, **meta), fh, indent=2)
        fh.write("\n")


def load_coefficients(path) -> Trajectory:
    with open(path) as fh:
        doc = json.load(fh)
    for key in ("dims", "degree", "durations", "segments"):
        if key not in doc:
            raise SchemaError(key, "missing required key")
    dims, degree = doc["dims"], doc["degree"]
    coeffs = []
    for i, seg in enumerate(doc["segments"]):
        rows = np.asarray(seg["coefficients"], dtype=float)
        if rows.shape != (dims, degree + 1):
            raise SchemaError(f"segments[{i}].coefficients",
                              f"must have shape ({dims}, {degree + 1})")
        coeffs.append(rows)
    return Trajectory(np.array(coeffs), doc["durations"])


SAMPLE_FIELDS = ("p", "v", "a", "j")


def sample_csv_rows(traj: Trajectory, dt: float):
    """Header plus (t, pos, vel, acc, jerk) rows on the global grid."""
    header = ["t"]
    for field in SAMPLE_FIELDS:
        header += [f"{field}{d}" for d in range(traj.dims)]
    yield ",".join(header)
    times = traj.sample_grid(dt)
    values = [traj.eval(times, order=r) for r in range(4)]
    for k, t in enumerate(times):
        row = [repr(float(t))]
        for order in range(4):
            row += [repr(float(x)) for x in values[order][k]]
        yield ",".join(row)
