"""Dataset CSV files, result/truth JSON files and the result schema."""
import csv
import io
import json
import math
from importlib import resources

import numpy as np

from .exceptions import InputError

__all__ = [
    "write_dataset",
    "read_dataset",
    "dataset_to_csv",
    "result_to_dict",
    "dump_json",
    "load_result_schema",
    "validate_result",
]


def _fmt(x):
    # 17 significant digits round-trip any double exactly
    return "%.17g" % x


def dataset_to_csv(clusters):
    """Render clusters as ``cluster,dim_0,...,dim_{D-1}`` CSV text."""
    clusters = [np.asarray(c, dtype=float) for c in clusters]
    D = clusters[0].shape[0]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["cluster"] + ["dim_%d" % k for k in range(D)])
    for label, c in enumerate(clusters):
        for point in c.T:
            writer.writerow([str(label)] + [_fmt(v) for v in point])
    return buf.getvalue()


def write_dataset(path, clusters):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(dataset_to_csv(clusters))


def read_dataset(path):
    """Parse a dataset CSV into a list of ``D x n_i`` arrays ordered by label.

    Raises
    ------
    InputError
        On a malformed header, ragged rows, unparsable numbers or missing
        cluster labels.
    """
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError("cannot read %s: %s" % (path, exc)) from exc
    if not rows:
        raise InputError("%s is empty" % path)
    header = rows[0]
    D = len(header) - 1
    if D < 1 or header[0].strip() != "cluster" or \
            [h.strip() for h in header[1:]] != ["dim_%d" % k for k in range(D)]:
        raise InputError("%s: header must be cluster,dim_0,...,dim_{D-1}" % path)
    points = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != D + 1:
            raise InputError("%s:%d: expected %d columns, got %d" % (path, lineno, D + 1, len(row)))
        try:
            label = int(row[0])
            values = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise InputError("%s:%d: %s" % (path, lineno, exc)) from exc
        if label < 0:
            raise InputError("%s:%d: negative cluster label" % (path, lineno))
        if not all(math.isfinite(v) for v in values):
            raise InputError("%s:%d: non-finite coordinate" % (path, lineno))
        points.setdefault(label, []).append(values)
    if not points:
        raise InputError("%s has no data rows" % path)
    S = max(points) + 1
    missing = [k for k in range(S) if k not in points]
    if missing:
        raise InputError("%s: cluster labels %s have no points" % (path, missing))
    return [np.array(points[k], dtype=float).T for k in range(S)]


def result_to_dict(result, config, metrics=None, diagnostics=None):
    """JSON-ready dict for an :class:`~hiwa.solver.AlignmentResult`."""
    out = {
        "R": np.asarray(result.R).tolist(),
        "P": np.asarray(result.P).tolist(),
        "objective_trace": [float(v) for v in result.objective_trace],
        "primal_residual_trace": [float(v) for v in result.primal_residual_trace],
        "iterations": int(result.iterations),
        "converged": bool(result.converged),
        "det_R": int(result.det_R),
        "wall_time_sec": float(result.wall_time),
        "config": config.to_dict(),
        "seed": int(config.seed),
        "gamma1": float(result.gamma1),
        "gamma2": float(result.gamma2),
        "mode": result.mode,
        "sinkhorn_failures": int(result.sinkhorn_failures),
        "degenerate_svd": bool(result.degenerate_svd),
    }
    if metrics is not None:
        out["metrics"] = metrics.to_dict()
    if diagnostics is not None:
        out["diagnostics"] = diagnostics
    return out


def dump_json(obj, fh=None):
    """Serialize with round-trip float repr; non-finite numbers are rejected."""
    text = json.dumps(obj, indent=2, allow_nan=False) + "\n"
    if fh is not None:
        fh.write(text)
    return text


def load_result_schema():
    ref = resources.files("hiwa").joinpath("schemas/result.schema.json")
    return json.loads(ref.read_text(encoding="utf-8"))


def validate_result(obj):
    """Raise ``jsonschema.ValidationError`` if ``obj`` is not a valid result file."""
    import jsonschema

    jsonschema.validate(obj, load_result_schema())
