"""File formats: canonical JSON writing validated against the shipped schemas,
plus the smoothed-sample CSV used between pipeline stages.

JSON output is canonical (sorted keys, repr floats) so reruns with identical
inputs are byte-identical. Non-finite numbers are serialized as the strings
"inf", "-inf", and "nan" to keep the files standard JSON.
"""

from __future__ import annotations

import csv
import json
import math
from importlib import resources

import numpy as np
from jsonschema import validate as _validate_schema

from .datamodel import Grid
from .errors import InputError, IoFailure
from .splinefit import GroupFit


def jsonable(value):
    """Recursively convert numpy containers to JSON-safe plain Python."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        f = float(value)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    return value


def _schema(name: str) -> dict:
    path = resources.files("fdaselect").joinpath(f"schemas/{name}.schema.json")
    return json.loads(path.read_text())


def validate_payload(obj: dict, schema_name: str) -> None:
    _validate_schema(obj, _schema(schema_name))


def write_json(obj: dict, path, schema_name: str | None = None) -> None:
    payload = jsonable(obj)
    if schema_name is not None:
        validate_payload(payload, schema_name)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1, allow_nan=False)
            fh.write("\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from exc


SMOOTHED_HEADER = ["curve_id", "group", "t", "value", "order", "smoothed_value"]


def write_smoothed_csv(samples, grid: Grid, raw_values: np.ndarray, path) -> None:
    """Long CSV of smoothed values: the dataset columns plus order and
    smoothed_value; rows exist only where the order's mask is defined."""
    pts = grid.points
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SMOOTHED_HEADER)
        for i, s in enumerate(samples):
            for order in range(s.values.shape[0]):
                for j in np.flatnonzero(s.masks[order]):
                    raw = raw_values[i, j]
                    writer.writerow(
                        [
                            s.curve_id,
                            s.group_id,
                            repr(float(pts[j])),
                            repr(float(raw)) if np.isfinite(raw) else "nan",
                            order,
                            repr(float(s.values[order, j])),
                        ]
                    )


def read_smoothed_csv(path):
    """Parse a smoothed CSV into per-order value/mask matrices.

    Returns (grid, labels, group_ids, y_by_order, masks_by_order).
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != SMOOTHED_HEADER:
            raise InputError(f"{path}: expected header {','.join(SMOOTHED_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 6:
                raise InputError(f"{path}:{lineno}: expected 6 columns")
            try:
                rows.append((row[0], row[1], float(row[2]), int(row[4]), float(row[5])))
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise InputError(f"{path}: no data rows")
    grid = Grid(np.unique([r[2] for r in rows]))
    t_index = {float(t): j for j, t in enumerate(grid.points.tolist())}
    curve_order: dict[tuple[str, str], int] = {}
    orders = sorted({r[3] for r in rows})
    if orders != list(range(len(orders))):
        raise InputError(f"{path}: derivative orders must be 0..L, found {orders}")
    for cid, gid, _, _, _ in rows:
        curve_order.setdefault((cid, gid), len(curve_order))
    n = len(curve_order)
    y_by_order = {o: np.full((n, grid.m), np.nan) for o in orders}
    masks_by_order = {o: np.zeros((n, grid.m), dtype=bool) for o in orders}
    for cid, gid, t, order, sval in rows:
        i = curve_order[(cid, gid)]
        j = t_index[t]
        y_by_order[order][i, j] = sval
        masks_by_order[order][i, j] = True
    labels = np.array([gid for (_, gid) in curve_order])
    group_ids = list(dict.fromkeys(labels.tolist()))
    return grid, labels, group_ids, y_by_order, masks_by_order


def fits_payload(fits: dict[tuple[str, int], GroupFit], grid: Grid, delta: float,
                 penalty_kind: str = "difference") -> dict:
    entries = []
    for (gid, order) in sorted(fits):
        gf = fits[(gid, order)]
        entries.append(
            {
                "group": gid,
                "order": order,
                "interior_knots": gf.n_interior,
                "lambda": gf.lam,
                "knot_vector": gf.knot_vector,
                "coef": gf.coef,
                "grid_values": gf.grid_values,
                "iterations": gf.iterations,
                "converged": gf.converged,
                "final_objective": float(gf.objective_history[-1]),
            }
        )
    degree = next(iter(fits.values())).degree if fits else 3
    return {
        "grid": grid.points,
        "domain": list(grid.domain),
        "delta": delta,
        "degree": degree,
        "penalty_kind": penalty_kind,
        "fits": entries,
    }


def fits_from_payload(payload: dict) -> tuple[dict[tuple[str, int], GroupFit], Grid, float]:
    grid = Grid(np.array(payload["grid"]), domain=tuple(payload["domain"]))
    delta = float(payload["delta"])
    degree = int(payload["degree"])
    fits: dict[tuple[str, int], GroupFit] = {}
    for e in payload["fits"]:
        gf = GroupFit(
            group_id=e["group"],
            order=int(e["order"]),
            n_interior=int(e["interior_knots"]),
            knot_vector=np.array(e["knot_vector"], dtype=float),
            degree=degree,
            lam=float(e["lambda"]),
            delta=delta,
            coef=np.array(e["coef"], dtype=float),
            grid_values=np.array(e["grid_values"], dtype=float),
            iterations=int(e["iterations"]),
            converged=bool(e["converged"]),
            objective_history=np.array([e["final_objective"]], dtype=float),
        )
        fits[(gf.group_id, gf.order)] = gf
    return fits, grid, delta


def report_payload(pvals, report, grid: Grid) -> dict:
    return {
        "alpha": report.alpha,
        "correction": report.method,
        "alpha_star": report.alpha_star,
        "B": pvals.B,
        "orders": list(report.orders),
        "grid": grid.points,
        "p_unadjusted": pvals.unadjusted,
        "p_adjusted": pvals.adjusted,
        "selected_by_order": [idx for idx in report.selected_by_order],
        "selected": report.selected,
        "intervals": [list(iv) for iv in report.intervals],
        "metadata": report.metadata,
    }


def esmap_payload(effect_maps: dict, grid: Grid, R: int, seed: int) -> dict:
    return {
        "grid": grid.points,
        "R": R,
        "seed": seed,
        "orders": [
            {
                "order": order,
                "fsnr_sq": emap.fsnr_sq,
                "ladder": emap.ladder,
                "matrix": emap.matrix,
                "symmetric": emap.symmetric,
            }
            for order, emap in sorted(effect_maps.items())
        ],
    }


def write_matrix_csv(emap, grid: Grid, path) -> None:
    """Effect-size matrix as CSV: one row per ladder width, columns are t."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["width"] + [repr(float(t)) for t in grid.points])
        for r, width in enumerate(emap.ladder):
            writer.writerow(
                [repr(float(width))]
                + [repr(float(v)) if np.isfinite(v) else "inf" for v in emap.matrix[r]]
            )
