"""CSV ingestion and tabular output.

Files are RFC 4180 CSV (comma separated, UTF-8, header row required).
There is no missing-value sentinel: an empty field is an error.
"""

from __future__ import annotations

import csv
import enum
import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ..core import ActionSchema, Column, Dataset, StandardizationParams, Task, VcmModel
from ..errors import DataError


class Role(str, enum.Enum):
    PREDICTIVE = "predictive"
    ACTION = "action"
    RESPONSE = "response"
    IGNORE = "ignore"


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    role: Role


def column_specs(y: str, z: Sequence[str], x: Sequence[str] = ()) -> list[ColumnSpec]:
    specs = [ColumnSpec(y, Role.RESPONSE)]
    specs += [ColumnSpec(c, Role.PREDICTIVE) for c in x]
    specs += [ColumnSpec(c, Role.ACTION) for c in z]
    return specs


def _read(path) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh, strict=True))
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    except (csv.Error, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: missing header row")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    for k, row in enumerate(body):
        if len(row) != len(header):
            raise DataError(f"{path}: line {k + 2} has {len(row)} fields, header has {len(header)}")
    return header, body


def _column(header, body, name, path) -> list[str]:
    try:
        c = header.index(name)
    except ValueError:
        raise DataError(f"{path}: unknown column {name!r}") from None
    out = []
    for k, row in enumerate(body):
        v = row[c].strip()
        if v == "":
            raise DataError(f"{path}: missing value in column {name!r} at line {k + 2}")
        out.append(v)
    return out


def _numbers(values, name, path) -> np.ndarray:
    out = np.empty(len(values))
    for k, v in enumerate(values):
        try:
            out[k] = float(v)
        except ValueError:
            raise DataError(f"{path}: non-numeric value {v!r} in column {name!r} at line {k + 2}") from None
        if not math.isfinite(out[k]):
            raise DataError(f"{path}: non-finite value {v!r} in column {name!r} at line {k + 2}")
    return out


def _try_numbers(values) -> np.ndarray | None:
    try:
        out = np.array([float(v) for v in values])
    except ValueError:
        return None
    return out if np.all(np.isfinite(out)) else None


def load_csv(path, specs: Sequence[ColumnSpec], task: Task | str = Task.REGRESSION,
             categorical: Iterable[str] = (), standardize: bool = True) -> Dataset:
    """Read a dataset.

    Numeric action columns become continuous unless listed in
    ``categorical``; other action columns become categorical with levels in
    order of first appearance.  With ``standardize`` the returned dataset
    carries standardization parameters fitted on its predictive columns.
    """
    task = Task(task)
    header, body = _read(path)
    if not body:
        raise DataError(f"{path}: no data rows")
    roles = {}
    for s in specs:
        if s.name not in header:
            raise DataError(f"{path}: unknown column {s.name!r}")
        if s.name in roles:
            raise DataError(f"column {s.name!r} given more than one role")
        roles[s.name] = Role(s.role)
    response = [n for n, r in roles.items() if r is Role.RESPONSE]
    if len(response) != 1:
        raise DataError("exactly one response column is required")
    x_names = [s.name for s in specs if Role(s.role) is Role.PREDICTIVE]
    z_names = [s.name for s in specs if Role(s.role) is Role.ACTION]
    if not z_names:
        raise DataError("at least one action column is required")
    forced = set(categorical)
    unknown = forced - set(z_names)
    if unknown:
        raise DataError(f"categorical override names non-action columns: {sorted(unknown)}")

    n = len(body)
    y = _numbers(_column(header, body, response[0], path), response[0], path)
    if task is Task.CLASSIFICATION and not np.all((y == 0) | (y == 1)):
        bad = int(np.flatnonzero((y != 0) & (y != 1))[0])
        raise DataError(f"{path}: response must be 0 or 1, line {bad + 2} has {y[bad]:g}")
    x = np.ones((n, 1 + len(x_names)))
    for k, name in enumerate(x_names):
        x[:, k + 1] = _numbers(_column(header, body, name, path), name, path)
    z = np.empty((n, len(z_names)))
    cols = []
    for k, name in enumerate(z_names):
        raw = _column(header, body, name, path)
        nums = None if name in forced else _try_numbers(raw)
        if nums is not None:
            z[:, k] = nums
            cols.append(Column(name))
        else:
            levels = tuple(dict.fromkeys(raw))
            lookup = {v: i for i, v in enumerate(levels)}
            z[:, k] = [lookup[v] for v in raw]
            cols.append(Column(name, levels))
    data = Dataset(x, z, y, task, ActionSchema(tuple(cols)), x_names=tuple(x_names), y_name=response[0])
    return data.standardized() if standardize else data


def read_for_model(path, model: VcmModel) -> tuple[np.ndarray, np.ndarray, list[str], list[list[str]]]:
    """Raw design and action codes for a model's columns, plus the parsed table.

    Categorical levels absent from the model schema get code -1 and are
    routed by the model's unseen-level policy.
    """
    header, body = _read(path)
    if not body:
        raise DataError(f"{path}: no data rows")
    n = len(body)
    x = np.ones((n, 1 + len(model.x_names)))
    for k, name in enumerate(model.x_names):
        x[:, k + 1] = _numbers(_column(header, body, name, path), name, path)
    z = _action_rows(header, body, model.schema, path)
    return x, z, header, body


def _action_rows(header, body, schema: ActionSchema, path) -> np.ndarray:
    z = np.empty((len(body), len(schema)))
    for k, col in enumerate(schema.columns):
        raw = _column(header, body, col.name, path)
        if col.categorical:
            z[:, k] = [col.code(v) for v in raw]
        else:
            z[:, k] = _numbers(raw, col.name, path)
    return z


def read_action_rows(path, schema: ActionSchema) -> np.ndarray:
    header, body = _read(path)
    return _action_rows(header, body, schema, path)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def save_dataset(data: Dataset, path, truth: bool = False):
    """Write a dataset as CSV; ``truth`` appends ``beta_true_0..p`` columns."""
    header = [data.y_name, *data.x_names, *data.schema.names]
    if truth:
        if data.truth is None:
            raise DataError("dataset has no ground truth to write")
        header += [f"beta_true_{j}" for j in range(data.p + 1)]
    rows = []
    for i in range(data.n):
        row = [float(data.y[i]), *map(float, data.x[i, 1:])]
        for j, col in enumerate(data.schema.columns):
            v = data.z[i, j]
            row.append(col.levels[int(v)] if col.categorical else float(v))
        if truth:
            row += list(map(float, data.truth[i]))
        rows.append(row)
    write_csv(path, header, rows)


# ---- coefficient surfaces --------------------------------------------------

def parse_grid(spec: str, schema: ActionSchema) -> np.ndarray:
    """Expand ``name=start:stop:step`` terms joined by commas into action rows.

    Categorical columns take ``name=a|b|c``.  Endpoints are inclusive within
    1e-9.  Every schema column must appear; the first column varies slowest.
    """
    axes = {}
    for term in filter(None, (t.strip() for t in spec.split(","))):
        if "=" not in term:
            raise DataError(f"bad grid term {term!r}")
        name, rng = (s.strip() for s in term.split("=", 1))
        if name not in schema.names:
            raise DataError(f"grid names unknown action column {name!r}")
        col = schema.columns[schema.names.index(name)]
        if col.categorical:
            codes = [col.code(v) for v in rng.split("|")]
            if -1 in codes:
                raise DataError(f"grid lists a level unknown to column {name!r}")
            axes[name] = np.array(codes, dtype=float)
            continue
        try:
            start, stop, step = (float(v) for v in rng.split(":"))
        except ValueError:
            raise DataError(f"bad range {rng!r}; expected start:stop:step") from None
        if not step > 0 or stop < start:
            raise DataError(f"bad range {rng!r}")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        axes[name] = start + step * np.arange(count)
    missing = [n for n in schema.names if n not in axes]
    if missing:
        raise DataError(f"grid does not cover action columns {missing}")
    return np.array(list(itertools.product(*(axes[n] for n in schema.names))), dtype=float)


def coefficient_header(model: VcmModel) -> list[str]:
    return [*model.schema.names, *(f"beta_{j}" for j in range(model.p + 1))]


def export_coefficients(model: VcmModel, z, path, raw: bool = True):
    """Write action columns followed by the fitted coefficients at each row."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    beta = np.atleast_2d(model.coefficient_at(z, raw=raw))
    rows = []
    for i in range(z.shape[0]):
        row = []
        for j, col in enumerate(model.schema.columns):
            v = z[i, j]
            row.append(col.levels[int(v)] if col.categorical and 0 <= v < len(col.levels) else float(v))
        rows.append(row + list(map(float, beta[i])))
    write_csv(path, coefficient_header(model), rows)
    return beta
