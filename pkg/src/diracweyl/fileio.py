"""Columnar text files for fields and Weyl samples, JSON reports and plot data.

Complex entries are stored as interleaved ``re, im`` columns in row-major
order of the matrix entries.  Numbers are written with 17 significant
digits so that a write/read cycle is bit exact.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .fields import Dimensions, Grid, MatrixField
from .weyl_forward import NONEXPANSIVE_TOL, WeylSampleSet

FMT = "%.17g"


def _parse_header(line: str, path) -> dict:
    if not line.startswith("#"):
        raise InvalidInputError(f"{path}: missing '#' header line")
    out = {}
    for tok in line[1:].split():
        if "=" not in tok:
            raise InvalidInputError(f"{path}: malformed header token {tok!r}")
        k, v = tok.split("=", 1)
        out[k] = v
    return out


def _interleave(values: np.ndarray) -> np.ndarray:
    flat = values.reshape(values.shape[0], -1)
    out = np.empty((flat.shape[0], 2 * flat.shape[1]))
    out[:, 0::2] = flat.real
    out[:, 1::2] = flat.imag
    return out


def _table_text(header: str, table: np.ndarray) -> str:
    lines = [header]
    lines += [" ".join(FMT % a for a in row) for row in table]
    return "\n".join(lines) + "\n"


def _load_table(path, ncols: int) -> tuple[dict, np.ndarray]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise InvalidInputError(f"{path}: empty file")
    header = _parse_header(lines[0], path)
    rows = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rows.append([float(t) for t in line.split()])
        except ValueError as exc:
            raise InvalidInputError(f"{path}:{i}: {exc}") from exc
    if ncols >= 0:
        bad = [i for i, r in enumerate(rows) if len(r) != ncols]
        if bad:
            raise InvalidInputError(f"{path}: row {bad[0] + 1} has {len(rows[bad[0]])} columns, expected {ncols}")
    table = np.array(rows, dtype=float).reshape(len(rows), ncols)
    if not np.all(np.isfinite(table)):
        raise InvalidInputError(f"{path}: non-finite entries")
    return header, table


def field_text(f: MatrixField) -> str:
    g = f.grid
    header = (f"# role={f.role} rows={f.rows} cols={f.cols} l={g.l!r} n={g.n} layout=re,im")
    return _table_text(header, np.column_stack([g.x, _interleave(f.values)]))


def read_field(path) -> MatrixField:
    """Load a field file and check its shape against the header."""
    path = Path(path)
    try:
        first = path.open().readline()
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc}") from exc
    h = _parse_header(first, path)
    try:
        rows, cols, l, n = int(h["rows"]), int(h["cols"]), float(h["l"]), int(h["n"])
    except (KeyError, ValueError) as exc:
        raise InvalidInputError(f"{path}: header needs rows, cols, l, n") from exc
    if h.get("layout", "re,im") != "re,im":
        raise InvalidInputError(f"{path}: unsupported layout {h['layout']}")
    _, table = _load_table(path, 1 + 2 * rows * cols)
    grid = Grid(l, n)
    if table.shape[0] != n + 1:
        raise InvalidInputError(f"{path}: {table.shape[0]} rows, expected n+1 = {n + 1}")
    if not np.allclose(table[:, 0], grid.x, rtol=0, atol=1e-9 * max(1.0, l)):
        raise InvalidInputError(f"{path}: x column does not match the uniform grid")
    vals = (table[:, 1::2] + 1j * table[:, 2::2]).reshape(n + 1, rows, cols)
    return MatrixField(grid, vals, role=h.get("role", "field"))


def samples_text(s: WeylSampleSet) -> str:
    header = f"# m1={s.dims.m1} m2={s.dims.m2} provenance={s.provenance} layout=re,im"
    return _table_text(header, np.column_stack([s.z.real, s.z.imag, _interleave(s.phi)]))


def read_weyl_samples(path, tol: float = NONEXPANSIVE_TOL) -> WeylSampleSet:
    """Load Weyl samples; rejects ``Im z <= 0`` and ``||phi|| > 1 + tol``."""
    path = Path(path)
    try:
        first = path.open().readline()
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc}") from exc
    h = _parse_header(first, path)
    try:
        dims = Dimensions(int(h["m1"]), int(h["m2"]))
    except (KeyError, ValueError) as exc:
        raise InvalidInputError(f"{path}: header needs m1 and m2") from exc
    _, table = _load_table(path, 2 + 2 * dims.m1 * dims.m2)
    if table.shape[0] == 0:
        raise InvalidInputError(f"{path}: no samples")
    z = table[:, 0] + 1j * table[:, 1]
    phi = (table[:, 2::2] + 1j * table[:, 3::2]).reshape(-1, dims.m2, dims.m1)
    return WeylSampleSet(z, phi, dims, provenance="loaded", tol=tol)


def to_jsonable(obj):
    """Recursively convert numpy and complex values for ``json``."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def json_text(report: dict) -> str:
    return json.dumps(to_jsonable(report), sort_keys=True, indent=2) + "\n"


def plot_text(obj) -> str:
    """Columnar plot data for a field or a report.

    A field gives ``x`` followed by ``re``, ``im`` and ``abs`` of every
    entry.  A report must hold an ``x`` array; every other array of the
    same length becomes a column, in sorted key order.
    """
    if isinstance(obj, MatrixField):
        names = ["x"]
        cols = [obj.x]
        for a in range(obj.rows):
            for b in range(obj.cols):
                e = obj.values[:, a, b]
                names += [f"re({a},{b})", f"im({a},{b})", f"abs({a},{b})"]
                cols += [e.real, e.imag, np.abs(e)]
        return _table_text("# " + " ".join(names), np.column_stack(cols))
    if isinstance(obj, dict) and "x" in obj:
        x = np.asarray(obj["x"], dtype=float)
        names, cols = ["x"], [x]
        for k in sorted(obj):
            if k == "x":
                continue
            a = np.asarray(obj[k])
            if a.ndim == 1 and a.size == x.size and np.isrealobj(a):
                names.append(k)
                cols.append(a.astype(float))
        return _table_text("# " + " ".join(names), np.column_stack(cols))
    raise InvalidInputError("plot data needs a field or a report with an 'x' column")


class OutputSet:
    """Collects output files and writes them together.

    Nothing touches the output directory before :meth:`commit`; each file
    is written to a temporary name and renamed into place.
    """

    def __init__(self, directory):
        self.directory = Path(directory)
        self.files: dict[str, str] = {}

    def add(self, name: str, text: str) -> None:
        self.files[name] = text

    def commit(self) -> list[Path]:
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
            written = []
            for name, text in sorted(self.files.items()):
                target = self.directory / name
                fd, tmp = tempfile.mkstemp(dir=self.directory, prefix=".tmp-")
                with os.fdopen(fd, "w") as fh:
                    fh.write(text)
                os.replace(tmp, target)
                written.append(target)
            return written
        except OSError as exc:
            raise InvalidInputError(f"cannot write outputs to {self.directory}: {exc}") from exc


def write_field(path, f: MatrixField) -> None:
    Path(path).write_text(field_text(f))


def write_weyl_samples(path, s: WeylSampleSet) -> None:
    Path(path).write_text(samples_text(s))


def emit_plot_data(path, obj) -> None:
    Path(path).write_text(plot_text(obj))
