"""Text and binary dumps for fields and dense operators, plus sidecars and CSV."""

from __future__ import annotations

import csv
import io
import struct
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .grid import Grid, ScalarField

GRID_MAGIC = b"HLGRID01"
MAT_MAGIC = b"HLMAT01\0"


def _fmt(x: float) -> str:
    return repr(float(x))


def grid_dump_text(field: ScalarField) -> str:
    g = field.grid
    lines = [f"grid {g.n} {_fmt(g.h)} {_fmt(g.x0)} {_fmt(g.y0)} {_fmt(g.width)} {_fmt(g.height)}"]
    v = field.values
    for i in range(g.n):
        for j in range(g.n):
            z = v[i, j]
            lines.append(f"{i} {j} {_fmt(z.real)} {_fmt(z.imag)}")
    return "\n".join(lines) + "\n"


def read_grid_text(text: str) -> ScalarField:
    rows = [r for r in text.strip().splitlines() if not r.startswith("#")]
    head = rows[0].split()
    if head[0] != "grid":
        raise ValueError("missing grid header")
    n = int(head[1])
    h, x0, y0, w, hr = map(float, head[2:7])
    g = Grid(n=n, h=h, x0=x0, y0=y0, width=w, height=hr)
    vals = np.zeros((n, n), dtype=complex)
    for r in rows[1:]:
        i, j, re, im = r.split()
        vals[int(i), int(j)] = complex(float(re), float(im))
    return ScalarField(g, vals)


def grid_dump_binary(field: ScalarField) -> bytes:
    """Magic, ``n`` as int64, five float64 geometry values, then interleaved re/im row-major."""
    g = field.grid
    head = GRID_MAGIC + struct.pack("<q5d", g.n, g.h, g.x0, g.y0, g.width, g.height)
    body = np.ascontiguousarray(field.values, dtype="<c16").tobytes()
    return head + body


def read_grid_binary(data: bytes) -> ScalarField:
    if data[:8] != GRID_MAGIC:
        raise ValueError("bad grid magic")
    n, h, x0, y0, w, hr = struct.unpack("<q5d", data[8:56])
    vals = np.frombuffer(data[56:], dtype="<c16").reshape(n, n).copy()
    return ScalarField(Grid(n=n, h=h, x0=x0, y0=y0, width=w, height=hr), vals)


def matrix_dump_binary(matrix: np.ndarray, row_map: np.ndarray, col_map: np.ndarray) -> bytes:
    m, k = matrix.shape
    out = io.BytesIO()
    out.write(MAT_MAGIC)
    out.write(struct.pack("<qq", m, k))
    out.write(np.asarray(row_map, dtype="<i8").tobytes())
    out.write(np.asarray(col_map, dtype="<i8").tobytes())
    out.write(np.asfortranarray(matrix, dtype="<c16").tobytes(order="F"))
    return out.getvalue()


def read_matrix_binary(data: bytes):
    if data[:8] != MAT_MAGIC:
        raise ValueError("bad matrix magic")
    m, k = struct.unpack("<qq", data[8:24])
    off = 24
    rows = np.frombuffer(data[off:off + 8 * m], dtype="<i8").copy()
    off += 8 * m
    cols = np.frombuffer(data[off:off + 8 * k], dtype="<i8").copy()
    off += 8 * k
    mat = np.frombuffer(data[off:], dtype="<c16").reshape((m, k), order="F").copy()
    return mat, rows, cols


def sidecar_text(items: Mapping[str, object]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in items.items())


def read_sidecar(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if "=" in line and not line.lstrip().startswith("#"):
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def csv_text(header: Iterable[str], rows: Iterable[Iterable[object]], comment: str | None = None) -> str:
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(header))
    for r in rows:
        w.writerow([_fmt(x) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def write_field(path: Path, field: ScalarField) -> None:
    path = Path(path)
    path.with_suffix(".txt").write_text(grid_dump_text(field))
    path.with_suffix(".bin").write_bytes(grid_dump_binary(field))
