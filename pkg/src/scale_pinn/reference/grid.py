"""Regular grids of solution values and their binary file format.

Layout::

    #SCALEGRID v1 <problem> <nvars> <ndims> <var_1> ... <var_nvars>\\n
    <axis_1> <n> <lo> <hi> <axis_2> <n> <lo> <hi> ...\\n
    <nvars blocks of prod(n) little-endian float64, row-major over the axes>
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAGIC = "#SCALEGRID"
VERSION = "v1"


class GridFormatError(ValueError):
    """Malformed or inconsistent grid file; ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class FieldGrid:
    problem: str
    axis_names: tuple
    axes: tuple  # uniform, strictly increasing node coordinates per axis
    values: dict  # variable -> ndarray of shape tuple(len(a) for a in axes)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.axis_names = tuple(self.axis_names)
        self.axes = tuple(np.asarray(a, dtype=np.float64) for a in self.axes)
        self.values = {k: np.asarray(v, dtype=np.float64) for k, v in self.values.items()}
        if len(self.axis_names) != len(self.axes):
            raise ValueError("one name per axis required")
        for name, a in zip(self.axis_names, self.axes):
            if a.ndim != 1 or a.size < 2:
                raise ValueError(f"axis {name} needs at least two nodes")
            d = np.diff(a)
            if not np.all(d > 0):
                raise ValueError(f"axis {name} is not strictly increasing")
            if not np.allclose(d, d[0], rtol=1e-9, atol=0.0):
                raise ValueError(f"axis {name} is not uniformly spaced")
        for k, v in self.values.items():
            if v.shape != self.shape:
                raise ValueError(f"variable {k} has shape {v.shape}, grid is {self.shape}")
            if not k or any(c.isspace() for c in k):
                raise ValueError(f"variable name {k!r} must be non-empty without whitespace")

    @property
    def shape(self) -> tuple:
        return tuple(a.size for a in self.axes)

    def axis(self, name):
        return self.axes[self.axis_names.index(name)]


def _span(a):
    # readers rebuild nodes with linspace(lo, hi, n)
    return repr(float(a[0])), repr(float(a[-1]))


def save_field(path, grid: FieldGrid) -> None:
    names = list(grid.values)
    head = f"{MAGIC} {VERSION} {grid.problem} {len(names)} {len(grid.axes)} {' '.join(names)}\n"
    axes = " ".join(f"{n} {a.size} {' '.join(_span(a))}" for n, a in zip(grid.axis_names, grid.axes))
    with open(path, "wb") as fh:
        fh.write(head.encode("ascii"))
        fh.write((axes + "\n").encode("ascii"))
        for k in names:
            fh.write(np.ascontiguousarray(grid.values[k], dtype="<f8").tobytes())


def load_field(path) -> FieldGrid:
    with open(path, "rb") as fh:
        data = fh.read()
    nl1 = data.find(b"\n")
    if nl1 < 0:
        raise GridFormatError("missing header line terminator", len(data))
    tok = data[:nl1].decode("ascii", errors="replace").split()
    if len(tok) < 5 or tok[0] != MAGIC:
        raise GridFormatError("bad magic or short header", 0)
    if tok[1] != VERSION:
        raise GridFormatError(f"unsupported version {tok[1]!r}", len(MAGIC) + 1)
    try:
        nvars, ndims = int(tok[3]), int(tok[4])
    except ValueError:
        raise GridFormatError("non-integer variable or axis count", 0) from None
    if nvars < 1 or ndims < 1 or len(tok) != 5 + nvars:
        raise GridFormatError(f"header declares {nvars} variables but names {len(tok) - 5}", 0)
    names = tok[5:]
    nl2 = data.find(b"\n", nl1 + 1)
    if nl2 < 0:
        raise GridFormatError("missing axis line terminator", len(data))
    at = data[nl1 + 1:nl2].decode("ascii", errors="replace").split()
    if len(at) != 4 * ndims:
        raise GridFormatError(f"axis line needs {4 * ndims} fields, found {len(at)}", nl1 + 1)
    axis_names, axes = [], []
    for i in range(ndims):
        name, n, lo, hi = at[4 * i:4 * i + 4]
        try:
            n, lo, hi = int(n), float(lo), float(hi)
        except ValueError:
            raise GridFormatError(f"bad axis record for {name!r}", nl1 + 1) from None
        if n < 2 or not hi > lo:
            raise GridFormatError(f"degenerate axis {name!r}", nl1 + 1)
        axis_names.append(name)
        axes.append(np.linspace(lo, hi, n))
    shape = tuple(a.size for a in axes)
    count = int(np.prod(shape))
    start = nl2 + 1
    need = start + 8 * count * nvars
    if len(data) < need:
        raise GridFormatError(
            f"truncated payload: expected {need - start} bytes, found {len(data) - start}", len(data))
    if len(data) > need:
        raise GridFormatError(f"{len(data) - need} trailing bytes after payload", need)
    values = {}
    for j, k in enumerate(names):
        off = start + 8 * count * j
        values[k] = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(np.float64).reshape(shape)
    return FieldGrid(tok[2], tuple(axis_names), tuple(axes), values)
