"""Reverse accumulation over a recorded operation tape.

Nodes hold ndarray values.  Operations accept a mix of :class:`Var` and plain
arrays; when no operand is a ``Var`` they just compute with numpy and nothing
is recorded, which lets the same model code run taped (current weights) or
untaped (snapshot weights, evaluation grids).
"""
from __future__ import annotations

import numpy as np

from .fused import KIND_CODES, activation_backward, activation_forward
from .jet import ACTIVATIONS, ConfigurationError, activation_derivatives, faa_di_bruno

# use the compiled activation kernels; the numpy path is kept as the reference
FUSED = True


class TapeError(RuntimeError):
    pass


class Var:
    __slots__ = ("tape", "id")
    __array_priority__ = 100.0

    def __init__(self, tape: "Tape", id: int):
        self.tape = tape
        self.id = id

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.id]

    @property
    def shape(self):
        return np.shape(self.value)

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        if isinstance(o, Var):
            raise TypeError("division by a Var is not supported")
        return mul(self, 1.0 / np.asarray(o, dtype=np.float64))

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, k):
        if k == 2:
            return mul(self, self)
        if k == 3:
            return mul(mul(self, self), self)
        raise TypeError("only integer powers 2 and 3 are supported")

    def __repr__(self):
        return f"Var(id={self.id}, shape={self.shape})"


class Tape:
    """Append-only list of nodes; ids are topologically ordered by construction."""

    def __init__(self):
        self.values: list = []
        self.parents: list = []
        self.vjps: list = []
        self.kinds: list = []
        self.param_slots: dict[int, tuple[int, int]] = {}  # node id -> (offset, size)
        self.n_params = 0
        self.finalized = False
        self.visits = 0
        self._bound: dict[int, dict] = {}

    def __len__(self):
        return len(self.values)

    def record(self, kind, value, parents=(), vjp=None) -> Var:
        if self.finalized:
            raise TapeError("cannot record on a finalized tape")
        for p in parents:
            if p is not None and p >= len(self.values):
                raise TapeError("node input does not precede it")
        self.values.append(value)
        self.parents.append(tuple(parents))
        self.vjps.append(vjp)
        self.kinds.append(kind)
        return Var(self, len(self.values) - 1)

    def const(self, value) -> Var:
        """A leaf that never receives an adjoint slot."""
        return self.record("const", np.asarray(value, dtype=np.float64))

    def param(self, value, offset: int | None = None) -> Var:
        """A differentiable leaf; ``offset`` is its position in the flat gradient."""
        value = np.asarray(value, dtype=np.float64)
        if offset is None:
            offset = self.n_params
        v = self.record("param", value)
        self.param_slots[v.id] = (offset, value.size)
        self.n_params = max(self.n_params, offset + value.size)
        return v

    def bind(self, params) -> dict:
        """Register every array of a ParameterSet as param leaves (once per tape)."""
        key = id(params)
        if key not in self._bound:
            self._bound[key] = (params, {
                name: self.param(arr, off) for name, (arr, off) in params.named_offsets().items()
            })
        return self._bound[key][1]

    def finalize(self):
        self.finalized = True
        return self

    def release(self):
        """Drop node storage.  Vars and vjp closures point back at the tape, so
        without this a used tape waits for the cyclic collector."""
        self.values, self.parents, self.vjps, self.kinds = [], [], [], []
        self._bound.clear()

    def backward(self, loss: Var) -> dict:
        """Adjoints of every node reachable backwards from ``loss`` (id -> array)."""
        if not self.finalized:
            raise TapeError("tape must be finalized before the backward sweep")
        if loss.tape is not self:
            raise TapeError("loss node belongs to another tape")
        if np.size(loss.value) != 1:
            raise TapeError("backward needs a scalar loss node")
        adj: list = [None] * (loss.id + 1)
        adj[loss.id] = np.ones_like(loss.value)
        self.visits = 0
        for i in range(loss.id, -1, -1):
            g = adj[i]
            if g is None:
                continue
            self.visits += 1
            parents = self.parents[i]
            if not parents:
                continue
            need = tuple(p is not None for p in parents)
            grads = self.vjps[i](g, need)
            for p, gp in zip(parents, grads):
                if p is None or gp is None:
                    continue
                if adj[p] is None:
                    adj[p] = gp
                else:
                    adj[p] = adj[p] + gp
        return {i: adj[i] for i in range(len(adj)) if adj[i] is not None}


def tape_backward(tape: Tape, loss: Var) -> np.ndarray:
    """Flat gradient of ``loss`` over all param leaves; untouched params get 0."""
    adj = tape.backward(loss)
    grad = np.zeros(tape.n_params)
    for nid, (off, size) in tape.param_slots.items():
        g = adj.get(nid)
        if g is not None:
            grad[off: off + size] += np.ravel(g)
    return grad


# -- op plumbing --------------------------------------------------------------

def _tape_of(*xs):
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is not None and x.tape is not tape:
                raise TapeError("operands live on different tapes")
            tape = x.tape
    return tape


def _val(x):
    return x.value if isinstance(x, Var) else x


def _pid(x):
    return x.id if isinstance(x, Var) else None


def _unbroadcast(g, shape):
    if np.shape(g) == tuple(shape):
        return g
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b):
    va, vb = _val(a), _val(b)
    out = va + vb
    tape = _tape_of(a, b)
    if tape is None:
        return out
    sa, sb = np.shape(va), np.shape(vb)
    return tape.record("add", out, (_pid(a), _pid(b)),
                       lambda g, need: (_unbroadcast(g, sa) if need[0] else None,
                                        _unbroadcast(g, sb) if need[1] else None))


def sub(a, b):
    va, vb = _val(a), _val(b)
    out = va - vb
    tape = _tape_of(a, b)
    if tape is None:
        return out
    sa, sb = np.shape(va), np.shape(vb)
    return tape.record("sub", out, (_pid(a), _pid(b)),
                       lambda g, need: (_unbroadcast(g, sa) if need[0] else None,
                                        _unbroadcast(-g, sb) if need[1] else None))


def mul(a, b):
    va, vb = _val(a), _val(b)
    out = va * vb
    tape = _tape_of(a, b)
    if tape is None:
        return out
    sa, sb = np.shape(va), np.shape(vb)
    return tape.record("mul", out, (_pid(a), _pid(b)),
                       lambda g, need: (_unbroadcast(g * vb, sa) if need[0] else None,
                                        _unbroadcast(g * va, sb) if need[1] else None))


def sin(a):
    va = _val(a)
    out = np.sin(va)
    tape = _tape_of(a)
    if tape is None:
        return out
    return tape.record("sin", out, (a.id,), lambda g, need: (g * np.cos(va),))


def total(a):
    """Sum of all entries."""
    va = _val(a)
    out = np.sum(va)
    tape = _tape_of(a)
    if tape is None:
        return out
    shape = np.shape(va)
    return tape.record("sum", out, (a.id,), lambda g, need: (np.broadcast_to(g, shape).copy(),))


def mean_square(a):
    """Mean of squared entries (the batch mean-square loss)."""
    va = _val(a)
    n = np.size(va)
    out = np.dot(np.ravel(va), np.ravel(va)) / n
    tape = _tape_of(a)
    if tape is None:
        return out
    return tape.record("mean_square", np.float64(out), (a.id,),
                       lambda g, need: ((2.0 * g / n) * va,))


def take(a, index):
    """``a[index]`` with a scatter-add adjoint."""
    va = _val(a)
    out = va[index]
    tape = _tape_of(a)
    if tape is None:
        return out
    shape = va.shape

    def vjp(g, need):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return tape.record("take", out, (a.id,), vjp)


def concat_last(parts):
    """Concatenate along the last axis."""
    vals = [_val(p) for p in parts]
    out = np.concatenate(vals, axis=-1)
    tape = _tape_of(*parts)
    if tape is None:
        return out
    bounds = np.cumsum([0] + [v.shape[-1] for v in vals])

    def vjp(g, need):
        return tuple(g[..., bounds[i]:bounds[i + 1]] if need[i] else None for i in range(len(vals)))

    return tape.record("concat", out, tuple(_pid(p) for p in parts), vjp)


# -- fused jet nodes ------------------------------------------------------------

def jet_affine(J, W, b=None, scale: float = 1.0):
    """Affine map applied to a stacked jet ``J`` of shape (planes, batch, n_in).

    Plane 0 holds values and receives the bias; derivative planes are mapped
    linearly.  Result: ``scale * (J @ W + [b, 0, ...])``.
    """
    vJ, vW = _val(J), _val(W)
    vb = _val(b) if b is not None else None
    P_, B, n_in = vJ.shape
    n_out = vW.shape[1]
    flat = vJ.reshape(P_ * B, n_in)
    out = flat @ vW
    if vb is not None:
        out[:B] += vb
    out = out.reshape(P_, B, n_out)
    if scale != 1.0:
        out *= scale
    tape = _tape_of(J, W, b)
    if tape is None:
        return out

    def vjp(g, need):
        gs = g * scale if scale != 1.0 else g
        g2 = gs.reshape(P_ * B, n_out)
        dJ = (g2 @ vW.T).reshape(P_, B, n_in) if need[0] else None
        dW = flat.T @ g2 if need[1] else None
        db = gs[0].sum(axis=0) if len(need) > 2 and need[2] else None
        return dJ, dW, db

    parents = (_pid(J), _pid(W)) + ((_pid(b),) if b is not None else ())
    return tape.record("jet_affine", out, parents, vjp)


def jet_affine_concat(parts, W):
    """``concat_last(parts) @ W`` on stacked jets without building the concatenation."""
    vals = [_val(q) for q in parts]
    vW = _val(W)
    bounds = np.cumsum([0] + [v.shape[-1] for v in vals])
    if bounds[-1] != vW.shape[0]:
        raise ConfigurationError("concatenated width does not match the weight matrix")
    P_, B = vals[0].shape[:2]
    n_out = vW.shape[1]
    flats = [v.reshape(P_ * B, v.shape[-1]) for v in vals]
    out = flats[0] @ vW[bounds[0]:bounds[1]]
    for i in range(1, len(vals)):
        out += flats[i] @ vW[bounds[i]:bounds[i + 1]]
    out = out.reshape(P_, B, n_out)
    tape = _tape_of(*parts, W)
    if tape is None:
        return out

    def vjp(g, need):
        g2 = g.reshape(P_ * B, n_out)
        grads = [(g2 @ vW[bounds[i]:bounds[i + 1]].T).reshape(vals[i].shape) if need[i] else None
                 for i in range(len(vals))]
        dW = None
        if need[-1]:
            dW = np.empty_like(vW)
            for i, f in enumerate(flats):
                dW[bounds[i]:bounds[i + 1]] = f.T @ g2
        return tuple(grads) + (dW,)

    return tape.record("jet_affine_concat", out, tuple(_pid(q) for q in parts) + (_pid(W),), vjp)


def _blocks(layout):
    """Plane index ranges of each axis block: layout (o1, o2, ..) -> [(1, 1+o1), ...]."""
    start, out = 1, []
    for o in layout:
        out.append((start, start + o))
        start += o
    return out


def jet_activation(J, kind: str, layout, fused: bool | None = None):
    """Elementwise activation of a multi-axis jet.

    ``layout`` gives the derivative order carried for each input axis; plane 0
    is the shared value and each axis owns a contiguous block of planes.
    ``fused`` selects the compiled kernel (default: module setting ``FUSED``).
    """
    if fused if fused is not None else FUSED:
        return _jet_activation_fused(J, kind, layout)
    vJ = _val(J)
    blocks = _blocks(layout)
    top = max(layout, default=0)
    a0 = vJ[0]
    d = activation_derivatives(kind, a0, top + 1)
    out = np.empty_like(vJ)
    out[0] = d[0]
    for lo, hi in blocks:
        if hi > lo:
            out[lo:hi] = faa_di_bruno(d[1:], list(vJ[lo:hi]))
    tape = _tape_of(J)
    if tape is None:
        return out

    def vjp(g, need):
        gJ = np.empty_like(vJ)
        ga0 = g[0] * d[1]
        for lo, hi in blocks:
            k = hi - lo
            if k == 0:
                continue
            a = list(vJ[lo:hi])
            gy = g[lo:hi]
            # d y_m / d a0: same Faa di Bruno sum with every psi^(j) raised one order
            shifted = faa_di_bruno(d[2:], a)
            for m in range(k):
                ga0 = ga0 + gy[m] * shifted[m]
            gJ[lo:hi] = _fdb_input_adjoint(d, a, gy)
        gJ[0] = ga0
        return (gJ,)

    return tape.record("jet_activation", out, (J.id,), vjp)


def _jet_activation_fused(J, kind, layout):
    if kind not in KIND_CODES:
        raise ConfigurationError(f"unsupported activation {kind!r}; expected one of {ACTIVATIONS}")
    vJ = np.ascontiguousarray(_val(J), dtype=np.float64)
    blocks = _blocks(layout)
    lo = np.array([b[0] for b in blocks], dtype=np.int64)
    ln = np.array([b[1] - b[0] for b in blocks], dtype=np.int64)
    top = max(layout, default=0)
    out, D = activation_forward(KIND_CODES[kind], vJ, lo, ln, top)
    tape = _tape_of(J)
    if tape is None:
        return out

    def vjp(g, need):
        return (activation_backward(D, vJ, np.ascontiguousarray(g), lo, ln),)

    return tape.record("jet_activation", out, (J.id,), vjp)


def _fdb_input_adjoint(d, a, gy):
    """Adjoints of a1..ak for the Faa di Bruno outputs y1..yk."""
    k = len(a)
    p1, p2 = d[1], d[2] if k >= 2 else None
    out = []
    # d/da1
    t = gy[0] * p1
    if k >= 2:
        t = t + gy[1] * (2.0 * p2 * a[0])
    if k >= 3:
        t = t + gy[2] * (3.0 * d[3] * a[0] * a[0] + 3.0 * p2 * a[1])
    if k >= 4:
        t = t + gy[3] * (4.0 * d[4] * a[0] ** 3 + 12.0 * d[3] * a[0] * a[1] + 4.0 * p2 * a[2])
    out.append(t)
    if k >= 2:
        t = gy[1] * p1
        if k >= 3:
            t = t + gy[2] * (3.0 * p2 * a[0])
        if k >= 4:
            t = t + gy[3] * (6.0 * d[3] * a[0] * a[0] + 6.0 * p2 * a[1])
        out.append(t)
    if k >= 3:
        t = gy[2] * p1
        if k >= 4:
            t = t + gy[3] * (4.0 * p2 * a[0])
        out.append(t)
    if k >= 4:
        out.append(gy[3] * p1)
    return out
