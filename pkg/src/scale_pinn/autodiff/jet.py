"""Truncated Taylor jets along one input axis.

A jet stores ``(value, d1, d2, d3, d4)``: a quantity and its derivatives with
respect to a single input coordinate.  Coefficients are plain derivatives (not
divided by factorials).  Every slot may be a float or an ndarray, so one jet can
carry a whole batch of points.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.special import expit

MAX_ORDER = 4
ACTIVATIONS = ("sin", "silu", "softplus")


class ConfigurationError(ValueError):
    """Invalid user-facing configuration (orders, kinds, shapes)."""


class JetError(RuntimeError):
    """Internal inconsistency between jets (mismatched orders)."""


def _check_order(order: int) -> int:
    if not isinstance(order, (int, np.integer)) or not 0 <= order <= MAX_ORDER:
        raise ConfigurationError(f"jet order must be an integer in [0, {MAX_ORDER}], got {order!r}")
    return int(order)


@dataclass
class Jet:
    coeffs: np.ndarray  # shape (MAX_ORDER + 1, *batch)
    order: int

    def __post_init__(self):
        self.order = _check_order(self.order)
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.shape[0] != MAX_ORDER + 1:
            raise JetError(f"jet needs {MAX_ORDER + 1} coefficient slots, got {self.coeffs.shape[0]}")
        self.coeffs[self.order + 1:] = 0.0

    @property
    def value(self):
        return self.coeffs[0]

    def deriv(self, k: int):
        return self.coeffs[k]

    def __add__(self, other):
        return jet_combine("add", self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return jet_combine("sub", self, other)

    def __mul__(self, other):
        if isinstance(other, Jet):
            return jet_combine("mul", self, other)
        return jet_combine("scale", self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return jet_combine("scale", self, -1.0)


def jet_lift(x, is_active_axis: bool, order: int, seed=1.0) -> Jet:
    """Lift ``x`` into a jet; the active coordinate gets ``d1 = seed``.

    ``seed`` is the chain-rule factor of an affine input map (1 for the raw
    coordinate).
    """
    order = _check_order(order)
    x = np.asarray(x, dtype=np.float64)
    c = np.zeros((MAX_ORDER + 1,) + x.shape)
    c[0] = x
    if is_active_axis and order >= 1:
        c[1] = seed
    return Jet(c, order)


def jet_constant(x, order: int) -> Jet:
    return jet_lift(x, False, order)


def leibniz(a, b, order: int) -> list:
    """Derivatives of a product up to ``order`` from derivative lists a, b."""
    return [sum(comb(n, j) * a[j] * b[n - j] for j in range(n + 1)) for n in range(order + 1)]


def jet_combine(op: str, a: Jet, b) -> Jet:
    if op == "scale":
        if isinstance(b, Jet):
            raise JetError("scale takes a real factor, not a jet")
        return Jet(a.coeffs * b, a.order)
    if not isinstance(b, Jet):
        b = jet_constant(np.broadcast_to(b, a.coeffs.shape[1:]), a.order)
    if a.order != b.order:
        raise JetError(f"jet order mismatch: {a.order} vs {b.order}")
    if op == "add":
        return Jet(a.coeffs + b.coeffs, a.order)
    if op == "sub":
        return Jet(a.coeffs - b.coeffs, a.order)
    if op == "mul":
        c = np.zeros(np.broadcast_shapes(a.coeffs.shape, b.coeffs.shape))
        c[: a.order + 1] = leibniz(a.coeffs, b.coeffs, a.order)
        return Jet(c, a.order)
    raise ConfigurationError(f"unknown jet op {op!r}")


# -- activation derivatives -------------------------------------------------

def _sigmoid_polys(n: int) -> list:
    # d^k sigma / dz^k = p_k(sigma), with p_{k+1} = p_k' * (s - s^2)
    polys = [np.array([0.0, 1.0])]
    ds = np.array([0.0, 1.0, -1.0])
    for _ in range(n):
        polys.append(P.polymul(P.polyder(polys[-1]), ds))
    return polys


_SIGMOID_POLYS = _sigmoid_polys(MAX_ORDER + 2)


def sigmoid_derivatives(z, n: int) -> list:
    s = expit(z)
    return [P.polyval(s, c) for c in _SIGMOID_POLYS[: n + 1]]


def activation_derivatives(kind: str, z, n: int) -> list:
    """``[psi(z), psi'(z), ..., psi^(n)(z)]`` for a supported activation."""
    z = np.asarray(z, dtype=np.float64)
    if kind == "sin":
        s, c = np.sin(z), np.cos(z)
        cycle = (s, c, -s, -c)
        return [cycle[k % 4] for k in range(n + 1)]
    if kind == "silu":
        sig = sigmoid_derivatives(z, n)
        return [z * sig[0]] + [z * sig[k] + k * sig[k - 1] for k in range(1, n + 1)]
    if kind == "softplus":
        out = [np.logaddexp(0.0, z)]
        if n >= 1:
            out += sigmoid_derivatives(z, n - 1)
        return out
    raise ConfigurationError(f"unsupported activation {kind!r}; expected one of {ACTIVATIONS}")


def faa_di_bruno(dpsi, a) -> list:
    """Derivatives of ``psi(g)`` given ``dpsi = [psi', psi'', ...]`` at g and
    ``a = [g', g'', ...]``; returns as many orders as ``a`` has (max 4)."""
    k = len(a)
    out = []
    if k >= 1:
        out.append(dpsi[0] * a[0])
    if k >= 2:
        a1sq = a[0] * a[0]
        out.append(dpsi[1] * a1sq + dpsi[0] * a[1])
    if k >= 3:
        out.append(dpsi[2] * a1sq * a[0] + 3.0 * dpsi[1] * a[0] * a[1] + dpsi[0] * a[2])
    if k >= 4:
        out.append(
            dpsi[3] * a1sq * a1sq
            + 6.0 * dpsi[2] * a1sq * a[1]
            + dpsi[1] * (4.0 * a[0] * a[2] + 3.0 * a[1] * a[1])
            + dpsi[0] * a[3]
        )
    return out


def jet_activate(kind: str, a: Jet) -> Jet:
    derivs = activation_derivatives(kind, a.coeffs[0], a.order)
    c = np.zeros_like(a.coeffs)
    c[0] = derivs[0]
    if a.order:
        c[1: a.order + 1] = faa_di_bruno(derivs[1:], list(a.coeffs[1: a.order + 1]))
    return Jet(c, a.order)


# -- finite-difference cross-check ------------------------------------------

def central_difference(f, x: float, order: int, h: float) -> float:
    """Second-order central difference of ``order`` (1..4) with step h."""
    stencils = {
        1: ([-1, 1], [-0.5, 0.5]),
        2: ([-1, 0, 1], [1.0, -2.0, 1.0]),
        3: ([-2, -1, 1, 2], [-0.5, 1.0, -1.0, 0.5]),
        4: ([-2, -1, 0, 1, 2], [1.0, -4.0, 6.0, -4.0, 1.0]),
    }
    offsets, weights = stencils[order]
    return sum(w * f(x + o * h) for o, w in zip(offsets, weights)) / h**order


def richardson_difference(f, x: float, order: int, h: float, levels: int = 4) -> float:
    """Central difference extrapolated in h (Neville table, step ratio 2)."""
    table = [central_difference(f, x, order, h / 2**i) for i in range(levels)]
    for j in range(1, levels):
        fac = 4.0**j
        table = [(fac * table[i + 1] - table[i]) / (fac - 1.0) for i in range(len(table) - 1)]
    return table[0]


DEFAULT_STEPS = {1: 1e-2, 2: 2e-2, 3: 5e-2, 4: 8e-2}


def fd_check(f, x: float, order: int, h: float | None = None, jet_fn=None) -> float:
    """Max relative discrepancy between jet derivatives 1..order and finite differences.

    ``f`` maps a real to a real (used for the differences); ``jet_fn`` maps a Jet
    to a Jet and defaults to ``f`` itself, which works whenever ``f`` is written
    with jet-aware operations.  The discrepancy for each order is
    ``|jet - fd| / max(|fd|, 1)``.
    """
    order = _check_order(order)
    jet_fn = jet_fn or f
    out = jet_fn(jet_lift(x, True, order))
    worst = 0.0
    for k in range(1, order + 1):
        step = h if h is not None else DEFAULT_STEPS[k]
        fd = richardson_difference(lambda s: float(np.asarray(f(s))), x, k, step)
        jd = float(out.coeffs[k])
        worst = max(worst, abs(jd - fd) / max(abs(fd), 1.0))
    return worst
