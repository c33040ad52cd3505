"""Fourier pseudo-spectral ETDRK4 solver for the periodic benchmarks."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from math import pi

import numpy as np

from ..autodiff import ConfigurationError
from ..problems import ProblemSpec
from .grid import FieldGrid

log = logging.getLogger(__name__)

PERIODIC = ("allen_cahn", "kdv", "kuramoto_sivashinsky", "gray_scott")
BLOWUP = 1e6
CONTOUR_POINTS = 32

# modes per spatial axis, step, number of output times
DEFAULTS = {
    "allen_cahn": dict(n_modes=256, dt=1e-4, n_times=101),
    "kdv": dict(n_modes=256, dt=1e-4, n_times=101),
    "kuramoto_sivashinsky": dict(n_modes=256, dt=1e-4, n_times=101),
    "gray_scott": dict(n_modes=128, dt=1e-4, n_times=26),
}


class SpectralDivergedError(ArithmeticError):
    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


def dft(x) -> np.ndarray:
    """Unnormalised forward transform X_m = sum_j x_j exp(-2 pi i j m / n)."""
    return np.fft.fft(np.asarray(x))


def idft(X) -> np.ndarray:
    """Inverse of :func:`dft` (carries the 1/n factor)."""
    return np.fft.ifft(np.asarray(X))


def wavenumbers(n: int, length: float):
    """Angular wavenumbers in FFT order, and a copy with the Nyquist mode zeroed
    for odd-order derivatives."""
    if n < 2 or n % 2:
        raise ConfigurationError("mode count must be even and >= 2")
    k = 2.0 * pi / length * np.fft.fftfreq(n, d=1.0 / n)
    k_odd = k.copy()
    k_odd[n // 2] = 0.0
    return k, k_odd


def phi_coefficients(L: np.ndarray, h: float, m: int = CONTOUR_POINTS):
    """ETDRK4 coefficients (E, E2, Q, f1, f2, f3) for diagonal ``L`` and step ``h``.

    The phi-functions are averaged over ``m`` points on a unit circle centred at
    each ``h L`` to avoid cancellation near zero.
    """
    L = np.asarray(L)
    E = np.exp(h * L)
    E2 = np.exp(h * L / 2.0)
    r = np.exp(1j * pi * (np.arange(1, m + 1) - 0.5) / m)
    LR = h * L[..., None] + r
    eLR = np.exp(LR)
    Q = h * np.mean((np.exp(LR / 2.0) - 1.0) / LR, axis=-1)
    f1 = h * np.mean((-4.0 - LR + eLR * (4.0 - 3.0 * LR + LR**2)) / LR**3, axis=-1)
    f2 = h * np.mean((2.0 + LR + eLR * (-2.0 + LR)) / LR**3, axis=-1)
    f3 = h * np.mean((-4.0 - 3.0 * LR - LR**2 + eLR * (4.0 - LR)) / LR**3, axis=-1)
    if np.all(np.isreal(L)):
        Q, f1, f2, f3 = Q.real, f1.real, f2.real, f3.real
    return E, E2, Q, f1, f2, f3


class _Dealias:
    """Zero-pad spectra to 3/2 size for products, then truncate back."""

    def __init__(self, n: int, ndim: int):
        self.n, self.ndim = n, ndim
        self.M = 3 * n // 2
        h = n // 2
        self.src = np.concatenate([np.arange(0, h), np.arange(h + 1, n)])
        self.dst = np.concatenate([np.arange(0, h), np.arange(self.M - h + 1, self.M)])
        self.scale = (self.M / n) ** ndim

    def to_phys(self, uh):
        pad = np.zeros(uh.shape[:-self.ndim] + (self.M,) * self.ndim, dtype=complex)
        lead = (Ellipsis,)
        pad[lead + np.ix_(*[self.dst] * self.ndim)] = uh[lead + np.ix_(*[self.src] * self.ndim)]
        axes = tuple(range(-self.ndim, 0))
        return np.fft.ifftn(pad, axes=axes).real * self.scale

    def from_phys(self, w):
        axes = tuple(range(-self.ndim, 0))
        wh = np.fft.fftn(w, axes=axes) / self.scale
        out = np.zeros(w.shape[:-self.ndim] + (self.n,) * self.ndim, dtype=complex)
        lead = (Ellipsis,)
        out[lead + np.ix_(*[self.src] * self.ndim)] = wh[lead + np.ix_(*[self.dst] * self.ndim)]
        return out


@dataclass
class SpectralState:
    coeffs: np.ndarray  # (nvars, n[, n]) complex FFT coefficients
    k: tuple  # angular wavenumbers per spatial axis
    L: np.ndarray  # linear-operator diagonal, broadcastable to coeffs
    phi: tuple  # (E, E2, Q, f1, f2, f3) for the current step


def _model(spec: ProblemSpec, n: int):
    """Linear diagonal ``L`` and pseudo-spectral nonlinear map for ``spec``."""
    c = spec.coefficients
    lo, hi = spec.bounds["x"]
    k, k_odd = wavenumbers(n, hi - lo)
    if spec.name == "gray_scott":
        d = _Dealias(n, 2)
        ky, _ = wavenumbers(n, spec.bounds["y"][1] - spec.bounds["y"][0])
        k2 = k[:, None] ** 2 + ky[None, :] ** 2
        L = np.stack([-c["eps1"] * k2 - c["b1"], -c["eps2"] * k2 - c["b2"]])

        def N(vh):
            u, v = d.to_phys(vh)
            uvv = u * v * v
            return d.from_phys(np.stack([c["b1"] - c["c1"] * uvv, c["c2"] * uvv]))

        return L, N, (k, ky)
    d = _Dealias(n, 1)
    if spec.name == "allen_cahn":
        L = (-c["alpha"] * k**2 + c["delta"])[None]

        def N(vh):
            u = d.to_phys(vh)
            return d.from_phys(-c["delta"] * u**3)
    elif spec.name == "kdv":
        L = (1j * c["nu"] * k_odd**3)[None]

        def N(vh):
            u = d.to_phys(vh)
            return -0.5j * k_odd * d.from_phys(u * u)
    elif spec.name == "kuramoto_sivashinsky":
        L = (c["a2"] * k**2 - c["a3"] * k**4)[None]

        def N(vh):
            u = d.to_phys(vh)
            return -0.5j * c["a1"] * k_odd * d.from_phys(u * u)
    else:
        raise ConfigurationError(f"no spectral model for {spec.name!r}; expected one of {PERIODIC}")
    return L, N, (k,)


def _nodes(spec, axis, n):
    lo, hi = spec.bounds[axis]
    return lo + (hi - lo) * np.arange(n) / n


def _initial(spec, n, u0):
    fn = u0 if u0 is not None else spec.ic_fn
    axes = spec.spatial_axes
    mesh = np.meshgrid(*[_nodes(spec, a, n) for a in axes], indexing="ij")
    pts = np.stack([m.ravel() for m in mesh] + [np.zeros(mesh[0].size)], axis=1)
    vals = np.asarray(fn(pts), dtype=np.float64)
    shape = (n,) * len(axes)
    return np.stack([vals[:, j].reshape(shape) for j in range(len(spec.outputs))])


def _step(vh, L, N, phi):
    E, E2, Q, f1, f2, f3 = phi
    Nv = N(vh)
    a = E2 * vh + Q * Nv
    Na = N(a)
    b = E2 * vh + Q * Na
    Nb = N(b)
    cc = E2 * a + Q * (2.0 * Nb - Nv)
    Nc = N(cc)
    return E * vh + Nv * f1 + 2.0 * (Na + Nb) * f2 + Nc * f3


def prepare(spec: ProblemSpec, n_modes: int, dt: float, u0=None) -> tuple:
    """Initial :class:`SpectralState` and the nonlinear map for ``spec``."""
    L, N, k = _model(spec, n_modes)
    axes = tuple(range(1, 1 + len(spec.spatial_axes)))
    vh = np.fft.fftn(_initial(spec, n_modes, u0), axes=axes)
    return SpectralState(vh, k, L, phi_coefficients(L, dt)), N


def integrate(spec: ProblemSpec, n_modes: int, dt: float, times, u0=None):
    """Physical-space solution at each time in ``times`` (first must be 0).

    Returns an array of shape (len(times), nvars, n[, n]) on the periodic
    nodes lo + j (hi - lo) / n.  Each interval between snapshots is split into
    equal steps no longer than about ``dt``.
    """
    if spec.name not in PERIODIC:
        raise ConfigurationError(f"no spectral model for {spec.name!r}; expected one of {PERIODIC}")
    if not dt > 0:
        raise ConfigurationError("dt must be positive")
    times = np.asarray(times, dtype=np.float64)
    if times.ndim != 1 or times.size < 1 or times[0] != 0.0 or np.any(np.diff(times) <= 0):
        raise ConfigurationError("snapshot times must start at 0 and increase strictly")
    state, N = prepare(spec, n_modes, dt, u0)
    axes = tuple(range(1, 1 + len(spec.spatial_axes)))
    count = n_modes ** len(spec.spatial_axes)
    out = [np.fft.ifftn(state.coeffs, axes=axes).real]
    cache = {}
    step = 0
    for t0, t1 in zip(times[:-1], times[1:]):
        m = max(1, int(round((t1 - t0) / dt)))
        h = (t1 - t0) / m
        if h not in cache:
            cache[h] = phi_coefficients(state.L, h)
        state.phi = cache[h]
        for j in range(m):
            state.coeffs = _step(state.coeffs, state.L, N, state.phi)
            step += 1
            # cheap upper bound on max|u| first, exact check only when it trips
            bound = np.abs(state.coeffs).sum(axis=axes).max() / count
            if not np.isfinite(bound) or bound > BLOWUP:
                peak = np.abs(np.fft.ifftn(state.coeffs, axes=axes).real).max()
                if not np.isfinite(peak) or peak > BLOWUP:
                    raise SpectralDivergedError(
                        f"{spec.name}: |u| exceeded {BLOWUP:g} at step {step} (t={t0 + h * (j + 1):.6g})", step)
        out.append(np.fft.ifftn(state.coeffs, axes=axes).real)
    return np.stack(out)


def etdrk4_solve(spec: ProblemSpec, n_modes=None, dt=None, T=None, snapshot_times=None,
                 stride=2, u0=None) -> FieldGrid:
    """Reference grid for a periodic problem.

    Spatial output nodes are every ``stride``-th solver node plus the closing
    periodic endpoint, so 256 modes with stride 2 gives 129 nodes on [lo, hi].
    """
    defaults = DEFAULTS.get(spec.name)
    if defaults is None:
        raise ConfigurationError(f"no spectral model for {spec.name!r}; expected one of {PERIODIC}")
    n = int(n_modes or defaults["n_modes"])
    dt = float(dt or defaults["dt"])
    T = float(T if T is not None else spec.bounds["t"][1])
    if snapshot_times is None:
        snapshot_times = np.linspace(0.0, T, defaults["n_times"])
    times = np.asarray(snapshot_times, dtype=np.float64)
    if n % stride:
        raise ConfigurationError("stride must divide the mode count")
    sol = integrate(spec, n, dt, times, u0=u0)  # (nt, nvars, n[, n])
    nd = len(spec.spatial_axes)
    # subsample, close the periodic grid, move time last
    idx = np.concatenate([np.arange(0, n, stride), [0]])
    sel = sol[(slice(None), slice(None)) + np.ix_(*[idx] * nd)]
    sel = np.moveaxis(sel, 0, -1)  # (nvars, nx[, ny], nt)
    axes = []
    for a in spec.spatial_axes:
        lo, hi = spec.bounds[a]
        axes.append(np.linspace(lo, hi, idx.size))
    if times.size < 2:
        raise ConfigurationError("need at least two snapshot times")
    axes.append(np.linspace(times[0], times[-1], times.size))
    if not np.allclose(axes[-1], times, rtol=0, atol=1e-12):
        raise ConfigurationError("snapshot times must be uniformly spaced for a grid file")
    values = {name: sel[j] for j, name in enumerate(spec.outputs)}
    meta = {"method": "etdrk4", "n_modes": n, "dt": dt, "coefficients": dict(spec.coefficients)}
    return FieldGrid(spec.name, tuple(spec.spatial_axes) + ("t",), tuple(axes), values, meta)


def self_convergence(spec: ProblemSpec, n_modes: int, dts, T=None, u0=None):
    """Errors of each step size against the run at ``dts[-1] / 4``, and observed orders.

    ``dts`` should halve successively; order_i = log2(err_i / err_{i+1}).
    """
    T = float(T if T is not None else spec.bounds["t"][1])
    times = np.array([0.0, T])
    ref = integrate(spec, n_modes, dts[-1] / 4.0, times, u0=u0)[-1]
    errs = np.array([np.abs(integrate(spec, n_modes, h, times, u0=u0)[-1] - ref).max() for h in dts])
    orders = np.log2(errs[:-1] / errs[1:])
    log.info("%s self-convergence: dt=%s err=%s order=%s", spec.name, list(dts), errs.tolist(), orders.tolist())
    return errs, orders


def ladder_gate(spec: ProblemSpec, n_modes: int, dt: float, final, T=None, u0=None, tol=1e-6):
    """Check a production run at ``dt`` against coarser runs at 16, 8 and 4 dt.

    ``final`` is the production solution at ``T`` (solver nodes).  Passes when
    the 4 dt run already agrees with it to ``tol``; returns (ok, errors, orders).
    A coarse run that blows up counts as infinite error.
    """
    T = float(T if T is not None else spec.bounds["t"][1])
    errs = []
    for f in (16, 8, 4):
        try:
            sol = integrate(spec, n_modes, f * dt, np.array([0.0, T]), u0=u0)[-1]
            errs.append(float(np.abs(sol - final).max()))
        except SpectralDivergedError:
            errs.append(float("inf"))
    errs = np.array(errs)
    with np.errstate(divide="ignore", invalid="ignore"):
        orders = np.log2(errs[:-1] / errs[1:])
    return bool(errs[-1] <= tol), errs, orders
