"""PDE benchmark definitions: coefficients, residuals, correction terms, sampling."""
from __future__ import annotations

from dataclasses import dataclass, field
from math import pi, sqrt
from typing import Callable

import numpy as np

from .autodiff import ConfigurationError, take
from .network import NetworkConfig, forward_bundle

PROBLEMS = ("allen_cahn", "kdv", "kuramoto_sivashinsky", "gray_scott", "cavity")


@dataclass(frozen=True)
class Correction:
    """Sequential-correction recipe for one equation."""
    equation: str
    output: str  # variable whose lagged change enters the equation
    gamma: float
    laplacian: bool = True


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    spatial_axes: tuple[str, ...]
    time_dependent: bool
    bounds: dict  # axis -> (lo, hi); 't' -> (0, T) when time-dependent
    coefficients: dict
    outputs: tuple[str, ...]
    required: dict  # output -> tuple of derivative keys
    equations: tuple[str, ...]
    corrections: tuple[Correction, ...]
    bc_kind: str  # 'periodic' | 'dirichlet-walls-with-lid' | 'dirichlet'
    ic_fn: Callable | None = field(default=None, compare=False)
    # user-defined problems: residual_fn(spec, bundle, points) -> {equation: residual},
    # bc_fn(points) -> (n, n_outputs) targets for bc_kind 'dirichlet'
    residual_fn: Callable | None = field(default=None, compare=False)
    bc_fn: Callable | None = field(default=None, compare=False)

    @property
    def axes(self) -> tuple[str, ...]:
        return self.spatial_axes + (("t",) if self.time_dependent else ())

    @property
    def input_dim(self) -> int:
        return len(self.axes)

    @property
    def gamma(self) -> dict:
        return {c.output: c.gamma for c in self.corrections if c.laplacian}

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.bounds[a][0] for a in self.axes])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.bounds[a][1] for a in self.axes])

    def network_config(self, **kw) -> NetworkConfig:
        """A NetworkConfig whose inputs/outputs/bounds match this problem."""
        return NetworkConfig(
            input_dim=self.input_dim,
            output_names=list(self.outputs),
            input_names=list(self.axes),
            input_bounds=[self.bounds[a] for a in self.axes],
            **kw,
        )


# -- definitions --------------------------------------------------------------

_DEFAULTS = {
    "allen_cahn": {"alpha": 1e-4, "delta": 5.0, "T": 1.0},
    "kdv": {"nu": (11.0 / 500.0) ** 2, "T": 1.0},
    "kuramoto_sivashinsky": {"a1": 100.0 / 16.0, "a2": 100.0 / 16.0**2, "a3": 100.0 / 16.0**2, "T": 0.4},
    "gray_scott": {"eps1": 0.2, "eps2": 0.1, "b1": 40.0, "b2": 100.0, "c1": 1000.0, "c2": 1000.0, "T": 0.5},
    "cavity": {"Re": 400.0, "u_lid": 1.0},
}

# coefficients that must be strictly positive
_POSITIVE = {"alpha", "nu", "a3", "eps1", "eps2", "T", "Re"}
# coefficients that must be non-negative
_NONNEG = {"delta", "a1", "a2", "b1", "b2", "c1", "c2"}


def _ac_ic(pts):
    x = pts[:, 0]
    return (x**2 * np.cos(pi * x))[:, None]


def _kdv_ic(pts):
    return np.cos(pi * pts[:, 0])[:, None]


def _ks_ic(pts):
    x = pts[:, 0]
    return (np.cos(x) * (1.0 + np.sin(x)))[:, None]


def _gs_ic(pts):
    x, y = pts[:, 0], pts[:, 1]
    u = 1.0 - np.exp(-10.0 * ((x + 0.05) ** 2 + (y + 0.02) ** 2))
    v = np.exp(-10.0 * ((x - 0.05) ** 2 + (y - 0.02) ** 2))
    return np.stack([u, v], axis=1)


def make_problem(name: str, overrides: dict | None = None) -> ProblemSpec:
    """Benchmark definition with default coefficients, updated by ``overrides``.

    Besides the PDE coefficients, overrides accept ``T`` (time horizon) and
    ``gamma`` / ``gamma_<output>`` to replace the correction-term coefficients.
    """
    if name not in _DEFAULTS:
        raise ConfigurationError(f"unknown problem {name!r}; expected one of {PROBLEMS}")
    overrides = dict(overrides or {})
    gamma_over = {k: float(overrides.pop(k)) for k in list(overrides) if k == "gamma" or k.startswith("gamma_")}
    c = dict(_DEFAULTS[name])
    for k, v in overrides.items():
        if k not in c:
            raise ConfigurationError(f"problem {name!r} has no coefficient {k!r}; known: {sorted(c)}")
        c[k] = float(v)
    for k, v in c.items():
        if k in _POSITIVE and not v > 0:
            raise ConfigurationError(f"coefficient {k} must be positive, got {v}")
        if k in _NONNEG and v < 0:
            raise ConfigurationError(f"coefficient {k} must be non-negative, got {v}")

    def g(out, default):
        val = gamma_over.get(f"gamma_{out}", gamma_over.get("gamma", default))
        if val < 0:
            raise ConfigurationError("gamma must be non-negative")
        return val

    if name == "allen_cahn":
        return ProblemSpec(
            name, ("x",), True, {"x": (-1.0, 1.0), "t": (0.0, c["T"])}, c, ("u",),
            {"u": ("", "t", "xx")}, ("ac",), (Correction("ac", "u", g("u", c["alpha"])),),
            "periodic", _ac_ic)
    if name == "kdv":
        return ProblemSpec(
            name, ("x",), True, {"x": (-1.0, 1.0), "t": (0.0, c["T"])}, c, ("u",),
            {"u": ("", "t", "x", "xx", "xxx")}, ("kdv",), (Correction("kdv", "u", g("u", sqrt(c["nu"]))),),
            "periodic", _kdv_ic)
    if name == "kuramoto_sivashinsky":
        return ProblemSpec(
            name, ("x",), True, {"x": (0.0, 2.0 * pi), "t": (0.0, c["T"])}, c, ("u",),
            {"u": ("", "t", "x", "xx", "xxxx")}, ("ks",), (Correction("ks", "u", g("u", c["a2"])),),
            "periodic", _ks_ic)
    if name == "gray_scott":
        keys = ("", "t", "xx", "yy")
        return ProblemSpec(
            name, ("x", "y"), True, {"x": (-1.0, 1.0), "y": (-1.0, 1.0), "t": (0.0, c["T"])}, c, ("u", "v"),
            {"u": keys, "v": keys}, ("gs_u", "gs_v"),
            (Correction("gs_u", "u", g("u", c["eps1"])), Correction("gs_v", "v", g("v", c["eps2"]))),
            "periodic", _gs_ic)
    # lid-driven cavity
    vel = ("", "x", "y", "xx", "yy")
    gamma_uv = 1.0 / c["Re"]
    return ProblemSpec(
        name, ("x", "y"), False, {"x": (0.0, 1.0), "y": (0.0, 1.0)}, c, ("u", "v", "p"),
        {"u": vel, "v": vel, "p": ("", "x", "y")}, ("continuity", "momentum_x", "momentum_y"),
        (Correction("continuity", "p", 0.0, laplacian=False),
         Correction("momentum_x", "u", g("u", gamma_uv)),
         Correction("momentum_y", "v", g("v", gamma_uv))),
        "dirichlet-walls-with-lid", None)


# -- residuals ------------------------------------------------------------------

def _get(bundle, out, key):
    try:
        return bundle[(out, key)]
    except KeyError:
        raise KeyError(f"derivative bundle lacks {out}_{key or 'value'}") from None


def laplacian(spec: ProblemSpec, bundle, out):
    terms = [_get(bundle, out, a + a) for a in spec.spatial_axes]
    lap = terms[0]
    for t in terms[1:]:
        lap = lap + t
    return lap


def pde_residual(spec: ProblemSpec, bundle, points=None) -> dict:
    """Residual N[f] - h of every governing equation, keyed by equation name.

    ``points`` (the collocation coordinates) is only read by user-defined
    residuals with a coordinate-dependent source term.
    """
    if spec.residual_fn is not None:
        return spec.residual_fn(spec, bundle, points)
    c = spec.coefficients
    d = lambda out, key="": _get(bundle, out, key)  # noqa: E731
    if spec.name == "allen_cahn":
        u = d("u")
        return {"ac": d("u", "t") - c["alpha"] * d("u", "xx") + c["delta"] * (u * u * u - u)}
    if spec.name == "kdv":
        return {"kdv": d("u", "t") + d("u") * d("u", "x") + c["nu"] * d("u", "xxx")}
    if spec.name == "kuramoto_sivashinsky":
        return {"ks": d("u", "t") + c["a1"] * (d("u") * d("u", "x"))
                + c["a2"] * d("u", "xx") + c["a3"] * d("u", "xxxx")}
    if spec.name == "gray_scott":
        u, v = d("u"), d("v")
        uvv = u * v * v
        return {
            "gs_u": d("u", "t") - c["eps1"] * laplacian(spec, bundle, "u") - c["b1"] * (1.0 - u) + c["c1"] * uvv,
            "gs_v": d("v", "t") - c["eps2"] * laplacian(spec, bundle, "v") + c["b2"] * v - c["c2"] * uvv,
        }
    if spec.name == "cavity":
        u, v = d("u"), d("v")
        nu = 1.0 / c["Re"]
        return {
            "continuity": d("u", "x") + d("v", "y"),
            "momentum_x": u * d("u", "x") + v * d("u", "y") - nu * laplacian(spec, bundle, "u") + d("p", "x"),
            "momentum_y": u * d("v", "x") + v * d("v", "y") - nu * laplacian(spec, bundle, "v") + d("p", "y"),
        }
    raise ConfigurationError(f"no residual for problem {spec.name!r}")


def correction_term(spec: ProblemSpec, bundle_k, bundle_km1, tau_sc: float, tau_alpha: float) -> dict:
    """Lagged, smoothed correction per equation.

    ``S = (f^k - f^{k-1}) / tau_sc - gamma/tau_alpha * (lap f^k - lap f^{k-1})``;
    equations flagged ``laplacian=False`` (cavity continuity) keep only the
    first term.  ``bundle_km1`` entries are expected to be constants.
    """
    if not (tau_sc > 0 and tau_alpha > 0):
        raise ConfigurationError(f"tau_sc and tau_alpha must be positive, got {tau_sc}, {tau_alpha}")
    out = {}
    for corr in spec.corrections:
        s = (1.0 / tau_sc) * (_get(bundle_k, corr.output, "") - _get(bundle_km1, corr.output, ""))
        if corr.laplacian:
            dlap = laplacian(spec, bundle_k, corr.output) - laplacian(spec, bundle_km1, corr.output)
            s = s - (corr.gamma / tau_alpha) * dlap
        out[corr.equation] = s
    return out


def snapshot_requirements(spec: ProblemSpec) -> dict:
    """Entries of the lagged bundle the correction term reads."""
    req = {}
    for corr in spec.corrections:
        keys = [""] + ([a + a for a in spec.spatial_axes] if corr.laplacian else [])
        req[corr.output] = tuple(keys)
    return req


# -- collocation batches ---------------------------------------------------------

@dataclass
class Batch:
    interior: np.ndarray  # (n, input_dim)
    bc: np.ndarray  # (m, input_dim)
    bc_tags: np.ndarray  # (m,) int
    ic: np.ndarray  # (k, input_dim)


# cavity wall tags
LEFT, RIGHT, BOTTOM, TOP = 0, 1, 2, 3


def _split(n: int, parts: int) -> list[int]:
    base, rem = divmod(n, parts)
    return [base + (1 if i < rem else 0) for i in range(parts)]


def _uniform_open_top(rng, lo, hi, n):
    # uniform on (lo, hi]
    return hi - (hi - lo) * rng.random(n)


def sample_batch(spec: ProblemSpec, rng: np.random.Generator, n_interior: int, n_bc: int, n_ic: int) -> Batch:
    """Uniform collocation points; boundary points stratified equally per face.

    Periodic problems tag a boundary point with the spatial axis it sits on
    (the point lies on the lower face; its partner is the same point on the
    upper face).  The cavity tags walls LEFT/RIGHT/BOTTOM/TOP.
    """
    if min(n_interior, n_bc, n_ic) < 0:
        raise ConfigurationError("sample counts must be non-negative")
    lo, hi = spec.lower, spec.upper
    d = spec.input_dim
    ns = len(spec.spatial_axes)

    def draw(n):
        pts = np.empty((n, d))
        for j in range(ns):
            pts[:, j] = rng.uniform(lo[j], hi[j], n)
        if spec.time_dependent:
            pts[:, ns] = _uniform_open_top(rng, lo[ns], hi[ns], n)
        return pts

    interior = draw(n_interior)

    if spec.bc_kind == "periodic":
        counts = _split(n_bc, ns)
        faces = []
        for axis, n in enumerate(counts):
            pts = draw(n)
            pts[:, axis] = lo[axis]
            faces.append((pts, np.full(n, axis)))
    else:
        # face 2j is the lower end of spatial axis j, 2j + 1 the upper (LEFT/RIGHT/BOTTOM/TOP in 2-D)
        faces = []
        for tag, n in enumerate(_split(n_bc, 2 * ns)):
            pts = draw(n)
            axis = tag // 2
            pts[:, axis] = hi[axis] if tag % 2 else lo[axis]
            faces.append((pts, np.full(n, tag)))
    bc = np.concatenate([f[0] for f in faces]) if faces else np.empty((0, d))
    tags = np.concatenate([f[1] for f in faces]).astype(int) if faces else np.empty(0, int)

    if spec.time_dependent:
        ic = draw(n_ic)
        ic[:, ns] = 0.0
    else:
        ic = np.empty((0, d))
    return Batch(interior, bc, tags, ic)


def ic_bc_residuals(spec: ProblemSpec, params, cfg: NetworkConfig, batch: Batch, tape=None):
    """(IC residual list, BC residual list); entries are arrays or tape Vars."""
    ic_res, bc_res = [], []
    if spec.time_dependent and len(batch.ic):
        vals = forward_bundle(params, cfg, batch.ic, {o: ("",) for o in spec.outputs}, tape=tape)
        target = spec.ic_fn(batch.ic)
        for j, o in enumerate(spec.outputs):
            ic_res.append(vals[(o, "")] - target[:, j])
    if not len(batch.bc):
        return ic_res, bc_res
    tags = np.asarray(batch.bc_tags)
    if spec.bc_kind == "periodic":
        ns = len(spec.spatial_axes)
        if tags.min() < 0 or tags.max() >= ns:
            raise ConfigurationError("periodic batch tags must name a spatial axis")
        for axis in range(ns):
            idx = np.flatnonzero(tags == axis)
            if not len(idx):
                continue
            lo_pts = batch.bc[idx]
            hi_pts = lo_pts.copy()
            hi_pts[:, axis] = spec.upper[axis]
            n = len(idx)
            a = spec.spatial_axes[axis]
            b = forward_bundle(params, cfg, np.concatenate([lo_pts, hi_pts]),
                               {o: ("", a) for o in spec.outputs}, tape=tape)
            for o in spec.outputs:
                for key in ("", a):
                    full = b[(o, key)]
                    bc_res.append(take(full, slice(0, n)) - take(full, slice(n, 2 * n)))
        return ic_res, bc_res
    if spec.bc_kind == "dirichlet-walls-with-lid":
        if spec.name != "cavity" or tags.min() < 0 or tags.max() > TOP:
            raise ConfigurationError("wall tags apply to the cavity problem only")
        vals = forward_bundle(params, cfg, batch.bc, {"u": ("",), "v": ("",)}, tape=tape)
        x = batch.bc[:, 0]
        on_lid = (tags == TOP) & (x > spec.lower[0]) & (x < spec.upper[0])
        u_target = np.where(on_lid, spec.coefficients["u_lid"], 0.0)
        bc_res.append(vals[("u", "")] - u_target)
        bc_res.append(vals[("v", "")] - 0.0)
        return ic_res, bc_res
    if spec.bc_kind == "dirichlet":
        if spec.bc_fn is None:
            raise ConfigurationError("bc_kind 'dirichlet' needs a bc_fn")
        vals = forward_bundle(params, cfg, batch.bc, {o: ("",) for o in spec.outputs}, tape=tape)
        target = spec.bc_fn(batch.bc)
        for j, o in enumerate(spec.outputs):
            bc_res.append(vals[(o, "")] - target[:, j])
        return ic_res, bc_res
    raise ConfigurationError(f"unknown bc_kind {spec.bc_kind!r}")
