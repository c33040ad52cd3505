"""MLPs with a frequency-annealed sinusoidal first layer.

Three layouts share one forward routine:

* plain: ``in - sin(F*pi*(W1 x + b1)) - psi - ... - out``
* skip-concat: the final linear layer reads every nonlinear hidden layer,
  concatenated as ``(x_L, x_{L-1}, ..., x_2)``
* flow (multi-branch): a shared trunk feeding one private branch per output

Output layers carry no bias.  All weights are He-initialised.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from math import pi
from pathlib import Path

import numpy as np

from .autodiff import ACTIVATIONS, MAX_ORDER, ConfigurationError, Tape
from .autodiff import tape as ad


@dataclass
class NetworkConfig:
    input_dim: int
    layer_widths: list[int]
    output_names: list[str]
    activation: str = "silu"
    frequency_factor: float = 2.0
    branch_widths: dict[str, list[int]] | None = None
    skip_concat: bool = False
    seed: int = 0
    input_names: list[str] | None = None
    # per-axis (lo, hi); inputs are mapped affinely onto [-1, 1]
    input_bounds: list[tuple[float, float]] | None = None

    def __post_init__(self):
        self.layer_widths = [int(w) for w in self.layer_widths]
        self.output_names = list(self.output_names)
        if self.input_names is None:
            self.input_names = [f"x{i}" for i in range(self.input_dim)]
        self.input_names = list(self.input_names)
        if self.input_bounds is not None:
            self.input_bounds = [tuple(float(v) for v in b) for b in self.input_bounds]
        if self.branch_widths is not None:
            self.branch_widths = {k: [int(w) for w in v] for k, v in self.branch_widths.items()}
        self.validate()

    def validate(self):
        if self.input_dim < 1 or len(self.input_names) != self.input_dim:
            raise ConfigurationError("input_dim must be >= 1 and match input_names")
        if not self.layer_widths or min(self.layer_widths) < 1:
            raise ConfigurationError("layer_widths needs at least the sinusoidal layer width")
        if not self.output_names:
            raise ConfigurationError("output_names must not be empty")
        if self.activation not in ACTIVATIONS or self.activation == "sin":
            raise ConfigurationError(f"activation must be 'silu' or 'softplus', got {self.activation!r}")
        if not self.frequency_factor > 0:
            raise ConfigurationError("frequency_factor must be positive")
        if self.branch_widths is not None:
            if self.skip_concat:
                raise ConfigurationError("branch_widths and skip_concat are mutually exclusive")
            if set(self.branch_widths) != set(self.output_names):
                raise ConfigurationError("branch_widths needs exactly one branch per output")
        if self.input_bounds is not None:
            if len(self.input_bounds) != self.input_dim:
                raise ConfigurationError("input_bounds needs one (lo, hi) per input")
            if any(not hi > lo for lo, hi in self.input_bounds):
                raise ConfigurationError("input_bounds need lo < hi")

    @property
    def kind(self) -> str:
        if self.branch_widths is not None:
            return "flow"
        return "skip" if self.skip_concat else "plain"

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["input_bounds"] is not None:
            d["input_bounds"] = [list(b) for b in d["input_bounds"]]
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def layer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Canonical (name, shape) order of every parameter array."""
        shapes = []
        w = self.layer_widths
        fan_in = self.input_dim
        for i, width in enumerate(w):
            shapes += [(f"W{i + 1}", (fan_in, width)), (f"b{i + 1}", (width,))]
            fan_in = width
        if self.kind == "flow":
            for name in self.output_names:
                bin_ = fan_in
                for j, width in enumerate(self.branch_widths[name]):
                    shapes += [(f"{name}.W{j + 1}", (bin_, width)), (f"{name}.b{j + 1}", (width,))]
                    bin_ = width
                shapes.append((f"{name}.Wout", (bin_, 1)))
        else:
            width_in = sum(w) if self.kind == "skip" else fan_in
            shapes.append(("Wout", (width_in, len(self.output_names))))
        return shapes


class ParameterSet:
    """All weights/biases of one network, stored as views into one flat vector."""

    def __init__(self, cfg: NetworkConfig, flat: np.ndarray | None = None):
        self.shapes = cfg.layer_shapes()
        self.offsets = {}
        off = 0
        for name, shape in self.shapes:
            self.offsets[name] = off
            off += int(np.prod(shape))
        self.size = off
        if flat is None:
            flat = np.zeros(off)
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (off,):
            raise ConfigurationError(f"flat vector has length {flat.size}, network needs {off}")
        self.flat = flat
        self.arrays = {
            name: flat[self.offsets[name]: self.offsets[name] + int(np.prod(shape))].reshape(shape)
            for name, shape in self.shapes
        }

    def __getitem__(self, name):
        return self.arrays[name]

    def named_offsets(self) -> dict:
        return {name: (self.arrays[name], self.offsets[name]) for name, _ in self.shapes}

    def copy(self) -> "ParameterSet":
        new = ParameterSet.__new__(ParameterSet)
        new.shapes, new.offsets, new.size = self.shapes, self.offsets, self.size
        new.flat = self.flat.copy()
        new.arrays = {
            name: new.flat[self.offsets[name]: self.offsets[name] + int(np.prod(shape))].reshape(shape)
            for name, shape in self.shapes
        }
        return new

    def pack(self) -> np.ndarray:
        return self.flat.copy()

    @classmethod
    def unpack(cls, cfg: NetworkConfig, flat) -> "ParameterSet":
        return cls(cfg, np.array(flat, dtype=np.float64))

    def digest(self) -> str:
        return hashlib.sha256(self.flat.tobytes()).hexdigest()


def init_params(cfg: NetworkConfig, seed: int | None = None) -> ParameterSet:
    """He-normal weights (variance 2/fan_in), zero biases; deterministic in the seed."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params = ParameterSet(cfg)
    for name, shape in params.shapes:
        if len(shape) == 2:
            params.arrays[name][...] = rng.normal(0.0, np.sqrt(2.0 / shape[0]), size=shape)
    return params


# -- evaluation ---------------------------------------------------------------

def _input_affine(cfg: NetworkConfig):
    if cfg.input_bounds is None:
        return np.ones(cfg.input_dim), np.zeros(cfg.input_dim)
    lo = np.array([b[0] for b in cfg.input_bounds])
    hi = np.array([b[1] for b in cfg.input_bounds])
    scale = 2.0 / (hi - lo)
    return scale, -1.0 - lo * scale


def _lift_inputs(cfg: NetworkConfig, x: np.ndarray, layout) -> np.ndarray:
    """Stacked input jet: plane 0 the (normalised) values, then one block per axis."""
    scale, shift = _input_affine(cfg)
    planes = 1 + sum(layout)
    J = np.zeros((planes, x.shape[0], cfg.input_dim))
    J[0] = x * scale + shift
    start = 1
    for axis, order in enumerate(layout):
        if order:
            J[start, :, axis] = scale[axis]
        start += order
    return J


def _run(p: dict, cfg: NetworkConfig, J, layout):
    """Network body on a stacked jet; ``p`` maps names to arrays or tape Vars."""
    act = cfg.activation
    n_layers = len(cfg.layer_widths)
    h = ad.jet_affine(J, p["W1"], p["b1"], scale=cfg.frequency_factor * pi)
    h = ad.jet_activation(h, "sin", layout)
    hidden = [h]
    for i in range(2, n_layers + 1):
        h = ad.jet_activation(ad.jet_affine(h, p[f"W{i}"], p[f"b{i}"]), act, layout)
        hidden.append(h)
    if cfg.kind == "flow":
        outs = []
        for name in cfg.output_names:
            hb = h
            for j in range(1, len(cfg.branch_widths[name]) + 1):
                hb = ad.jet_activation(ad.jet_affine(hb, p[f"{name}.W{j}"], p[f"{name}.b{j}"]), act, layout)
            outs.append(ad.jet_affine(hb, p[f"{name}.Wout"]))
        return outs[0] if len(outs) == 1 else ad.concat_last(outs)
    if cfg.kind == "skip":
        return ad.jet_affine_concat(hidden[::-1], p["Wout"])
    return ad.jet_affine(h, p["Wout"])


def _as_points(cfg: NetworkConfig, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise ConfigurationError(f"expected points with {cfg.input_dim} coordinates, got shape {x.shape}")
    return x


def forward(params: ParameterSet, cfg: NetworkConfig, x) -> np.ndarray:
    """Output values, shape (n_points, n_outputs) (or (n_outputs,) for one point)."""
    single = np.asarray(x).ndim == 1
    pts = _as_points(cfg, x)
    layout = (0,) * cfg.input_dim
    out = _run(params.arrays, cfg, _lift_inputs(cfg, pts, layout), layout)[0]
    return out[0] if single else out


def parse_key(key: str, cfg: NetworkConfig) -> tuple[int, int]:
    """Derivative key like '' (value), 'x', 'xx', 'tttt' -> (axis, order)."""
    if key == "":
        return -1, 0
    axis_name = key[0]
    if key != axis_name * len(key) or axis_name not in cfg.input_names:
        raise ConfigurationError(f"bad derivative key {key!r}; only pure derivatives of one axis")
    if len(key) > MAX_ORDER:
        raise ConfigurationError(f"derivative order {len(key)} exceeds {MAX_ORDER}")
    return cfg.input_names.index(axis_name), len(key)


def bundle_layout(cfg: NetworkConfig, req: dict) -> tuple[int, ...]:
    layout = [0] * cfg.input_dim
    for name, keys in req.items():
        if name not in cfg.output_names:
            raise ConfigurationError(f"unknown output {name!r}")
        for key in keys:
            axis, order = parse_key(key, cfg)
            if axis >= 0:
                layout[axis] = max(layout[axis], order)
    return tuple(layout)


def forward_bundle(params: ParameterSet, cfg: NetworkConfig, x, req: dict,
                   tape: Tape | None = None, layout=None) -> dict:
    """Values and pure input derivatives of outputs at a batch of points.

    ``req`` maps output name -> iterable of derivative keys.  Returns a dict
    ``{(output, key): entry}`` whose entries are tape Vars when ``tape`` is
    given (parameter-differentiable) and plain arrays otherwise.  All axes
    share one jet pass: plane 0 carries values, each axis its own block.
    """
    pts = _as_points(cfg, x)
    if layout is None:
        layout = bundle_layout(cfg, req)
    else:
        need = bundle_layout(cfg, req)
        if any(n > l for n, l in zip(need, layout)):
            raise ConfigurationError("supplied layout is smaller than the requirements")
    p = tape.bind(params) if tape is not None else params.arrays
    out = _run(p, cfg, _lift_inputs(cfg, pts, layout), layout)
    starts = np.cumsum((1,) + tuple(layout))[:-1]
    bundle = {}
    for name, keys in req.items():
        col = cfg.output_names.index(name)
        for key in keys:
            axis, order = parse_key(key, cfg)
            plane = 0 if axis < 0 else int(starts[axis]) + order - 1
            bundle[(name, key)] = ad.take(out, (plane, slice(None), col))
    return bundle


# -- checkpoints ----------------------------------------------------------------

CKPT_MAGIC = "#SCALECKPT"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: ParameterSet, cfg: NetworkConfig):
    header = f"{CKPT_MAGIC} v1 {cfg.config_hash()} {params.size}\n".encode()
    Path(path).write_bytes(header + params.flat.astype("<f8").tobytes())


def load_checkpoint(path, cfg: NetworkConfig | None = None) -> tuple[str, np.ndarray]:
    """Return (config hash, flat vector); checks the hash when ``cfg`` is given."""
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise CheckpointError("checkpoint header missing")
    parts = data[:nl].decode(errors="replace").split()
    if len(parts) != 4 or parts[0] != CKPT_MAGIC or parts[1] != "v1":
        raise CheckpointError(f"malformed checkpoint header: {data[:nl]!r}")
    digest, n = parts[2], int(parts[3])
    payload = data[nl + 1:]
    if len(payload) != 8 * n:
        raise CheckpointError(f"checkpoint declares {n} values but holds {len(payload)} bytes")
    if cfg is not None and cfg.config_hash() != digest:
        raise CheckpointError(f"config hash mismatch: checkpoint {digest}, config {cfg.config_hash()}")
    return digest, np.frombuffer(payload, dtype="<f8").astype(np.float64)
