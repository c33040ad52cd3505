"""Training loop: Adam with warm-up cosine decay and a one-step weight snapshot."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from math import cos, pi
from typing import Callable

import numpy as np

from .autodiff import ConfigurationError, tape_backward
from .network import NetworkConfig, ParameterSet, forward, forward_bundle, init_params
from .problems import ProblemSpec, sample_batch
from .scale_loss import CorrectionConfig, LossReport, LossWeights, assemble_scale_loss

LR_MIN = 1e-10


class NumericError(FloatingPointError):
    """Non-finite loss or gradient; carries the iteration and loss breakdown."""

    def __init__(self, message, iteration=None, report=None):
        super().__init__(message)
        self.iteration = iteration
        self.report = report


@dataclass
class TrainConfig:
    iterations: int
    batch_interior: int
    lr: float
    batch_bc: int | None = None
    batch_ic: int | None = None
    lr_min: float = LR_MIN
    warmup_fraction: float = 0.02
    seed: int = 0
    eval_every: int = 1000
    corr: CorrectionConfig = field(default_factory=lambda: CorrectionConfig(0.1, 1.0))
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        # boundary / initial batches default to a quarter of the interior batch
        if self.batch_bc is None:
            self.batch_bc = max(1, self.batch_interior // 4)
        if self.batch_ic is None:
            self.batch_ic = max(1, self.batch_interior // 4)
        if self.iterations < 0:
            raise ConfigurationError("iterations must be >= 0")
        if self.batch_interior < 1:
            raise ConfigurationError("batch_interior must be >= 1")
        if not self.lr > self.lr_min:
            raise ConfigurationError("initial learning rate must exceed the minimum learning rate")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ConfigurationError("warmup_fraction must lie in [0, 1)")
        if self.eval_every < 1:
            raise ConfigurationError("eval_every must be >= 1")


@dataclass
class TrainState:
    params_k: ParameterSet
    params_km1: ParameterSet
    m: np.ndarray
    v: np.ndarray
    k: int
    rng: np.random.Generator
    start: float

    @classmethod
    def initial(cls, params: ParameterSet, rng: np.random.Generator) -> "TrainState":
        return cls(params, params.copy(), np.zeros(params.size), np.zeros(params.size), 0, rng,
                   time.perf_counter())


@dataclass
class MetricsRow:
    iter: int
    wall_time_s: float
    loss_total: float
    loss_pde: float
    loss_ic: float
    loss_bc: float
    rel_l2: dict = field(default_factory=dict)
    mse: dict = field(default_factory=dict)
    div_mse: float | None = None


def lr_at(k: float, cfg: TrainConfig) -> float:
    """Linear warm-up to ``lr`` then cosine decay to ``lr_min`` at ``iterations``."""
    n = cfg.iterations
    warm = cfg.warmup_fraction * n
    if warm > 0 and k <= warm:
        return cfg.lr * k / warm
    span = n - warm
    s = min(max((k - warm) / span, 0.0), 1.0) if span > 0 else 1.0
    return cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + cos(pi * s))


def adam_step(state: TrainState, grad: np.ndarray, lr: float, beta1=0.9, beta2=0.999, eps=1e-8,
              report: LossReport | None = None) -> TrainState:
    """Bias-corrected Adam update of the flat parameters; returns a new state.

    ``params_km1`` of the new state is the pre-update ``params_k``.
    """
    if grad.shape != state.m.shape:
        raise ConfigurationError("gradient length does not match the optimizer state")
    if not np.all(np.isfinite(grad)):
        raise NumericError(f"non-finite gradient at iteration {state.k}", state.k, report)
    t = state.k + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    new = state.params_k.copy()
    new.flat -= lr * mhat / (np.sqrt(vhat) + eps)
    return TrainState(new, state.params_k, m, v, t, state.rng, state.start)


def train(spec: ProblemSpec, net_cfg: NetworkConfig, cfg: TrainConfig, reference=None,
          params: ParameterSet | None = None, on_step: Callable | None = None,
          on_metrics: Callable | None = None):
    """Run the sequential-correction (or baseline) loop; returns (params, metrics rows).

    Iteration k samples a batch, builds the loss from w^k and the constant
    snapshot w^{k-1}, takes one Adam step to w^{k+1}, then shifts the snapshot.
    A row is recorded every ``eval_every`` iterations and at the end.
    """
    seeds = np.random.SeedSequence(cfg.seed).spawn(1)
    rng = np.random.default_rng(seeds[0])
    if params is None:
        params = init_params(net_cfg)
    state = TrainState.initial(params, rng)
    rows: list[MetricsRow] = []
    for k in range(cfg.iterations):
        batch = sample_batch(spec, state.rng, cfg.batch_interior, cfg.batch_bc, cfg.batch_ic)
        tape, loss, report = assemble_scale_loss(spec, net_cfg, state.params_k, state.params_km1, batch,
                                                 cfg.weights, cfg.corr)
        if not np.isfinite(report.total):
            raise NumericError(f"non-finite loss at iteration {k}: {report}", k, report)
        grad = tape_backward(tape, loss)
        tape.release()
        if on_step is not None:
            on_step(k, state, report)
        state = adam_step(state, grad, lr_at(k, cfg), report=report)
        done = k + 1
        if done % cfg.eval_every == 0 or done == cfg.iterations:
            row = MetricsRow(done, time.perf_counter() - state.start, report.total, report.pde_total,
                             report.ic, report.bc)
            if reference is not None:
                ev = evaluate(state.params_k, net_cfg, spec, reference)
                row.rel_l2, row.mse, row.div_mse = ev["rel_l2"], ev["mse"], ev.get("div_mse")
            rows.append(row)
            if on_metrics is not None:
                on_metrics(row)
    return state.params_k, rows


# -- evaluation -------------------------------------------------------------------

def grid_points(reference, spec: ProblemSpec) -> np.ndarray:
    """Reference grid nodes as network inputs, ordered like the grid values."""
    names = list(reference.axis_names)
    if sorted(names) != sorted(spec.axes):
        raise ConfigurationError(f"reference axes {names} do not match problem axes {list(spec.axes)}")
    mesh = np.meshgrid(*reference.axes, indexing="ij")
    cols = [mesh[names.index(a)].ravel() for a in spec.axes]
    return np.stack(cols, axis=1)


def relative_l2(pred, ref) -> float:
    pred, ref = np.asarray(pred, dtype=np.float64), np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ConfigurationError(f"shape mismatch {pred.shape} vs {ref.shape}")
    return float(np.linalg.norm((pred - ref).ravel()) / np.linalg.norm(ref.ravel()))


def mse(pred, ref) -> float:
    pred, ref = np.asarray(pred, dtype=np.float64), np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ConfigurationError(f"shape mismatch {pred.shape} vs {ref.shape}")
    return float(np.mean(np.square(pred - ref)))


def predict_on_grid(params, net_cfg: NetworkConfig, spec: ProblemSpec, reference, chunk=20000) -> dict:
    pts = grid_points(reference, spec)
    out = np.concatenate([forward(params, net_cfg, pts[i:i + chunk]) for i in range(0, len(pts), chunk)])
    shape = reference.shape
    return {name: out[:, j].reshape(shape) for j, name in enumerate(net_cfg.output_names)}


def evaluate(params, net_cfg: NetworkConfig, spec: ProblemSpec, reference) -> dict:
    """Relative L2 and MSE per output present in the reference grid, and over
    all of them jointly.

    For the cavity, also the mean-square divergence over interior grid nodes.
    """
    pred = predict_on_grid(params, net_cfg, spec, reference)
    res = {"rel_l2": {}, "mse": {}}
    shared = [name for name in net_cfg.output_names if name in reference.values]
    for name in shared:
        res["rel_l2"][name] = relative_l2(pred[name], reference.values[name])
        res["mse"][name] = mse(pred[name], reference.values[name])
    if shared:
        # all compared outputs stacked into one vector (the velocity for the cavity)
        res["rel_l2_combined"] = relative_l2(np.stack([pred[n] for n in shared]),
                                             np.stack([reference.values[n] for n in shared]))
        res["mse_combined"] = mse(np.stack([pred[n] for n in shared]),
                                  np.stack([reference.values[n] for n in shared]))
    if spec.name == "cavity":
        pts = grid_points(reference, spec)
        inside = np.all((pts > spec.lower) & (pts < spec.upper), axis=1)
        b = forward_bundle(params, net_cfg, pts[inside], {"u": ("x",), "v": ("y",)})
        res["div_mse"] = float(np.mean(np.square(b[("u", "x")] + b[("v", "y")])))
    return res


# -- metrics file -----------------------------------------------------------------------

def metrics_header(outputs, cavity: bool) -> list[str]:
    cols = ["iter", "wall_time_s", "loss_total", "loss_pde", "loss_ic", "loss_bc"]
    cols += [f"rel_l2_{o}" for o in outputs] + [f"mse_{o}" for o in outputs]
    if cavity:
        cols.append("div_mse")
    return cols


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))  # shortest round-trip decimal


class MetricsWriter:
    """Append-only CSV sink; every row is flushed so partial runs keep their metrics."""

    def __init__(self, path, outputs, cavity: bool):
        self.outputs = list(outputs)
        self.cavity = cavity
        self.fh = open(path, "w", newline="")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        self.writer.writerow(metrics_header(self.outputs, cavity))
        self.fh.flush()

    def __call__(self, row: MetricsRow):
        vals = [row.iter, row.wall_time_s, row.loss_total, row.loss_pde, row.loss_ic, row.loss_bc]
        vals += [row.rel_l2.get(o) for o in self.outputs] + [row.mse.get(o) for o in self.outputs]
        if self.cavity:
            vals.append(row.div_mse)
        self.writer.writerow([_fmt(v) for v in vals])
        self.fh.flush()

    def close(self):
        self.fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
