"""Command-line entry point: train, ablate, reference, eval."""
from __future__ import annotations

import argparse
import copy
import json
import logging
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .autodiff import ConfigurationError
from .network import CheckpointError, ParameterSet, load_checkpoint, save_checkpoint
from .problems import PROBLEMS, make_problem
from .reference.cavity import OracleConvergenceError, cavity_solve, richardson_extrapolate
from .reference.grid import FieldGrid, GridFormatError, load_field, save_field
from .reference.spectral import PERIODIC, SpectralDivergedError, etdrk4_solve, integrate, ladder_gate
from .scale_loss import CorrectionConfig, LossWeights
from .trainer import MetricsWriter, NumericError, TrainConfig, evaluate, predict_on_grid, train

log = logging.getLogger("scale_pinn")

EXIT_OK, EXIT_CONFIG, EXIT_INTEGRITY, EXIT_NUMERIC = 0, 2, 3, 4
ABLATION_SEEDS = 5


class IntegrityError(RuntimeError):
    pass


# -- run configuration -----------------------------------------------------------------

_NETWORK_KEYS = {"layer_widths", "activation", "frequency_factor", "skip_concat", "branch_widths"}
_TRAIN_KEYS = {"iterations", "batch_interior", "batch_bc", "batch_ic", "lr", "warmup_fraction", "eval_every"}
_CORR_KEYS = {"tau_sc", "tau_alpha", "enabled"}
_WEIGHT_KEYS = {"ic", "bc"}
_SECTIONS = {"network": _NETWORK_KEYS, "train": _TRAIN_KEYS, "correction": _CORR_KEYS, "weights": _WEIGHT_KEYS}


@dataclass
class RunConfig:
    problem: str
    network: dict
    train: dict
    correction: dict
    weights: dict
    coefficients: dict = field(default_factory=dict)
    seed: int = 0
    reference: str | None = "generate"
    reference_options: dict = field(default_factory=dict)
    out: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigurationError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        for k in d:
            if k not in known:
                raise ConfigurationError(f"unknown config field {k!r}")
        for k in ("problem", "network", "train", "correction", "weights"):
            if k not in d:
                raise ConfigurationError(f"missing config field {k!r}")
        for sec, keys in _SECTIONS.items():
            if not isinstance(d[sec], dict):
                raise ConfigurationError(f"field {sec!r} must be an object")
            for k in d[sec]:
                if k not in keys:
                    raise ConfigurationError(f"unknown config field {sec}.{k}")
        cfg = cls(**copy.deepcopy(d))
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))

    def validate(self):
        """Build every runtime object once so field errors surface before any work."""
        if self.problem not in PROBLEMS:
            raise ConfigurationError(f"field 'problem': unknown problem {self.problem!r}; expected one of {PROBLEMS}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigurationError("field 'seed' must be a non-negative integer")
        self.spec()
        self.net_cfg()
        self.train_cfg()
        if self.reference not in (None, "generate") and not isinstance(self.reference, str):
            raise ConfigurationError("field 'reference' must be a path, 'generate' or null")

    def spec(self):
        try:
            return make_problem(self.problem, self.coefficients)
        except ConfigurationError as e:
            raise ConfigurationError(f"field 'coefficients': {e}") from None

    def net_cfg(self, seed=None):
        try:
            return self.spec().network_config(seed=self.seed if seed is None else seed, **self.network)
        except (ConfigurationError, TypeError) as e:
            raise ConfigurationError(f"field 'network': {e}") from None

    def train_cfg(self, seed=None, enabled=None):
        corr = dict(self.correction)
        if enabled is not None:
            corr["enabled"] = enabled
        try:
            c = CorrectionConfig(**corr)
        except (ConfigurationError, TypeError) as e:
            raise ConfigurationError(f"field 'correction': {e}") from None
        try:
            w = LossWeights(**self.weights)
        except (ConfigurationError, TypeError) as e:
            raise ConfigurationError(f"field 'weights': {e}") from None
        try:
            return TrainConfig(seed=self.seed if seed is None else seed, corr=c, weights=w, **self.train)
        except (ConfigurationError, TypeError) as e:
            raise ConfigurationError(f"field 'train': {e}") from None


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(d: dict, sets: list[str]) -> dict:
    """Apply ``a.b=value`` assignments; values parse as JSON, else as strings."""
    d = copy.deepcopy(d)
    for item in sets or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = d
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                if p in ("coefficients", "reference_options") and node.get(p) is None:
                    node[p] = {}
                else:
                    raise ConfigurationError(f"--set {key}: {p!r} is not a config section")
            node = node[p]
        node[parts[-1]] = _parse_value(raw)
    return d


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("scale_pinn.configs").iterdir() if p.name.endswith(".json"))


def read_config(path_or_name: str) -> dict:
    p = Path(path_or_name)
    try:
        if p.exists():
            text = p.read_text()
        else:
            res = resources.files("scale_pinn.configs").joinpath(f"{path_or_name}.json")
            if not res.is_file():
                raise ConfigurationError(f"config {path_or_name!r} is neither a file nor a preset "
                                         f"({', '.join(preset_names())})")
            text = res.read_text()
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"config {path_or_name!r} is not valid JSON: {e}") from None


def resolve(args) -> RunConfig:
    if not args.config:
        raise ConfigurationError("--config is required")
    d = apply_overrides(read_config(args.config), args.set)
    if args.seed is not None:
        d["seed"] = args.seed
    if args.out is not None:
        d["out"] = args.out
    return RunConfig.from_dict(d)


# -- references -------------------------------------------------------------------------

def generate_reference(cfg: RunConfig) -> FieldGrid:
    spec = cfg.spec()
    opts = dict(cfg.reference_options)
    if spec.name == "cavity":
        n = int(opts.get("n", 129))
        g = cavity_solve(spec.coefficients["Re"], n, u_lid=spec.coefficients["u_lid"])
        if opts.get("extrapolate", False):
            fine = cavity_solve(spec.coefficients["Re"], 2 * n - 1, u_lid=spec.coefficients["u_lid"])
            g = richardson_extrapolate(g, fine)
        return g
    known = {"n_modes", "dt", "stride", "n_times"}
    for k in opts:
        if k not in known:
            raise ConfigurationError(f"unknown reference option {k!r}")
    times = None
    if "n_times" in opts:
        times = np.linspace(0.0, spec.bounds["t"][1], int(opts["n_times"]))
    return etdrk4_solve(spec, n_modes=opts.get("n_modes"), dt=opts.get("dt"), snapshot_times=times,
                        stride=int(opts.get("stride", 2)))


def load_reference(cfg: RunConfig, run_dir: Path | None):
    if cfg.reference is None:
        return None
    if cfg.reference == "generate":
        grid = generate_reference(cfg)
        if run_dir is not None:
            save_field(run_dir / "reference.grid", grid)
        return grid
    return load_field(cfg.reference)


# -- commands ---------------------------------------------------------------------------

def _prepare_dir(path: Path, force: bool):
    if path.exists():
        if not force:
            raise ConfigurationError(f"output directory {path} exists; pass --force to overwrite")
        shutil.rmtree(path)
    path.mkdir(parents=True)


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def run_training(cfg: RunConfig, run_dir: Path, reference=None, enabled=None, plot_export=False) -> dict:
    """One training run into ``run_dir``; returns the final evaluation summary."""
    spec = cfg.spec()
    net_cfg = cfg.net_cfg()
    tcfg = cfg.train_cfg(enabled=enabled)
    resolved = cfg.to_dict()
    if enabled is not None:
        resolved["correction"]["enabled"] = enabled
    resolved["out"] = str(run_dir)
    _write_json(run_dir / "config.json", resolved)
    (run_dir / "seed").write_text(f"{cfg.seed}\n")
    with MetricsWriter(run_dir / "metrics.csv", net_cfg.output_names, spec.name == "cavity") as sink:
        params, rows = train(spec, net_cfg, tcfg, reference=reference, on_metrics=sink)
    save_checkpoint(run_dir / "checkpoint.bin", params, net_cfg)
    final = {"seed": cfg.seed, "correction": tcfg.corr.enabled, "iterations": tcfg.iterations,
             "wall_time_s": rows[-1].wall_time_s if rows else 0.0,
             "config_hash": net_cfg.config_hash()}
    if reference is not None:
        final.update(evaluate(params, net_cfg, spec, reference))
    if rows:
        final["loss_total"] = rows[-1].loss_total
    _write_json(run_dir / "final.json", final)
    if plot_export and rows and reference is not None:
        for o in net_cfg.output_names:
            if o in rows[-1].rel_l2:
                lines = [f"{r.wall_time_s!r} {r.rel_l2[o]!r}" for r in rows]
                (run_dir / f"error_vs_time_{o}.dat").write_text(
                    "# wall_time_s rel_l2\n" + "\n".join(lines) + "\n")
    return final


def cmd_train(args) -> int:
    cfg = resolve(args)
    run_dir = Path(cfg.out or f"runs/{cfg.problem}_seed{cfg.seed}")
    _prepare_dir(run_dir, args.force)
    reference = load_reference(cfg, run_dir)
    final = run_training(cfg, run_dir, reference, plot_export=args.plot_export)
    log.info("train finished: %s", json.dumps(final, sort_keys=True))
    return EXIT_OK


def _ablation_job(job):
    cfg_dict, run_dir, ref_path, enabled = job
    cfg = RunConfig.from_dict(cfg_dict)
    reference = load_field(ref_path) if ref_path else None
    Path(run_dir).mkdir(parents=True)
    try:
        final = run_training(cfg, Path(run_dir), reference, enabled=enabled)
        final["status"] = "ok"
    except NumericError as e:
        final = {"seed": cfg.seed, "correction": enabled, "status": f"numeric failure: {e}"}
        _write_json(Path(run_dir) / "final.json", final)
    return final


def _summary_stats(runs, arm):
    errs = [r["rel_l2_combined"] for r in runs if r["arm"] == arm and r.get("rel_l2_combined") is not None]
    times = [r["wall_time_s"] for r in runs if r["arm"] == arm and "wall_time_s" in r]
    return {"best_rel_l2": min(errs) if errs else None, "mean_rel_l2": float(np.mean(errs)) if errs else None,
            "mean_wall_time_s": float(np.mean(times)) if times else None, "completed": len(errs)}


def cmd_ablate(args) -> int:
    cfg = resolve(args)
    root = Path(cfg.out or f"runs/{cfg.problem}_ablation")
    _prepare_dir(root, args.force)
    _write_json(root / "config.json", cfg.to_dict())
    ref_path = None
    if cfg.reference is not None:
        grid = load_reference(cfg, None)
        ref_path = str(root / "reference.grid")
        save_field(ref_path, grid)
    jobs = []
    for i in range(ABLATION_SEEDS):
        seed = cfg.seed + i
        for arm, enabled in (("scale", True), ("baseline", False)):
            d = cfg.to_dict()
            d["seed"] = seed
            jobs.append((d, str(root / f"{arm}_seed{seed}"), ref_path, enabled))
    if args.parallel > 1:
        with ProcessPoolExecutor(args.parallel) as pool:
            finals = list(pool.map(_ablation_job, jobs))
    else:
        finals = [_ablation_job(j) for j in jobs]
    runs = []
    for (d, run_dir, _, enabled), f in zip(jobs, finals):
        runs.append({"arm": "scale" if enabled else "baseline", "seed": d["seed"], "run_dir": run_dir,
                     "rel_l2_combined": f.get("rel_l2_combined"), "wall_time_s": f.get("wall_time_s"),
                     "status": f.get("status")})
    summary = {"runs": runs, "arms": {a: _summary_stats(runs, a) for a in ("scale", "baseline")}}
    _write_json(root / "summary.json", summary)
    with open(root / "summary.csv", "w") as fh:
        fh.write("arm,seed,final_rel_l2,wall_time_s,status\n")
        for r in runs:
            fh.write(f"{r['arm']},{r['seed']},{r['rel_l2_combined']!r},{r['wall_time_s']!r},{r['status']}\n")
    log.info("ablation summary: %s", json.dumps(summary["arms"], sort_keys=True))
    failed = [r for r in runs if r["status"] != "ok"]
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_reference(args) -> int:
    if args.problem is None and not args.config:
        raise ConfigurationError("reference needs --problem or --config")
    if args.config:
        cfg = resolve(args)
    else:
        if args.problem not in PROBLEMS:
            raise ConfigurationError(f"field 'problem': unknown problem {args.problem!r}; expected one of {PROBLEMS}")
        d = {"problem": args.problem, "network": {"layer_widths": [8]}, "train": {"iterations": 1,
             "batch_interior": 1, "lr": 1e-3}, "correction": {"tau_sc": 1.0, "tau_alpha": 1.0},
             "weights": {}, "reference": "generate"}
        d = apply_overrides(d, args.set)
        cfg = RunConfig.from_dict(d)
    out = Path(args.out or f"{cfg.problem}.grid")
    if out.exists() and not args.force:
        raise ConfigurationError(f"{out} exists; pass --force to overwrite")
    grid = generate_reference(cfg)
    spec = cfg.spec()
    if spec.name in PERIODIC:
        n = grid.metadata["n_modes"]
        dt = grid.metadata["dt"]
        final = integrate(spec, n, dt, np.array([0.0, spec.bounds["t"][1]]))[-1]
        ok, errs, orders = ladder_gate(spec, n, dt, final)
        log.info("ladder (16dt, 8dt, 4dt vs dt=%g): errors %s, observed orders %s", dt, errs.tolist(),
                 orders.tolist())
        if not ok:
            raise NumericError(f"self-convergence gate failed at dt={dt:g}: 4dt error {errs[-1]:.3e}, "
                               f"observed orders {np.round(orders, 2).tolist()}")
    save_field(out, grid)
    log.info("wrote %s with axes %s shape %s", out, grid.axis_names, grid.shape)
    return EXIT_OK


def cmd_eval(args) -> int:
    if not args.checkpoint:
        raise ConfigurationError("eval needs --checkpoint")
    cfg = resolve(args)
    spec, net_cfg = cfg.spec(), cfg.net_cfg()
    try:
        _, flat = load_checkpoint(args.checkpoint, net_cfg)
    except CheckpointError as e:
        raise IntegrityError(str(e)) from None
    params = ParameterSet(net_cfg, flat)
    ref_path = args.reference or (cfg.reference if cfg.reference not in (None, "generate") else None)
    reference = load_field(ref_path) if ref_path else generate_reference(cfg)
    res = evaluate(params, net_cfg, spec, reference)
    out = Path(args.out or "eval")
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "eval.json", res)
    if args.export:
        pred = predict_on_grid(params, net_cfg, spec, reference)
        save_field(args.export, FieldGrid(spec.name, reference.axis_names, reference.axes, pred,
                                          {"method": "network"}))
    log.info("eval: %s", json.dumps(res, sort_keys=True))
    return EXIT_OK


# -- entry point ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config path or bundled preset name")
    common.add_argument("--seed", type=int)
    common.add_argument("--out")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-path override, repeatable")
    common.add_argument("--force", action="store_true", help="overwrite an existing output")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="scale-pinn", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    t = sub.add_parser("train", parents=[common])
    t.add_argument("--plot-export", action="store_true", help="also write error-vs-time .dat files")
    a = sub.add_parser("ablate", parents=[common])
    a.add_argument("--parallel", type=int, default=1, help="worker processes for the 10 runs")
    r = sub.add_parser("reference", parents=[common])
    r.add_argument("--problem")
    e = sub.add_parser("eval", parents=[common])
    e.add_argument("--checkpoint")
    e.add_argument("--reference")
    e.add_argument("--export", help="write the predicted fields as a grid file")
    sub.add_parser("presets", help="list bundled configs")
    return p


_COMMANDS = {"train": cmd_train, "ablate": cmd_ablate, "reference": cmd_reference, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "presets":
        print("\n".join(preset_names()))
        return EXIT_OK
    try:
        return _COMMANDS[args.command](args)
    except ConfigurationError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrityError, CheckpointError, GridFormatError) as e:
        print(f"integrity error: {e}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (NumericError, SpectralDivergedError, OracleConvergenceError, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
