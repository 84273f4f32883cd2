"""Batch front end: generate, balance, fit, evaluate, compare, classes.

Every subcommand takes ``--config FILE`` (``key = value`` lines) and one flag
per key; flags override the file, unknown keys are rejected. Each run writes
``manifest_<command>.txt`` into the output directory with the resolved
configuration and the SHA-256 of every file it produced.
"""
from __future__ import annotations

import argparse
import hashlib
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataset as dsm
from .lsq import FitError, evaluate, fit_ls_model
from .machine import ACTIVE_SET, DriveParameters, OperatingConditions, read_key_values
from .mlp import ACTIVATIONS, MlpSpec, TrainConfig, fit_mlp, split_indices
from .models import MlpModel, exact_predictor, first_order_predictor, load_model, save_model
from .mpc import Reference, run_closed_loops
from .plant import PlantConfig, default_setpoints, generate_dataset

DEFAULT_REFS = "-50:-100,-100:-50,-150:-150,-20:-200,-200:-60"
CAPS = tuple(2**k for k in range(11))  # 1 .. 1024


def parse_bool(text: str) -> bool:
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class Option:
    name: str
    kind: object  # callable str -> value
    default: object
    help: str = ""


COMMON = (
    Option("seed", int, 0, "random seed"),
    Option("out", str, ".", "output directory"),
)
DRIVE = (
    Option("r_s", float, 0.018, "stator resistance, Ohm"),
    Option("l_d", float, 370e-6, "d inductance, H"),
    Option("l_q", float, 1200e-6, "q inductance, H"),
    Option("psi_p", float, 0.066, "magnet flux, V*s"),
    Option("pole_pairs", int, 3),
    Option("u_dc", float, 300.0, "DC-link voltage, V"),
    Option("i_max", float, 240.0, "current limit, A"),
    Option("n_me", float, 1000.0, "mechanical speed, 1/min"),
    Option("t_s", float, 50e-6, "controller cycle time, s"),
    Option("f_sw_max", float, 10e3, "switching frequency limit, Hz"),
)
PLANT = (
    Option("flux", str, "saturated", "linear or saturated"),
    Option("i_sat", float, 300.0, "saturation current, A"),
    Option("ripple", float, 0.01, "relative 6th-harmonic flux ripple"),
    Option("substeps", int, 10, "RK4 steps per cycle"),
    Option("noise_sigma", float, 0.1, "measurement noise, A"),
)
GRID = (
    Option("cell_size", float, 10.0, "dq cell edge, A"),
    Option("eps_bins", int, 36, "angle bins over one electrical turn"),
)

COMMANDS = {
    "generate": COMMON + DRIVE + PLANT + (
        Option("cycles", int, 210, "cycles per set point"),
        Option("setpoints", int, 478, "number of set points"),
        Option("random_prob", float, 0.3, "probability of a random vector"),
        Option("guard", parse_bool, True, "drop random vectors predicted beyond i_max"),
        Option("output", str, "dataset.csv", "dataset file name"),
    ),
    "balance": COMMON + GRID + (
        Option("input", str, None, "dataset CSV"),
        Option("cap", float, 48.0, "samples per class"),
        Option("i_max", float, 240.0, "current limit, A"),
    ),
    "fit": COMMON + DRIVE + (
        Option("method", str, "ls", "whitebox, exact, ls or mlp"),
        Option("input", str, None, "dataset CSV (optional for whitebox/exact)"),
        Option("holdout", float, 0.1, "held-out fraction for metrics"),
        Option("ridge", float, 0.0, "ridge penalty for ls"),
        Option("hidden", str, "64", "hidden widths, e.g. 64 or 32x32"),
        Option("activation", str, "tanh"),
        Option("epochs", int, 50),
        Option("learning_rate", float, 1e-3),
        Option("batch_size", int, 256),
        Option("ensemble", parse_bool, False, "one network per vector"),
    ),
    "evaluate": COMMON + (
        Option("model", str, None, "model file"),
        Option("input", str, None, "dataset CSV"),
    ),
    "compare": COMMON + DRIVE + PLANT + (
        Option("models", str, None, "comma-separated model files"),
        Option("refs", str, DEFAULT_REFS, "references i_d:i_q, comma-separated"),
        Option("cycles", int, 2000, "closed-loop cycles per reference"),
    ),
    "classes": GRID + (Option("i_max", float, 240.0, "current limit, A"),),
}


class ConfigError(ValueError):
    pass


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then flags. Values are converted and checked."""
    options = {o.name: o for o in COMMANDS[command]}
    raw: dict[str, object] = {}
    if args.config:
        file_values = read_key_values(args.config)
        unknown = sorted(set(file_values) - set(options))
        if unknown:
            raise ConfigError(f"unknown keys for '{command}' in {args.config}: {unknown}")
        raw.update(file_values)
    for name in options:
        flag = getattr(args, name, None)
        if flag is not None:
            raw[name] = flag
    cfg = {}
    for name, opt in options.items():
        if name in raw:
            try:
                cfg[name] = opt.kind(raw[name])
            except ValueError as exc:
                raise ConfigError(f"bad value for {name}: {raw[name]!r} ({exc})") from None
        else:
            cfg[name] = opt.default
    return cfg


def _drive(cfg) -> tuple[DriveParameters, OperatingConditions]:
    p = DriveParameters(**{k: cfg[k] for k in ("r_s", "l_d", "l_q", "psi_p", "pole_pairs", "u_dc", "i_max")})
    c = OperatingConditions(n_me=cfg["n_me"], t_s=cfg["t_s"], f_sw_max=cfg["f_sw_max"], pole_pairs=p.pole_pairs)
    return p, c


def _plant(cfg) -> PlantConfig:
    p, c = _drive(cfg)
    return PlantConfig(
        params=p, cond=c, flux=cfg["flux"], i_sat=cfg["i_sat"], ripple=cfg["ripple"],
        substeps=cfg["substeps"], noise_sigma=cfg["noise_sigma"], seed=cfg["seed"],
    )


def _grid(cfg) -> dsm.GridSpec:
    i_max, step = cfg["i_max"], cfg["cell_size"]
    return dsm.GridSpec(-i_max, 0.0, step, -i_max, 0.0, step, cfg["eps_bins"], i_max)


def _require(cfg, *names):
    for name in names:
        if cfg[name] is None:
            raise ConfigError(f"missing required key '{name}'")


def _write_manifest(out: Path, command: str, cfg: dict, files) -> Path:
    path = out / f"manifest_{command}.txt"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"command = {command}\n")
        for key in sorted(cfg):
            fh.write(f"{key} = {cfg[key]}\n")
        for f in files:
            digest = hashlib.sha256(Path(f).read_bytes()).hexdigest()
            fh.write(f"output {Path(f).name} sha256 = {digest}\n")
    return path


def cmd_generate(cfg) -> list[Path]:
    out = Path(cfg["out"])
    plant = _plant(cfg)
    sp = default_setpoints(cfg["setpoints"], plant.params.i_max)
    ds = generate_dataset(plant, sp, cfg["cycles"], cfg["random_prob"], guard=cfg["guard"])
    data_path = out / cfg["output"]
    dsm.write_csv(ds, data_path)
    stats_path = data_path.with_name(data_path.stem + "_stats.csv")
    grid = dsm.GridSpec(i_max=plant.params.i_max, d_lo=-plant.params.i_max, q_lo=-plant.params.i_max)
    coverage = dsm.homogeneity(ds, grid, 1) if len(ds) else {n: 0.0 for n in ACTIVE_SET}
    counts = ds.counts()
    with open(stats_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("subset,count,class_coverage\n")
        for n in ACTIVE_SET:
            fh.write(f"{n},{counts.get(n, 0)},{coverage[n]:.9f}\n")
    print(f"wrote {len(ds)} samples to {data_path}")
    return [data_path, stats_path]


def cmd_balance(cfg) -> list[Path]:
    _require(cfg, "input")
    out = Path(cfg["out"])
    grid = _grid(cfg)
    ds = dsm.read_csv(cfg["input"])
    res = dsm.balance(ds, grid, cfg["cap"], seed=cfg["seed"])
    paths = [out / "balanced.csv", out / "remainder.csv", out / "rejects.csv", out / "homogeneity.csv"]
    for part, path in zip(res, paths):
        dsm.write_csv(part, path)
    dsm.write_homogeneity_csv(dsm.homogeneity_curve(ds, grid, CAPS), paths[3])
    print(f"balanced {len(res.balanced)}, remainder {len(res.remainder)}, rejects {len(res.rejects)}")
    return paths


def _holdout_split(ds, cfg):
    tr, te = split_indices(len(ds), cfg["holdout"], cfg["seed"])
    return ds.take(tr), ds.take(te)


def cmd_fit(cfg) -> list[Path]:
    out = Path(cfg["out"])
    method = cfg["method"]
    p, c = _drive(cfg)
    data = dsm.read_csv(cfg["input"]) if cfg["input"] else None
    train_part = test_part = None
    if data is not None:
        if not 0 < cfg["holdout"] < 1:
            raise ConfigError("holdout must lie in (0, 1)")
        train_part, test_part = _holdout_split(data, cfg)
    if method == "whitebox":
        model = first_order_predictor(p, c)
    elif method == "exact":
        model = exact_predictor(p, c)
    elif method == "ls":
        _require(cfg, "input")
        model, _ = fit_ls_model(train_part, c.t_s, ridge=cfg["ridge"])
    elif method == "mlp":
        _require(cfg, "input")
        if cfg["activation"] not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")
        hidden = tuple(int(w) for w in cfg["hidden"].lower().split("x") if w)
        spec = MlpSpec(hidden=hidden, activation=cfg["activation"])
        tc = TrainConfig(
            learning_rate=cfg["learning_rate"], batch_size=cfg["batch_size"],
            epochs=cfg["epochs"], seed=cfg["seed"],
        )
        if cfg["ensemble"]:
            nets = {}
            for n in ACTIVE_SET:
                part = train_part.subset(n)
                if len(part) < 2:
                    raise FitError(f"not enough samples to train the network for n={n}")
                nets[n] = fit_mlp(part, spec, tc)[0]
            model = MlpModel(nets, c.t_s)
        else:
            model = MlpModel(fit_mlp(train_part, spec, tc)[0], c.t_s)
    else:
        raise ConfigError(f"unknown method {method!r}; use whitebox, exact, ls or mlp")
    model_path = out / f"model_{method}.txt"
    save_model(model, model_path)
    written = [model_path]
    if test_part is not None and len(test_part):
        metrics_path = out / f"metrics_{method}.csv"
        ev = evaluate(model, test_part)
        ev.write_csv(metrics_path)
        written.append(metrics_path)
        print(f"{method}: holdout rms_d={ev.rms_d:.6g} A, rms_q={ev.rms_q:.6g} A")
    return written


def cmd_evaluate(cfg) -> list[Path]:
    _require(cfg, "model", "input")
    out = Path(cfg["out"])
    model = load_model(cfg["model"])
    ev = evaluate(model, dsm.read_csv(cfg["input"]))
    path = out / f"evaluation_{Path(cfg['model']).stem}.csv"
    ev.write_csv(path)
    print(f"{model.kind}: rms_d={ev.rms_d:.6g} A, rms_q={ev.rms_q:.6g} A over {ev.count} samples")
    return [path]


def parse_refs(text: str, i_max: float) -> list[Reference]:
    refs = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            d, q = (float(v) for v in item.split(":"))
        except ValueError:
            raise ConfigError(f"reference {item!r} is not of the form i_d:i_q") from None
        refs.append(Reference(d, q, i_max))
    if not refs:
        raise ConfigError("no references given")
    return refs


def cmd_compare(cfg) -> list[Path]:
    _require(cfg, "models")
    out = Path(cfg["out"])
    files = [f.strip() for f in cfg["models"].split(",") if f.strip()]
    if len(files) < 2:
        raise ConfigError("compare needs at least two model files")
    plant = _plant(cfg)
    refs = parse_refs(cfg["refs"], plant.params.i_max)
    path = out / "compare.csv"
    rows = []
    for f in files:
        model = load_model(f)
        for r in run_closed_loops(plant, model, refs, cfg["cycles"]):
            rows.append((Path(f).stem, model.kind, r))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("model,kind,ref_d,ref_q,rms,f_sw,f_sw_exceeded\n")
        for name, kind, r in rows:
            fh.write(
                f"{name},{kind},{r.ref.i_d_ref:g},{r.ref.i_q_ref:g},{r.rms_error:.9g},"
                f"{r.f_sw:.9g},{str(r.f_sw_exceeded).lower()}\n"
            )
    for f in files:
        stem = Path(f).stem
        errs = [r.rms_error for name, _, r in rows if name == stem]
        print(f"{stem}: pooled steady-state rms {math.sqrt(np.mean(np.square(errs))):.6g} A")
    return [path]


def cmd_classes(cfg) -> list[Path]:
    grid = _grid(cfg)
    cells = int(dsm.valid_dq_mask(grid).sum())
    print(f"valid dq cells: {cells}")
    print(f"valid classes: {cells * grid.eps_bins}")
    return []


HANDLERS = {
    "generate": cmd_generate,
    "balance": cmd_balance,
    "fit": cmd_fit,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "classes": cmd_classes,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drive-sysid", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, options in COMMANDS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="key = value file; flags override it")
        for opt in options:
            shown = "" if opt.default is None else f" (default {opt.default})"
            sp.add_argument(f"--{opt.name.replace('_', '-')}", dest=opt.name, default=None, help=opt.help + shown)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args.command, args)
        if "out" in cfg:
            Path(cfg["out"]).mkdir(parents=True, exist_ok=True)
        written = HANDLERS[args.command](cfg)
        if "out" in cfg:
            _write_manifest(Path(cfg["out"]), args.command, cfg, written)
    except (ConfigError, dsm.SchemaError, FitError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
