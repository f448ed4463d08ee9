"""Command-line experiment runner.

Subcommands::

    surge-al generate   write a synthetic pump DoE to CSV
    surge-al run        active-learning and random-baseline campaigns
    surge-al evaluate   score a saved ensemble checkpoint on a CSV
    surge-al compare    align learning curves and summarize across seeds

Every subcommand takes ``--config FILE`` (INI key = value pairs, keys named
like the long flags) and ``--out-dir``.  Flags on the command line override
the config file.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import os
import re
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import BACKEND
from .active_learning import STRATEGIES, ALConfig, LearningCurve, run_campaign, validate
from .ensemble import Ensemble, predict_pooled_batch
from .metrics import DEFAULT_MAPE_FLOOR, DEFAULT_THRESHOLD_PCT, metrics_report
from .nnet import Architecture, NetworkParams, TrainConfig
from .pump_data import (
    GeneratorConfig,
    Scaler,
    generate_synthetic,
    load_csv,
    samples_to_arrays,
    save_csv,
)

log = logging.getLogger("surge_al")

OUT_DIR_ENV = "SURGE_AL_OUT_DIR"
CURVE_COLUMNS = ("iteration", "train_size", "rmse", "r2", "mape_pct", "max_error",
                 "acceptance_pct", "mean_pool_variance")
CHECKPOINT_FORMAT = "surge_al.ensemble"
CHECKPOINT_VERSION = 1


class UsageError(Exception):
    """Invalid arguments or configuration; exit status 2."""


class CheckpointError(Exception):
    pass


def _fmt(v) -> str:
    return repr(float(v))


# ---------------------------------------------------------------- curves

def write_curve(curve: LearningCurve, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for r in curve.records:
            w.writerow([r.iteration, r.train_size, _fmt(r.test_rmse), _fmt(r.test_r2),
                        _fmt(r.test_mape), _fmt(r.test_max_error),
                        _fmt(r.acceptance_accuracy), _fmt(r.mean_pool_variance)])


def write_selected(curve: LearningCurve, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("iteration", "index"))
        for r in curve.records:
            for idx in r.selected_idx:
                w.writerow((r.iteration, idx))


def read_curve(path) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "train_size" not in reader.fieldnames:
            raise ValueError(f"{path}: not a learning-curve file (no train_size column)")
        rows = list(reader)
    return {name: np.array([float(r[name]) for r in rows]) for name in reader.fieldnames}


# ----------------------------------------------------------- checkpoints

def save_checkpoint(path, ensemble: Ensemble, scaler: Scaler, extra: dict | None = None) -> None:
    members = {f"member_{i}": m.theta for i, m in enumerate(ensemble.members)}
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "arch": ensemble.arch.to_dict(),
        "n_params": ensemble.arch.n_params,
        "member_seeds": list(ensemble.member_seeds),
        "variance_floor": ensemble.variance_floor,
        "scaler": scaler.to_dict(),
        "scaler_ref": ensemble.scaler_ref,
        "sha256": {k: hashlib.sha256(v.astype("<f8").tobytes()).hexdigest()
                   for k, v in members.items()},
        "extra": extra or {},
    }
    blob = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, meta=blob, **members)


def load_checkpoint(path) -> tuple[Ensemble, Scaler, dict]:
    try:
        with np.load(path, allow_pickle=False) as npz:
            arrays = {k: npz[k] for k in npz.files}
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc.__class__.__name__}: {exc})") from exc
    try:
        meta = json.loads(arrays.pop("meta").tobytes().decode("utf-8"))
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: missing or corrupt metadata") from exc
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: unknown format {meta.get('format')!r}")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {meta.get('version')!r}")
    arch = Architecture.from_dict(meta["arch"])
    if arch.n_params != meta["n_params"]:
        raise CheckpointError(
            f"{path}: architecture {meta['arch']} implies {arch.n_params} parameters, "
            f"checkpoint declares {meta['n_params']}")
    n_members = len(meta["member_seeds"])
    members = []
    for i in range(n_members):
        key = f"member_{i}"
        if key not in arrays:
            raise CheckpointError(f"{path}: {key} missing")
        theta = arrays[key]
        if theta.shape != (arch.n_params,):
            raise CheckpointError(
                f"{path}: {key} has {theta.size} parameters, architecture needs {arch.n_params}")
        digest = hashlib.sha256(theta.astype("<f8").tobytes()).hexdigest()
        if digest != meta["sha256"].get(key):
            raise CheckpointError(f"{path}: {key} does not match its recorded checksum")
        members.append(NetworkParams(arch, theta))
    scaler = Scaler.from_dict(meta["scaler"])
    if len(scaler.feature_mean) != arch.input_dim:
        raise CheckpointError(
            f"{path}: scaler covers {len(scaler.feature_mean)} features, network expects {arch.input_dim}")
    if meta["scaler_ref"] and scaler.fingerprint() != meta["scaler_ref"]:
        raise CheckpointError(f"{path}: scaler does not match the one used for training")
    ens = Ensemble(members, list(meta["member_seeds"]), meta["scaler_ref"],
                   float(meta["variance_floor"]))
    return ens, scaler, meta


# -------------------------------------------------------------- argparse

def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in re.split(r"[,\s]+", text.strip()) if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _str_list(text: str) -> list[str]:
    return [t for t in re.split(r"[,\s]+", text.strip()) if t]


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {v}")
    return v


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI file of option = value pairs")
    p.add_argument("--out-dir", type=Path, default=None,
                   help=f"output directory (default: ${OUT_DIR_ENV} or ./surge_al_out)")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_generator(p: argparse.ArgumentParser, n_default: int = 5000) -> None:
    g = p.add_argument_group("synthetic data")
    g.add_argument("--n", type=_positive_int, default=n_default, help="number of samples")
    g.add_argument("--noise-scale", type=float, default=GeneratorConfig.noise_scale)
    g.add_argument("--heteroscedastic", type=_bool, default=True,
                   help="noise grows towards the surge line (default true)")
    g.add_argument("--data-seed", type=int, default=None,
                   help="generator seed (default: --seed, or 0 for run)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="surge-al",
        description="Active-learning deep-ensemble surrogate for pump surge distance.",
        epilog=f"Environment: {OUT_DIR_ENV} sets the default --out-dir. "
               "SURGE_AL_BACKEND=python|cython selects the training kernels.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic DoE CSV")
    _add_common(g)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", type=Path, default=None, help="CSV path (default OUT_DIR/data.csv)")
    _add_generator(g)

    r = sub.add_parser("run", help="run AL and baseline campaigns")
    _add_common(r)
    r.add_argument("--seed", "--seeds", dest="seeds", type=_int_list, default=[0],
                   help="campaign seed(s), comma-separated")
    r.add_argument("--data", type=Path, default=None, help="CSV input; generated when omitted")
    _add_generator(r)
    r.add_argument("--strategies", type=_str_list, default=list(STRATEGIES))
    d = ALConfig()
    r.add_argument("--initial", type=int, default=d.initial_train_size)
    r.add_argument("--k", type=int, default=d.batch_k, help="points acquired per round")
    r.add_argument("--m", type=int, default=d.candidate_multiplier,
                   help="candidates scored per round = m * k")
    r.add_argument("--iterations", type=int, default=None)
    r.add_argument("--budget", type=int, default=d.total_budget)
    r.add_argument("--test-fraction", type=float, default=d.test_fraction)
    r.add_argument("--members", type=int, default=d.n_members)
    r.add_argument("--warm-start", type=_bool, default=True)
    r.add_argument("--jobs", type=int, default=1, help="threads for member training")
    t = TrainConfig()
    r.add_argument("--hidden", type=_int_list, default=list(Architecture().hidden_dims))
    r.add_argument("--tanh-scale", type=float, default=Architecture().tanh_scale)
    r.add_argument("--epochs", type=int, default=t.epochs)
    r.add_argument("--batch-size", type=int, default=t.batch_size)
    r.add_argument("--lr", type=float, default=t.base_lr)
    r.add_argument("--decay-factor", type=float, default=t.decay_factor)
    r.add_argument("--decay-start", type=int, default=t.decay_start_epoch)
    r.add_argument("--variance-floor", type=float, default=t.variance_floor)
    r.add_argument("--threshold-pct", type=float, default=DEFAULT_THRESHOLD_PCT)
    r.add_argument("--mape-floor", type=float, default=DEFAULT_MAPE_FLOOR)

    e = sub.add_parser("evaluate", help="score a checkpoint on a CSV")
    _add_common(e)
    e.add_argument("--seed", type=int, default=0, help="unused; accepted for symmetry")
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--out", type=Path, default=None,
                   help="JSON report path (default OUT_DIR/evaluation.json)")
    e.add_argument("--threshold-pct", type=float, default=DEFAULT_THRESHOLD_PCT)
    e.add_argument("--mape-floor", type=float, default=DEFAULT_MAPE_FLOOR)

    c = sub.add_parser("compare", help="summarize learning curves across seeds")
    _add_common(c)
    c.add_argument("--seed", type=int, default=0, help="unused; accepted for symmetry")
    c.add_argument("curves", nargs="+", metavar="[LABEL=]CURVE.csv",
                   help="curve files; label defaults to the file name without _seedN")
    c.add_argument("--metric", default="rmse", choices=CURVE_COLUMNS[2:])
    c.add_argument("--out", type=Path, default=None,
                   help="comparison CSV path (default OUT_DIR/comparison.csv)")
    return parser


def _read_config(path: Path) -> dict[str, str]:
    text = path.read_text(encoding="utf-8")
    cp = configparser.ConfigParser()
    if not re.search(r"^\s*\[", text, flags=re.M):
        text = "[surge_al]\n" + text
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise UsageError(f"{path}: {exc}") from None
    values = {}
    for section in cp.sections():
        for key, val in cp.items(section):
            values[key.replace("-", "_")] = val
    return values


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    if not args.config.exists():
        parser.error(f"config file {args.config} not found")
    values = _read_config(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in sub._actions}
    unknown = sorted(k for k in values if k not in known or k in ("help", "config"))
    if unknown:
        parser.error(f"unknown key(s) in {args.config}: {', '.join(unknown)}")
    defaults = {}
    for key, val in values.items():
        action = known[key]
        if action.nargs == "+":
            defaults[key] = _str_list(val)
        elif isinstance(action, argparse._StoreTrueAction):
            defaults[key] = _bool(val)
        elif action.type is Path:
            # relative to the config file's directory
            p = Path(val)
            defaults[key] = p if p.is_absolute() else args.config.parent / p
        else:
            defaults[key] = val
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _out_dir(args) -> Path:
    out = args.out_dir or Path(os.environ.get(OUT_DIR_ENV, "surge_al_out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


# -------------------------------------------------------------- commands

def _generator_config(args, seed: int) -> GeneratorConfig:
    try:
        return GeneratorConfig(n_samples=args.n, seed=seed, noise_scale=args.noise_scale,
                               heteroscedastic=args.heteroscedastic)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_generate(args) -> int:
    seed = args.data_seed if args.data_seed is not None else args.seed
    cfg = _generator_config(args, seed)
    out = args.out or _out_dir(args) / "data.csv"
    if args.out is not None and args.out.parent != Path(""):
        args.out.parent.mkdir(parents=True, exist_ok=True)
    save_csv(generate_synthetic(cfg), out)
    print(f"wrote {cfg.n_samples} samples (seed {cfg.seed}) to {out}")
    return 0


def _al_configs(args) -> list[ALConfig]:
    try:
        arch = Architecture(5, tuple(args.hidden), args.tanh_scale)
        tc = TrainConfig(base_lr=args.lr, decay_factor=args.decay_factor,
                         decay_start_epoch=args.decay_start, epochs=args.epochs,
                         batch_size=args.batch_size, variance_floor=args.variance_floor)
        return [ALConfig(initial_train_size=args.initial, candidate_multiplier=args.m,
                         batch_k=args.k, iterations=args.iterations,
                         total_budget=args.budget, test_fraction=args.test_fraction,
                         seed=s, n_members=args.members, warm_start=args.warm_start,
                         arch=arch, train_config=tc, threshold_pct=args.threshold_pct,
                         mape_floor=args.mape_floor)
                for s in args.seeds]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_run(args) -> int:
    if not args.seeds:
        raise UsageError("at least one seed is required")
    bad = [s for s in args.strategies if s not in STRATEGIES]
    if bad or not args.strategies:
        raise UsageError(f"strategies must be drawn from {', '.join(STRATEGIES)}; got {args.strategies}")
    configs = _al_configs(args)

    if args.data is not None:
        samples = load_csv(args.data)
        data_desc = {"csv": str(args.data),
                     "sha256": hashlib.sha256(Path(args.data).read_bytes()).hexdigest()}
    else:
        gcfg = _generator_config(args, args.data_seed if args.data_seed is not None else 0)
        samples = generate_synthetic(gcfg)
        data_desc = {"generate": {k: (list(v) if isinstance(v, tuple) else v)
                                  for k, v in asdict(gcfg).items()}}
    X, y = samples_to_arrays(samples)
    for cfg in configs:
        try:
            validate(X.shape[0], cfg)
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    out = _out_dir(args)
    (out / "curves").mkdir(exist_ok=True)
    (out / "checkpoints").mkdir(exist_ok=True)
    (out / "selected").mkdir(exist_ok=True)
    runs = []
    for strategy in args.strategies:
        for cfg in configs:
            name = f"{strategy}_seed{cfg.seed}"
            t0 = time.perf_counter()
            curve, ens = run_campaign(X, y, cfg, strategy, n_jobs=args.jobs)
            elapsed = time.perf_counter() - t0
            curve_path = out / "curves" / f"{name}.csv"
            sel_path = out / "selected" / f"{name}.csv"
            ck_path = out / "checkpoints" / f"{name}.npz"
            write_curve(curve, curve_path)
            write_selected(curve, sel_path)
            save_checkpoint(ck_path, ens, curve.scaler,
                            {"strategy": strategy, "seed": cfg.seed,
                             "test_idx": [int(i) for i in curve.final_state.test_idx]})
            last = curve.records[-1]
            print(f"{name}: {len(curve.records)} records, final train_size {last.train_size}, "
                  f"test RMSE {last.test_rmse:.4f}, within ±{cfg.threshold_pct:g}%: "
                  f"{last.acceptance_accuracy:.1f}% ({curve.stop_reason}, {elapsed:.1f}s)")
            runs.append({"strategy": strategy, "seed": cfg.seed, "curve": str(curve_path),
                         "selected": str(sel_path), "checkpoint": str(ck_path),
                         "stop_reason": curve.stop_reason, "seconds": round(elapsed, 3)})

    manifest = {
        "tool": "surge_al",
        "version": __version__,
        "backend": BACKEND,
        "data": data_desc,
        "strategies": list(args.strategies),
        "seeds": list(args.seeds),
        "al_config": {str(c.seed): c.to_dict() for c in configs},
        "jobs": args.jobs,
        "runs": runs,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"manifest: {out / 'manifest.json'}")
    return 0


def cmd_evaluate(args) -> int:
    ens, scaler, meta = load_checkpoint(args.checkpoint)
    X, y = samples_to_arrays(load_csv(args.data))
    if X.shape[0] == 0:
        raise ValueError(f"{args.data} contains no samples")
    mu, _ = predict_pooled_batch(ens, scaler.transform_features(X))
    report = metrics_report(scaler.invert_target(mu), y, args.threshold_pct, args.mape_floor)
    payload = {"checkpoint": str(args.checkpoint), "data": str(args.data), **report.to_dict()}
    out = args.out or _out_dir(args) / "evaluation.json"
    if args.out is not None and args.out.parent != Path(""):
        args.out.parent.mkdir(parents=True, exist_ok=True)
    Path(out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"n            {report.n}")
    print(f"R2           {report.r2:.6f}")
    print(f"RMSE         {report.rmse:.6f}")
    print(f"Max Error    {report.max_error:.6f}")
    print(f"MAPE %       {report.mape_pct:.6f}")
    print(f"within ±{report.threshold_pct:g}%  {report.acceptance_accuracy_pct:.2f}%")
    print(f"report: {out}")
    return 0


def _label_for(arg: str) -> tuple[str, Path]:
    if "=" in arg and not Path(arg).exists():
        label, path = arg.split("=", 1)
        return label, Path(path)
    path = Path(arg)
    return re.sub(r"_seed\d+$", "", path.stem), path


def compare_curves(curve_args: list[str], metric: str = "rmse"):
    """Align curves on their common budgets; returns ``(budgets, labels, table)``.

    ``table[label]`` holds ``(mean, std, n)`` arrays over the budgets; the std
    is the sample standard deviation across curves (0 for a single curve).
    """
    groups: dict[str, list[dict]] = {}
    grids = []
    for arg in curve_args:
        label, path = _label_for(arg)
        curve = read_curve(path)
        if metric not in curve:
            raise ValueError(f"{path}: no {metric} column")
        groups.setdefault(label, []).append(curve)
        grids.append((str(path), curve["train_size"].astype(int)))
    common = set(grids[0][1].tolist())
    for _, g in grids[1:]:
        common &= set(g.tolist())
    if not common:
        listing = "; ".join(f"{p}: {g.tolist()}" for p, g in grids)
        raise UsageError(f"curves share no training-set size: {listing}")
    budgets = np.array(sorted(common))
    table = {}
    for label, curves in groups.items():
        vals = []
        for c in curves:
            sizes = c["train_size"].astype(int)
            vals.append([c[metric][np.flatnonzero(sizes == b)[0]] for b in budgets])
        vals = np.array(vals)
        std = vals.std(axis=0, ddof=1) if len(vals) > 1 else np.zeros(len(budgets))
        table[label] = (vals.mean(axis=0), std, len(vals))
    return budgets, list(groups), table


def cmd_compare(args) -> int:
    budgets, labels, table = compare_curves(args.curves, args.metric)
    if "top_variance" in table and "random" in table:
        pair = ("top_variance", "random")
    elif len(labels) >= 2:
        pair = (labels[0], labels[1])
    else:
        pair = None
    delta = table[pair[0]][0] - table[pair[1]][0] if pair else None

    out = args.out or _out_dir(args) / "comparison.csv"
    if args.out is not None and args.out.parent != Path(""):
        args.out.parent.mkdir(parents=True, exist_ok=True)
    header = ["train_size"]
    for lab in labels:
        header += [f"{lab}_mean", f"{lab}_std", f"{lab}_n"]
    if pair:
        header.append(f"delta_{pair[0]}_minus_{pair[1]}")
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, b in enumerate(budgets):
            row = [int(b)]
            for lab in labels:
                mean, std, n = table[lab]
                row += [_fmt(mean[i]), _fmt(std[i]), n]
            if pair:
                row.append(_fmt(delta[i]))
            w.writerow(row)

    print(f"{args.metric} by training-set size")
    head = f"{'train_size':>10}" + "".join(f"  {lab:>24}" for lab in labels)
    if pair:
        head += f"  {'delta':>10}"
    print(head)
    for i, b in enumerate(budgets):
        line = f"{int(b):>10}"
        for lab in labels:
            mean, std, _ = table[lab]
            line += f"  {mean[i]:>13.4f} ± {std[i]:<8.4f}"
        if pair:
            line += f"  {delta[i]:>+10.4f}"
        print(line)
    if pair:
        print(f"delta = {pair[0]} - {pair[1]}")
    print(f"table: {out}")
    return 0


COMMANDS = {"generate": cmd_generate, "run": cmd_run, "evaluate": cmd_evaluate,
            "compare": cmd_compare}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"surge-al: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"surge-al {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, CheckpointError) as exc:
        print(f"surge-al {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
