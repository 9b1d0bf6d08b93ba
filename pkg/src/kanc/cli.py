"""Batch command-line front end.

Subcommands wire the library into reproducible runs:

* ``gen-data``  — write one voltage-grid dataset as CSV
* ``train``     — train one network (or a seed sweep) from an INI config
* ``eval``      — error summary plus derivative sweeps for a checkpoint
* ``derivs``    — gate-sweep derivative curves at fixed drain biases
* ``symbolic``  — closed-form extraction from a spline-network checkpoint
* ``report``    — combined summary table over several checkpoints

Every command writes a JSON run manifest alongside its outputs holding the
resolved configuration, the seed, content hashes of the input files, and
the output names.  Manifests carry no timestamps, so a rerun with identical
inputs produces byte-identical artifacts.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical
divergence (partial artifacts are kept).
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
from dataclasses import asdict, replace

from . import device, evaluate, networks, symbolic, training

try:
    from importlib.metadata import PackageNotFoundError
    from importlib.metadata import version as _pkg_version
    VERSION = _pkg_version("kanc")
except PackageNotFoundError:      # running from a source tree
    VERSION = "0.0.0"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGED = 3


class ConfigError(ValueError):
    """Raised for malformed or contradictory run configuration."""


# ----------------------------------------------------------------------
# manifests
# ----------------------------------------------------------------------

def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, command: str, config: dict, seed,
                   inputs: list, outputs: list) -> None:
    manifest = {
        "version": VERSION,
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": sorted(str(o) for o in outputs),
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _write_rows(path, header: str, rows: list) -> None:
    with open(path, "w") as fh:
        fh.write("\n".join([header] + rows) + "\n")


def _fmt(x) -> str:
    return "" if x is None else "%.17g" % x


# ----------------------------------------------------------------------
# train configuration: INI file merged with mirroring flags
# ----------------------------------------------------------------------

def _parse_bool(raw: str) -> bool:
    low = str(raw).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_ladder(raw) -> tuple:
    if isinstance(raw, tuple):
        return raw
    toks = [t for t in str(raw).replace(",", " ").split() if t]
    if not toks:
        raise ValueError("empty ladder")
    return tuple(int(t) for t in toks)


TRAIN_FIELDS = {
    "family": str,
    "target": str,
    "arch": str,
    "step_mv": int,
    "seed": int,
    "epochs": int,
    "full_budget": _parse_bool,
    "lr": float,
    "loss_weight": float,
    "weight_decay": float,
    "ladder": _parse_ladder,
    "plateau_window": int,
    "plateau_threshold": float,
    "plateau_factor": float,
    "lr_floor": float,
    "lbfgs_history": int,
}


def load_train_config(path) -> dict:
    """Parse the [train] section of an INI file into config values."""
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise ConfigError(f"cannot read config file {path!r}")
    known = {"train", "run"}
    extra = set(cp.sections()) - known
    if extra:
        raise ConfigError(f"unknown config sections: {sorted(extra)}")
    if not cp.has_section("train"):
        raise ConfigError("config file needs a [train] section")
    values = {}
    for key, raw in cp.items("train"):
        if key not in TRAIN_FIELDS:
            raise ConfigError(f"unknown [train] key {key!r}")
        try:
            values[key] = TRAIN_FIELDS[key](raw)
        except ValueError:
            raise ConfigError(f"bad value for [train] {key}: {raw!r}") from None
    if cp.has_section("run") and cp.has_option("run", "out_dir"):
        values["__out_dir"] = cp.get("run", "out_dir")
    return values


def build_train_config(args) -> tuple:
    """Resolve config file + flag overrides into (TrainConfig, out_dir)."""
    values = load_train_config(args.config) if args.config else {}
    out_dir = values.pop("__out_dir", None)
    for name in TRAIN_FIELDS:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = (TRAIN_FIELDS[name](flag)
                            if isinstance(flag, str) else flag)
    if "family" not in values:
        raise ConfigError("a network family is required (flag or [train] section)")
    if args.out_dir is not None:
        out_dir = args.out_dir
    cfg = training.TrainConfig(**values)
    if cfg.family not in ("mlp", "kan", "fkan"):
        raise ConfigError(f"unknown family {cfg.family!r}")
    if cfg.step_mv not in device.TRAIN_STEPS_MV:
        raise ConfigError(f"unsupported grid step {cfg.step_mv} mV")
    return cfg, (out_dir or ".")


def _config_dict(cfg: training.TrainConfig) -> dict:
    d = asdict(cfg)
    d["ladder"] = list(d["ladder"])
    return d


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    dataset = device.generate_dataset(args.step)
    device.save_dataset(dataset, args.out)
    write_manifest(str(args.out) + ".manifest.json", "gen-data",
                   {"step_mv": args.step, "out": str(args.out)}, None,
                   [], [os.path.basename(str(args.out))])
    return EXIT_OK


def _sweep_row(cfg, ck, log, dataset) -> dict:
    if log.diverged:
        return {"seed": cfg.seed, "diverged": True, "train_mape": None,
                "test_mape": None, "final_loss": None}
    errs = evaluate.split_errors(ck, dataset, cfg.target)
    return {"seed": cfg.seed, "diverged": False,
            "train_mape": errs["train"], "test_mape": errs["test"],
            "final_loss": ck.meta["final_loss"]}


def cmd_train(args) -> int:
    cfg, out_dir = build_train_config(args)
    os.makedirs(out_dir, exist_ok=True)
    inputs = [args.config] if args.config else []
    outputs = []
    if args.sweep:
        dataset = device.generate_dataset(cfg.step_mv)
        rows = []
        for offset in range(args.sweep):
            run_cfg = replace(cfg, seed=cfg.seed + offset)
            ck, log = training.train(run_cfg)
            ck_name = f"checkpoint_seed{run_cfg.seed}.txt"
            log_name = f"trainlog_seed{run_cfg.seed}.csv"
            networks.save_checkpoint(ck, os.path.join(out_dir, ck_name))
            training.save_trainlog(log, os.path.join(out_dir, log_name))
            outputs += [ck_name, log_name]
            rows.append(_sweep_row(run_cfg, ck, log, dataset))
        table = [",".join([str(r["seed"]), str(int(r["diverged"])),
                           _fmt(r["train_mape"]), _fmt(r["test_mape"]),
                           _fmt(r["final_loss"])]) for r in rows]
        _write_rows(os.path.join(out_dir, "sweep.csv"),
                    "seed,diverged,train_mape,test_mape,final_loss", table)
        outputs.append("sweep.csv")
        diverged = all(r["diverged"] for r in rows)
    else:
        ck, log = training.train(cfg)
        networks.save_checkpoint(ck, os.path.join(out_dir, "checkpoint.txt"))
        training.save_trainlog(log, os.path.join(out_dir, "trainlog.csv"))
        outputs += ["checkpoint.txt", "trainlog.csv"]
        diverged = log.diverged
    write_manifest(os.path.join(out_dir, "manifest.json"), "train",
                   {**_config_dict(cfg), "out_dir": out_dir,
                    "sweep": int(args.sweep or 0)},
                   cfg.seed, inputs, outputs)
    return EXIT_DIVERGED if diverged else EXIT_OK


def _load_dataset_for(ck, step, data_path):
    if data_path:
        return device.load_dataset(data_path)
    step = step if step is not None else int(ck.meta.get("step_mv", 10))
    return device.generate_dataset(step)


def _report_names(reports) -> list:
    names = ["summary.csv"]
    for idx, r in enumerate(reports):
        for vd in sorted(r.sweeps):
            names.append(f"sweep_{idx}_{r.target}_vd{vd:g}.csv")
    return names


def cmd_eval(args) -> int:
    ck = networks.load_checkpoint(args.checkpoint)
    dataset = _load_dataset_for(ck, args.step, args.data)
    os.makedirs(args.out_dir, exist_ok=True)
    reports = evaluate.make_report([ck], dataset, args.out_dir)
    inputs = [args.checkpoint] + ([args.data] if args.data else [])
    write_manifest(os.path.join(args.out_dir, "manifest.json"), "eval",
                   {"checkpoint": str(args.checkpoint),
                    "step_mv": dataset.step_mv},
                   ck.meta.get("seed"), inputs, _report_names(reports))
    return EXIT_OK


def cmd_derivs(args) -> int:
    ck = networks.load_checkpoint(args.checkpoint)
    os.makedirs(args.out_dir, exist_ok=True)
    outputs = []
    for vd in args.vd:
        curve = evaluate.derivative_sweep(ck, vd)
        name = f"deriv_vd{vd:g}.csv"
        rows = ["%.17g,%.17g,%.17g" % (g, f1, f2) for g, f1, f2
                in zip(curve.v_g, curve.first, curve.second)]
        _write_rows(os.path.join(args.out_dir, name), "V_G,first,second", rows)
        outputs.append(name)
    write_manifest(os.path.join(args.out_dir, "manifest.json"), "derivs",
                   {"checkpoint": str(args.checkpoint),
                    "vd": [float(v) for v in args.vd]},
                   ck.meta.get("seed"), [args.checkpoint], outputs)
    return EXIT_OK


def cmd_symbolic(args) -> int:
    ck = networks.load_checkpoint(args.checkpoint)
    dataset = _load_dataset_for(ck, args.step, None)
    if args.mode == "posthoc":
        model, rounds = symbolic.posthoc_sr(ck, dataset)
    else:
        model, rounds = symbolic.iterative_sr(
            ck, dataset, k=args.k, retrain_epochs=args.retrain_epochs,
            lr=args.lr)
    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "formula.txt"), "w") as fh:
        fh.write(model.text + "\n")
    test_mape = (model.mape(dataset, "test")
                 if dataset.test_inputs().shape[0] else None)
    blob = {"target": model.target, "text": model.text,
            "tree": model.tree.to_dict(),
            "train_mape": model.mape(dataset, "train"),
            "test_mape": test_mape}
    with open(os.path.join(args.out_dir, "formula.json"), "w") as fh:
        fh.write(json.dumps(blob, indent=2, sort_keys=True) + "\n")
    table = []
    for r in rounds:
        edges = ";".join(f"{l}:{i}:{j}={name}"
                         for (l, i, j), name, _ in r["fixed"])
        table.append(",".join([str(r["round"]), edges,
                               _fmt(r["train_mape"]),
                               str(r["retrain_epochs"]),
                               str(int(r["diverged"]))]))
    _write_rows(os.path.join(args.out_dir, "rounds.csv"),
                "round,edges,train_mape,retrain_epochs,diverged", table)
    outputs = ["formula.txt", "formula.json", "rounds.csv"]
    write_manifest(os.path.join(args.out_dir, "manifest.json"), "symbolic",
                   {"checkpoint": str(args.checkpoint), "mode": args.mode,
                    "k": args.k, "retrain_epochs": args.retrain_epochs,
                    "step_mv": dataset.step_mv},
                   ck.meta.get("seed"), [args.checkpoint], outputs)
    return EXIT_DIVERGED if any(r["diverged"] for r in rounds) else EXIT_OK


def cmd_report(args) -> int:
    cks = [networks.load_checkpoint(p) for p in args.checkpoints]
    dataset = _load_dataset_for(cks[0], args.step, None)
    os.makedirs(args.out_dir, exist_ok=True)
    reports = evaluate.make_report(cks, dataset, args.out_dir)
    write_manifest(os.path.join(args.out_dir, "manifest.json"), "report",
                   {"checkpoints": [str(p) for p in args.checkpoints],
                    "step_mv": dataset.step_mv},
                   None, list(args.checkpoints), _report_names(reports))
    return EXIT_OK


# ----------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kanc",
        description="Compact-model network training and analysis toolkit.")
    parser.add_argument("--version", action="version",
                        version=f"kanc {VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a voltage-grid dataset CSV")
    p.add_argument("--step", type=int, required=True,
                   choices=device.TRAIN_STEPS_MV,
                   help="training-grid step in mV")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one network or a seed sweep")
    p.add_argument("--config", help="INI file with a [train] section")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--sweep", type=int, default=0, metavar="N",
                   help="train N replicas differing only in seed")
    p.add_argument("--family", choices=("mlp", "kan", "fkan"))
    p.add_argument("--target", choices=device.FIELD_NAMES)
    p.add_argument("--arch")
    p.add_argument("--step-mv", dest="step_mv", type=int,
                   choices=device.TRAIN_STEPS_MV)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--full-budget", dest="full_budget",
                   action="store_true", default=None)
    p.add_argument("--lr", type=float)
    p.add_argument("--loss-weight", dest="loss_weight", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--ladder", help="comma-separated grid sizes")
    p.add_argument("--plateau-window", dest="plateau_window", type=int)
    p.add_argument("--plateau-threshold", dest="plateau_threshold", type=float)
    p.add_argument("--plateau-factor", dest="plateau_factor", type=float)
    p.add_argument("--lr-floor", dest="lr_floor", type=float)
    p.add_argument("--lbfgs-history", dest="lbfgs_history", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="summary errors and sweep curves")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--step", type=int, choices=device.TRAIN_STEPS_MV,
                   help="regenerate the dataset at this step")
    p.add_argument("--data", help="dataset CSV from gen-data")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("derivs", help="gate-sweep derivative curves")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vd", type=float, nargs="+",
                   default=list(evaluate.SWEEP_VDS),
                   help="fixed drain biases in volts")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_derivs)

    p = sub.add_parser("symbolic", help="closed-form extraction")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", choices=("posthoc", "iterative"),
                   default="iterative")
    p.add_argument("--k", type=int, default=3,
                   help="edges pinned per round (iterative mode)")
    p.add_argument("--retrain-epochs", dest="retrain_epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--step", type=int, choices=device.TRAIN_STEPS_MV)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_symbolic)

    p = sub.add_parser("report", help="summary table over checkpoints")
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--step", type=int, choices=device.TRAIN_STEPS_MV)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else EXIT_USAGE
        return EXIT_OK if code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, networks.CheckpointError,
            device.VoltageRangeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
