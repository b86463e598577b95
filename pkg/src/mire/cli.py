"""Command-line front end: ``python -m mire <subcommand> ...``.

Every subcommand resolves its settings (defaults, then ``--config`` JSON, then
explicit flags), hashes them, and writes into ``<out>/<subcommand>-<hash>/`` so
that different settings never overwrite each other. Cells run in parallel when
the ``MIRE_WORKERS`` environment variable asks for more than one process.
"""

import argparse
import hashlib
import json
import os
import re
import sys
from dataclasses import replace

import numpy as np

from . import experiments as ex
from .gradcheck import LOSSES, check_many
from .losses import MireConfig
from .metrics import (SNAPSHOT_FIELDS, rows_to_csv, snapshot_rows, summarize, to_json)
from .stream import StreamConfig
from .theory import theory_table
from .trainer import METHODS, TrainConfig, TrainingDiverged, checkpoint_save

# flag -> default; the config file may set any of these by the same name
STREAM_KEYS = {"num_classes": 10, "classes_per_task": 2, "samples_per_class": 200,
               "input_dim": 16, "separation": 6.0, "batch_size": 10}
TRAIN_KEYS = {"lr": 0.2, "alpha": 0.02, "beta": 0.01, "delta": 5.0, "gamma": 0.99,
              "memory_size": 100, "replay_batch": 32, "noise_std": 0.1, "cc_subset": 10,
              "dml": "ms"}


class UsageError(Exception):
    pass


def parse_seeds(text):
    """``"0..9"`` (inclusive), ``"0,3,5"`` or a mix such as ``"0..2,7"``."""
    seeds = []
    for part in str(text).split(","):
        part = part.strip()
        m = re.fullmatch(r"(\d+)\.\.(\d+)", part)
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            if hi < lo:
                raise UsageError(f"empty seed range {part!r}")
            seeds.extend(range(lo, hi + 1))
        elif part.isdigit():
            seeds.append(int(part))
        else:
            raise UsageError(f"bad seed list {text!r}")
    if len(set(seeds)) != len(seeds):
        raise UsageError("seeds must be distinct")
    return seeds


def _common(p):
    p.add_argument("--out", default=None, help="output directory (default: ./mire-out)")
    p.add_argument("--seeds", default=None, help='e.g. "0..9" or "0,1,2"')
    p.add_argument("--config", default=None, help="JSON file with any of these settings")
    p.add_argument("--format", choices=("csv", "json"), default=None)


def _training_flags(p, with_stream=True):
    if with_stream:
        for key, default in STREAM_KEYS.items():
            p.add_argument("--" + key.replace("_", "-"), type=type(default), default=None)
        p.add_argument("--data", default=None,
                       help="CSV of label,f1,...,fd rows to use instead of the synthetic stream")
        p.add_argument("--skip-header", action="store_true", default=None,
                       help="the --data file starts with a header row")
    for key, default in TRAIN_KEYS.items():
        if key == "dml":
            p.add_argument("--dml", choices=("ms", "triplet", "npairs"), default=None)
        else:
            p.add_argument("--" + key.replace("_", "-"), type=type(default), default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="mire", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train one or more methods over seeds")
    _common(p)
    _training_flags(p)
    p.add_argument("--method", action="append", choices=METHODS, default=None,
                   help="repeatable; default mire++")

    p = sub.add_parser("ablate", help="the five-cell component ablation grid")
    _common(p)
    _training_flags(p)

    p = sub.add_parser("fwd-transfer", help="accuracy gaps on unseen tasks after task-1 training")
    _common(p)
    _training_flags(p)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--method", action="append", choices=METHODS, default=None,
                   help="repeatable; default ms-ncm and mire")

    p = sub.add_parser("mean-error", help="class-mean estimation error per snapshot")
    _common(p)
    _training_flags(p)
    p.add_argument("--method", choices=METHODS, default=None)

    p = sub.add_parser("theory", help="discrete maximizers of lambda*H(Z) - H(Z|Y)")
    _common(p)
    p.add_argument("--bins", type=int, default=None)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--lambdas", default=None, help="comma-separated, default 0.5,1,1.5")

    p = sub.add_parser("gradcheck", help="finite-difference check of the training losses")
    _common(p)
    p.add_argument("--tol", type=float, default=None)
    return parser


COMMAND_DEFAULTS = {
    "run": {"method": ["mire++"]},
    "ablate": {},
    "fwd-transfer": {"method": ["ms-ncm", "mire"], "epochs": 5},
    "mean-error": {"method": "mire++", "classes_per_task": 1},
    "theory": {"bins": 8, "classes": 2, "lambdas": "0.5,1,1.5"},
    "gradcheck": {"tol": 1e-4, "seeds": "0..49"},
}


def resolve(args):
    """Defaults < config file < explicit flags, as one flat dict."""
    cmd = args.command
    settings = {"seeds": "0", "out": "mire-out", "format": "csv"}
    if cmd not in ("theory", "gradcheck"):
        settings.update(STREAM_KEYS)
        settings.update(TRAIN_KEYS)
        settings.update(data=None, skip_header=False)
    settings.update(COMMAND_DEFAULTS[cmd])
    if args.config:
        try:
            with open(args.config) as fh:
                from_file = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(from_file, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(from_file) - set(settings)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        settings.update(from_file)
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        settings[key] = value
    settings["seeds"] = parse_seeds(settings["seeds"])
    return settings


def spec_hash(command, settings):
    keyed = {k: v for k, v in settings.items() if k not in ("out", "format")}
    blob = json.dumps({"command": command, **keyed}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _data_source(settings):
    if not settings["data"]:
        return StreamConfig(**{k: settings[k] for k in STREAM_KEYS})
    probe = ex.CsvSource(settings["data"], input_dim=None,
                         classes_per_task=settings["classes_per_task"],
                         skip_header=bool(settings["skip_header"]))
    try:
        dim = probe.read().x.shape[1]
    except OSError as exc:
        raise UsageError(f"cannot read data {settings['data']}: {exc}") from None
    return replace(probe, input_dim=dim, batch_size=settings["batch_size"])


def configs_from(settings):
    try:
        stream = _data_source(settings)
        mire = MireConfig(alpha=settings["alpha"], beta=settings["beta"],
                          delta=settings["delta"], dml=settings["dml"])
        train = TrainConfig(lr=settings["lr"], gamma=settings["gamma"], mire=mire,
                            memory_size=settings["memory_size"],
                            replay_batch=settings["replay_batch"],
                            noise_std=settings["noise_std"], cc_subset=settings["cc_subset"])
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    return train, stream


def _write(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _emit_table(outdir, name, rows, fields, fmt):
    if fmt == "csv":
        _write(os.path.join(outdir, name + ".csv"), rows_to_csv(rows, fields))
    else:
        _write(os.path.join(outdir, name + ".json"), to_json(rows))


def _summary_block(cells):
    out = {}
    for method, vals in ex.summarize_cells(cells).items():
        stats = {"acc": vals["acc"]}
        if not np.all(np.isnan(vals["fgt"])):
            stats["fgt"] = vals["fgt"]
        out[method] = summarize(stats)
    return out


def _split_failures(cells):
    done = [c for c in cells if isinstance(c, ex.CellResult)]
    failed = [c for c in cells if isinstance(c, ex.CellFailure)]
    for f in failed:
        print(f"failed cell {f.method} seed {f.seed}: {f.error}", file=sys.stderr)
    return done, [{"method": f.method, "seed": f.seed, "error": f.error} for f in failed]


def _training_report(outdir, cells, fmt, checkpoints=True):
    cells, failed = _split_failures(cells)
    rows = [r for c in cells for r in snapshot_rows(c.method, c.seed, c.record)]
    _emit_table(outdir, "metrics", rows, SNAPSHOT_FIELDS, fmt)
    final = [{"method": c.method, "seed": c.seed, "acc": c.acc, "fgt": c.fgt}
             for c in cells]
    _emit_table(outdir, "final", final, ("method", "seed", "acc", "fgt"), fmt)
    if checkpoints:
        ckdir = os.path.join(outdir, "checkpoints")
        os.makedirs(ckdir, exist_ok=True)
        for c in cells:
            checkpoint_save(c.record.state, os.path.join(ckdir, f"{c.method}-seed{c.seed}.ckpt"))
    summary = _summary_block(cells)
    if failed:
        summary["failed_cells"] = failed
    return summary


def _failure(method, seed, exc):
    error = f"{type(exc).__name__}: {exc}"
    print(f"failed cell {method} seed {seed}: {error}", file=sys.stderr)
    return {"method": method, "seed": seed, "error": error}


def _with_failures(summary, failed):
    if failed:
        summary["failed_cells"] = failed
    return summary, not failed


def cmd_run(settings, outdir):
    train, stream = configs_from(settings)
    cells = ex.run_cells(ex.method_jobs(settings["method"], settings["seeds"], train, stream),
                         keep_going=True)
    summary = _training_report(outdir, cells, settings["format"])
    return summary, "failed_cells" not in summary


def cmd_ablate(settings, outdir):
    train, stream = configs_from(settings)
    cells = ex.run_cells(ex.ablation_jobs(settings["seeds"], train, stream), keep_going=True)
    summary = _training_report(outdir, cells, settings["format"], checkpoints=False)
    ok = "failed_cells" not in summary
    summary["columns"] = "rebalancing, drift correction, CC penalty (x = on)"
    return summary, ok


def cmd_fwd_transfer(settings, outdir):
    train, stream = configs_from(settings)
    rows, per_method, failed = [], {}, []
    for method in settings["method"]:
        for seed in settings["seeds"]:
            try:
                gaps = ex.forward_transfer_cell(replace(train, method=method), stream, seed,
                                                settings["epochs"])
            except (TrainingDiverged, ValueError) as exc:
                failed.append(_failure(method, seed, exc))
                continue
            per_method.setdefault(method, []).append(float(np.mean(gaps)))
            for k, g in enumerate(gaps, start=2):
                rows.append({"method": method, "seed": seed, "task": k, "gap": float(g)})
    _emit_table(outdir, "gaps", rows, ("method", "seed", "task", "gap"), settings["format"])
    return _with_failures({"mean_gap": summarize(per_method)}, failed)


def cmd_mean_error(settings, outdir):
    train, stream = configs_from(settings)
    train = replace(train, method=settings["method"])
    rows, finals, failed = [], {}, []
    for seed in settings["seeds"]:
        try:
            errs, _ = ex.mean_error_cell(train, stream, seed)
        except (TrainingDiverged, ValueError) as exc:
            failed.append(_failure(train.method, seed, exc))
            continue
        last = max(r["task"] for r in errs)
        for r in errs:
            rows.append({"seed": seed, **r})
            if r["task"] == last:
                finals.setdefault(r["mode"], []).append(r["error"])
    _emit_table(outdir, "mean_error", rows, ("seed", "task", "iteration", "mode", "error"),
                settings["format"])
    return _with_failures({"final_snapshot_error": summarize(finals)}, failed)


def cmd_theory(settings, outdir):
    try:
        lambdas = [float(v) for v in str(settings["lambdas"]).split(",")]
    except ValueError:
        raise UsageError(f"bad --lambdas {settings['lambdas']!r}") from None
    rows = theory_table(settings["bins"], settings["classes"], lambdas)
    fields = ("lambda", "objective", "support_sizes", "overlap", "uniformity_gap", "converged")
    _emit_table(outdir, "theory", rows, fields, settings["format"])
    for r in rows:
        print(f"lambda={r['lambda']:g}  objective={r['objective']:.6f}  "
              f"supports=[{r['support_sizes']}]  overlap={r['overlap']:.2e}  "
              f"uniformity_gap={r['uniformity_gap']:.2e}")
    return {"rows": rows}, all(r["converged"] for r in rows)


def cmd_gradcheck(settings, outdir):
    results = check_many(settings["seeds"])
    _emit_table(outdir, "gradcheck", results, ("seed", *LOSSES), settings["format"])
    worst = {k: max(r[k] for r in results) for k in LOSSES}
    failed = [r["seed"] for r in results if max(r[k] for k in LOSSES) >= settings["tol"]]
    for k, v in worst.items():
        print(f"{k:7s} max relative error {v:.3e}")
    if failed:
        print(f"failed seeds: {failed}", file=sys.stderr)
    return {"worst": worst, "tol": settings["tol"], "failed_seeds": failed}, not failed


COMMANDS = {"run": cmd_run, "ablate": cmd_ablate, "fwd-transfer": cmd_fwd_transfer,
            "mean-error": cmd_mean_error, "theory": cmd_theory, "gradcheck": cmd_gradcheck}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = resolve(args)
        outdir = os.path.join(settings["out"], f"{args.command}-{spec_hash(args.command, settings)}")
        os.makedirs(outdir, exist_ok=True)
        summary, ok = COMMANDS[args.command](settings, outdir)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"mire: error: {exc}", file=sys.stderr)
        return 2
    _write(os.path.join(outdir, "settings.json"),
           to_json({k: v for k, v in settings.items() if k != "out"}))
    _write(os.path.join(outdir, "summary.json"), to_json(summary))
    print(outdir)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
