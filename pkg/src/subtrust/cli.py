"""Command-line harness: train / ablate / compare / plot subcommands.

Configuration comes from flat key=value files plus flags (flags win).  Every
run writes versioned CSV telemetry; failures exit nonzero with one
machine-readable JSON error line on stderr.
"""

import argparse
import json
import os
import sys
from dataclasses import fields

from . import baselines, optimizer
from .exceptions import ConfigError
from .plotting import emit_plot
from .runner import RunConfig, run_ablation, run_compare, run_train

# config-file/flag name -> RunConfig field
KEY_MAP = {
    "arch": "arch",
    "strategy": "strategy",
    "method": "strategy",
    "epochs": "epochs",
    "batch_size": "minibatch_size",
    "reg": "reg_coeff",
    "eps0": "eps0",
    "seed": "seed",
    "data_images": "data_images",
    "data_labels": "data_labels",
    "synth": "synth",
    "limit": "train_limit",
    "time_budget": "time_budget",
    "out": "out_dir",
    "step_size": "step_size",
    "nnz_per_unit": "nnz_per_unit",
    "init_scale": "init_scale",
    "clock": "clock",
}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_INT_FIELDS = {"epochs", "minibatch_size", "seed", "train_limit", "nnz_per_unit"}
_FLOAT_FIELDS = {"reg_coeff", "eps0", "time_budget", "step_size", "init_scale"}


def read_config_file(path):
    """Flat key=value lines; blank lines and '#' comments are ignored."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def _coerce(field_name, raw):
    if raw is None or raw == "":
        return None
    if field_name in _INT_FIELDS:
        return int(raw)
    if field_name in _FLOAT_FIELDS:
        return float(raw)
    return raw


def build_run_config(args):
    """RunConfig from config file values overridden by CLI flags."""
    values = {}
    if getattr(args, "config", None):
        for key, raw in read_config_file(args.config).items():
            if key not in KEY_MAP:
                raise ConfigError(f"unknown config key {key!r}")
            values[KEY_MAP[key]] = _coerce(KEY_MAP[key], raw)
    for key, field_name in KEY_MAP.items():
        flag = getattr(args, key, None)
        if flag is not None:
            values[field_name] = _coerce(field_name, flag)
    return RunConfig(**values)


def _ensure_out(cfg):
    out = cfg.out_dir or "runs"
    os.makedirs(out, exist_ok=True)
    return out


def _add_common(p):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--arch", help="dash-separated layer widths, e.g. 784-50-10")
    p.add_argument("--epochs")
    p.add_argument("--batch-size", dest="batch_size")
    p.add_argument("--reg")
    p.add_argument("--eps0")
    p.add_argument("--seed")
    p.add_argument("--data-images", dest="data_images")
    p.add_argument("--data-labels", dest="data_labels")
    p.add_argument("--synth", help="synthetic data spec: C,n,d,spread")
    p.add_argument("--limit", help="cap on training samples")
    p.add_argument("--time-budget", dest="time_budget", help="seconds per run")
    p.add_argument("--out", help="output directory")
    p.add_argument("--step-size", dest="step_size")
    p.add_argument("--nnz-per-unit", dest="nnz_per_unit")
    p.add_argument("--init-scale", dest="init_scale")
    p.add_argument("--clock", choices=("work", "real"))


def make_parser():
    parser = argparse.ArgumentParser(
        prog="subtrust",
        description="train feed-forward nets with subspace trust-region methods",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="single training run")
    _add_common(p_train)
    p_train.add_argument("--strategy", choices=optimizer.STRATEGIES)
    p_train.add_argument("--method", choices=baselines.METHODS,
                         help="first-order baseline instead of a strategy")

    p_ablate = sub.add_parser("ablate", help="run several strategies side by side")
    _add_common(p_ablate)
    p_ablate.add_argument("--strategies",
                          default=",".join(optimizer.STRATEGIES),
                          help="comma-separated strategy names")

    p_compare = sub.add_parser("compare", help="trust region vs first-order methods")
    _add_common(p_compare)
    p_compare.add_argument("--methods", default="two_stage,adam,rmsprop")
    p_compare.add_argument("--grid", default="0.3,1,3",
                           help="step-size multipliers for the baselines")

    p_plot = sub.add_parser("plot", help="render CSVs to a line chart")
    p_plot.add_argument("csvs", nargs="+")
    p_plot.add_argument("--out", required=True, help="output SVG path")
    p_plot.add_argument("--x", default="epoch", choices=("epoch", "wall_clock_s"))
    p_plot.add_argument("--y", default="full_train_loss")
    p_plot.add_argument("--logy", action="store_true")
    return parser


def cmd_train(args):
    cfg = build_run_config(args)
    out = _ensure_out(cfg)
    csv_path = os.path.join(out, f"train_{cfg.strategy}_seed{cfg.seed}.csv")
    log = run_train(cfg, csv_path=csv_path)
    if log.aborted:
        print(f"aborted: {log.aborted} (partial log kept at {csv_path})")
        return 2
    print(f"wrote {csv_path}: final loss {log.final_loss!r} "
          f"accuracy {log.records[-1].train_accuracy:.4f}")
    return 0


def cmd_ablate(args):
    cfg = build_run_config(args)
    out = _ensure_out(cfg)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    logs = run_ablation(cfg, strategies, out_dir=out)
    failed = 0
    for name in strategies:
        log = logs[name]
        if log.aborted:
            failed += 1
            print(f"{name}: aborted ({log.aborted})")
        else:
            print(f"{name}: final loss {log.final_loss!r}")
    print(f"wrote {out}/ablation_combined.csv")
    return 0 if failed == 0 else 2


def cmd_compare(args):
    cfg = build_run_config(args)
    out = _ensure_out(cfg)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    grid = tuple(float(tok) for tok in args.grid.split(","))
    logs = run_compare(cfg, methods, step_grid=grid, out_dir=out)
    for name in sorted(logs):
        log = logs[name]
        tail = f"aborted ({log.aborted})" if log.aborted else f"final loss {log.final_loss!r}"
        print(f"{name}: {tail}")
    print(f"wrote {out}/compare_combined.csv")
    return 0


def cmd_plot(args):
    emit_plot(args.csvs, args.out, x_column=args.x, y_column=args.y,
              log_y=args.logy)
    print(f"wrote {args.out}")
    return 0


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            return cmd_train(args)
        if args.command == "ablate":
            return cmd_ablate(args)
        if args.command == "compare":
            return cmd_compare(args)
        return cmd_plot(args)
    except Exception as exc:  # one machine-readable line, nonzero exit
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
