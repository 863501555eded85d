"""Command line front end: ``ugp simulate | learn | experiment``.

Exit codes: 0 on success, 1 when some cells failed (or on I/O errors),
2 for usage and configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .config import RunConfig
from .exceptions import ConfigError, UGPError
from .experiments import (
    MC,
    WORKERS,
    default_workers,
    learn_method,
    realization_field,
    realization_training_set,
    run_experiment,
    stream,
)
from .field import write_field_csv
from .learning import calibrate_sigma_proc_offline
from .model import CSV_HEADER_MODEL, KINDS

logger = logging.getLogger("ugp")

METHOD_NAMES = {k.lower(): k for k in KINDS}
NEEDS_SIGMA_PROC = {"uGP", "uGP-proc", "GAGP"}


def _float_list(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _method(text):
    key = text.strip().lower()
    if key not in METHOD_NAMES:
        raise argparse.ArgumentTypeError(f"unknown method {text!r}; choose from {', '.join(METHOD_NAMES)}")
    return METHOD_NAMES[key]


def _key_value(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value configuration file")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--set", dest="overrides", type=_key_value, action="append", default=[],
                        metavar="KEY=VALUE", help="override one configuration key (repeatable)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="ugp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="draw one channel field and write it as CSV")
    p.add_argument("--out", type=Path, default=Path("field.csv"))

    p = sub.add_parser("learn", parents=[common], help="learn hyperparameters from one simulated data set")
    p.add_argument("--method", type=_method, required=True, help=", ".join(METHOD_NAMES))
    p.add_argument("--lambda", dest="lam", type=float, help="mean location error std (m)")
    p.add_argument("--out", type=Path, default=Path("model.csv"))
    p.add_argument("--sigma-proc-file", type=Path,
                   help="cache of the offline sigma_proc (default: next to --out)")

    p = sub.add_parser("experiment", parents=[common], help="run one simulation study")
    p.add_argument("which", choices=sorted(WORKERS))
    p.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    p.add_argument("--workers", type=int, help="worker processes (default: $UGP_WORKERS or CPU count)")
    p.add_argument("--method", type=_method, action="append", help="restrict to these methods (repeatable)")
    p.add_argument("--lambda", dest="lam", type=float, help="run a single mean location error (m)")
    p.add_argument("--alpha-list", type=_float_list, help="confidence parameters, e.g. 0,1,2,3")
    return parser


def _resolve_config(args):
    cfg = RunConfig()
    if args.config is not None:
        cfg = RunConfig.from_file(args.config)
    overrides = RunConfig.parse_items(args.overrides)
    if args.seed is not None:
        overrides.update(RunConfig.parse_items([("seed", str(args.seed))]))
    lam = getattr(args, "lam", None)
    if lam is not None:
        if args.command == "experiment":
            key = "resource_lambdas" if args.which == "resource" else "lambda_sweep"
            overrides[key] = (lam,)
        else:
            overrides["lam"] = lam
    if getattr(args, "alpha_list", None) is not None:
        overrides["alpha_sweep"] = args.alpha_list
    if args.command == "experiment" and args.method:
        overrides["methods"] = tuple(args.method)
    return cfg.with_overrides(overrides)


def _write_sidecar(cfg: RunConfig, path):
    Path(path).write_text(cfg.to_text(), encoding="utf-8")


def cmd_simulate(cfg: RunConfig, out_path):
    exp = cfg.experiment_config()
    field_ = realization_field(exp, 0)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_field_csv(field_, out_path)
    _write_sidecar(cfg, out_path.with_name(out_path.name + ".config.txt"))
    print(f"seed {cfg.seed}, {len(field_)} grid points -> {out_path}")
    return 0


def _offline_sigma_proc(cfg: RunConfig, cache: Path):
    if cfg.sigma_proc_offline is not None:
        return cfg.sigma_proc_offline
    if cache.exists():
        try:
            return float(cache.read_text(encoding="utf-8").strip())
        except ValueError:
            raise ConfigError(f"unreadable sigma_proc cache {cache}") from None
    exp = cfg.experiment_config()
    logger.info("no offline sigma_proc cached; calibrating over %d realizations", cfg.n_calibration)
    value = calibrate_sigma_proc_offline(exp.field, cfg.n_calibration, cfg.n_train, seed=cfg.seed)
    cache.parent.mkdir(parents=True, exist_ok=True)
    cache.write_text(repr(value) + "\n", encoding="utf-8")
    print(f"offline sigma_proc {value!r} cached in {cache}")
    return value


def cmd_learn(cfg: RunConfig, method, out_path, sigma_proc_file=None):
    out_path = Path(out_path)
    exp = cfg.experiment_config()
    sigma_proc = 0.0
    if method in NEEDS_SIGMA_PROC:
        cache = sigma_proc_file or out_path.with_name("sigma_proc_offline.txt")
        sigma_proc = _offline_sigma_proc(cfg, cache)
    field_ = realization_field(exp, 0)
    data = realization_training_set(exp, field_, 0, cfg.lam)
    model = learn_method(method, data, exp, sigma_proc, stream(cfg.seed, 0, MC, 0, 0))
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER_MODEL)
        w.writerow(model.to_csv_row())
    _write_sidecar(cfg, out_path.with_name(out_path.name + ".config.txt"))
    t = model.theta
    print(f"{model.kind}: eta {t.eta:.4g}, d_c {t.d_c:.4g} m, sigma_psi {t.sigma_psi:.4g} dB, "
          f"sigma_proc {t.sigma_proc:.4g} dB -> {out_path}")
    return 0


def cmd_experiment(cfg: RunConfig, which, out_dir, workers=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_sidecar(cfg, out_dir / f"{which}_config.txt")
    workers = workers or default_workers()
    result = run_experiment(which, cfg.experiment_config(), workers=workers, out_dir=out_dir)
    n_cells = len({(r[0], r[2], r[4]) for r in result.records}) + len(result.failures)
    print(f"{which}: {len(result.rows)} rows, {len(result.failures)} failed of {n_cells} cells -> {out_dir}")
    return 1 if result.failures else 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve_config(args)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.out)
        if args.command == "learn":
            return cmd_learn(cfg, args.method, args.out, args.sigma_proc_file)
        if args.workers is not None and args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        return cmd_experiment(cfg, args.which, args.out, args.workers)
    except ConfigError as exc:
        print(f"ugp: configuration error: {exc}", file=sys.stderr)
        return 2
    except (OSError, UGPError) as exc:
        print(f"ugp: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
