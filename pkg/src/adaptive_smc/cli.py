"""Command-line harness for replicated adaptive SMC experiments."""
from __future__ import annotations

import argparse
import sys

import yaml

from . import experiments as ex
from .core import ConfigurationError
from .models import CATALOG
from .oracle import OracleModelError

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_ORACLE = 0, 2, 3, 4

COLUMN_HELP = {
    "run": "columns: " + ", ".join(ex.RUN_COLUMNS) + ". nvar_* is N times the replicate variance, "
           "*_se its jackknife standard error, oracle_* the exact asymptotic variance when a finite twin exists.",
    "variance-growth": "columns: generation, nvar_rel_gamma1 (N Var of gamma_n^N(1)/gamma_n(1)), "
                       "nvar_rel_gamma1_se, oracle, fit_slope, fit_r2 (least squares over n >= 1).",
    "stability-compare": "columns: generation, nvar_adaptive, nvar_adaptive_se, nvar_perfect, nvar_perfect_se, "
                         "ratio, ratio_se, ratio_ci_low, ratio_ci_high (95%%), oracle_adaptive, oracle_perfect, "
                         "stability_check.",
    "dscaling": "columns: d, N, mse, mse_se, d_mse, d_mse_se, mse_control (same seeds, exact parameter), "
                "excess_mse, excess_mse_se, mse_d0, mse_d0_se, move_rate.",
    "tempering": "columns: rung, beta_mean, nvar_beta, nvar_beta_se, oracle_beta, oracle_nvar_beta, gamma_mean, "
                 "nvar_gamma, nvar_gamma_se, oracle_nvar_gamma, ncov_beta_gamma, ncov_beta_gamma_se, "
                 "oracle_ncov_beta_gamma, max_ess_error.",
    "oracle": "columns (adaptive twin): generation, gamma_mass, eta_phi, xi_bar, avar_gamma, avar_eta, "
              "nc_rel_var, stability_check; (tempering twin): rung, beta, log_z_ratio, nvar_beta, "
              "ncov_beta_gamma, nvar_gamma.",
}

DEFAULTS = {
    "variance-growth": {"particles": (500,), "replicates": 500},
    "stability-compare": {"mode": "both"},
}


def _particles(text):
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad particle list {text!r}") from exc


def _threads(text):
    if text == "auto":
        return ex.auto_threads()
    try:
        k = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError("threads must be a positive integer or 'auto'") from exc
    if k < 1:
        raise argparse.ArgumentTypeError("threads must be positive")
    return k


def _seed(text):
    try:
        v = int(text, 0)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad seed {text!r}") from exc
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="adaptive-smc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ex.EXPERIMENT_KINDS:
        s = sub.add_parser(name, help=COLUMN_HELP[name].split(".")[0], description=COLUMN_HELP[name])
        s.add_argument("--model", choices=sorted(CATALOG), help="catalog model name")
        s.add_argument("--config", help="YAML key-value file; flags override its entries")
        s.add_argument("--seed", type=_seed, help="64-bit unsigned master seed")
        s.add_argument("--particles", type=_particles, help="N or comma-separated increasing list")
        s.add_argument("--replicates", type=int, help="number of independent replicates R")
        s.add_argument("--out", help="output CSV path (stdout when omitted)")
        s.add_argument("--mode", choices=ex.MODES, help="adaptive, perfect or both")
        s.add_argument("--alpha", type=float, help="ESS threshold for tempering models")
        s.add_argument("--threads", type=_threads, help="worker threads or 'auto'")
        s.add_argument("--horizon", type=int, help="number of generations")
        if name == "dscaling":
            s.add_argument("--d-grid", type=_particles, help="comma-separated adapted dimensions")
            s.add_argument("--n-factor", type=int, help="N = n_factor * d")
            s.add_argument("--fixed-particles", type=int, help="use this N for every d instead")
        if name == "tempering":
            s.add_argument("--literal-entries", action="store_true",
                           help="drop the gamma_{n-1}(1) factor from the temperature column of the oracle")
    return p


def _config(args) -> ex.ExperimentConfig:
    flags = {"model": args.model, "seed": args.seed, "particles": args.particles,
             "replicates": args.replicates, "out": args.out, "mode": args.mode, "alpha": args.alpha,
             "threads": args.threads, "horizon": args.horizon,
             "d_grid": getattr(args, "d_grid", None), "n_factor": getattr(args, "n_factor", None),
             "fixed_particles": getattr(args, "fixed_particles", None)}
    flags = {k: v for k, v in flags.items() if v is not None}
    base = dict(DEFAULTS.get(args.command, {}))
    if args.config:
        return _merge_file(args.config, args.command, base, flags)
    if "model" not in flags:
        raise ConfigurationError("--model or --config is required")
    return ex.make_config(kind=args.command, **{**base, **flags})


def _merge_file(path, kind, base, flags):
    # defaults < file < flags
    probe = ex.load_config(path, kind=kind, **flags)
    file_keys = _file_keys(path)
    extra = {k: v for k, v in base.items() if k not in file_keys and k not in flags}
    return ex.make_config(**{**_config_dict(probe), **extra})


def _file_keys(path):
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    return set(data)


def _config_dict(cfg):
    return {k: getattr(cfg, k) for k in ex.ExperimentConfig.__dataclass_fields__}


def execute(cfg: ex.ExperimentConfig, literal_entries: bool = False):
    kind = cfg.kind
    if kind == "run":
        return ex.run_experiment(cfg)
    if kind == "variance-growth":
        return ex.growth_table(ex.variance_growth(cfg))
    if kind == "stability-compare":
        return ex.stability_table(ex.stability_compare(cfg))
    if kind == "dscaling":
        return ex.dscaling_table(ex.dscaling(cfg))
    if kind == "tempering":
        return ex.tempering_table(ex.tempering_report(cfg, literal_entries=literal_entries))
    return ex.oracle_table(cfg)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config(args)
        header, rows = execute(cfg, getattr(args, "literal_entries", False))
        ex.write_csv(cfg.out, header, rows)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ex.AbortThresholdExceeded as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except OracleModelError as exc:
        print(f"oracle model invalid: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
