"""``probns`` command line: one subcommand per experiment.

Exit status 0 when every check passes, 1 when a check fails, 2 on a
configuration error (nothing is written) and 3 when an estimator or solver
fails at run time.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import EXPERIMENTS, ConfigError, load_config
from .experiments import Outcome, run, write_outputs

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("probns")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="probns", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="experiment", required=True, metavar="SUBCOMMAND")
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", required=True, type=Path, help="YAML run configuration")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--out", type=Path, help="output directory (default: config 'output' or runs/<name>)")
        p.add_argument("--samples", type=int, help="override the sample count")
        p.add_argument("--quiet", action="store_true", help="only report failures")
    return ap


def run_experiment(config_path, experiment: str | None = None, seed: int | None = None, out=None,
                   samples: int | None = None) -> int:
    """Load, run and emit one experiment; returns the exit status."""
    try:
        cfg = load_config(config_path, experiment)
        if seed is not None:
            if not 0 <= seed < 2**64:
                raise ConfigError("--seed must be a 64-bit unsigned integer", "--seed")
            cfg.seed = seed
        if samples is not None:
            if samples < 1:
                raise ConfigError("--samples must be positive", "--samples")
            key = "n_fixed" if cfg.experiment == "convergence-study" else "n_samples"
            (cfg.sweep if key == "n_fixed" else cfg.solver)[key] = samples
        out_dir = Path(out or cfg.output or Path("runs") / cfg.experiment)
        outcome = run(cfg)
    except ConfigError as e:
        log.error("config error: %s", e)
        return EXIT_CONFIG
    except (ArithmeticError, RuntimeError, ValueError, MemoryError) as e:
        log.error("runtime failure: %s: %s", type(e).__name__, e)
        write_outputs(Outcome(cfg.experiment), cfg, out_dir, f"{type(e).__name__}: {e}")
        return EXIT_RUNTIME
    write_outputs(outcome, cfg, out_dir)
    failed = [r for r in outcome.rows if r.passed is False]
    for r in failed:
        log.warning("FAIL %s: %.8g vs %.8g (tol %.3g)", r.quantity, r.value, r.oracle_value, r.tolerance)
    log.info("%s: %d checks, %d failed; outputs in %s", cfg.experiment,
             sum(r.passed is not None for r in outcome.rows), len(failed), out_dir)
    return EXIT_FAIL if failed else EXIT_PASS


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    return run_experiment(args.config, args.experiment, args.seed, args.out, args.samples)


if __name__ == "__main__":
    sys.exit(main())
