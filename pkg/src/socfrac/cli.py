"""Command line entry point: run, stats, bench, beam."""
import argparse
import csv
import logging
import sys

import numpy as np

from .beam import BeamError, TimeStepError, parse_beam_config, run_beam, write_beam_outputs
from .damage import DamageError
from .kgd import KgdParams, kgd_table
from .scenario import ConfigError, load_config, read_records, run_scenario, write_outputs
from .solver import SolverError
from .stats import StatsError, compare_regimes, fit_power_law

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3

log = logging.getLogger("socfrac")


def _cmd_run(args):
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    try:
        result = run_scenario(cfg, progress=args.verbose)
    except (SolverError, DamageError, np.linalg.LinAlgError) as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER
    write_outputs(result, args.out)
    return EXIT_OK


def _cmd_stats(args):
    rates = args.rate or [float("nan")] * len(args.inputs)
    if len(rates) != len(args.inputs):
        log.error("--rate must be given once per input file")
        return EXIT_CONFIG
    pooled = {}
    for rate, path in zip(rates, args.inputs):
        pooled.setdefault(rate, []).extend(r.size for r in read_records(path) if r.size >= 1)
    fits = {}
    for rate, sizes in pooled.items():
        try:
            fits[rate] = fit_power_law(sizes, s_min=args.smin, n_boot=args.n_boot, seed=args.seed)
        except StatsError as exc:
            log.warning("rate %s: %s", rate, exc)
            fits[rate] = None
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rate", "alpha", "smin", "ks", "pvalue", "flag"])
        for row in compare_regimes(fits):
            f = row.fit
            flag = "destroyed" if row.destroyed else "plausible"
            if f is None:
                w.writerow([row.rate, "", "", "", "", flag])
            else:
                w.writerow([row.rate, f"{f.alpha:.6g}", f.s_min, f"{f.ks:.6g}", f"{f.p_value:.6g}", flag])
    return EXIT_OK


def _cmd_bench(args):
    try:
        p = KgdParams(G=args.g, Q=args.q, mu=args.mu, nu=args.nu, S=args.s)
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["t", "L", "cmod", "pcm"])
        for row in kgd_table(args.t_list, p):
            w.writerow([repr(float(x)) for x in row])
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def _cmd_beam(args):
    try:
        with open(args.config) as fh:
            cfg = parse_beam_config(fh.read())
    except (ConfigError, BeamError, OSError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    try:
        run = run_beam(cfg)
    except TimeStepError as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER
    write_beam_outputs(run, args.out)
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="socfrac", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="run a lattice scenario")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("stats", help="fit power laws to avalanche logs")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--smin", type=int, default=None)
    p.add_argument("--rate", type=float, nargs="+", default=None,
                   help="drive rate of each input; inputs with equal rate are pooled")
    p.add_argument("--n-boot", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("bench", help="closed-form KGD asymptotics")
    p.add_argument("--g", type=float, required=True)
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--nu", type=float, default=0.0)
    p.add_argument("--s", type=float, default=0.0)
    p.add_argument("--t-list", type=float, nargs="+", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("beam", help="run the debonding beam")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_beam)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
