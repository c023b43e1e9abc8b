"""Command-line front end: simulate, gsa, local-sens, design, validate, report.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import svgplot
from .doe import DesignError, optimize_design
from .identification import McStudy, monte_carlo_study, summary_report
from .integrate import IntegrationError
from .model import DomainError
from .parallel import default_jobs
from .params import ParameterError
from .sensitivity import (SimulationFailure, SpmetOutputModel, global_sensitivity_stack,
                          local_sensitivities, pem_samples)
from .simulator import CurrentProfile, check_limits, simulate_batch, write_trajectory_csv

log = logging.getLogger("spmet_gsa")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(suppress: bool) -> argparse.ArgumentParser:
    d = argparse.SUPPRESS if suppress else None
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, default=d, help="YAML run configuration")
    p.add_argument("--out", type=Path, default=d, help="output directory")
    p.add_argument("--seed", type=int, default=d, help="random seed (overrides config)")
    p.add_argument("--jobs", type=int, default=d, help="worker processes")
    p.add_argument("--strict", action="store_true", default=argparse.SUPPRESS if suppress
                   else False, help="fail on domain or limit violations")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spmet-gsa", parents=[_common(False)],
                     description="SPMeT simulation, sensitivity analysis and experiment design.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _common(True)

    def profile_args(p, required=True):
        g = p.add_mutually_exclusive_group(required=required)
        g.add_argument("--profile", type=Path, help="CSV with a rate_C column")
        g.add_argument("--rates", help="comma-separated C-rates, one per segment")

    p = sub.add_parser("simulate", parents=[common], help="simulate one current profile")
    profile_args(p)
    p.add_argument("--states", action="store_true", help="include raw state columns")

    p = sub.add_parser("gsa", parents=[common], help="first-order Sobol' stack")
    profile_args(p)

    p = sub.add_parser("local-sens", parents=[common], help="local sensitivity stack")
    profile_args(p)

    p = sub.add_parser("design", parents=[common], help="optimize a current profile")
    p.add_argument("--mode", choices=("local", "global"), required=True)

    p = sub.add_parser("validate", parents=[common], help="Monte Carlo comparison of designs")
    p.add_argument("--profile-local", type=Path)
    p.add_argument("--profile-global", type=Path)
    p.add_argument("--n-mc", type=int)

    sub.add_parser("report", parents=[common], help="rebuild the report from saved estimates")
    return parser


# --------------------------------------------------------------------------- #
# helpers


def read_profile(path: Path, segment_duration: float) -> CurrentProfile:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise UsageError(f"cannot read profile {path}: {exc.strerror}") from None
    if not rows or "rate_C" not in rows[0]:
        raise UsageError(f"{path}: expected a CSV with a rate_C column")
    try:
        rates = [float(r["rate_C"]) for r in rows]
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None
    return CurrentProfile(tuple(rates), segment_duration)


def write_profile(path: Path, profile: CurrentProfile) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment", "t_start_s", "t_end_s", "rate_C"])
        d = profile.segment_duration
        for i, r in enumerate(profile.rates):
            w.writerow([i + 1, repr(i * d), repr((i + 1) * d), repr(float(r))])


def _profile(args, cfg) -> CurrentProfile:
    if getattr(args, "rates", None):
        try:
            rates = tuple(float(x) for x in args.rates.split(","))
        except ValueError:
            raise UsageError(f"--rates: cannot parse {args.rates!r}") from None
        prof = CurrentProfile(rates, cfg.segment_duration)
    else:
        prof = read_profile(args.profile, cfg.segment_duration)
    try:
        prof.check_bounds(cfg.rate_min, cfg.rate_max)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return prof


def _setup(args):
    cfg = cfgmod.load(args.config) if args.config else cfgmod.default_config()
    seed = cfg.seed if args.seed is None else args.seed
    out = Path(args.out if args.out is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = default_jobs() if args.jobs is None else max(1, args.jobs)
    params = cfg.cell_parameters()
    model = SpmetOutputModel(params, cfg.uncertain_names, cfg.initial_state(), cfg.t_s,
                             cfg.rtol)
    return cfg, seed, out, jobs, params, model


def _stack_plots(stack, out: Path, stem: str) -> None:
    for j, name in enumerate(stack.output_names):
        series = [(p, stack.times, stack.values[:, j, i]) for i, p in enumerate(stack.param_names)]
        svgplot.line_plot(series, out / f"{stem}_{name}.svg", title=f"{stem} sensitivity of {name}",
                          xlabel="time (s)", ylabel="sensitivity")


# --------------------------------------------------------------------------- #
# commands


def cmd_simulate(args) -> int:
    cfg, seed, out, jobs, params, model = _setup(args)
    prof = _profile(args, cfg)
    res = simulate_batch(params, prof, cfg.initial_state(), cfg.t_s, rtol=cfg.rtol,
                         keep_states=True, strict=args.strict)
    path = out / "trajectory.csv"
    write_trajectory_csv(path, res, params, 0, include_states=args.states)
    svgplot.line_plot([("V", res.times, res.V[0])], out / "trajectory_V.svg",
                      title="Terminal voltage", xlabel="time (s)", ylabel="V (V)")
    svgplot.line_plot([("T", res.times, res.T[0])], out / "trajectory_T.svg",
                      title="Temperature", xlabel="time (s)", ylabel="T (K)")
    log.info("wrote %s (%d rows)", path, len(res.times))
    rep = check_limits(res.series(0), cfg.limits())
    if not rep.ok:
        t = rep.totals
        msg = (f"operating limits exceeded: over_T {t['over_T']:.4g} K, under_V "
               f"{t['under_V']:.4g} V, over_V {t['over_V']:.4g} V (summed excess)")
        if args.strict:
            log.error(msg)
            return 2
        log.warning(msg)
    if res.violation[0]:
        log.warning("surface stoichiometry or electrolyte concentration was clamped")
    return 0


def cmd_gsa(args) -> int:
    cfg, seed, out, jobs, params, model = _setup(args)
    prof = _profile(args, cfg)
    dist = cfg.distribution(params)
    log.info("%d uncertain parameters -> %d model runs", dist.n_p, len(pem_samples(dist)))
    stack = global_sensitivity_stack(model, prof, dist)
    if not stack.valid:
        log.error("PEM sweep failed: %s", getattr(stack, "error", "unknown error"))
        return 2
    stack.to_csv(out / "gsa_stack.csv")
    _stack_plots(stack, out, "gsa")
    log.info("wrote %s", out / "gsa_stack.csv")
    return 0


def cmd_local_sens(args) -> int:
    cfg, seed, out, jobs, params, model = _setup(args)
    prof = _profile(args, cfg)
    stack = local_sensitivities(model, prof, np.ones(len(cfg.uncertain_names)))
    stack.to_csv(out / "local_stack.csv")
    _stack_plots(stack, out, "local")
    log.info("%d model runs; wrote %s", stack.n_runs, out / "local_stack.csv")
    return 0


def cmd_design(args) -> int:
    cfg, seed, out, jobs, params, model = _setup(args)
    spec = cfg.design_spec(args.mode, seed)
    dist = cfg.distribution(params)
    log.info("%s design: %d starts, %d segments in [%g, %g] C", args.mode,
             spec.multistart_count, spec.n_v, spec.rate_min, spec.rate_max)
    res = optimize_design(spec, model, dist, log=log.info, jobs=jobs)
    res.to_csv(out / f"design_{args.mode}.csv", params.capacity_Ah)
    res.to_json(out / f"design_{args.mode}.json")
    t = np.arange(spec.n_v + 1) * spec.segment_duration
    svgplot.line_plot([(args.mode, t, np.append(res.rates, res.rates[-1]))],
                      out / f"design_{args.mode}.svg", title=f"{args.mode} design",
                      xlabel="time (s)", ylabel="rate (C)", step=True)
    log.info("best objective %.6g (log-det %.6g, penalty %.4g) after %d evaluations",
             res.objective, res.criterion, res.penalty, res.n_evals)
    if args.strict and res.report is not None and not res.report.ok:
        log.error("optimized profile violates the operating limits")
        return 2
    return 0


def cmd_validate(args) -> int:
    cfg, seed, out, jobs, params, model = _setup(args)
    n_mc = cfg.n_mc if args.n_mc is None else args.n_mc
    if n_mc < 2:
        raise UsageError("--n-mc must be at least 2")
    pl = args.profile_local or out / "design_local.csv"
    pg = args.profile_global or out / "design_global.csv"
    designs = {"local": read_profile(pl, cfg.segment_duration),
               "global": read_profile(pg, cfg.segment_duration)}
    truth = np.ones(len(cfg.uncertain_names))
    studies = {}
    for label, prof in designs.items():
        log.info("%s design: %d replicates", label, n_mc)
        studies[label] = monte_carlo_study(prof, truth, n_mc, cfg.noise_vars, seed, model,
                                           cfg.box, cfg.n_starts, label=label, jobs=jobs)
        if studies[label].n_failed:
            log.warning("%s design: %d replicate(s) failed", label, studies[label].n_failed)
    for label, prof in designs.items():
        write_profile(out / f"profile_{label}.csv", prof)
    summary_report(studies["local"], studies["global"], out, designs)
    _log_eta(out)
    return 0


def cmd_report(args) -> int:
    cfg, seed, out, jobs, params, model = _setup(args)
    loc = out / "estimates_local.csv"
    glo = out / "estimates_global.csv"
    for p in (loc, glo):
        if not p.exists():
            raise UsageError(f"missing {p}; run validate first")
    designs = {}
    for label in ("local", "global"):
        p = out / f"profile_{label}.csv"
        if p.exists():
            designs[label] = read_profile(p, cfg.segment_duration)
    summary_report(McStudy.from_csv(loc, "local"), McStudy.from_csv(glo, "global"), out,
                   designs or None)
    _log_eta(out)
    return 0


def _log_eta(out: Path) -> None:
    with open(out / "efficiency.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            log.info("eta[%s] = %.4g", row["parameter"], float(row["eta"]))


COMMANDS = {"simulate": cmd_simulate, "gsa": cmd_gsa, "local-sens": cmd_local_sens,
            "design": cmd_design, "validate": cmd_validate, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not logging.getLogger().handlers:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s",
                            stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (cfgmod.ConfigError, ParameterError, UsageError) as exc:
        log.error("%s", exc)
        return 1
    except (IntegrationError, SimulationFailure, DesignError, DomainError) as exc:
        log.error("numerical failure: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
