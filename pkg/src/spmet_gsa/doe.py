"""D-optimal design of piecewise-constant current profiles.

The objective is ``log det(S^T S)`` of the stacked local (noise-scaled) or
global (Sobol') sensitivity matrix minus a quadratic penalty on limit
excesses of the nominal trajectory. It is maximized by a box-constrained
compass search from several starts.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .parallel import parallel_map
from .sensitivity import (OutputModel, ParameterDistribution, SensitivityStack,
                          SimulationFailure, global_sensitivity_stack, local_sensitivities)
from .simulator import CurrentProfile, LimitReport, MeasurementSeries, OperatingLimits, check_limits

SINGULAR = -1e9
NOISE_VARS = (1e-2, 0.3)


class DesignError(RuntimeError):
    pass


@dataclass(frozen=True)
class DesignSpec:
    n_v: int = 10
    segment_duration: float = 100.0
    rate_min: float = -15.0
    rate_max: float = 15.0
    t_s: float = 5.0
    limits: OperatingLimits = field(default_factory=OperatingLimits)
    criterion: str = "D"
    mode: str = "global"
    penalty_weight: float = 1e4
    multistart_count: int = 8
    seed: int = 0
    noise_vars: tuple[float, float] = NOISE_VARS
    max_evals: int = 500
    step_tol: float = 0.1

    def __post_init__(self):
        if self.n_v < 1:
            raise ValueError("n_v must be at least 1")
        if not self.rate_min < self.rate_max:
            raise ValueError("rate bounds must be ordered")
        if self.penalty_weight < 0:
            raise ValueError("penalty_weight must be non-negative")
        if self.multistart_count < 1:
            raise ValueError("multistart_count must be at least 1")
        if self.mode not in ("local", "global"):
            raise ValueError("mode must be 'local' or 'global'")
        if self.criterion != "D":
            raise ValueError("only the D criterion is implemented")
        if not self.segment_duration > 0 or not self.t_s > 0:
            raise ValueError("durations must be positive")

    def profile(self, rates) -> CurrentProfile:
        return CurrentProfile(tuple(rates), self.segment_duration)


def stack_matrix(stack: SensitivityStack, noise_vars=NOISE_VARS) -> np.ndarray:
    """Rows ``(k, j)`` flattened sample-major into a ``(K n_y, n_p)`` matrix."""
    S = np.asarray(stack.values, dtype=float)
    if stack.kind == "local":
        nv = np.asarray(noise_vars, dtype=float)
        if nv.shape != (S.shape[1],):
            raise ValueError("need one noise variance per output channel")
        S = S / np.sqrt(nv)[None, :, None]
    return S.reshape(-1, S.shape[-1])


def d_criterion(S) -> float:
    """``log det(S^T S)``, or :data:`SINGULAR` when the Gram matrix is rank deficient."""
    S = np.asarray(S, dtype=float)
    if not np.all(np.isfinite(S)):
        return SINGULAR
    eig = np.linalg.eigvalsh(S.T @ S)
    tr = float(np.sum(eig))
    if tr <= 0 or eig[0] <= 1e-12 * tr:
        return SINGULAR
    return float(np.sum(np.log(eig)))


def limit_penalty(center: np.ndarray, output_names, limits: OperatingLimits,
                  times=None) -> tuple[float, LimitReport | None]:
    """Sum of squared excesses of the nominal V and T, with the report."""
    names = tuple(output_names)
    if "V" not in names or "T" not in names:
        return 0.0, None
    V = center[:, names.index("V")]
    T = center[:, names.index("T")]
    t = np.arange(len(V)) if times is None else times
    rep = check_limits(MeasurementSeries(t, V, T), limits)
    return rep.squared_total, rep


@dataclass
class Evaluation:
    objective: float
    criterion: float
    penalty: float
    report: LimitReport | None = None
    failed: bool = False


def evaluate_design(rates, spec: DesignSpec, model: OutputModel,
                    dist: ParameterDistribution, p_hat=None) -> Evaluation:
    rates = np.asarray(rates, dtype=float)
    if rates.shape != (spec.n_v,):
        raise ValueError(f"expected {spec.n_v} rates")
    if np.any(rates < spec.rate_min) or np.any(rates > spec.rate_max):
        raise ValueError("rates outside the design bounds")
    profile = spec.profile(rates)
    try:
        if spec.mode == "local":
            p0 = np.ones(dist.n_p) if p_hat is None else np.asarray(p_hat, dtype=float)
            stack = local_sensitivities(model, profile, p0, param_names=dist.names)
        else:
            stack = global_sensitivity_stack(model, profile, dist)
    except SimulationFailure:
        return Evaluation(SINGULAR, SINGULAR, 0.0, failed=True)
    if not stack.valid:
        return Evaluation(SINGULAR, SINGULAR, 0.0, failed=True)
    crit = d_criterion(stack_matrix(stack, spec.noise_vars))
    pen, rep = limit_penalty(stack.center, stack.output_names, spec.limits, stack.times)
    return Evaluation(crit - spec.penalty_weight * pen, crit, pen, rep)


def design_objective(rates, spec: DesignSpec, model: OutputModel,
                     dist: ParameterDistribution, p_hat=None) -> float:
    """Penalized log-det of the design ``rates``."""
    return evaluate_design(rates, spec, model, dist, p_hat).objective


@dataclass
class StartResult:
    index: int
    x0: list[float]
    x: list[float]
    objective: float
    n_evals: int
    failed: bool = False


@dataclass
class DesignResult:
    rates: np.ndarray
    objective: float
    criterion: float
    penalty: float
    history: list[StartResult]
    report: LimitReport | None
    spec: DesignSpec
    n_evals: int = 0

    @property
    def profile(self) -> CurrentProfile:
        return self.spec.profile(self.rates)

    def to_csv(self, path, capacity_Ah: float | None = None) -> None:
        d = self.spec.segment_duration
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            head = ["segment", "t_start_s", "t_end_s", "rate_C"]
            if capacity_Ah is not None:
                head.append("current_A")
            w.writerow(head)
            for i, r in enumerate(self.rates):
                row = [i + 1, repr(i * d), repr((i + 1) * d), repr(float(r))]
                if capacity_Ah is not None:
                    row.append(repr(float(r) * capacity_Ah))
                w.writerow(row)

    def summary(self) -> dict:
        spec = asdict(self.spec)
        return {
            "mode": self.spec.mode,
            "objective": self.objective,
            "log_det": self.criterion,
            "penalty": self.penalty,
            "violations": self.report.totals if self.report is not None else None,
            "evaluations": self.n_evals,
            "rates_C": [float(r) for r in self.rates],
            "starts": [asdict(h) for h in self.history],
            "spec": spec,
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")


def start_points(spec: DesignSpec, m: int | None = None) -> np.ndarray:
    """All-max, all-min and alternating starts, then seeded uniform draws."""
    m = spec.multistart_count if m is None else m
    lo, hi, n = spec.rate_min, spec.rate_max, spec.n_v
    fixed = [np.full(n, hi), np.full(n, lo), np.where(np.arange(n) % 2 == 0, hi, lo)]
    rng = np.random.default_rng(spec.seed)
    out = fixed[:m]
    while len(out) < m:
        out.append(rng.uniform(lo, hi, n))
    return np.array(out)


def compass_search(f, x0, lo, hi, step0, step_tol, max_evals, f0=None):
    """Opportunistic coordinate search on a box; maximizes ``f``.

    Returns ``(x, f(x), n_evals)``. Trial points are clipped to the box, so a
    large step lands exactly on a bound.
    """
    cache: dict[tuple, float] = {}

    def key(x):
        return tuple(np.round(x, 12))

    def g(x):
        k = key(x)
        if k not in cache:
            cache[k] = f(x)
        return cache[k]

    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    if f0 is not None:
        cache[key(x)] = float(f0)
    fx = g(x)
    step = float(step0)
    while step >= step_tol and len(cache) < max_evals:
        improved = False
        for i in range(len(x)):
            for direction in (1.0, -1.0):
                if len(cache) >= max_evals:
                    break
                y = x.copy()
                y[i] = np.clip(y[i] + direction * step, lo, hi)
                if y[i] == x[i]:
                    continue
                fy = g(y)
                if fy > fx:
                    x, fx, improved = y, fy, True
                    break
        if not improved:
            step *= 0.5
    return x, fx, len(cache)


def optimize_design(spec: DesignSpec, model: OutputModel, dist: ParameterDistribution,
                    p_hat=None, log=None, jobs: int = 1) -> DesignResult:
    lo, hi = spec.rate_min, spec.rate_max
    starts = start_points(spec)

    def f(x):
        return design_objective(x, spec, model, dist, p_hat)

    def run_start(item):
        s, x0 = item
        ev0 = evaluate_design(x0, spec, model, dist, p_hat)
        if ev0.failed:
            return StartResult(s, x0.tolist(), x0.tolist(), SINGULAR, 1, True)
        x, fx, n_ev = compass_search(f, x0, lo, hi, hi - lo, spec.step_tol, spec.max_evals,
                                     f0=ev0.objective)
        return StartResult(s, x0.tolist(), x.tolist(), float(fx), n_ev)

    history = parallel_map(run_start, list(enumerate(starts)), jobs)
    if log is not None:
        for h in history:
            state = "failed" if h.failed else f"objective {h.objective:.6g}"
            log(f"start {h.index + 1}/{len(starts)}: {state} after {h.n_evals} evaluations")
    ok = [h for h in history if not h.failed]
    if not ok:
        raise DesignError("all design starts failed: "
                          + "; ".join(f"start {h.index}" for h in history))
    # ties go to the lowest start index
    best = max(ok, key=lambda h: (h.objective, -h.index))
    ev = evaluate_design(best.x, spec, model, dist, p_hat)
    return DesignResult(np.array(best.x), ev.objective, ev.criterion, ev.penalty, history,
                        ev.report, spec, sum(h.n_evals for h in history))
