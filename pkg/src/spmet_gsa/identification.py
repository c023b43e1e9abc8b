"""Parameter estimation from synthetic measurements and the Monte Carlo harness.

Estimates minimize the whitened residual sum of squares
``sum_k sum_j (y_data - y(p))^2 / sigma_j^2`` over normalized parameters in a
box. The local solver is a projected Levenberg-Marquardt iteration whose
Jacobian comes from one central-difference batch per trial point.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import svgplot
from .parallel import parallel_map
from .sensitivity import (DEFAULT_FD_STEP, OutputModel, SimulationFailure,
                          local_sensitivities)
from .simulator import CurrentProfile

BOX = (0.5, 1.5)
NOISE_VARS = (1e-2, 0.3)


@dataclass
class EstimationResult:
    p_hat: np.ndarray
    residual: float
    converged: bool
    iterations: int
    start_index: int
    n_evals: int = 0
    message: str = ""


def whiten(Y, noise_vars) -> np.ndarray:
    sd = np.sqrt(np.asarray(noise_vars, dtype=float))
    sd = np.where(sd > 0, sd, 1.0)
    return np.asarray(Y, dtype=float) / sd


def noisy_outputs(Y, noise_vars, seed) -> np.ndarray:
    """Add independent Gaussian noise per channel; channels drawn in order."""
    Y = np.asarray(Y, dtype=float)
    rng = np.random.default_rng(seed)
    out = Y.copy()
    for j, var in enumerate(noise_vars):
        out[:, j] = Y[:, j] + rng.standard_normal(Y.shape[0]) * np.sqrt(var)
    return out


def _evaluate(model, profile, p, data_w, noise_vars, step):
    """Whitened residual and its Jacobian at ``p`` from one FD batch."""
    stack = local_sensitivities(model, profile, p, step=step)
    r = (data_w - whiten(stack.center, noise_vars)).ravel()
    J = -whiten(np.moveaxis(stack.values, -1, 0), noise_vars).reshape(len(p), -1).T
    return r, J


def _solve_from(model, profile, data_w, noise_vars, p0, lo, hi, max_iter, tol, step):
    p = np.clip(np.asarray(p0, dtype=float), lo, hi)
    r, J = _evaluate(model, profile, p, data_w, noise_vars, step)
    cost = float(r @ r)
    lam = 1e-3
    n_evals = 1
    for it in range(1, max_iter + 1):
        if cost == 0.0:
            return p, cost, True, it - 1, n_evals, "zero residual"
        g = J.T @ r
        # freeze coordinates pressed against a bound
        free = ~(((p <= lo) & (g > 0)) | ((p >= hi) & (g < 0)))
        if not free.any():
            return p, cost, True, it - 1, n_evals, "all parameters at bounds"
        Jf = J[:, free]
        H = Jf.T @ Jf
        d = np.maximum(np.diag(H), 1e-12 * max(np.max(np.diag(H)), 1e-300))
        accepted = False
        while lam < 1e12:
            try:
                delta = np.linalg.solve(H + lam * np.diag(d), -g[free])
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            q = p.copy()
            q[free] = np.clip(p[free] + delta, lo, hi)
            if np.array_equal(q, p):
                return p, cost, True, it, n_evals, "step below resolution"
            try:
                r_new, J_new = _evaluate(model, profile, q, data_w, noise_vars, step)
                n_evals += 1
                cost_new = float(r_new @ r_new)
            except SimulationFailure:
                n_evals += 1
                cost_new = np.inf
            if cost_new < cost:
                small = (cost - cost_new) <= tol * cost or np.max(np.abs(q - p)) <= tol
                p, r, J, cost = q, r_new, J_new, cost_new
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                if small:
                    return p, cost, True, it, n_evals, "converged"
                break
            lam *= 4.0
        if not accepted:
            return p, cost, True, it, n_evals, "no further decrease"
    return p, cost, False, max_iter, n_evals, "iteration limit"


def estimate_parameters(data, model: OutputModel, profile: CurrentProfile, p_init,
                        box=BOX, noise_vars=NOISE_VARS, n_starts: int = 3, seed=0,
                        starts=None, max_iter: int = 50, tol: float = 1e-10,
                        step: float = DEFAULT_FD_STEP) -> EstimationResult:
    """Box-constrained whitened least squares from ``p_init`` plus random starts.

    ``data`` is a ``(K, n_y)`` array or anything with ``as_array()``. Extra
    starts are ``p_init * (1 + 0.1 z)`` clipped into the box unless ``starts``
    is given explicitly.
    """
    Y = data.as_array() if hasattr(data, "as_array") else np.asarray(data, dtype=float)
    lo, hi = float(box[0]), float(box[1])
    p_init = np.asarray(p_init, dtype=float)
    if np.any(p_init < lo) or np.any(p_init > hi):
        raise ValueError("initial guess outside the estimation box")
    if starts is None:
        starts = start_guesses(p_init, n_starts, box, seed)
    data_w = whiten(Y, noise_vars)
    best = None
    errors = []
    for s, p0 in enumerate(starts):
        try:
            p, cost, conv, it, nev, msg = _solve_from(model, profile, data_w, noise_vars, p0,
                                                      lo, hi, max_iter, tol, step)
        except SimulationFailure as exc:
            errors.append(f"start {s}: {exc}")
            continue
        res = EstimationResult(p, cost, conv, it, s, nev, msg)
        if best is None or cost < best.residual:
            best = res
    if best is None:
        raise SimulationFailure("all estimation starts failed: " + "; ".join(errors))
    return best


def start_guesses(p_init, n_starts: int, box=BOX, seed=0) -> np.ndarray:
    p_init = np.asarray(p_init, dtype=float)
    rng = np.random.default_rng(seed)
    out = [p_init]
    for _ in range(n_starts - 1):
        out.append(np.clip(p_init * (1.0 + 0.1 * rng.standard_normal(p_init.size)), *box))
    return np.array(out)


# --------------------------------------------------------------------------- #
# Monte Carlo study


@dataclass
class McStudy:
    names: tuple[str, ...]
    estimates: np.ndarray              # (n_ok, n_p)
    results: list[EstimationResult]
    replicate_ids: np.ndarray
    n_failed: int = 0
    label: str = ""
    mean: np.ndarray = field(init=False)
    variance: np.ndarray = field(init=False)
    correlation: np.ndarray = field(init=False)
    quartiles: np.ndarray = field(init=False)   # (5, n_p): min, q1, median, q3, max

    def __post_init__(self):
        E = np.asarray(self.estimates, dtype=float)
        self.estimates = E
        self.mean = E.mean(axis=0)
        self.variance = empirical_variance(E)
        self.correlation = correlation_matrix(E)
        self.quartiles = np.quantile(E, [0.0, 0.25, 0.5, 0.75, 1.0], axis=0)

    @property
    def n_mc(self) -> int:
        return len(self.results) + self.n_failed

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replicate", "parameter", "value", "residual", "converged"])
            for rid, res in zip(self.replicate_ids, self.results):
                for name, v in zip(self.names, res.p_hat):
                    w.writerow([int(rid), name, repr(float(v)), repr(float(res.residual)),
                                int(res.converged)])

    @classmethod
    def from_csv(cls, path, label: str = "") -> "McStudy":
        rows: dict[int, dict] = {}
        names: list[str] = []
        with open(Path(path), newline="") as fh:
            for row in csv.DictReader(fh):
                rid = int(row["replicate"])
                if row["parameter"] not in names:
                    names.append(row["parameter"])
                rec = rows.setdefault(rid, {"p": {}, "res": float(row["residual"]),
                                            "conv": bool(int(row["converged"]))})
                rec["p"][row["parameter"]] = float(row["value"])
        ids = sorted(rows)
        est = np.array([[rows[i]["p"][n] for n in names] for i in ids])
        results = [EstimationResult(est[k], rows[i]["res"], rows[i]["conv"], 0, 0)
                   for k, i in enumerate(ids)]
        return cls(tuple(names), est, results, np.array(ids), 0, label)


def empirical_variance(E) -> np.ndarray:
    E = np.asarray(E, dtype=float)
    if E.shape[0] < 2:
        raise ValueError("need at least two replicates")
    return np.var(E, axis=0, ddof=1)


def correlation_matrix(E) -> np.ndarray:
    """Pearson correlations; undefined entries (zero spread) are set to 0."""
    E = np.asarray(E, dtype=float)
    X = E - E.mean(axis=0)
    sd = np.sqrt(np.sum(X * X, axis=0))
    ok = sd > 0
    C = np.zeros((E.shape[1], E.shape[1]))
    Xn = X[:, ok] / sd[ok]
    C[np.ix_(ok, ok)] = np.clip(Xn.T @ Xn, -1.0, 1.0)
    C = 0.5 * (C + C.T)
    np.fill_diagonal(C, 1.0)
    return C


def monte_carlo_study(design: CurrentProfile, truth, n_mc: int, noise_vars, seed,
                      model: OutputModel, box=BOX, n_starts: int = 3, label: str = "",
                      jobs: int = 1, names: Sequence[str] | None = None,
                      max_iter: int = 50) -> McStudy:
    """Re-estimate the parameters from ``n_mc`` noisy copies of the truth's outputs.

    Replicate ``r`` draws its noise with seed ``seed + r``. All replicates use
    the same start points, so noise-free data give identical estimates.
    """
    if n_mc < 2:
        raise ValueError("n_mc must be at least 2")
    truth = np.asarray(truth, dtype=float)
    Y_true = model.run(design, truth[None], control=[0]).Y[0]
    starts = start_guesses(np.clip(truth, *box), n_starts, box, seed)
    tasks = [(r, noisy_outputs(Y_true, noise_vars, seed + r)) for r in range(n_mc)]

    def solve(task):
        r, data = task
        try:
            return r, estimate_parameters(data, model, design, truth, box, noise_vars,
                                          starts=starts, max_iter=max_iter)
        except SimulationFailure:
            return r, None

    out = parallel_map(solve, tasks, jobs)
    ok = [(r, res) for r, res in out if res is not None]
    n_failed = n_mc - len(ok)
    if len(ok) < 2:
        raise SimulationFailure(f"only {len(ok)} of {n_mc} replicates succeeded")
    names = tuple(names) if names is not None else tuple(
        getattr(model, "names", [f"p{i + 1}" for i in range(truth.size)]))
    return McStudy(names, np.array([res.p_hat for _, res in ok]), [res for _, res in ok],
                   np.array([r for r, _ in ok]), n_failed, label)


def efficiency(var_local, var_global) -> np.ndarray:
    """Per-parameter ratio ``var_local / var_global``."""
    vl = np.asarray(var_local, dtype=float)
    vg = np.asarray(var_global, dtype=float)
    if vl.shape != vg.shape:
        raise ValueError("variance vectors differ in length")
    if np.any(vg <= 0):
        raise ValueError("global-design variance must be positive for every parameter")
    return vl / vg


# --------------------------------------------------------------------------- #
# report


def write_efficiency_csv(path, names, var_local, var_global) -> np.ndarray:
    eta = efficiency(var_local, var_global)
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "var_local", "var_global", "eta"])
        for n, a, b, e in zip(names, var_local, var_global, eta):
            w.writerow([n, repr(float(a)), repr(float(b)), repr(float(e))])
    return eta


def write_matrix_csv(path, names, M) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter"] + list(names))
        for n, row in zip(names, M):
            w.writerow([n] + [repr(float(x)) for x in row])


def write_variance_csv(path, study: McStudy) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "mean", "variance", "min", "q1", "median", "q3", "max"])
        for i, n in enumerate(study.names):
            w.writerow([n, repr(float(study.mean[i])), repr(float(study.variance[i]))]
                       + [repr(float(q)) for q in study.quartiles[:, i]])


def summary_report(local: McStudy, global_: McStudy, out_dir, designs=None) -> dict[str, Path]:
    """Write CSV tables and SVG plots comparing the two studies.

    ``designs`` optionally maps a label to a ``CurrentProfile`` for the
    current-profile plot. Returns the written paths by role.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if local.names != global_.names:
        raise ValueError("studies estimate different parameters")
    names = local.names
    paths: dict[str, Path] = {}
    paths["estimates_local"] = out / "estimates_local.csv"
    local.to_csv(paths["estimates_local"])
    paths["estimates_global"] = out / "estimates_global.csv"
    global_.to_csv(paths["estimates_global"])
    paths["efficiency"] = out / "efficiency.csv"
    write_efficiency_csv(paths["efficiency"], names, local.variance, global_.variance)
    for tag, st in (("local", local), ("global", global_)):
        paths[f"variance_{tag}"] = out / f"variance_{tag}.csv"
        write_variance_csv(paths[f"variance_{tag}"], st)
        paths[f"correlation_{tag}"] = out / f"correlation_{tag}.csv"
        write_matrix_csv(paths[f"correlation_{tag}"], names, st.correlation)
        paths[f"scatter_{tag}"] = out / f"scatter_matrix_{tag}.svg"
        svgplot.scatter_matrix(st.estimates, names, paths[f"scatter_{tag}"],
                               title=f"Estimates, {tag} design", corr=st.correlation)
    paths["boxplot"] = out / "boxplot.svg"
    svgplot.box_plot({"local": local.estimates, "global": global_.estimates}, names,
                     paths["boxplot"], title="Parameter estimates")
    for i, n in enumerate(names):
        key = f"hist_{n}"
        paths[key] = out / f"hist_{n}.svg"
        svgplot.histogram({"local": local.estimates[:, i], "global": global_.estimates[:, i]},
                          paths[key], title=f"Estimates of {n}", xlabel=f"{n} (normalized)")
    if designs:
        paths["profiles"] = out / "profiles.svg"
        series = []
        for label, prof in designs.items():
            t = np.arange(prof.n_segments + 1) * prof.segment_duration
            series.append((label, t, np.append(prof.rates, prof.rates[-1])))
        svgplot.line_plot(series, paths["profiles"], title="Current profiles",
                          xlabel="time (s)", ylabel="rate (C)", step=True)
    return paths
