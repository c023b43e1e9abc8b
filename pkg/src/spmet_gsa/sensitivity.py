"""Local and global (Sobol') output sensitivities.

Global indices use the point estimate method (PEM): a deterministic
``2 n^2 + 1`` node rule for Gaussian inputs with generator ``sqrt(3)``. The
first-order Sobol' index of parameter ``i`` is assembled from the same nodes
with no extra model runs: conditional means at ``xi_i in {0, +sqrt3, -sqrt3}``
come from the ``2m + 1`` node sub-rule (``m = n - 1``) over the nodes sitting
on that level, and their spread is taken with the 1-D three-point rule.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .defaults import CE_INIT, THETA_P_INIT, T_INIT
from .integrate import IntegrationError, RTOL
from .model import CellState
from .params import CellParameters, T_REF
from .simulator import CurrentProfile, simulate_batch

THETA_PEM = float(np.sqrt(3.0))
DEFAULT_FD_STEP = 1e-4
EPS_VAR = 1e-12

# activation energy -> its pre-exponential factor
ARRHENIUS_PAIRS = {"Ea_Ds_p": "Ds_p0", "Ea_Ds_n": "Ds_n0", "Ea_De": "De0",
                   "Ea_k_p": "k_p0", "Ea_k_n": "k_n0"}


class SimulationFailure(RuntimeError):
    """A model run failed; ``index`` names the offending parameter or node."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


# --------------------------------------------------------------------------- #
# model adapters


@dataclass
class ModelRun:
    Y: np.ndarray            # (B, K, n_y)
    violation: np.ndarray    # (B,)


class OutputModel(Protocol):
    output_names: tuple[str, ...]

    def times(self, profile: CurrentProfile) -> np.ndarray: ...

    def run(self, profile: CurrentProfile, p_tilde: np.ndarray, control=None) -> ModelRun: ...


@dataclass
class SpmetOutputModel:
    """Voltage and temperature of the SPMeT as a function of normalized parameters.

    ``p_tilde`` rows map to physical values by ``p = p_tilde * nominal`` for
    the uncertain ``names``; every other field keeps its nominal value. With
    ``anchor_arrhenius`` a perturbed activation energy also rescales its
    pre-exponential so the rate at ``T_ref`` is unchanged; the activation
    energy then only shapes the temperature dependence.
    """
    params: CellParameters
    names: tuple[str, ...]
    x0: CellState | None = None
    t_s: float = 5.0
    rtol: float = RTOL
    anchor_arrhenius: bool = True
    T_ref: float = T_REF
    output_names: tuple[str, ...] = ("V", "T")

    def __post_init__(self):
        self.names = tuple(self.names)
        if self.x0 is None:
            self.x0 = CellState.equilibrium(THETA_P_INIT, CE_INIT, T_INIT, self.params.P)
        self.nominal = np.array([float(getattr(self.params, n)) for n in self.names])

    def times(self, profile: CurrentProfile) -> np.ndarray:
        return profile.sample_times(self.t_s)

    def physical(self, p_tilde) -> CellParameters:
        vals = np.atleast_2d(np.asarray(p_tilde, dtype=float)) * self.nominal
        names = list(self.names)
        if self.anchor_arrhenius:
            p = self.params
            for i, name in enumerate(self.names):
                pre = ARRHENIUS_PAIRS.get(name)
                if pre is None:
                    continue
                shift = np.exp((vals[:, i] - self.nominal[i]) / (p.R_gas * self.T_ref))
                if pre in names:
                    vals[:, names.index(pre)] *= shift
                else:
                    names.append(pre)
                    vals = np.column_stack([vals, float(getattr(p, pre)) * shift])
        return self.params.with_values(tuple(names), vals)

    def run(self, profile: CurrentProfile, p_tilde, control=None) -> ModelRun:
        res = simulate_batch(self.physical(p_tilde), profile, self.x0, self.t_s,
                             rtol=self.rtol, control=control)
        return ModelRun(res.outputs(), res.violation)


@dataclass
class FunctionModel:
    """Synthetic model ``func(rates (n_v,), p_tilde (B, n_p)) -> (B, K, n_y)``."""
    func: Callable[[np.ndarray, np.ndarray], np.ndarray]
    n_samples: int
    output_names: tuple[str, ...] = ("y",)
    t_s: float = 1.0

    def times(self, profile: CurrentProfile) -> np.ndarray:
        return self.t_s * np.arange(1, self.n_samples + 1)

    def run(self, profile: CurrentProfile, p_tilde, control=None) -> ModelRun:
        P = np.atleast_2d(np.asarray(p_tilde, dtype=float))
        Y = np.asarray(self.func(np.asarray(profile.rates), P), dtype=float)
        Y = Y.reshape(P.shape[0], self.n_samples, len(self.output_names))
        return ModelRun(Y, np.zeros(P.shape[0], dtype=bool))


def run_checked(model: OutputModel, profile: CurrentProfile, p_tilde, control=None) -> ModelRun:
    """Run a batch; on failure, find the first member that fails on its own."""
    P = np.atleast_2d(np.asarray(p_tilde, dtype=float))
    try:
        out = model.run(profile, P, control=control)
    except IntegrationError as exc:
        for b in range(P.shape[0]):
            try:
                model.run(profile, P[b:b + 1])
            except IntegrationError as sub:
                raise SimulationFailure(f"member {b}: {sub}", b) from sub
        raise SimulationFailure(f"batch run failed: {exc}") from exc
    if not np.all(np.isfinite(out.Y)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(out.Y), axis=(1, 2)))[0])
        raise SimulationFailure(f"member {bad} produced non-finite outputs", bad)
    return out


# --------------------------------------------------------------------------- #
# distributions and PEM


@dataclass(frozen=True)
class ParameterDistribution:
    names: tuple[str, ...]
    nominal: np.ndarray
    rel_std: np.ndarray

    def __post_init__(self):
        names = tuple(self.names)
        nominal = np.atleast_1d(np.asarray(self.nominal, dtype=float))
        rel = np.broadcast_to(np.asarray(self.rel_std, dtype=float), nominal.shape).copy()
        if len(names) < 1 or len(names) != nominal.size:
            raise ValueError("need one nominal value per parameter name")
        if np.any(nominal == 0):
            raise ValueError("nominal values must be non-zero")
        if np.any(rel <= 0):
            raise ValueError("relative standard deviations must be positive")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "nominal", nominal)
        object.__setattr__(self, "rel_std", rel)

    @classmethod
    def from_params(cls, params: CellParameters, names: Sequence[str], rel_std=0.10):
        return cls(tuple(names), [float(getattr(params, n)) for n in names], rel_std)

    @property
    def n_p(self) -> int:
        return len(self.names)

    def to_physical(self, p_tilde):
        return np.asarray(p_tilde) * self.nominal


def pem_weights(n_p: int) -> tuple[float, float, float, float]:
    """Return ``(w_0, w_axial, w_pair, theta)`` of the ``2 n^2 + 1`` node rule."""
    if n_p < 1:
        raise ValueError("n_p must be at least 1")
    n = n_p
    return 1.0 + (n * n - 7 * n) / 18.0, (4.0 - n) / 18.0, 1.0 / 36.0, THETA_PEM


@dataclass(frozen=True)
class PemSampleSet:
    """PEM nodes in normalized space with their weights and index bookkeeping.

    ``xi`` holds the standardized coordinates (0 or +-theta). Node order:
    center, then ``(+, -)`` per axis, then for each ``i < j`` the sign
    patterns ``(+,+), (-,-), (-,+), (+,-)``.
    """
    nodes: np.ndarray
    xi: np.ndarray
    weights: np.ndarray
    rel_std: np.ndarray
    theta: float = THETA_PEM
    axial: np.ndarray = field(default=None, repr=False)      # (n_p, 2): (+, -)
    pairs: np.ndarray = field(default=None, repr=False)      # (n_p, n_p, 4)

    @property
    def n_p(self) -> int:
        return self.xi.shape[1]

    def __len__(self):
        return self.nodes.shape[0]


_PAIR_SIGNS = ((1, 1), (-1, -1), (-1, 1), (1, -1))


def pem_samples(dist: ParameterDistribution) -> PemSampleSet:
    n = dist.n_p
    w0, wa, wp, th = pem_weights(n)
    N = 2 * n * n + 1
    xi = np.zeros((N, n))
    w = np.empty(N)
    w[0] = w0
    axial = np.empty((n, 2), dtype=int)
    pairs = np.full((n, n, 4), -1, dtype=int)
    k = 1
    for i in range(n):
        for s, sign in enumerate((1, -1)):
            xi[k, i] = sign * th
            w[k] = wa
            axial[i, s] = k
            k += 1
    for i in range(n):
        for j in range(i + 1, n):
            for s, (si, sj) in enumerate(_PAIR_SIGNS):
                xi[k, i] = si * th
                xi[k, j] = sj * th
                w[k] = wp
                pairs[i, j, s] = k
                pairs[j, i, s if s < 2 else 5 - s] = k
                k += 1
    nodes = 1.0 + xi * dist.rel_std
    return PemSampleSet(nodes, xi, w, dist.rel_std.copy(), th, axial, pairs)


def pem_mean(values, sample_set: PemSampleSet):
    """Weighted mean over the node axis (axis 0)."""
    v = np.asarray(values, dtype=float)
    if v.shape[0] != len(sample_set):
        raise ValueError("need one value per PEM node")
    return np.tensordot(sample_set.weights, v, axes=(0, 0))


def pem_variance(values, sample_set: PemSampleSet):
    v = np.asarray(values, dtype=float)
    mu = pem_mean(v, sample_set)
    var = np.tensordot(sample_set.weights, (v - mu) ** 2, axes=(0, 0))
    return np.maximum(var, 0.0)


def conditional_rules(sample_set: PemSampleSet, i: int) -> tuple[np.ndarray, np.ndarray]:
    """Node indices ``(3, 2m+1)`` and weights ``(2m+1,)`` for the levels 0, +, - of ``i``.

    Each level uses the anchor node on that level plus the two nodes per other
    coordinate that move it by +-theta.
    """
    n = sample_set.n_p
    m = n - 1
    others = [j for j in range(n) if j != i]
    w = np.concatenate([[1.0 - m / 3.0], np.full(2 * m, 1.0 / 6.0)])
    idx = np.empty((3, 2 * m + 1), dtype=int)
    idx[0, 0] = 0
    idx[1, 0] = sample_set.axial[i, 0]
    idx[2, 0] = sample_set.axial[i, 1]
    for q, j in enumerate(others):
        idx[0, 1 + 2 * q] = sample_set.axial[j, 0]
        idx[0, 2 + 2 * q] = sample_set.axial[j, 1]
        # pairs[i, j] sign slots for (xi_i, xi_j): 0 (+,+), 1 (-,-), 2 (-,+), 3 (+,-)
        idx[1, 1 + 2 * q] = sample_set.pairs[i, j, 0]
        idx[1, 2 + 2 * q] = sample_set.pairs[i, j, 3]
        idx[2, 1 + 2 * q] = sample_set.pairs[i, j, 2]
        idx[2, 2 + 2 * q] = sample_set.pairs[i, j, 1]
    return idx, w


_OUTER_W = np.array([2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0])


def sobol_first_order(values, sample_set: PemSampleSet, i: int, return_flag: bool = False):
    """First-order Sobol' index of parameter ``i`` from PEM node outputs.

    ``values`` has the node axis first; any trailing shape is kept. Entries
    whose total variance is below ``1e-12 * scale^2`` are set to 0 and
    flagged.
    """
    v = np.asarray(values, dtype=float)
    total = pem_variance(v, sample_set)
    idx, w = conditional_rules(sample_set, i)
    cond = np.tensordot(w, v[idx], axes=(0, 1))     # (3, ...)
    mu = np.tensordot(_OUTER_W, cond, axes=(0, 0))
    var_c = np.maximum(np.tensordot(_OUTER_W, (cond - mu) ** 2, axes=(0, 0)), 0.0)
    scale = np.max(np.abs(v), axis=0)
    flat = total < EPS_VAR * scale ** 2
    S = np.where(flat, 0.0, var_c / np.where(flat, 1.0, total))
    S = np.clip(S, 0.0, 1.0)
    if return_flag:
        return S, flat
    return S


# --------------------------------------------------------------------------- #
# stacks


@dataclass
class SensitivityStack:
    """``values[k, j, i]``: sample instant ``k``, output ``j``, parameter ``i``."""
    values: np.ndarray
    times: np.ndarray
    output_names: tuple[str, ...]
    param_names: tuple[str, ...]
    kind: str
    valid: bool = True
    center: np.ndarray | None = None   # (K, n_y) nominal outputs
    violation: bool = False
    n_runs: int = 0

    def __post_init__(self):
        if self.kind not in ("local", "global"):
            raise ValueError("kind must be 'local' or 'global'")

    @property
    def shape(self):
        return self.values.shape

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time_s", "output", "parameter", "value", "kind"])
            for k, t in enumerate(self.times):
                for j, out in enumerate(self.output_names):
                    for i, name in enumerate(self.param_names):
                        w.writerow([repr(float(t)), out, name,
                                    repr(float(self.values[k, j, i])), self.kind])


def local_sensitivities(model: OutputModel, profile: CurrentProfile, p_hat,
                        step: float = DEFAULT_FD_STEP, param_names=None) -> SensitivityStack:
    """Central differences in normalized parameters, one batch of ``2 n_p + 1`` runs.

    The unperturbed point is member 0 and alone drives the step-size control,
    so all members share its discretisation.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    p_hat = np.asarray(p_hat, dtype=float)
    n = p_hat.size
    pts = np.tile(p_hat, (2 * n + 1, 1))
    for i in range(n):
        pts[1 + 2 * i, i] += step
        pts[2 + 2 * i, i] -= step
    try:
        run = run_checked(model, profile, pts, control=[0])
    except SimulationFailure as exc:
        idx = None if exc.index is None else max(exc.index - 1, 0) // 2
        raise SimulationFailure(f"local sensitivity run failed (parameter {idx}): {exc}",
                                idx) from exc
    Y = run.Y
    S = (Y[1::2] - Y[2::2]) / (2 * step)          # (n, K, n_y)
    names = tuple(param_names) if param_names is not None else getattr(
        model, "names", tuple(f"p{i + 1}" for i in range(n)))
    return SensitivityStack(np.moveaxis(S, 0, -1), model.times(profile),
                            tuple(model.output_names), tuple(names), "local",
                            center=Y[0], violation=bool(run.violation[0]), n_runs=2 * n + 1)


def global_sensitivity_stack(model: OutputModel, profile: CurrentProfile,
                             dist: ParameterDistribution) -> SensitivityStack:
    """First-order Sobol' indices at every sample instant from one PEM sweep."""
    ss = pem_samples(dist)
    try:
        # the nominal node steers the shared step sequence
        run = run_checked(model, profile, ss.nodes, control=[0])
    except SimulationFailure as exc:
        times = model.times(profile)
        empty = np.full((len(times), len(model.output_names), dist.n_p), np.nan)
        stack = SensitivityStack(empty, times, tuple(model.output_names), dist.names,
                                 "global", valid=False, n_runs=len(ss))
        stack.error = str(exc)
        return stack
    S = np.stack([sobol_first_order(run.Y, ss, i) for i in range(dist.n_p)], axis=-1)
    return SensitivityStack(S, model.times(profile), tuple(model.output_names), dist.names,
                            "global", center=run.Y[0], violation=bool(run.violation[0]),
                            n_runs=len(ss))
