"""Time integration of the SPMeT under piecewise-constant current."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .integrate import EtdIntegrator, IntegrationError, RTOL, integrate_compiled
from .model import CellState, DomainError, Spmet, anode_from_cathode, soc
from .params import CellParameters

__all__ = ["CurrentProfile", "MeasurementSeries", "OperatingLimits", "LimitReport",
           "SimulationResult", "simulate", "simulate_batch", "check_limits",
           "add_noise", "write_trajectory_csv", "IntegrationError"]


@dataclass(frozen=True)
class CurrentProfile:
    rates: tuple[float, ...]
    segment_duration: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "rates", tuple(float(r) for r in np.atleast_1d(self.rates)))
        if len(self.rates) < 1:
            raise ValueError("profile needs at least one segment")
        if not self.segment_duration > 0:
            raise ValueError("segment_duration must be positive")

    @property
    def n_segments(self) -> int:
        return len(self.rates)

    @property
    def horizon(self) -> float:
        return self.n_segments * self.segment_duration

    def currents(self, capacity_Ah: float) -> np.ndarray:
        return np.asarray(self.rates) * capacity_Ah

    def check_bounds(self, rate_min: float, rate_max: float) -> None:
        r = np.asarray(self.rates)
        if np.any(r < rate_min) or np.any(r > rate_max):
            raise ValueError(f"rates must lie in [{rate_min}, {rate_max}] C")

    def sample_times(self, t_s: float) -> np.ndarray:
        per_segment = _samples_per_segment(self.segment_duration, t_s)
        K = per_segment * self.n_segments
        return t_s * np.arange(1, K + 1)


@dataclass
class MeasurementSeries:
    times: np.ndarray
    V: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.V = np.asarray(self.V, dtype=float)
        self.T = np.asarray(self.T, dtype=float)
        if not (self.times.shape == self.V.shape == self.T.shape):
            raise ValueError("times, V and T must have equal length")

    def as_array(self) -> np.ndarray:
        """Outputs stacked as ``(K, 2)`` with columns V and T."""
        return np.stack([self.V, self.T], axis=-1)

    def __len__(self):
        return len(self.times)


@dataclass(frozen=True)
class OperatingLimits:
    T_max: float = 320.0
    V_min: float = 2.7
    V_max: float = 4.2

    def __post_init__(self):
        if not self.V_min < self.V_max:
            raise ValueError("V_min must be below V_max")
        if not self.T_max > 0:
            raise ValueError("T_max must be positive")


@dataclass
class LimitReport:
    over_T: np.ndarray
    under_V: np.ndarray
    over_V: np.ndarray

    @property
    def totals(self) -> dict[str, float]:
        return {"over_T": float(np.sum(self.over_T)), "under_V": float(np.sum(self.under_V)),
                "over_V": float(np.sum(self.over_V))}

    @property
    def total(self) -> float:
        return float(np.sum(self.over_T) + np.sum(self.under_V) + np.sum(self.over_V))

    @property
    def squared_total(self) -> float:
        return float(np.sum(self.over_T ** 2) + np.sum(self.under_V ** 2)
                     + np.sum(self.over_V ** 2))

    @property
    def ok(self) -> bool:
        return self.total == 0.0


@dataclass
class SimulationResult:
    """Sampled outputs for a batch of cells: ``V`` and ``T`` have shape ``(B, K)``."""
    times: np.ndarray
    V: np.ndarray
    T: np.ndarray
    currents: np.ndarray
    states: np.ndarray | None = None
    violation: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    n_steps: int = 0

    def outputs(self) -> np.ndarray:
        return np.stack([self.V, self.T], axis=-1)

    def series(self, index: int = 0) -> MeasurementSeries:
        return MeasurementSeries(self.times, self.V[index], self.T[index])


def _samples_per_segment(duration: float, t_s: float) -> int:
    n = duration / t_s
    if not t_s > 0 or abs(n - round(n)) > 1e-9 * n:
        raise ValueError(f"sampling time {t_s} must divide the segment duration {duration}")
    return int(round(n))


def simulate_batch(params: CellParameters, profile: CurrentProfile, x0: CellState | np.ndarray,
                   t_s: float = 5.0, *, rtol: float = RTOL, control=None,
                   keep_states: bool = False, strict: bool = False,
                   engine: str = "compiled") -> SimulationResult:
    """Simulate a batch of parameter sets sharing one step sequence.

    ``control`` selects the batch members whose local error drives step-size
    selection (all members by default). ``engine="numpy"`` runs the reference
    integrator instead of the compiled kernel.
    """
    model = Spmet(params, strict=strict)
    B = params.batch_size
    y0 = x0.to_vector() if isinstance(x0, CellState) else np.asarray(x0, dtype=float)
    if y0.shape[-1] != model.n:
        raise ValueError(f"initial state has length {y0.shape[-1]}, expected {model.n}")
    if y0.ndim > 1 and y0.shape[0] != (B or 1):
        raise ValueError("initial states do not match the parameter batch")
    per_seg = _samples_per_segment(profile.segment_duration, t_s)
    currents = profile.currents(params.capacity_Ah)
    if np.ndim(currents) > 1:
        raise ValueError("capacity must not vary across the batch")
    if engine == "compiled":
        states, V, viol, n_steps = integrate_compiled(
            model, y0, currents, profile.segment_duration, t_s, per_seg, rtol=rtol,
            control=control)
        T = states[..., -1]
    elif engine == "numpy":
        states, V, viol, n_steps = _integrate_reference(model, y0, currents, profile,
                                                        t_s, per_seg, rtol, control)
        T = states[..., -1]
    else:
        raise ValueError(f"unknown engine {engine!r}")
    if strict and np.any(viol):
        raise DomainError("state left the physical domain during integration")
    return SimulationResult(times=profile.sample_times(t_s), V=V, T=T,
                            currents=np.repeat(currents, per_seg),
                            states=states if keep_states else None,
                            violation=viol, n_steps=n_steps)


def _integrate_reference(model, y0, currents, profile, t_s, per_seg, rtol, control):
    B = model.batch or 1
    y = np.array(np.broadcast_to(y0, (B, model.n)))
    integ = EtdIntegrator(model, rtol=rtol, control=control)
    states, V = [], []
    viol = np.zeros(B, dtype=bool)
    for s, I in enumerate(currents):
        t0 = s * profile.segment_duration
        stops = t0 + t_s * np.arange(1, per_seg + 1)
        # restart at every current discontinuity
        ys, v, _ = integ.advance(y, I, t0, stops)
        viol |= v
        terms = model.voltage(ys, I)
        viol |= np.any(terms.violation, axis=0)
        V.append(terms.V)
        states.append(ys)
        y = ys[-1]
    states = np.moveaxis(np.concatenate(states, axis=0), 0, 1)
    V = np.moveaxis(np.concatenate(V, axis=0), 0, 1)
    return states, V, viol, integ.n_steps


def simulate(params: CellParameters, profile: CurrentProfile, x0: CellState, t_s: float = 5.0,
             *, rtol: float = RTOL, keep_states: bool = False, strict: bool = False,
             engine: str = "compiled") -> MeasurementSeries | tuple[MeasurementSeries, SimulationResult]:
    """Simulate one cell and return its sampled voltage and temperature."""
    if params.batch_size is not None:
        raise ValueError("simulate takes a single parameter set; use simulate_batch")
    res = simulate_batch(params, profile, x0, t_s, rtol=rtol, keep_states=keep_states,
                         strict=strict, engine=engine)
    series = res.series(0)
    if keep_states:
        return series, res
    return series


def check_limits(series: MeasurementSeries, limits: OperatingLimits) -> LimitReport:
    V = np.asarray(series.V)
    T = np.asarray(series.T)
    return LimitReport(over_T=np.maximum(0.0, T - limits.T_max),
                       under_V=np.maximum(0.0, limits.V_min - V),
                       over_V=np.maximum(0.0, V - limits.V_max))


def add_noise(series: MeasurementSeries, var_V: float, var_T: float, seed) -> MeasurementSeries:
    if var_V < 0 or var_T < 0:
        raise ValueError("noise variances must be non-negative")
    rng = np.random.default_rng(seed)
    eV = rng.standard_normal(len(series)) * np.sqrt(var_V)
    eT = rng.standard_normal(len(series)) * np.sqrt(var_T)
    return MeasurementSeries(series.times.copy(), series.V + eV, series.T + eT)


def write_trajectory_csv(path, result: SimulationResult, params: CellParameters,
                         index: int = 0, include_states: bool = False) -> None:
    """Write one batch member's trajectory.

    Columns: time_s, current_A, voltage_V, temperature_K, soc_pct and, when
    requested, the raw state components.
    """
    if result.states is None:
        raise ValueError("result has no stored states; simulate with keep_states=True")
    p = params.select(index) if params.batch_size else params
    st = result.states[index]
    soc_pct = soc(anode_from_cathode(st[:, 0], p), p)
    P = (st.shape[-1] - 4) // 3
    header = ["time_s", "current_A", "voltage_V", "temperature_K", "soc_pct"]
    if include_states:
        header += ["theta_bar_p", "q_bar_p", "q_bar_n"] + [
            f"c_e_{sec}{k + 1}" for sec in "psn" for k in range(P)]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k, t in enumerate(result.times):
            row = [_fmt(t), _fmt(result.currents[k]), _fmt(result.V[index, k]),
                   _fmt(result.T[index, k]), _fmt(soc_pct[k])]
            if include_states:
                row += [_fmt(x) for x in st[k, :-1]]
            w.writerow(row)


def _fmt(x) -> str:
    return repr(float(x))
