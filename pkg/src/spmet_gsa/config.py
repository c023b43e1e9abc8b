"""YAML run configuration with unit-suffixed keys and line-precise errors.

Sections: ``cell`` (plain fields plus ``arrhenius`` triplets), ``uncertain``,
``initial_state``, ``simulation``, ``design``, ``identification`` and the
top-level ``seed`` and ``output_dir``. :meth:`RunConfig.to_dict` emits the
normalized form; loading it again reproduces the same dictionary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .defaults import (ARRHENIUS_REFERENCE, CE_INIT, THETA_P_INIT, T_INIT, UNCERTAIN_PARAMETERS,
                       kokam_parameters)
from .doe import DesignSpec
from .model import CellState, derive_geometry
from .params import CellParameters, ParameterError, T_REF, anchored_pre_exponential
from .sensitivity import ParameterDistribution
from .simulator import OperatingLimits


class ConfigError(ValueError):
    def __init__(self, message: str, key: str = "", line: int | None = None,
                 source: str = ""):
        where = f"{source}:" if source else ""
        where += f"{line}: " if line is not None else (" " if source else "")
        key_s = f"{key}: " if key else ""
        super().__init__(f"{where}{key_s}{message}")
        self.key, self.line = key, line


# config key -> (CellParameters field, factor to SI)
CELL_KEYS = {
    "L_p_m": ("L_p", 1.0), "L_s_m": ("L_s", 1.0), "L_n_m": ("L_n", 1.0),
    "A_m2": ("A", 1.0), "R_pp_m": ("R_pp", 1.0), "R_pn_m": ("R_pn", 1.0),
    "capacity_Ah": ("capacity_C", 3600.0),
    "cs_max_p_mol_m3": ("cs_max_p", 1.0), "cs_max_n_mol_m3": ("cs_max_n", 1.0),
    "theta_p_0": ("theta_p_0", 1.0), "theta_p_100": ("theta_p_100", 1.0),
    "theta_n_0": ("theta_n_0", 1.0), "theta_n_100": ("theta_n_100", 1.0),
    "Ea_kappa_J_mol": ("Ea_kappa", 1.0), "T_ref_kappa_K": ("T_ref_kappa", 1.0),
    "eps_p": ("eps_p", 1.0), "eps_s": ("eps_s", 1.0), "eps_n": ("eps_n", 1.0),
    "tau_p": ("tau_p", 1.0), "tau_s": ("tau_s", 1.0), "tau_n": ("tau_n", 1.0),
    "t_plus": ("t_plus", 1.0), "R_sei_ohm": ("R_sei", 1.0),
    "C_th_J_K": ("C_th", 1.0), "h_c_W_m2K": ("h_c", 1.0), "A_c_m2": ("A_c", 1.0),
    "T_sink_K": ("T_sink", 1.0),
}
FIELD_TO_KEY = {f: f"cell.{k}" for k, (f, _) in CELL_KEYS.items()}

# triplet name -> (pre-exponential field, activation field, unit suffix of the reference)
ARRHENIUS_KEYS = {
    "Ds_p": ("Ds_p0", "Ea_Ds_p", "ref_m2_s"),
    "Ds_n": ("Ds_n0", "Ea_Ds_n", "ref_m2_s"),
    "De": ("De0", "Ea_De", "ref_m2_s"),
    "k_p": ("k_p0", "Ea_k_p", "ref_m2p5_mol0p5_s"),
    "k_n": ("k_n0", "Ea_k_n", "ref_m2p5_mol0p5_s"),
}
for _name, (_pre, _ea, _) in ARRHENIUS_KEYS.items():
    FIELD_TO_KEY[_pre] = f"cell.arrhenius.{_name}"
    FIELD_TO_KEY[_ea] = f"cell.arrhenius.{_name}.Ea_J_mol"

SECTION_KEYS = {
    "initial_state": ("theta_p", "c_e_mol_m3", "T_K"),
    "simulation": ("P", "t_s_s", "segment_duration_s", "rtol"),
    "design": ("n_v", "rate_min_C", "rate_max_C", "T_max_K", "V_min_V", "V_max_V",
               "penalty_weight", "multistart_count", "max_evals", "step_tol_C"),
    "identification": ("n_mc", "noise_var_V_V2", "noise_var_T_K2", "box", "n_starts"),
    "uncertain": ("names", "rel_std"),
}
TOP_KEYS = ("cell", "uncertain", "initial_state", "simulation", "design",
            "identification", "seed", "output_dir")


@dataclass
class RunConfig:
    cell: dict
    arrhenius: dict
    uncertain_names: tuple[str, ...] = UNCERTAIN_PARAMETERS
    rel_std: float = 0.10
    theta_p_init: float = THETA_P_INIT
    c_e_init: float = CE_INIT
    T_init: float = T_INIT
    P: int = 10
    t_s: float = 5.0
    segment_duration: float = 100.0
    rtol: float = 1e-6
    n_v: int = 10
    rate_min: float = -15.0
    rate_max: float = 15.0
    T_max: float = 320.0
    V_min: float = 2.7
    V_max: float = 4.2
    penalty_weight: float = 1e4
    multistart_count: int = 8
    max_evals: int = 500
    step_tol: float = 0.1
    n_mc: int = 100
    noise_var_V: float = 1e-2
    noise_var_T: float = 0.3
    box: tuple[float, float] = (0.5, 1.5)
    n_starts: int = 3
    seed: int = 0
    output_dir: str = "out"
    source: str = field(default="", compare=False)
    _lines: dict = field(default_factory=dict, compare=False, repr=False)

    # -- derived objects ---------------------------------------------------- #

    def cell_parameters(self) -> CellParameters:
        kw = {}
        for key, v in self.cell.items():
            f, scale = CELL_KEYS[key]
            kw[f] = float(v) * scale
        for name, trip in self.arrhenius.items():
            pre, ea, ref_key = ARRHENIUS_KEYS[name]
            kw[pre] = anchored_pre_exponential(float(trip[ref_key]), float(trip["Ea_J_mol"]),
                                               float(trip["T_ref_K"]))
            kw[ea] = float(trip["Ea_J_mol"])
        kw["P"] = int(self.P)
        try:
            p = CellParameters(**kw).validate()
            derive_geometry(p)
        except ParameterError as exc:
            key = FIELD_TO_KEY.get(exc.field, exc.field)
            raise ConfigError(str(exc).split(": ", 1)[-1], key, self.line_of(key),
                              self.source) from None
        return p

    def initial_state(self) -> CellState:
        return CellState.equilibrium(self.theta_p_init, self.c_e_init, self.T_init, self.P)

    def limits(self) -> OperatingLimits:
        return OperatingLimits(self.T_max, self.V_min, self.V_max)

    @property
    def noise_vars(self) -> tuple[float, float]:
        return (self.noise_var_V, self.noise_var_T)

    def design_spec(self, mode: str, seed: int | None = None) -> DesignSpec:
        return DesignSpec(n_v=self.n_v, segment_duration=self.segment_duration,
                          rate_min=self.rate_min, rate_max=self.rate_max, t_s=self.t_s,
                          limits=self.limits(), mode=mode, penalty_weight=self.penalty_weight,
                          multistart_count=self.multistart_count,
                          seed=self.seed if seed is None else seed,
                          noise_vars=self.noise_vars, max_evals=self.max_evals,
                          step_tol=self.step_tol)

    def distribution(self, params: CellParameters | None = None) -> ParameterDistribution:
        params = self.cell_parameters() if params is None else params
        return ParameterDistribution.from_params(params, self.uncertain_names, self.rel_std)

    def line_of(self, key: str) -> int | None:
        while key:
            if key in self._lines:
                return self._lines[key]
            key = key.rpartition(".")[0]
        return None

    # -- serialization ------------------------------------------------------ #

    def to_dict(self) -> dict:
        return {
            "cell": {**{k: float(v) for k, v in self.cell.items()},
                     "arrhenius": {n: {k: float(x) for k, x in t.items()}
                                   for n, t in self.arrhenius.items()}},
            "uncertain": {"names": list(self.uncertain_names), "rel_std": float(self.rel_std)},
            "initial_state": {"theta_p": float(self.theta_p_init),
                              "c_e_mol_m3": float(self.c_e_init), "T_K": float(self.T_init)},
            "simulation": {"P": int(self.P), "t_s_s": float(self.t_s),
                           "segment_duration_s": float(self.segment_duration),
                           "rtol": float(self.rtol)},
            "design": {"n_v": int(self.n_v), "rate_min_C": float(self.rate_min),
                       "rate_max_C": float(self.rate_max), "T_max_K": float(self.T_max),
                       "V_min_V": float(self.V_min), "V_max_V": float(self.V_max),
                       "penalty_weight": float(self.penalty_weight),
                       "multistart_count": int(self.multistart_count),
                       "max_evals": int(self.max_evals), "step_tol_C": float(self.step_tol)},
            "identification": {"n_mc": int(self.n_mc),
                               "noise_var_V_V2": float(self.noise_var_V),
                               "noise_var_T_K2": float(self.noise_var_T),
                               "box": [float(self.box[0]), float(self.box[1])],
                               "n_starts": int(self.n_starts)},
            "seed": int(self.seed),
            "output_dir": str(self.output_dir),
        }

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=False)

    def dump(self, path) -> None:
        Path(path).write_text(self.dumps())


# --------------------------------------------------------------------------- #
# loading


def _line_map(node, prefix="", out=None) -> dict:
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = f"{prefix}.{k.value}" if prefix else str(k.value)
            out[key] = k.start_mark.line + 1
            _line_map(v, key, out)
    return out


def loads(text: str, source: str = "") -> RunConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark is not None else None
        raise ConfigError(f"YAML syntax error: {exc.problem}", "", line, source) from None
    if data is None:
        data = {}
    lines = _line_map(node) if node is not None else {}
    return _build(data, lines, source)


def load(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", "", None, str(path)) from None
    return loads(text, str(path))


def _build(data, lines, source) -> RunConfig:
    def err(key, msg):
        return ConfigError(msg, key, _lookup(lines, key), source)

    def section(d, key, allowed):
        if not isinstance(d, dict):
            raise err(key, "expected a mapping")
        for k in d:
            if k not in allowed:
                raise err(f"{key}.{k}" if key else str(k), "unknown key")
        return d

    def num(d, key, path, default=None, integer=False):
        full = f"{path}.{key}" if path else key
        if key not in d:
            if default is None:
                raise err(full, "missing required value")
            return default
        v = d[key]
        if isinstance(v, bool):
            raise err(full, "expected a number")
        try:
            x = float(v)
        except (TypeError, ValueError):
            raise err(full, f"expected a number, got {v!r}") from None
        if not np.isfinite(x):
            raise err(full, "must be finite")
        if integer:
            if x != int(x):
                raise err(full, "expected an integer")
            return int(x)
        return x

    top = section(data, "", TOP_KEYS)
    cell = section(top.get("cell", {}), "cell", tuple(CELL_KEYS) + ("arrhenius",))
    missing = [k for k in CELL_KEYS if k not in cell and k != "T_ref_kappa_K"]
    if missing:
        raise err("cell", f"missing cell parameter(s): {', '.join(missing)}")
    cell_vals = {k: num(cell, k, "cell") for k in CELL_KEYS if k in cell}
    arr_in = section(cell.get("arrhenius", {}), "cell.arrhenius", tuple(ARRHENIUS_KEYS))
    arrhenius = {}
    for name, (_, _, ref_key) in ARRHENIUS_KEYS.items():
        path = f"cell.arrhenius.{name}"
        if name not in arr_in:
            raise err("cell.arrhenius", f"missing Arrhenius triplet {name}")
        trip = section(arr_in[name], path, (ref_key, "Ea_J_mol", "T_ref_K"))
        arrhenius[name] = {ref_key: num(trip, ref_key, path), "Ea_J_mol": num(trip, "Ea_J_mol", path),
                           "T_ref_K": num(trip, "T_ref_K", path, T_REF)}
        if arrhenius[name][ref_key] <= 0:
            raise err(f"{path}.{ref_key}", "must be strictly positive")
        if arrhenius[name]["T_ref_K"] <= 0:
            raise err(f"{path}.T_ref_K", "must be strictly positive")

    kw = {}
    unc = section(top.get("uncertain", {}), "uncertain", SECTION_KEYS["uncertain"])
    names = unc.get("names", list(UNCERTAIN_PARAMETERS))
    if not isinstance(names, list) or not names or not all(isinstance(n, str) for n in names):
        raise err("uncertain.names", "expected a non-empty list of parameter names")
    valid_names = {f for f, _ in CELL_KEYS.values()} | {
        x for pre, ea, _ in ARRHENIUS_KEYS.values() for x in (pre, ea)}
    for n in names:
        if n not in valid_names:
            raise err("uncertain.names", f"{n!r} is not a cell parameter")
    if len(set(names)) != len(names):
        raise err("uncertain.names", "duplicate parameter names")
    kw["uncertain_names"] = tuple(names)
    kw["rel_std"] = num(unc, "rel_std", "uncertain", 0.10)
    if kw["rel_std"] <= 0:
        raise err("uncertain.rel_std", "must be positive")

    ini = section(top.get("initial_state", {}), "initial_state", SECTION_KEYS["initial_state"])
    kw["theta_p_init"] = num(ini, "theta_p", "initial_state", THETA_P_INIT)
    kw["c_e_init"] = num(ini, "c_e_mol_m3", "initial_state", CE_INIT)
    kw["T_init"] = num(ini, "T_K", "initial_state", T_INIT)
    if not 0 < kw["theta_p_init"] < 1:
        raise err("initial_state.theta_p", "must lie in (0, 1)")
    if kw["c_e_init"] <= 0:
        raise err("initial_state.c_e_mol_m3", "must be positive")
    if kw["T_init"] <= 0:
        raise err("initial_state.T_K", "must be positive")

    sim = section(top.get("simulation", {}), "simulation", SECTION_KEYS["simulation"])
    kw["P"] = num(sim, "P", "simulation", 10, integer=True)
    kw["t_s"] = num(sim, "t_s_s", "simulation", 5.0)
    kw["segment_duration"] = num(sim, "segment_duration_s", "simulation", 100.0)
    kw["rtol"] = num(sim, "rtol", "simulation", 1e-6)
    if kw["P"] < 2:
        raise err("simulation.P", "need at least 2 volumes per section")
    for k, v in (("t_s_s", kw["t_s"]), ("segment_duration_s", kw["segment_duration"]),
                 ("rtol", kw["rtol"])):
        if v <= 0:
            raise err(f"simulation.{k}", "must be positive")
    n = kw["segment_duration"] / kw["t_s"]
    if abs(n - round(n)) > 1e-9 * n:
        raise err("simulation.t_s_s", "must divide segment_duration_s")

    des = section(top.get("design", {}), "design", SECTION_KEYS["design"])
    kw["n_v"] = num(des, "n_v", "design", 10, integer=True)
    kw["rate_min"] = num(des, "rate_min_C", "design", -15.0)
    kw["rate_max"] = num(des, "rate_max_C", "design", 15.0)
    kw["T_max"] = num(des, "T_max_K", "design", 320.0)
    kw["V_min"] = num(des, "V_min_V", "design", 2.7)
    kw["V_max"] = num(des, "V_max_V", "design", 4.2)
    kw["penalty_weight"] = num(des, "penalty_weight", "design", 1e4)
    kw["multistart_count"] = num(des, "multistart_count", "design", 8, integer=True)
    kw["max_evals"] = num(des, "max_evals", "design", 500, integer=True)
    kw["step_tol"] = num(des, "step_tol_C", "design", 0.1)
    checks = [("n_v", kw["n_v"] >= 1, "must be at least 1"),
              ("rate_max_C", kw["rate_min"] < kw["rate_max"], "must exceed rate_min_C"),
              ("V_max_V", kw["V_min"] < kw["V_max"], "must exceed V_min_V"),
              ("T_max_K", kw["T_max"] > 0, "must be positive"),
              ("penalty_weight", kw["penalty_weight"] >= 0, "must be non-negative"),
              ("multistart_count", kw["multistart_count"] >= 1, "must be at least 1"),
              ("max_evals", kw["max_evals"] >= 1, "must be at least 1"),
              ("step_tol_C", kw["step_tol"] > 0, "must be positive")]
    for k, ok, msg in checks:
        if not ok:
            raise err(f"design.{k}", msg)

    ide = section(top.get("identification", {}), "identification",
                  SECTION_KEYS["identification"])
    kw["n_mc"] = num(ide, "n_mc", "identification", 100, integer=True)
    kw["noise_var_V"] = num(ide, "noise_var_V_V2", "identification", 1e-2)
    kw["noise_var_T"] = num(ide, "noise_var_T_K2", "identification", 0.3)
    kw["n_starts"] = num(ide, "n_starts", "identification", 3, integer=True)
    box = ide.get("box", [0.5, 1.5])
    if not isinstance(box, list) or len(box) != 2:
        raise err("identification.box", "expected [lower, upper]")
    try:
        box = (float(box[0]), float(box[1]))
    except (TypeError, ValueError):
        raise err("identification.box", "expected two numbers") from None
    if not 0 < box[0] < 1 < box[1]:
        raise err("identification.box", "must satisfy 0 < lower < 1 < upper")
    kw["box"] = box
    if kw["n_mc"] < 2:
        raise err("identification.n_mc", "must be at least 2")
    if kw["noise_var_V"] < 0 or kw["noise_var_T"] < 0:
        raise err("identification", "noise variances must be non-negative")
    if kw["n_starts"] < 1:
        raise err("identification.n_starts", "must be at least 1")

    kw["seed"] = num(top, "seed", "", 0, integer=True)
    kw["output_dir"] = str(top.get("output_dir", "out"))

    cfg = RunConfig(cell=cell_vals, arrhenius=arrhenius, source=source, _lines=lines, **kw)
    cfg.cell_parameters()   # run the physical invariants now, with line numbers
    return cfg


def _lookup(lines, key):
    while key:
        if key in lines:
            return lines[key]
        key = key.rpartition(".")[0]
    return None


def default_config() -> RunConfig:
    """The bundled case-study configuration (placeholder cell values)."""
    p = kokam_parameters()
    cell = {}
    for key, (f, scale) in CELL_KEYS.items():
        cell[key] = float(getattr(p, f)) / scale
    arr = {}
    for name, (_, _, ref_key) in ARRHENIUS_KEYS.items():
        ref, ea = ARRHENIUS_REFERENCE[name]
        arr[name] = {ref_key: ref, "Ea_J_mol": ea, "T_ref_K": T_REF}
    return RunConfig(cell=cell, arrhenius=arr)
