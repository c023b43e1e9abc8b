"""Cell parameter container and helpers for batched (vectorised) parameter sets.

All values are SI. Fields may hold plain floats or 1-D arrays of equal length;
array-valued fields describe a batch of cells that are simulated together.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

import numpy as np

FARADAY = 96485.33212
R_GAS = 8.314462618
T_REF = 298.15


class ParameterError(ValueError):
    """Raised when a parameter set violates a physical invariant."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class CellParameters:
    # geometry
    L_p: float
    L_s: float
    L_n: float
    A: float
    R_pp: float
    R_pn: float
    capacity_C: float  # A*s
    # solid phase
    cs_max_p: float
    cs_max_n: float
    theta_p_0: float
    theta_p_100: float
    theta_n_0: float
    theta_n_100: float
    Ds_p0: float
    Ds_n0: float
    Ea_Ds_p: float
    Ea_Ds_n: float
    # electrolyte
    De0: float
    Ea_De: float
    Ea_kappa: float
    eps_p: float
    eps_s: float
    eps_n: float
    tau_p: float
    tau_s: float
    tau_n: float
    t_plus: float
    # kinetics
    k_p0: float
    k_n0: float
    Ea_k_p: float
    Ea_k_n: float
    R_sei: float
    # thermal
    C_th: float
    h_c: float
    A_c: float
    T_sink: float
    # constants and discretisation
    F: float = FARADAY
    R_gas: float = R_GAS
    T_ref_kappa: float = T_REF
    P: int = 10

    def replace(self, **changes) -> "CellParameters":
        return dataclasses.replace(self, **changes)

    @property
    def capacity_Ah(self) -> float:
        return self.capacity_C / 3600.0

    @property
    def batch_size(self) -> int | None:
        """Length of the batch if any field is array-valued, else None."""
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray) and v.ndim > 0:
                return v.shape[0]
        return None

    def validate(self) -> "CellParameters":
        """Check physical invariants, raising ParameterError naming the field."""
        positive = ("L_p", "L_s", "L_n", "A", "R_pp", "R_pn", "capacity_C",
                    "cs_max_p", "cs_max_n", "Ds_p0", "Ds_n0", "De0", "k_p0",
                    "k_n0", "C_th", "h_c", "A_c", "T_sink", "F", "R_gas",
                    "T_ref_kappa")
        for name in positive:
            if not np.all(np.asarray(getattr(self, name)) > 0):
                raise ParameterError(name, "must be strictly positive")
        for name in ("eps_p", "eps_s", "eps_n", "t_plus"):
            v = np.asarray(getattr(self, name))
            if not np.all((v > 0) & (v < 1)):
                raise ParameterError(name, "must lie in the open interval (0, 1)")
        for name in ("tau_p", "tau_s", "tau_n"):
            if not np.all(np.asarray(getattr(self, name)) >= 1):
                raise ParameterError(name, "tortuosity must be >= 1")
        for name in ("theta_p_0", "theta_p_100", "theta_n_0", "theta_n_100"):
            v = np.asarray(getattr(self, name))
            if not np.all((v > 0) & (v < 1)):
                raise ParameterError(name, "stoichiometry must lie in (0, 1)")
        if not np.all(np.asarray(self.theta_p_100) < np.asarray(self.theta_p_0)):
            raise ParameterError("theta_p_100", "must be below theta_p_0")
        if not np.all(np.asarray(self.theta_n_0) < np.asarray(self.theta_n_100)):
            raise ParameterError("theta_n_100", "must be above theta_n_0")
        if not np.all(np.asarray(self.R_sei) >= 0):
            raise ParameterError("R_sei", "must be non-negative")
        if int(self.P) != self.P or self.P < 2:
            raise ParameterError("P", "need at least 2 finite volumes per section")
        return self

    def with_values(self, names, values) -> "CellParameters":
        """Return a copy with ``names`` set from ``values``.

        ``values`` has shape ``(len(names),)`` for a single cell or
        ``(B, len(names))`` for a batch; in the batched case every other field
        stays scalar and broadcasts.
        """
        values = np.asarray(values, dtype=float)
        if values.shape[-1] != len(names):
            raise ValueError("values do not match names")
        changes = {}
        for i, name in enumerate(names):
            if name not in _FIELD_NAMES:
                raise KeyError(f"unknown cell parameter {name!r}")
            col = values[..., i]
            changes[name] = float(col) if col.ndim == 0 else col.copy()
        return dataclasses.replace(self, **changes)

    def select(self, index) -> "CellParameters":
        """Pick batch member(s) from an array-valued parameter set."""
        changes = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray) and v.ndim > 0:
                sub = v[index]
                changes[f.name] = float(sub) if np.ndim(sub) == 0 else sub
        return dataclasses.replace(self, **changes)


_FIELD_NAMES = frozenset(f.name for f in fields(CellParameters))


def field_names() -> tuple[str, ...]:
    return tuple(f.name for f in fields(CellParameters))


def anchored_pre_exponential(value_ref, Ea, T_ref=T_REF, R_gas=R_GAS):
    """Back-compute the Arrhenius pre-exponential from a reference value.

    The result ``psi0`` satisfies ``psi0 * exp(-Ea / (R T_ref)) == value_ref``.
    """
    return value_ref * np.exp(Ea / (R_gas * T_ref))
