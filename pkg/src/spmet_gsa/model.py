"""Single-particle model with electrolyte and thermal dynamics (SPMeT).

Pure functions of their inputs. Every function broadcasts over leading batch
dimensions: a state vector may be ``(n,)`` or ``(B, n)`` and parameter fields
may be floats or ``(B,)`` arrays.

State layout (length ``3P + 4``)::

    [theta_bar_p, q_bar_p, q_bar_n, c_e (cathode 1..P, separator 1..P, anode 1..P), T]

Sign convention: positive current discharges the cell.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .params import CellParameters, ParameterError, R_GAS

THETA_CLAMP = 1e-6
CE_FLOOR = 1e-3

_OCP_P = np.array([18.45, -40.7, 20.94, 8.07, -7.837, 0.02414, 4.571])
_KAPPA = np.array([0.2667, -1.2983, 1.7919, 0.1726])


class DomainError(ValueError):
    """A constitutive law was evaluated outside its physical domain."""


# --------------------------------------------------------------------------- #
# state and geometry


@dataclass(frozen=True)
class CellState:
    theta_bar_p: float | np.ndarray
    q_bar_p: float | np.ndarray
    q_bar_n: float | np.ndarray
    c_e: np.ndarray
    T: float | np.ndarray

    def to_vector(self) -> np.ndarray:
        c_e = np.asarray(self.c_e, dtype=float)
        lead = c_e.shape[:-1]
        head = [np.broadcast_to(np.asarray(v, dtype=float), lead)[..., None]
                for v in (self.theta_bar_p, self.q_bar_p, self.q_bar_n)]
        tail = np.broadcast_to(np.asarray(self.T, dtype=float), lead)[..., None]
        return np.concatenate(head + [c_e, tail], axis=-1)

    @classmethod
    def from_vector(cls, y) -> "CellState":
        y = np.asarray(y, dtype=float)
        if (y.shape[-1] - 4) % 3 or y.shape[-1] < 10:
            raise ValueError(f"state length {y.shape[-1]} is not 3P + 4 with P >= 2")
        return cls(y[..., 0], y[..., 1], y[..., 2], y[..., 3:-1], y[..., -1])

    @classmethod
    def equilibrium(cls, theta_bar_p, c_e0, T, P) -> "CellState":
        return cls(theta_bar_p, 0.0, 0.0, np.full(3 * P, float(c_e0)), T)

    @property
    def P(self) -> int:
        return np.shape(self.c_e)[-1] // 3

    def is_physical(self) -> bool:
        return bool(np.all((np.asarray(self.theta_bar_p) > 0) & (np.asarray(self.theta_bar_p) < 1))
                    and np.all(np.asarray(self.c_e) > 0) and np.all(np.asarray(self.T) > 0))


def state_size(P: int) -> int:
    return 3 * P + 4


class DerivedGeometry(NamedTuple):
    eps_act_p: float | np.ndarray
    eps_act_n: float | np.ndarray
    a_p: float | np.ndarray
    a_n: float | np.ndarray


def derive_geometry(params: CellParameters) -> DerivedGeometry:
    """Active material fractions from capacity and stoichiometry windows."""
    p = params
    dtheta_p = np.asarray(p.theta_p_100) - p.theta_p_0
    dtheta_n = np.asarray(p.theta_n_100) - p.theta_n_0
    if np.any(dtheta_p >= 0):
        raise ParameterError("theta_p_100", "cathode window must shrink on charge")
    if np.any(dtheta_n <= 0):
        raise ParameterError("theta_n_100", "anode window must grow on charge")
    eps_p = -p.capacity_C / (dtheta_p * p.A * p.F * p.L_p * p.cs_max_p)
    eps_n = p.capacity_C / (dtheta_n * p.A * p.F * p.L_n * p.cs_max_n)
    for name, v in (("eps_act_p", eps_p), ("eps_act_n", eps_n)):
        if not np.all((v > 0) & (v < 1)):
            raise ParameterError(name, f"computed active fraction {v} outside (0, 1); "
                                 "capacity, area and windows are inconsistent")
    return DerivedGeometry(eps_p, eps_n, 3.0 * eps_p / p.R_pp, 3.0 * eps_n / p.R_pn)


# --------------------------------------------------------------------------- #
# constitutive laws


def arrhenius(psi0, Ea, T, R_gas=R_GAS):
    return psi0 * np.exp(-np.asarray(Ea) / (R_gas * np.asarray(T)))


def ocp_cathode(theta):
    return np.polyval(_OCP_P, theta)


def ocp_anode(theta):
    theta = np.asarray(theta)
    return (0.1261 * theta + 0.00694) / (theta * theta + 0.6995 * theta + 0.00405)


def electrolyte_conductivity(c_e, T, Ea_kappa=0.0, R_gas=R_GAS, T_ref=None):
    """Bulk conductivity in S/m.

    With ``T_ref`` the temperature factor is anchored so that it equals one at
    ``T_ref``; without it the raw ``exp(-Ea/(R T))`` factor is applied.
    """
    c_e = np.asarray(c_e, dtype=float)
    if np.any(c_e <= 0):
        raise DomainError("electrolyte concentration must be positive")
    gamma = 1e-3 * c_e
    T = np.asarray(T, dtype=float)
    if T_ref is None:
        factor = np.exp(-np.asarray(Ea_kappa) / (R_gas * T))
    else:
        factor = np.exp(-np.asarray(Ea_kappa) / R_gas * (1.0 / T - 1.0 / np.asarray(T_ref)))
    return np.polyval(_KAPPA, gamma) * factor


def anode_from_cathode(theta_bar_p, params: CellParameters):
    p = params
    frac = (np.asarray(theta_bar_p) - p.theta_p_0) / (np.asarray(p.theta_p_100) - p.theta_p_0)
    return p.theta_n_0 + frac * (np.asarray(p.theta_n_100) - p.theta_n_0)


def cathode_from_anode(theta_bar_n, params: CellParameters):
    p = params
    frac = (np.asarray(theta_bar_n) - p.theta_n_0) / (np.asarray(p.theta_n_100) - p.theta_n_0)
    return p.theta_p_0 + frac * (np.asarray(p.theta_p_100) - p.theta_p_0)


def soc(theta_bar_n, params: CellParameters):
    return 100.0 * (np.asarray(theta_bar_n) - params.theta_n_0) / (
        np.asarray(params.theta_n_100) - params.theta_n_0)


class SurfaceStoichiometry(NamedTuple):
    theta_p: np.ndarray
    theta_n: np.ndarray

    @property
    def valid(self):
        return ((self.theta_p >= 0) & (self.theta_p <= 1)
                & (self.theta_n >= 0) & (self.theta_n <= 1))


def surface_stoichiometries(state: CellState, I_app, params: CellParameters,
                            geom: DerivedGeometry) -> SurfaceStoichiometry:
    p = params
    T = state.T
    Ds_p = arrhenius(p.Ds_p0, p.Ea_Ds_p, T, p.R_gas)
    Ds_n = arrhenius(p.Ds_n0, p.Ea_Ds_n, T, p.R_gas)
    theta_bar_n = anode_from_cathode(state.theta_bar_p, p)
    th_p = (state.theta_bar_p + 8 * p.R_pp * state.q_bar_p / (35 * p.cs_max_p)
            + p.R_pp * I_app / (35 * Ds_p * p.F * p.A * p.L_p * geom.a_p * p.cs_max_p))
    th_n = (theta_bar_n + 8 * p.R_pn * state.q_bar_n / (35 * p.cs_max_n)
            - p.R_pn * I_app / (35 * Ds_n * p.F * p.A * p.L_n * geom.a_n * p.cs_max_n))
    return SurfaceStoichiometry(np.asarray(th_p), np.asarray(th_n))


def exchange_current_density(electrode: str, theta_surf, c_e_avg, T, params: CellParameters):
    theta_surf = np.asarray(theta_surf, dtype=float)
    c_e_avg = np.asarray(c_e_avg, dtype=float)
    if np.any((theta_surf <= 0) | (theta_surf >= 1)):
        raise DomainError("surface stoichiometry outside (0, 1)")
    if np.any(c_e_avg <= 0):
        raise DomainError("average electrolyte concentration must be positive")
    if electrode == "p":
        k = arrhenius(params.k_p0, params.Ea_k_p, T, params.R_gas)
    elif electrode == "n":
        k = arrhenius(params.k_n0, params.Ea_k_n, T, params.R_gas)
    else:
        raise ValueError(f"electrode must be 'p' or 'n', got {electrode!r}")
    return params.F * k * np.sqrt(c_e_avg * theta_surf * (1.0 - theta_surf))


def overpotentials(I_app, i0_p, i0_n, T, params: CellParameters, geom: DerivedGeometry):
    p = params
    scale = 2.0 * p.R_gas * np.asarray(T) / p.F
    eta_p = scale * np.arcsinh(-np.asarray(I_app) / (2 * p.A * p.L_p * geom.a_p * i0_p))
    eta_n = scale * np.arcsinh(np.asarray(I_app) / (2 * p.A * p.L_n * geom.a_n * i0_n))
    return eta_p, eta_n


def transport_factors(params: CellParameters):
    """Effective-transport factor eps/tau for cathode, separator, anode."""
    p = params
    return (np.asarray(p.eps_p) / p.tau_p, np.asarray(p.eps_s) / p.tau_s,
            np.asarray(p.eps_n) / p.tau_n)


def electrolyte_potential_drop(c_e, I_app, T, params: CellParameters):
    """Electrolyte ohmic drop plus concentration overpotential.

    The ionic current is trapezoidal: it rises linearly through the cathode,
    is uniform in the separator and falls linearly through the anode. The
    electrode sums use weights ``(2k-1)/P`` and ``(2P-2k+1)/P`` so the drop
    converges as ``P`` grows.
    """
    c_e = np.asarray(c_e, dtype=float)
    if np.any(c_e <= 0):
        raise DomainError("electrolyte concentration must be positive")
    return _potential_drop(c_e, I_app, T, params)


def _potential_drop(c_e, I_app, T, p: CellParameters):
    P = c_e.shape[-1] // 3
    T = np.asarray(T, dtype=float)
    kappa = electrolyte_conductivity(c_e, T[..., None], p.Ea_kappa, p.R_gas,
                                     _col(p.T_ref_kappa))
    f_p, f_s, f_n = transport_factors(p)
    k = np.arange(1, P + 1)
    w_p = (2 * k - 1) / P
    w_n = (2 * P - 2 * k + 1) / P
    phi_p = np.asarray(p.L_p) / P * np.sum(w_p / kappa[..., :P], axis=-1) / f_p
    phi_s = np.asarray(p.L_s) / P * np.sum(1.0 / kappa[..., P:2 * P], axis=-1) / f_s
    phi_n = np.asarray(p.L_n) / P * np.sum(w_n / kappa[..., 2 * P:], axis=-1) / f_n
    drop = -np.asarray(I_app) / (2 * p.A) * (phi_p + 2 * phi_s + phi_n)
    conc = 2 * p.R_gas * T / p.F * (1 - p.t_plus) * np.log(c_e[..., 0] / c_e[..., -1])
    return drop + conc


def heat_generation(V, U_p, U_n, I_app):
    return np.abs(I_app) * np.abs(np.asarray(V) - (np.asarray(U_p) - U_n))


def _col(x):
    return np.asarray(x, dtype=float)[..., None]


# --------------------------------------------------------------------------- #
# assembled model


class VoltageTerms(NamedTuple):
    V: np.ndarray
    U_p: np.ndarray
    U_n: np.ndarray
    violation: np.ndarray


class Spmet:
    """Prepared SPMeT: constant geometry and finite-volume operators.

    Construct once per parameter set (or batch of parameter sets) and call
    :meth:`rhs` / :meth:`voltage` repeatedly. With ``strict=True`` any
    evaluation outside the physical domain raises :class:`DomainError`;
    otherwise stoichiometries and concentrations are clamped and the affected
    batch members are flagged.
    """

    def __init__(self, params: CellParameters, strict: bool = False):
        p = params
        self.params = p
        self.strict = strict
        self.P = P = int(p.P)
        self.n = state_size(P)
        self.geom = g = derive_geometry(p)
        self.batch = p.batch_size

        dx = [np.asarray(p.L_p) / P, np.asarray(p.L_s) / P, np.asarray(p.L_n) / P]
        eps = [p.eps_p, p.eps_s, p.eps_n]
        f = transport_factors(p)
        def rep(vals):
            cols = np.broadcast_arrays(*[_col(v) for v in vals])
            return np.concatenate([np.repeat(c, P, axis=-1) for c in cols], axis=-1)
        self.dx = rep(dx)
        self.eps = rep(eps)
        self.f = rep(f)
        # face conductance per unit diffusivity: 2 / (dx_l/f_l + dx_r/f_r)
        res = self.dx / self.f
        self.G1 = 2.0 / (res[..., :-1] + res[..., 1:])
        self.cap = self.eps * self.dx  # lithium per unit concentration per unit area
        src = rep([-(1 - np.asarray(p.t_plus)) / (p.F * p.A * np.asarray(p.L_p)), 0.0,
                   (1 - np.asarray(p.t_plus)) / (p.F * p.A * np.asarray(p.L_n))])
        self.src = src / self.eps  # d c_e/dt per ampere

        self.c_theta = 3.0 / (g.a_p * p.R_pp * p.L_p * p.F * p.A * p.cs_max_p)
        self.c_q_p = 45.0 / (2 * p.R_pp ** 2 * p.F * p.A * p.L_p * g.a_p)
        self.c_q_n = -45.0 / (2 * p.R_pn ** 2 * p.F * p.A * p.L_n * g.a_n)
        self.hA = np.asarray(p.h_c) * p.A_c

    # -- pieces used by the integrator ------------------------------------- #

    def diffusivity(self, T):
        p = self.params
        return arrhenius(p.De0, p.Ea_De, T, p.R_gas)

    def solid_decay_rates(self, T):
        """Linear decay rates of the two concentration fluxes (1/s)."""
        p = self.params
        Ds_p = arrhenius(p.Ds_p0, p.Ea_Ds_p, T, p.R_gas)
        Ds_n = arrhenius(p.Ds_n0, p.Ea_Ds_n, T, p.R_gas)
        return -30.0 * Ds_p / p.R_pp ** 2, -30.0 * Ds_n / p.R_pn ** 2

    def laplacian_apply(self, c_e, D):
        """Conservative finite-volume diffusion operator applied to ``c_e``."""
        flux = _col(D) * self.G1 * (c_e[..., 1:] - c_e[..., :-1])
        net = np.zeros_like(c_e)
        net[..., :-1] += flux
        net[..., 1:] -= flux
        return net / self.cap

    def voltage(self, y, I_app) -> VoltageTerms:
        p, g = self.params, self.geom
        y = np.asarray(y, dtype=float)
        P = self.P
        T = y[..., -1]
        c_e = y[..., 3:-1]
        state = CellState(y[..., 0], y[..., 1], y[..., 2], c_e, T)
        surf = surface_stoichiometries(state, I_app, p, g)
        th_p, th_n = surf.theta_p, surf.theta_n
        if self.strict:
            if np.any(c_e <= 0):
                raise DomainError("electrolyte concentration must be positive")
            viol = np.zeros(np.shape(T), dtype=bool)
        else:
            lo, hi = THETA_CLAMP, 1.0 - THETA_CLAMP
            viol = ((th_p < lo) | (th_p > hi) | (th_n < lo) | (th_n > hi)
                    | np.any(c_e < CE_FLOOR, axis=-1))
            th_p = np.clip(th_p, lo, hi)
            th_n = np.clip(th_n, lo, hi)
            c_e = np.maximum(c_e, CE_FLOOR)
        ce_p = np.mean(c_e[..., :P], axis=-1)
        ce_n = np.mean(c_e[..., 2 * P:], axis=-1)
        i0_p = exchange_current_density("p", th_p, ce_p, T, p)
        i0_n = exchange_current_density("n", th_n, ce_n, T, p)
        eta_p, eta_n = overpotentials(I_app, i0_p, i0_n, T, p, g)
        U_p = ocp_cathode(th_p)
        U_n = ocp_anode(th_n)
        V = (-np.asarray(I_app) * p.R_sei + U_p - U_n + eta_p - eta_n
             + _potential_drop(c_e, I_app, T, p))
        return VoltageTerms(V, U_p, U_n, viol)

    def rhs(self, y, I_app, with_violation: bool = False):
        p = self.params
        y = np.asarray(y, dtype=float)
        T = y[..., -1]
        terms = self.voltage(y, I_app)
        Q = heat_generation(terms.V, terms.U_p, terms.U_n, I_app)
        k_p, k_n = self.solid_decay_rates(T)
        dy = np.empty_like(y)
        dy[..., 0] = self.c_theta * I_app
        dy[..., 1] = k_p * y[..., 1] + self.c_q_p * I_app
        dy[..., 2] = k_n * y[..., 2] + self.c_q_n * I_app
        dy[..., 3:-1] = self.laplacian_apply(y[..., 3:-1], self.diffusivity(T)) + self.src * I_app
        dy[..., -1] = (Q - self.hA * (T - p.T_sink)) / p.C_th
        if with_violation:
            return dy, terms.violation
        return dy

    def electrolyte_inventory(self, y):
        """Lithium in the electrolyte per unit cross-section (mol/m^2)."""
        return np.sum(self.cap * np.asarray(y)[..., 3:-1], axis=-1)


def terminal_voltage(state: CellState, I_app, params: CellParameters,
                     geom: DerivedGeometry | None = None, strict: bool = True):
    model = Spmet(params, strict=strict)
    return model.voltage(state.to_vector(), I_app).V


def state_derivative(state: CellState, I_app, params: CellParameters,
                     geom: DerivedGeometry | None = None, strict: bool = True) -> CellState:
    model = Spmet(params, strict=strict)
    return CellState.from_vector(model.rhs(state.to_vector(), I_app))
