"""Batched exponential Runge-Kutta integration for the SPMeT.

The stiff part of the model is linear once temperature is frozen: electrolyte
diffusion (a symmetric-similar finite-volume Laplacian scaled by an Arrhenius
diffusivity), the decay of the solid concentration fluxes and Newton cooling.
That part is diagonalised once per parameter set and integrated exactly; the
remainder ``f(y) - L y`` is handled by the second-order exponential
Runge-Kutta scheme of Cox and Matthews (ETD3RK), with an embedded
second-order solution for step-size control.

:class:`EtdIntegrator` is the vectorised numpy reference; :func:`integrate_compiled`
runs the same scheme in a compiled kernel and is what the simulator uses.

All members of a batch share one step sequence. The step size is driven by
the error of the ``control`` members only, so perturbed copies of a cell see
exactly the same discretisation as the nominal cell when the nominal cell
controls the steps.
"""

from __future__ import annotations

import numpy as np

from . import _kernels as K
from .model import Spmet

RTOL = 1e-6
ATOL_THETA = 1e-9
ATOL_CONC = 1e-3
ATOL_TEMP = 1e-6


class IntegrationError(RuntimeError):
    def __init__(self, message: str, t: float):
        super().__init__(f"{message} at t = {t:.6g} s")
        self.t = t


def default_atol(params) -> np.ndarray:
    """Absolute tolerances per state component.

    The concentration fluxes are weighted by their effect on the surface
    stoichiometry, ``8 R_p / (35 cs_max)``, so their tolerance matches the
    stoichiometry tolerance.
    """
    p = params
    q_p = ATOL_THETA * 35 * np.min(p.cs_max_p) / (8 * np.max(p.R_pp))
    q_n = ATOL_THETA * 35 * np.min(p.cs_max_n) / (8 * np.max(p.R_pn))
    return np.concatenate([[ATOL_THETA, q_p, q_n],
                           np.full(3 * int(p.P), ATOL_CONC), [ATOL_TEMP]])


def phi_functions(z):
    """Return exp(z) and phi_1..phi_3 with phi_k(z) = (e^z - sum_{j<k} z^j/j!) / z^k."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 0.05
    zs = np.where(small, 1.0, z)
    ez = np.exp(z)
    em1 = np.expm1(zs)
    inv = 1.0 / zs
    phi1 = em1 * inv
    phi2 = (phi1 - 1.0) * inv
    phi3 = (phi2 - 0.5) * inv
    if small.any():
        zz = z[small]
        phi1[small] = _series(zz, 1)
        phi2[small] = _series(zz, 2)
        phi3[small] = _series(zz, 3)
    return ez, phi1, phi2, phi3


def _series(z, k, terms=8):
    # phi_k(z) = sum_j z^j / (j + k)!
    out = np.zeros_like(z)
    term = np.full_like(z, 1.0 / np.prod(np.arange(1, k + 1)))
    for j in range(terms):
        out += term
        term = term * z / (j + k + 1)
    return out


class ModalBasis:
    """Coordinates in which the frozen linear part of the SPMeT is diagonal.

    Only the electrolyte block is rotated; the other components are already
    decoupled in the linear part.
    """

    def __init__(self, model: Spmet):
        self.model = model
        P3 = 3 * model.P
        cap = np.broadcast_to(model.cap, model.G1.shape[:-1] + (P3,))
        G = model.G1
        K = np.zeros(G.shape[:-1] + (P3, P3))
        idx = np.arange(P3 - 1)
        K[..., idx, idx + 1] = G
        K[..., idx + 1, idx] = G
        diag = np.zeros(G.shape[:-1] + (P3,))
        diag[..., :-1] -= G
        diag[..., 1:] -= G
        K[..., np.arange(P3), np.arange(P3)] = diag
        self.sqrt_cap = np.sqrt(cap)
        S = K / (self.sqrt_cap[..., :, None] * self.sqrt_cap[..., None, :])
        lam, Q = np.linalg.eigh(S)
        lam = np.minimum(lam, 0.0)
        # the conserved mode has eigenvalue zero up to rounding
        lam[..., -1] = 0.0
        self.lam_unit = lam
        self.Q = Q
        self.QT = np.swapaxes(Q, -1, -2).copy()

    def rates(self, T) -> np.ndarray:
        """Diagonal of the linear part at temperature ``T`` (shape ``(B, n)``)."""
        m = self.model
        T = np.asarray(T, dtype=float)
        k_p, k_n = m.solid_decay_rates(T)
        D = m.diffusivity(T)
        lead = T.shape
        out = np.empty(lead + (m.n,))
        out[..., 0] = 0.0
        out[..., 1] = k_p
        out[..., 2] = k_n
        out[..., 3:-1] = np.asarray(D)[..., None] * self.lam_unit
        out[..., -1] = -m.hA / m.params.C_th
        return out

    def to_modal(self, y):
        w = y.copy()
        v = self.sqrt_cap * y[..., 3:-1]
        w[..., 3:-1] = _matvec(self.QT, v)
        return w

    def from_modal(self, w):
        y = w.copy()
        y[..., 3:-1] = _matvec(self.Q, w[..., 3:-1]) / self.sqrt_cap
        return y


def _matvec(M, v):
    return np.matmul(M, v[..., None])[..., 0]


class EtdIntegrator:
    """Adaptive third-order exponential Runge-Kutta (Cox-Matthews ETD3RK).

    Stages sit at ``c = 0, 1/2, 1``. The embedded second-order solution uses
    the first two stages with weights ``phi1 - 2 phi2`` and ``2 phi2``; the
    difference drives the step size while the third-order result is kept.
    """

    order = 3

    def __init__(self, model: Spmet, rtol: float = RTOL, atol=None, control=None,
                 max_steps: int = 200_000):
        self.model = model
        self.basis = ModalBasis(model)
        self.rtol = rtol
        self.atol = default_atol(model.params) if atol is None else np.asarray(atol, dtype=float)
        self.control = control
        self.max_steps = max_steps
        self.n_steps = 0
        self.n_rejected = 0

    def _error_norm(self, err, y0, y1):
        scale = self.atol + self.rtol * np.maximum(np.abs(y0), np.abs(y1))
        e = np.sqrt(np.mean((err / scale) ** 2, axis=-1))
        if np.ndim(e) == 0:
            return float(e) if np.isfinite(e) else np.inf
        if self.control is not None:
            e = e[self.control]
        e = np.max(e)
        return float(e) if np.isfinite(e) else np.inf

    def step(self, y, f0, I_app, h):
        """One step of size ``h``; returns the new state and the error estimate."""
        m, basis = self.model, self.basis
        lam = basis.rates(y[..., -1])
        w = basis.to_modal(y)
        z = h * lam
        e_half, p1_half, _, _ = phi_functions(0.5 * z)
        e, p1, p2, p3 = phi_functions(z)
        n0 = basis.to_modal(f0) - lam * w
        a_w = e_half * w + 0.5 * h * p1_half * n0
        na = basis.to_modal(m.rhs(basis.from_modal(a_w), I_app)) - lam * a_w
        b_w = e * w + h * p1 * (2.0 * na - n0)
        nb = basis.to_modal(m.rhs(basis.from_modal(b_w), I_app)) - lam * b_w
        base = e * w
        y3 = base + h * ((p1 - 3 * p2 + 4 * p3) * n0 + 4 * (p2 - 2 * p3) * na
                         + (4 * p3 - p2) * nb)
        y2 = base + h * ((p1 - 2 * p2) * n0 + 2 * p2 * na)
        return basis.from_modal(y3), basis.from_modal(y3 - y2)

    def advance(self, y, I_app, t0, t_stops, h0=None):
        """Integrate from ``t0`` through each time in ``t_stops`` at constant current.

        Returns the states at ``t_stops`` (stacked on a new axis 0), the
        batch-wise violation flags accumulated at accepted states and the
        suggested next step size.
        """
        m = self.model
        y = np.array(y, dtype=float)
        t = float(t0)
        out = []
        viol = np.zeros(y.shape[:-1], dtype=bool)
        f0, v0 = m.rhs(y, I_app, with_violation=True)
        viol |= v0
        h = float(h0) if h0 is not None else 0.05 * (t_stops[0] - t0)
        expo = 1.0 / self.order
        for t_stop in t_stops:
            while t < t_stop:
                remaining = t_stop - t
                hits = h >= remaining or remaining - h < 1e-9 * max(1.0, abs(t_stop))
                h_try = remaining if hits else h
                y_new, err = self.step(y, f0, I_app, h_try)
                err_norm = self._error_norm(err, y, y_new)
                if err_norm <= 1.0:
                    t = t_stop if hits else t + h_try
                    y = y_new
                    f0, v = m.rhs(y, I_app, with_violation=True)
                    viol |= v
                    self.n_steps += 1
                    fac = 5.0 if err_norm == 0 else min(5.0, max(0.2, 0.9 * err_norm ** -expo))
                    if not hits or fac < 1.0:
                        h = h_try * fac
                else:
                    self.n_rejected += 1
                    fac = 0.2 if not np.isfinite(err_norm) else max(0.2, 0.9 * err_norm ** -expo)
                    h = h_try * fac
                if h < 1e-12 * max(1.0, abs(t_stop)):
                    raise IntegrationError("step size collapsed", t)
                if self.n_steps + self.n_rejected > self.max_steps:
                    raise IntegrationError("step budget exhausted", t)
            out.append(y.copy())
        return np.stack(out), viol, h


def kernel_tables(model: Spmet, basis: ModalBasis | None = None):
    """Per-member coefficient arrays consumed by the compiled kernel."""
    basis = ModalBasis(model) if basis is None else basis
    p, g, P = model.params, model.geom, model.P
    B = model.batch or 1
    F, R = p.F, p.R_gas

    def b(x):
        return np.broadcast_to(np.asarray(x, dtype=float), (B,))

    coef = np.empty((B, K.N_COEF))
    dtheta_ratio = (np.asarray(p.theta_n_100) - p.theta_n_0) / (
        np.asarray(p.theta_p_100) - p.theta_p_0)
    cols = {
        K.C_THETA: model.c_theta, K.C_QP: model.c_q_p, K.C_QN: model.c_q_n,
        K.DS_P0: p.Ds_p0, K.EA_DS_P: p.Ea_Ds_p, K.DS_N0: p.Ds_n0, K.EA_DS_N: p.Ea_Ds_n,
        K.KP_FAC: -30.0 / np.asarray(p.R_pp) ** 2, K.KN_FAC: -30.0 / np.asarray(p.R_pn) ** 2,
        K.S_QP: 8 * np.asarray(p.R_pp) / (35 * np.asarray(p.cs_max_p)),
        K.S_IP: np.asarray(p.R_pp) / (35 * F * p.A * np.asarray(p.L_p) * g.a_p * p.cs_max_p),
        K.S_QN: 8 * np.asarray(p.R_pn) / (35 * np.asarray(p.cs_max_n)),
        K.S_IN: np.asarray(p.R_pn) / (35 * F * p.A * np.asarray(p.L_n) * g.a_n * p.cs_max_n),
        K.THN_A0: p.theta_n_0 - np.asarray(p.theta_p_0) * dtheta_ratio,
        K.THN_A1: dtheta_ratio,
        K.K_P0: p.k_p0, K.EA_K_P: p.Ea_k_p, K.K_N0: p.k_n0, K.EA_K_N: p.Ea_k_n,
        K.DEN_P: 2 * np.asarray(p.A) * p.L_p * g.a_p,
        K.DEN_N: 2 * np.asarray(p.A) * p.L_n * g.a_n,
        K.DE0: p.De0, K.EA_DE: p.Ea_De, K.EA_KAPPA: p.Ea_kappa,
        K.T_REF_KAPPA: p.T_ref_kappa,
        K.CONC_FAC: 2 * R * (1 - np.asarray(p.t_plus)) / F,
        K.R_SEI: p.R_sei, K.C_TH: p.C_th, K.HA: model.hA, K.T_SINK: p.T_sink,
        K.FARADAY: F, K.R_GAS: R, K.DROP_PREF: -1.0 / (2 * np.asarray(p.A)),
    }
    for j, v in cols.items():
        coef[:, j] = b(v)

    k = np.arange(1, P + 1)
    f = np.broadcast_to(model.f, (B, 3 * P))
    dx = np.broadcast_to(model.dx, (B, 3 * P))
    w = np.concatenate([(2 * k - 1) / P, np.full(P, 2.0), (2 * P - 2 * k + 1) / P])
    dropc = dx * w / f

    lam_u = np.ascontiguousarray(np.broadcast_to(basis.lam_unit, (B, 3 * P)))
    Qm = np.ascontiguousarray(np.broadcast_to(basis.Q, (B, 3 * P, 3 * P)))
    sqrt_cap = np.ascontiguousarray(np.broadcast_to(basis.sqrt_cap, (B, 3 * P)))
    src = np.broadcast_to(model.src, (B, 3 * P))
    srcm = np.einsum("bij,bi->bj", Qm, sqrt_cap * src)
    return coef, np.ascontiguousarray(dropc), lam_u, Qm, sqrt_cap, np.ascontiguousarray(srcm)


def integrate_compiled(model: Spmet, y0, currents, segment_duration: float, t_s: float,
                       per_segment: int, *, rtol: float = RTOL, atol=None, control=None,
                       max_steps: int = 1_000_000):
    """Run the compiled ETD3 kernel over a piecewise-constant current profile.

    Returns ``(states (B, K, n), V (B, K), violation (B,), n_steps)``.
    """
    # writable C-contiguous float arrays keep a single compiled signature
    tables = [np.require(a, np.float64, ["C", "W"]) for a in kernel_tables(model)]
    B = tables[0].shape[0]
    y0 = np.array(np.broadcast_to(np.asarray(y0, dtype=float), (B, model.n)))
    atol = np.array(default_atol(model.params) if atol is None else atol, dtype=float)
    mask = np.zeros(B, dtype=bool)
    if control is None:
        mask[:] = True
    else:
        mask[np.atleast_1d(np.asarray(control))] = True
    states, V, viol, n_steps, status, t_fail = K.integrate_profile(
        *tables, y0, np.array(currents, dtype=float), float(segment_duration), float(t_s),
        int(per_segment), float(rtol), atol, mask, 0.05 * float(t_s),
        int(max_steps))
    if status == K.STATUS_COLLAPSE:
        raise IntegrationError("step size collapsed", t_fail)
    if status == K.STATUS_BUDGET:
        raise IntegrationError("step budget exhausted", t_fail)
    return states, V, viol, n_steps
