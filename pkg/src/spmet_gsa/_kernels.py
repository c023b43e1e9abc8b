"""Compiled batched ETD3 integration kernel for the SPMeT.

Mirrors :class:`spmet_gsa.model.Spmet` term by term; ``tests/test_kernels.py``
checks both paths against each other. The electrolyte block is carried in the
modal coordinates of :class:`spmet_gsa.integrate.ModalBasis`, where its linear
part is diagonal, so only the voltage evaluation needs physical
concentrations.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

THETA_CLAMP = 1e-6
CE_FLOOR = 1e-3

# columns of the per-member coefficient table
(C_THETA, C_QP, C_QN, DS_P0, EA_DS_P, DS_N0, EA_DS_N, KP_FAC, KN_FAC,
 S_QP, S_IP, S_QN, S_IN, THN_A0, THN_A1, K_P0, EA_K_P, K_N0, EA_K_N,
 DEN_P, DEN_N, DE0, EA_DE, EA_KAPPA, T_REF_KAPPA, CONC_FAC, R_SEI, C_TH,
 HA, T_SINK, FARADAY, R_GAS, DROP_PREF) = range(33)
N_COEF = 33

STATUS_OK = 0
STATUS_COLLAPSE = 1
STATUS_BUDGET = 2


@njit(cache=True)
def _ocp_p(x):
    return (((((18.45 * x - 40.7) * x + 20.94) * x + 8.07) * x - 7.837) * x + 0.02414) * x + 4.571


@njit(cache=True)
def _ocp_n(x):
    return (0.1261 * x + 0.00694) / (x * x + 0.6995 * x + 0.00405)


@njit(cache=True)
def _kappa_poly(g):
    return ((0.2667 * g - 1.2983) * g + 1.7919) * g + 0.1726


@njit(cache=True)
def voltage_heat(cf, dropc, c, theta_p, q_p, q_n, T, I, P):
    """Terminal voltage, polarisation heat and clamp flag for one cell."""
    R = cf[R_GAS]
    Ds_p = cf[DS_P0] * math.exp(-cf[EA_DS_P] / (R * T))
    Ds_n = cf[DS_N0] * math.exp(-cf[EA_DS_N] / (R * T))
    th_p = theta_p + cf[S_QP] * q_p + cf[S_IP] * I / Ds_p
    th_n = cf[THN_A0] + cf[THN_A1] * theta_p + cf[S_QN] * q_n - cf[S_IN] * I / Ds_n
    viol = False
    lo = THETA_CLAMP
    hi = 1.0 - THETA_CLAMP
    if th_p < lo or th_p > hi or th_n < lo or th_n > hi:
        viol = True
    th_p = min(max(th_p, lo), hi)
    th_n = min(max(th_n, lo), hi)
    kfac = math.exp(-cf[EA_KAPPA] / R * (1.0 / T - 1.0 / cf[T_REF_KAPPA]))
    s_p = 0.0
    s_n = 0.0
    drop = 0.0
    n3 = 3 * P
    for k in range(n3):
        ck = c[k]
        if ck < CE_FLOOR:
            viol = True
            ck = CE_FLOOR
        if k < P:
            s_p += ck
        elif k >= 2 * P:
            s_n += ck
        drop += dropc[k] / (_kappa_poly(1e-3 * ck) * kfac)
    ce_p = s_p / P
    ce_n = s_n / P
    c_first = max(c[0], CE_FLOOR)
    c_last = max(c[n3 - 1], CE_FLOOR)
    F = cf[FARADAY]
    i0_p = F * cf[K_P0] * math.exp(-cf[EA_K_P] / (R * T)) * math.sqrt(ce_p * th_p * (1.0 - th_p))
    i0_n = F * cf[K_N0] * math.exp(-cf[EA_K_N] / (R * T)) * math.sqrt(ce_n * th_n * (1.0 - th_n))
    scale = 2.0 * R * T / F
    eta_p = scale * math.asinh(-I / (cf[DEN_P] * i0_p))
    eta_n = scale * math.asinh(I / (cf[DEN_N] * i0_n))
    U_p = _ocp_p(th_p)
    U_n = _ocp_n(th_n)
    V = (-I * cf[R_SEI] + U_p - U_n + eta_p - eta_n + cf[DROP_PREF] * I * drop
         + cf[CONC_FAC] * T * math.log(c_first / c_last))
    Q = abs(I) * abs(V - (U_p - U_n))
    return V, Q, viol


@njit(cache=True)
def _phi(z):
    if abs(z) < 0.05:
        p1 = 0.0
        p2 = 0.0
        p3 = 0.0
        t1 = 1.0
        t2 = 0.5
        t3 = 1.0 / 6.0
        for j in range(8):
            p1 += t1
            p2 += t2
            p3 += t3
            t1 *= z / (j + 2)
            t2 *= z / (j + 3)
            t3 *= z / (j + 4)
        return math.exp(z), p1, p2, p3
    e = math.exp(z)
    p1 = math.expm1(z) / z
    p2 = (p1 - 1.0) / z
    p3 = (p2 - 0.5) / z
    return e, p1, p2, p3


@njit(cache=True)
def _to_physical(Qm, sqrt_cap, m, out, P):
    n3 = 3 * P
    for i in range(n3):
        acc = 0.0
        for j in range(n3):
            acc += Qm[i, j] * m[3 + j]
        out[i] = acc / sqrt_cap[i]


@njit(cache=True)
def _to_modal(Qm, sqrt_cap, c, out, P):
    n3 = 3 * P
    for j in range(n3):
        acc = 0.0
        for i in range(n3):
            acc += Qm[i, j] * sqrt_cap[i] * c[i]
        out[3 + j] = acc


@njit(cache=True)
def _remainder(cf, lam_u, srcm, m, c, I, kp_n, kn_n, D_n, P, N, dropc):
    """Nonlinear remainder f - L m in modal coordinates; returns (V, Q, viol)."""
    R = cf[R_GAS]
    T = m[3 * P + 3]
    V, Q, viol = voltage_heat(cf, dropc, c, m[0], m[1], m[2], T, I, P)
    kp = cf[KP_FAC] * cf[DS_P0] * math.exp(-cf[EA_DS_P] / (R * T))
    kn = cf[KN_FAC] * cf[DS_N0] * math.exp(-cf[EA_DS_N] / (R * T))
    D = cf[DE0] * math.exp(-cf[EA_DE] / (R * T))
    N[0] = cf[C_THETA] * I
    N[1] = (kp - kp_n) * m[1] + cf[C_QP] * I
    N[2] = (kn - kn_n) * m[2] + cf[C_QN] * I
    dD = D - D_n
    for j in range(3 * P):
        N[3 + j] = dD * lam_u[j] * m[3 + j] + srcm[j] * I
    N[3 * P + 3] = (Q + cf[HA] * cf[T_SINK]) / cf[C_TH]
    return V, Q, viol


@njit(cache=True)
def integrate_profile(coef, dropc, lam_u, Qm, sqrt_cap, srcm, y0, currents, seg_dur, t_s,
                      per_seg, rtol, atol, control, h_init, max_steps):
    """Integrate a batch through a piecewise-constant current profile.

    Returns physical states at the sample instants ``(B, K, n)``, the voltage
    at those instants ``(B, K)``, clamp flags ``(B,)``, the step count and a
    status code with the time of failure.
    """
    B, n = y0.shape
    P = (n - 4) // 3
    n3 = 3 * P
    iT = n - 1
    S = currents.shape[0]
    K = S * per_seg
    states = np.empty((B, K, n))
    volts = np.empty((B, K))
    viol = np.zeros(B, dtype=np.bool_)

    m = np.empty((B, n))       # modal state
    c = np.empty((B, n3))      # physical electrolyte concentration of m
    Qh = np.empty(B)           # heat at m
    m_new = np.empty((B, n))
    c_new = np.empty((B, n3))
    Q_new = np.empty(B)
    V_new = np.empty(B)
    v_new = np.zeros(B, dtype=np.bool_)
    err_node = np.empty(B)

    lam = np.empty(n)
    ph = np.empty((4, n))
    N0 = np.empty(n)
    Na = np.empty(n)
    Nb = np.empty(n)
    wa = np.empty(n)
    wb = np.empty(n)
    err = np.empty(n)
    c_tmp = np.empty(n3)
    c_err = np.empty(n3)

    for b in range(B):
        m[b, :] = y0[b, :]
        for k in range(n3):
            c[b, k] = y0[b, 3 + k]
        _to_modal(Qm[b], sqrt_cap[b], y0[b, 3:3 + n3], m[b], P)

    n_steps = 0
    n_tries = 0
    k_out = 0
    for s in range(S):
        I = currents[s]
        t = s * seg_dur
        for b in range(B):
            V, Qv, vb = voltage_heat(coef[b], dropc[b], c[b], m[b, 0], m[b, 1], m[b, 2],
                                     m[b, iT], I, P)
            Qh[b] = Qv
            if vb:
                viol[b] = True
        h = h_init
        for js in range(per_seg):
            t_stop = s * seg_dur + (js + 1) * t_s
            while t < t_stop:
                remaining = t_stop - t
                hits = h >= remaining or remaining - h < 1e-9 * max(1.0, t_stop)
                h_try = remaining if hits else h
                for b in range(B):
                    cf = coef[b]
                    R = cf[R_GAS]
                    Tn = m[b, iT]
                    kp_n = cf[KP_FAC] * cf[DS_P0] * math.exp(-cf[EA_DS_P] / (R * Tn))
                    kn_n = cf[KN_FAC] * cf[DS_N0] * math.exp(-cf[EA_DS_N] / (R * Tn))
                    D_n = cf[DE0] * math.exp(-cf[EA_DE] / (R * Tn))
                    lam[0] = 0.0
                    lam[1] = kp_n
                    lam[2] = kn_n
                    for j in range(n3):
                        lam[3 + j] = D_n * lam_u[b, j]
                    lam[iT] = -cf[HA] / cf[C_TH]
                    N0[0] = cf[C_THETA] * I
                    N0[1] = cf[C_QP] * I
                    N0[2] = cf[C_QN] * I
                    for j in range(n3):
                        N0[3 + j] = srcm[b, j] * I
                    N0[iT] = (Qh[b] + cf[HA] * cf[T_SINK]) / cf[C_TH]
                    for i in range(n):
                        eh, p1h, _, _ = _phi(0.5 * h_try * lam[i])
                        e, p1, p2, p3 = _phi(h_try * lam[i])
                        ph[0, i] = e
                        ph[1, i] = p1
                        ph[2, i] = p2
                        ph[3, i] = p3
                        # stage a at the half step
                        wa[i] = eh * m[b, i] + 0.5 * h_try * p1h * N0[i]
                    _to_physical(Qm[b], sqrt_cap[b], wa, c_tmp, P)
                    _remainder(cf, lam_u[b], srcm[b], wa, c_tmp, I, kp_n, kn_n, D_n, P, Na,
                               dropc[b])
                    for i in range(n):
                        wb[i] = ph[0, i] * m[b, i] + h_try * ph[1, i] * (2.0 * Na[i] - N0[i])
                    _to_physical(Qm[b], sqrt_cap[b], wb, c_tmp, P)
                    _remainder(cf, lam_u[b], srcm[b], wb, c_tmp, I, kp_n, kn_n, D_n, P, Nb,
                               dropc[b])
                    for i in range(n):
                        e = ph[0, i]
                        p1 = ph[1, i]
                        p2 = ph[2, i]
                        p3 = ph[3, i]
                        base = e * m[b, i]
                        y3 = base + h_try * ((p1 - 3.0 * p2 + 4.0 * p3) * N0[i]
                                             + 4.0 * (p2 - 2.0 * p3) * Na[i]
                                             + (4.0 * p3 - p2) * Nb[i])
                        y2 = base + h_try * ((p1 - 2.0 * p2) * N0[i] + 2.0 * p2 * Na[i])
                        m_new[b, i] = y3
                        err[i] = y3 - y2
                    _to_physical(Qm[b], sqrt_cap[b], m_new[b], c_new[b], P)
                    _to_physical(Qm[b], sqrt_cap[b], err, c_err, P)
                    acc = 0.0
                    for i in range(n):
                        if 3 <= i < iT:
                            y_old = c[b, i - 3]
                            y_nw = c_new[b, i - 3]
                            e_i = c_err[i - 3]
                        else:
                            y_old = m[b, i]
                            y_nw = m_new[b, i]
                            e_i = err[i]
                        sc = atol[i] + rtol * max(abs(y_old), abs(y_nw))
                        acc += (e_i / sc) ** 2
                    err_node[b] = math.sqrt(acc / n)
                n_tries += 1
                err_norm = 0.0
                for b in range(B):
                    if control[b]:
                        e_b = err_node[b]
                        if not (e_b == e_b) or e_b > 1e300:
                            err_norm = np.inf
                        elif e_b > err_norm:
                            err_norm = e_b
                if err_norm <= 1.0:
                    t = t_stop if hits else t + h_try
                    for b in range(B):
                        for i in range(n):
                            m[b, i] = m_new[b, i]
                        for k in range(n3):
                            c[b, k] = c_new[b, k]
                        V, Qv, vb = voltage_heat(coef[b], dropc[b], c[b], m[b, 0], m[b, 1],
                                                 m[b, 2], m[b, iT], I, P)
                        Qh[b] = Qv
                        V_new[b] = V
                        if vb:
                            viol[b] = True
                    n_steps += 1
                    if err_norm == 0.0:
                        fac = 5.0
                    else:
                        fac = min(5.0, max(0.2, 0.9 * err_norm ** (-1.0 / 3.0)))
                    if (not hits) or fac < 1.0:
                        h = h_try * fac
                else:
                    if err_norm == np.inf:
                        fac = 0.2
                    else:
                        fac = max(0.2, 0.9 * err_norm ** (-1.0 / 3.0))
                    h = h_try * fac
                if h < 1e-12 * max(1.0, t_stop):
                    return states, volts, viol, n_steps, STATUS_COLLAPSE, t
                if n_tries > max_steps:
                    return states, volts, viol, n_steps, STATUS_BUDGET, t
            for b in range(B):
                states[b, k_out, 0] = m[b, 0]
                states[b, k_out, 1] = m[b, 1]
                states[b, k_out, 2] = m[b, 2]
                for k in range(n3):
                    states[b, k_out, 3 + k] = c[b, k]
                states[b, k_out, iT] = m[b, iT]
                volts[b, k_out] = V_new[b]
            k_out += 1
    return states, volts, viol, n_steps, STATUS_OK, 0.0

