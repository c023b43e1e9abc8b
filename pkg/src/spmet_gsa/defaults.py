"""Nominal Kokam SLPB 75106100 parameter set and the case-study set-up.

Values marked ``placeholder`` approximate the published characterisation of
this cell (Ecker et al., J. Electrochem. Soc. 162 (2015) A1836 and A1849) and
should be replaced by the measured values when they are available. Arrhenius
quantities are given at 298.15 K and converted to pre-exponentials.
"""

from __future__ import annotations

from .params import CellParameters, T_REF, anchored_pre_exponential

UNCERTAIN_PARAMETERS = ("De0", "Ea_Ds_p", "k_p0", "k_n0", "Ea_k_p", "Ea_k_n",
                        "tau_s", "tau_n", "h_c")

THETA_P_INIT = 0.83
CE_INIT = 1000.0
T_INIT = 298.15

# (reference value at 298.15 K, activation energy J/mol)
ARRHENIUS_REFERENCE = {
    "Ds_p": (1.0e-13, 2.9e4),    # placeholder
    "Ds_n": (3.9e-14, 3.03e4),   # placeholder
    "De": (8.0e-10, 1.71e4),     # placeholder, high end so 15C stays feasible
    "k_p": (1.5e-6, 4.36e4),     # placeholder
    "k_n": (1.0e-6, 5.34e4),     # placeholder
}


def kokam_parameters(P: int = 10) -> CellParameters:
    ref = ARRHENIUS_REFERENCE
    pre = {key: anchored_pre_exponential(v, Ea, T_REF) for key, (v, Ea) in ref.items()}
    return CellParameters(
        L_p=54.5e-6, L_s=20.0e-6, L_n=73.7e-6,       # placeholder
        A=0.42,                                        # placeholder, stacked electrode area
        R_pp=6.5e-6, R_pn=13.7e-6,                     # placeholder
        capacity_C=7.5 * 3600.0,
        cs_max_p=48580.0, cs_max_n=31920.0,            # placeholder
        theta_p_0=0.86, theta_p_100=0.26,              # placeholder, 0.83 -> SOC 5 %
        theta_n_0=0.01, theta_n_100=0.80,              # placeholder
        Ds_p0=pre["Ds_p"], Ds_n0=pre["Ds_n"],
        Ea_Ds_p=ref["Ds_p"][1], Ea_Ds_n=ref["Ds_n"][1],
        De0=pre["De"], Ea_De=ref["De"][1],
        Ea_kappa=1.71e4,                               # placeholder
        eps_p=0.296, eps_s=0.508, eps_n=0.329,         # placeholder
        tau_p=1.94, tau_s=1.67, tau_n=2.03,            # placeholder
        t_plus=0.26,                                   # placeholder
        k_p0=pre["k_p"], k_n0=pre["k_n"],
        Ea_k_p=ref["k_p"][1], Ea_k_n=ref["k_n"][1],
        R_sei=5e-4,                                    # placeholder
        C_th=4186.0, h_c=10.0, A_c=1.0, T_sink=298.15,
        P=P,
    )
