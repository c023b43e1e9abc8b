import csv

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from spmet_gsa.integrate import IntegrationError, integrate_compiled
from spmet_gsa.model import CellState, Spmet, anode_from_cathode, soc
from spmet_gsa.simulator import (CurrentProfile, MeasurementSeries, OperatingLimits, add_noise,
                                 check_limits, simulate, simulate_batch, write_trajectory_csv)


@pytest.fixture(scope="module")
def mid(params):
    # half-charged cell so that both current directions stay in range
    return CellState.equilibrium(0.55, 1000.0, params.T_sink, params.P)


def test_zero_profile_is_stationary(params, x0):
    prof = CurrentProfile((0.0,) * 10, 100.0)
    s = simulate(params, prof, x0)
    assert len(s) == 200
    rest = Spmet(params).voltage(x0.to_vector(), 0.0).V
    # modal round trips may move c_e by a few ulps
    assert np.ptp(s.V) < 1e-12
    assert abs(s.V[0] - rest) < 1e-12
    assert np.max(np.abs(s.T - params.T_sink)) < 1e-12


def test_sample_grid(params, x0):
    prof = CurrentProfile((-1.0, 2.0), 50.0)
    s = simulate(params, prof, x0, t_s=2.5)
    assert np.allclose(s.times, 2.5 * np.arange(1, 41))
    with pytest.raises(ValueError):
        simulate(params, prof, x0, t_s=3.0)


def test_tolerance_refinement(params, mid):
    prof = CurrentProfile((1.0,) * 10, 100.0)
    a = simulate(params, prof, mid, rtol=1e-6)
    b = simulate(params, prof, mid, rtol=5e-7)
    assert np.max(np.abs(a.V - b.V)) < 1e-6
    assert np.max(np.abs(a.T - b.T)) < 1e-6


def test_engines_agree(params, mid):
    prof = CurrentProfile((5.0, -5.0, 15.0, 0.0), 50.0)
    a = simulate_batch(params, prof, mid, keep_states=True)
    b = simulate_batch(params, prof, mid, keep_states=True, engine="numpy")
    assert a.n_steps == b.n_steps
    assert np.max(np.abs(a.V - b.V)) < 1e-10
    assert np.max(np.abs(a.states - b.states) / (1 + np.abs(b.states))) < 1e-10


def test_against_stiff_reference(params, mid):
    """Cross-check the ETD kernel against scipy's Radau at tight tolerance."""
    rates = (3.0, -6.0, 0.0, 10.0)
    prof = CurrentProfile(rates, 100.0)
    s = simulate(params, prof, mid, rtol=1e-8)
    m = Spmet(params)
    y = mid.to_vector()
    V = []
    for r in rates:
        I = r * params.capacity_Ah
        sol = solve_ivp(lambda t, z: m.rhs(z, I), (0, 100), y, method="Radau",
                        t_eval=5.0 * np.arange(1, 21), rtol=1e-10,
                        atol=np.concatenate([[1e-12] * 3, [1e-8] * 30, [1e-9]]))
        V.append(m.voltage(sol.y.T, I).V)
        y = sol.y[:, -1]
    assert np.max(np.abs(np.concatenate(V) - s.V)) < 1e-6


def test_conservation_and_coulomb_counting(params, mid):
    rates = (5.0, -5.0) * 5
    prof = CurrentProfile(rates, 100.0)
    _, res = simulate(params, prof, mid, keep_states=True)
    m = Spmet(params)
    start = m.electrolyte_inventory(mid.to_vector())
    inv = m.electrolyte_inventory(res.states[0])
    assert np.max(np.abs(inv - start)) / start < 1e-6
    # theta_bar_p is driven by the current alone, so it follows the charge exactly
    charge = np.cumsum(res.currents) * 5.0
    th = res.states[0, :, 0]
    assert np.allclose(th - 0.55, m.c_theta * charge, rtol=0, atol=1e-10)


def test_soc_matches_ampere_hours(params, x0):
    prof = CurrentProfile((-2.0, -4.0, -1.0, 0.0, -3.0), 100.0)
    _, res = simulate(params, prof, x0, keep_states=True)
    p = params
    s0 = soc(anode_from_cathode(x0.theta_bar_p, p), p)
    s1 = soc(anode_from_cathode(res.states[0, -1, 0], p), p)
    ah = -np.sum(prof.rates) * p.capacity_Ah * 100.0 / 3600.0
    assert (s1 - s0) == pytest.approx(100.0 * ah / p.capacity_Ah, rel=1e-3)


def test_determinism(params, mid):
    prof = CurrentProfile((4.0, -7.0, 2.0), 100.0)
    a, b = simulate(params, prof, mid), simulate(params, prof, mid)
    assert a.V.tobytes() == b.V.tobytes() and a.T.tobytes() == b.T.tobytes()


def test_batch_member_matches_single(params, mid):
    prof = CurrentProfile((4.0, -7.0, 2.0), 100.0)
    batch = params.with_values(("De0",), np.array([[params.De0], [1.2 * params.De0]]))
    res = simulate_batch(batch, prof, mid, rtol=1e-9)
    single = simulate(batch.select(1), prof, mid, rtol=1e-9)
    assert np.max(np.abs(res.V[1] - single.V)) < 1e-7


def test_step_budget_reports_time(params, mid):
    m = Spmet(params)
    with pytest.raises(IntegrationError) as exc:
        integrate_compiled(m, mid.to_vector(), [75.0, 75.0], 100.0, 5.0, 20, max_steps=10)
    assert exc.value.t >= 0


def test_check_limits():
    lim = OperatingLimits(320.0, 2.7, 4.2)
    ok = MeasurementSeries(np.array([5.0, 10.0]), np.array([3.0, 4.1]), np.array([300.0, 301]))
    rep = check_limits(ok, lim)
    assert rep.ok and rep.total == 0
    bad = MeasurementSeries(np.array([5.0, 10.0]), np.array([4.3, 3.0]), np.array([300.0, 321]))
    rep = check_limits(bad, lim)
    assert rep.over_V[0] == pytest.approx(0.1) and rep.over_V[1] == 0
    assert rep.over_T[1] == pytest.approx(1.0)
    assert rep.squared_total == pytest.approx(0.01 + 1.0)
    with pytest.raises(ValueError):
        OperatingLimits(320.0, 4.3, 4.2)


def test_add_noise():
    s = MeasurementSeries(np.arange(1.0, 4.0), np.full(3, 3.7), np.full(3, 300.0))
    same = add_noise(s, 0.0, 0.0, 1)
    assert np.array_equal(same.V, s.V) and np.array_equal(same.T, s.T)
    assert np.array_equal(add_noise(s, 1e-2, 0.3, 7).V, add_noise(s, 1e-2, 0.3, 7).V)
    draws = np.array([add_noise(s, 1e-2, 0.3, k).V[0] for k in range(10_000)])
    assert np.var(draws, ddof=1) == pytest.approx(1e-2, rel=0.05)
    with pytest.raises(ValueError):
        add_noise(s, -1.0, 0.0, 0)


def test_profile_validation():
    with pytest.raises(ValueError):
        CurrentProfile((), 100.0)
    with pytest.raises(ValueError):
        CurrentProfile((1.0,), 0.0)
    with pytest.raises(ValueError):
        CurrentProfile((16.0,), 100.0).check_bounds(-15, 15)
    assert CurrentProfile((1.0,) * 10, 100.0).horizon == 1000.0


def test_trajectory_csv(params, x0, tmp_path):
    prof = CurrentProfile((-1.0,) * 10, 100.0)
    _, res = simulate(params, prof, x0, keep_states=True)
    path = tmp_path / "t.csv"
    write_trajectory_csv(path, res, params, include_states=True)
    rows = list(csv.reader(open(path)))
    assert rows[0][:5] == ["time_s", "current_A", "voltage_V", "temperature_K", "soc_pct"]
    assert len(rows) == 201
    assert len(rows[0]) == 5 + 3 + 3 * params.P
    assert float(rows[1][4]) > 5.0
