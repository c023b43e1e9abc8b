import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spmet_gsa.defaults import UNCERTAIN_PARAMETERS
from spmet_gsa.doe import (SINGULAR, DesignError, DesignSpec, compass_search, d_criterion,
                           design_objective, evaluate_design, optimize_design, stack_matrix,
                           start_points)
from spmet_gsa.integrate import IntegrationError
from spmet_gsa.sensitivity import (FunctionModel, ParameterDistribution, SensitivityStack,
                                   SpmetOutputModel)
from spmet_gsa.simulator import OperatingLimits


def dist_of(n, sig=0.1):
    return ParameterDistribution(tuple(f"p{i}" for i in range(n)), np.ones(n), sig)


def test_stack_matrix_shape_and_scaling(rng):
    vals = rng.normal(size=(200, 2, 9))
    stack = SensitivityStack(vals, np.arange(200.0), ("V", "T"), tuple("abcdefghi"), "local")
    S = stack_matrix(stack, (1.0, 1.0))
    assert S.shape == (400, 9)
    G1 = stack_matrix(stack, (1.0, 1.0))
    G2 = stack_matrix(stack, (2.0, 1.0))
    vpart = lambda S: S[0::2].T @ S[0::2]
    assert np.allclose(vpart(G2), vpart(G1) / 2)
    glob = SensitivityStack(np.abs(vals) / 10, np.arange(200.0), ("V", "T"),
                            tuple("abcdefghi"), "global")
    assert np.array_equal(stack_matrix(glob, (5.0, 7.0)), (np.abs(vals) / 10).reshape(400, 9))


def test_d_criterion_examples(rng):
    assert d_criterion(np.eye(4)) == pytest.approx(0.0, abs=1e-14)
    assert d_criterion(np.diag([2.0, 3.0])) == pytest.approx(np.log(36.0), rel=1e-14)
    assert d_criterion(np.zeros((400, 9))) == SINGULAR
    A = rng.normal(size=(30, 3))
    assert d_criterion(np.column_stack([A, A[:, 1]])) == SINGULAR
    assert d_criterion(np.full((3, 2), np.nan)) == SINGULAR


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_d_criterion_invariances(seed):
    rng = np.random.default_rng(seed)
    S = rng.normal(size=(20, 4))
    base = d_criterion(S)
    assert d_criterion(S[rng.permutation(20)]) == pytest.approx(base, rel=1e-10, abs=1e-10)
    more = np.vstack([S, rng.normal(size=(3, 4))])
    assert d_criterion(more) >= base - 1e-12


def _linear_model(n_samples=20):
    # y_k = sum_i p_i * g_i(rate, k) with rate-dependent regressors
    def func(rates, P):
        k = np.arange(1, n_samples + 1)
        seg = np.repeat(rates, n_samples // len(rates))
        G = np.stack([seg, np.sin(k) * seg ** 2 / 10, np.cos(0.3 * k) + 0.1 * seg], axis=1)
        return (P @ G.T)[..., None]
    return func


def test_local_objective_matches_analytic_fim():
    func = _linear_model()
    model = FunctionModel(func, 20)
    spec = DesignSpec(n_v=2, mode="local", noise_vars=(0.04,), penalty_weight=0.0)
    rates = np.array([3.0, -7.0])
    obj = design_objective(rates, spec, model, dist_of(3))
    G = np.stack([func(rates, e[None])[0, :, 0] for e in np.eye(3)], axis=1)
    expected = np.linalg.slogdet(G.T @ G / 0.04)[1]
    assert obj == pytest.approx(expected, abs=1e-8)


def _voltage_model(gain=0.05):
    """Toy V/T model: V moves with the rate, parameters scale its effect."""
    def func(rates, P):
        seg = np.repeat(rates, 5)
        V = 3.7 - gain * seg[None] * P[:, :1] + 0.01 * P[:, 1:2] * np.cumsum(seg)[None]
        T = 298.15 + 0.1 * np.abs(seg)[None] * P[:, 2:3]
        return np.stack([V, T], axis=-1)
    return FunctionModel(func, 10, ("V", "T"), 1.0)


def test_penalty_monotone_in_weight():
    m = _voltage_model()
    rates = np.array([-15.0, -15.0])
    objs = [design_objective(rates, DesignSpec(n_v=2, mode="local", penalty_weight=w),
                             m, dist_of(3)) for w in (0.0, 1.0, 10.0, 1e4)]
    assert all(a > b for a, b in zip(objs, objs[1:]))
    ev = evaluate_design(rates, DesignSpec(n_v=2, mode="local"), m, dist_of(3))
    assert ev.report.over_V.sum() > 0


def test_bounds_are_enforced():
    m = FunctionModel(_linear_model(), 20)
    with pytest.raises(ValueError):
        evaluate_design([16.0, 0.0], DesignSpec(n_v=2), m, dist_of(3))
    with pytest.raises(ValueError):
        evaluate_design([1.0], DesignSpec(n_v=2), m, dist_of(3))


def test_one_segment_bang_oracle():
    # information grows with |rate|; the oracle is a fine grid scan
    def func(rates, P):
        r = rates[0]
        g = np.array([1 + (r + 20) ** 2, 1 + 0.5 * abs(r)])
        return (P * g).sum(axis=1)[:, None, None] * np.ones((1, 4, 1)) \
            + P[:, :1, None] * np.arange(4)[None, :, None]
    model = FunctionModel(func, 4)
    spec = DesignSpec(n_v=1, mode="local", noise_vars=(1.0,), multistart_count=4, seed=3)
    grid = np.linspace(-15, 15, 121)
    vals = [design_objective([r], spec, model, dist_of(2)) for r in grid]
    res = optimize_design(spec, model, dist_of(2))
    assert res.rates[0] == grid[int(np.argmax(vals))]
    assert abs(res.rates[0]) == 15.0
    assert res.objective >= max(vals) - 1e-12


def test_best_of_is_monotone_in_starts():
    model = FunctionModel(_linear_model(), 20)
    best = []
    for m in range(1, 6):
        spec = DesignSpec(n_v=2, mode="local", noise_vars=(0.04,), multistart_count=m,
                          seed=11, step_tol=0.5)
        best.append(optimize_design(spec, model, dist_of(3)).objective)
    assert all(b >= a for a, b in zip(best, best[1:]))


def test_result_dominates_every_start_and_is_deterministic(tmp_path):
    model = FunctionModel(_linear_model(), 20)
    spec = DesignSpec(n_v=2, mode="global", multistart_count=5, seed=2)
    a = optimize_design(spec, model, dist_of(3))
    b = optimize_design(spec, model, dist_of(3))
    assert all(a.objective >= h.objective for h in a.history if not h.failed)
    assert np.array_equal(a.rates, b.rates) and a.objective == b.objective
    assert np.all((a.rates >= -15) & (a.rates <= 15))
    a.to_csv(tmp_path / "a.csv", capacity_Ah=7.5)
    b.to_csv(tmp_path / "b.csv", capacity_Ah=7.5)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    rows = list(csv.DictReader(open(tmp_path / "a.csv")))
    assert [r["segment"] for r in rows] == ["1", "2"]
    assert float(rows[1]["current_A"]) == pytest.approx(7.5 * a.rates[1])
    a.to_json(tmp_path / "a.json")
    info = json.loads((tmp_path / "a.json").read_text())
    assert info["objective"] == a.objective and len(info["starts"]) == 5


def test_all_starts_failing_raises():
    class Broken:
        output_names = ("y",)

        def times(self, profile):
            return np.arange(1.0, 3.0)

        def run(self, profile, p, control=None):
            raise IntegrationError("no", 0.0)

    with pytest.raises(DesignError):
        optimize_design(DesignSpec(n_v=2, multistart_count=2), Broken(), dist_of(2))


def test_start_points():
    spec = DesignSpec(multistart_count=6, seed=4)
    S = start_points(spec)
    assert S.shape == (6, 10)
    assert np.all(S[0] == 15) and np.all(S[1] == -15)
    assert np.array_equal(S[2], np.tile([15.0, -15.0], 5))
    assert np.array_equal(S, start_points(spec))
    assert np.all((S >= -15) & (S <= 15))


def test_compass_search_concave():
    f = lambda x: -np.sum((x - np.array([3.3, -14.0, 20.0])) ** 2)
    x, fx, n = compass_search(f, np.zeros(3), -15, 15, 30, 1e-3, 5000)
    assert np.allclose(x, [3.3, -14.0, 15.0], atol=2e-3)
    x, _, n = compass_search(f, np.zeros(3), -15, 15, 30, 1e-3, 25)
    assert n <= 25


def test_spec_validation():
    for kw in ({"n_v": 0}, {"rate_min": 5, "rate_max": -5}, {"penalty_weight": -1},
               {"multistart_count": 0}, {"mode": "x"}, {"criterion": "A"}):
        with pytest.raises(ValueError):
            DesignSpec(**kw)


def test_spmet_objective_is_path_dependent(params):
    model = SpmetOutputModel(params, UNCERTAIN_PARAMETERS)
    dist = ParameterDistribution.from_params(params, UNCERTAIN_PARAMETERS)
    spec = DesignSpec(n_v=2, mode="local")
    a = design_objective([-6.0, 3.0], spec, model, dist)
    b = design_objective([3.0, -6.0], spec, model, dist)
    assert a != b
    zero = design_objective([0.0, 0.0], spec, model, dist)
    assert zero == SINGULAR and a > zero
