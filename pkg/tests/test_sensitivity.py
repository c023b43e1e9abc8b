import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spmet_gsa.defaults import UNCERTAIN_PARAMETERS
from spmet_gsa.integrate import IntegrationError
from spmet_gsa.sensitivity import (ModelRun, FunctionModel, ParameterDistribution,
                                   SimulationFailure, SpmetOutputModel, conditional_rules,
                                   global_sensitivity_stack, local_sensitivities, pem_mean,
                                   pem_samples, pem_variance, pem_weights, sobol_first_order)
from spmet_gsa.simulator import CurrentProfile

PROFILE = CurrentProfile((1.0,), 10.0)


def dist_of(sig):
    sig = np.asarray(sig, dtype=float)
    return ParameterDistribution(tuple(f"p{i}" for i in range(sig.size)), np.ones(sig.size), sig)


def test_weights():
    w0, wa, wp, th = pem_weights(9)
    assert (w0, wa, wp) == pytest.approx((2.0, -5 / 18, 1 / 36), abs=1e-15)
    assert th == pytest.approx(np.sqrt(3))
    assert pem_weights(1)[:2] == pytest.approx((2 / 3, 1 / 6), abs=1e-15)
    for n in range(1, 21):
        w0, wa, wp, _ = pem_weights(n)
        assert abs(w0 + 2 * n * wa + 2 * n * (n - 1) * wp - 1) < 1e-12
    with pytest.raises(ValueError):
        pem_weights(0)


def test_node_structure():
    assert len(pem_samples(dist_of([0.1] * 9))) == 163
    ss = pem_samples(dist_of([0.2]))
    assert sorted(ss.nodes[:, 0]) == pytest.approx([1 - np.sqrt(3) * 0.2, 1, 1 + np.sqrt(3) * 0.2])
    ss = pem_samples(dist_of([0.1, 0.3, 0.05, 0.2]))
    assert len(ss) == 33
    assert ss.weights.sum() == pytest.approx(1.0, abs=1e-14)
    for i in range(4):
        a, b = ss.xi[ss.axial[i]]
        assert a[i] == -b[i] == pytest.approx(np.sqrt(3))
        for j in range(4):
            if i != j:
                pats = {tuple(np.sign(ss.xi[k, [i, j]]).astype(int)) for k in ss.pairs[i, j]}
                assert pats == {(1, 1), (-1, -1), (-1, 1), (1, -1)}
    # normalized nodes scale per coordinate
    assert np.allclose(ss.nodes, 1 + ss.xi * [0.1, 0.3, 0.05, 0.2])


def test_conditional_rules_fix_the_level():
    ss = pem_samples(dist_of([0.1] * 5))
    for i in range(5):
        idx, w = conditional_rules(ss, i)
        assert w.sum() == pytest.approx(1.0)
        for lvl, val in enumerate((0, np.sqrt(3), -np.sqrt(3))):
            assert np.allclose(ss.xi[idx[lvl], i], val)


def _additive_quadratic(rng, n):
    a, b, c = rng.normal(size=n), rng.normal(size=n), rng.normal()
    sig = rng.uniform(0.02, 0.3, n)
    mean = c + np.sum(a + b * (1 + sig ** 2))
    var = np.sum((a + 2 * b) ** 2 * sig ** 2 + 2 * b ** 2 * sig ** 4)
    parts = (a + 2 * b) ** 2 * sig ** 2 + 2 * b ** 2 * sig ** 4

    def f(p):
        return c + p @ a + (p ** 2) @ b
    return f, sig, mean, var, parts / var


def test_quadratic_moments_and_indices(rng):
    for _ in range(20):
        f, sig, mean, var, S = _additive_quadratic(rng, 9)
        ss = pem_samples(dist_of(sig))
        y = f(ss.nodes)
        assert pem_mean(y, ss) == pytest.approx(mean, rel=1e-10)
        assert pem_variance(y, ss) == pytest.approx(var, rel=1e-10)
        got = [sobol_first_order(y, ss, i) for i in range(9)]
        assert np.allclose(got, S, rtol=1e-8, atol=1e-12)
        assert sum(got) == pytest.approx(1.0, abs=1e-8)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 7), st.lists(st.floats(-5, 5), min_size=30, max_size=30),
       st.floats(0.01, 0.5))
def test_degree_two_exactness(n, coef, sigma):
    """Mean is exact for any polynomial of total degree two, cross terms included."""
    c = np.array(coef)
    A = np.zeros((n, n))
    A[np.triu_indices(n)] = c[:n * (n + 1) // 2]
    b = c[-n:]
    ss = pem_samples(dist_of([sigma] * n))
    xi = ss.xi
    y = xi @ b + np.einsum("ki,ij,kj->k", xi, A, xi)
    assert pem_mean(y, ss) == pytest.approx(np.trace(A), abs=1e-10 * (1 + np.abs(c).sum()))


def test_constant_and_product():
    ss = pem_samples(dist_of([0.1, 0.1]))
    y = np.full(len(ss), 4.2)
    assert pem_mean(y, ss) == pytest.approx(4.2)
    assert pem_variance(y, ss) == 0.0
    S, flag = sobol_first_order(y, ss, 0, return_flag=True)
    assert S == 0.0 and flag
    prod = ss.xi[:, 0] * ss.xi[:, 1]
    assert pem_mean(prod, ss) == pytest.approx(0.0, abs=1e-14)
    assert pem_variance(prod, ss) == pytest.approx(1.0, rel=1e-12)


def test_sobol_examples():
    ss = pem_samples(dist_of([0.1, 0.1]))
    y = 1 * ss.nodes[:, 0] + 2 * ss.nodes[:, 1]
    assert sobol_first_order(y, ss, 0) == pytest.approx(0.2, abs=1e-12)
    assert sobol_first_order(y, ss, 1) == pytest.approx(0.8, abs=1e-12)
    inter = ss.xi[:, 0] * ss.xi[:, 1]
    assert sobol_first_order(inter, ss, 0) < 1e-10
    ss3 = pem_samples(dist_of([0.1, 0.2, 0.3]))
    only = np.exp(ss3.nodes[:, 0])
    assert abs(sobol_first_order(only, ss3, 0) - 1) < 1e-10
    assert sobol_first_order(only, ss3, 1) == 0.0


def test_sobol_monte_carlo_oracle(rng):
    a = np.array([1.0, -2.0, 0.5, 3.0])
    sig = np.array([0.1, 0.05, 0.2, 0.02])
    ss = pem_samples(dist_of(sig))
    y = ss.nodes @ a
    N = 1_000_000
    A = 1 + sig * rng.standard_normal((N, 4))
    B = 1 + sig * rng.standard_normal((N, 4))
    yA = A @ a
    for i in range(4):
        C = B.copy()
        C[:, i] = A[:, i]
        yC = C @ a
        z = (yA - yA.mean()) * (yC - yC.mean())
        v = yA.var()
        est, se = z.mean() / v, z.std() / np.sqrt(N) / v
        pem = sobol_first_order(y, ss, i)
        assert abs(pem - est) < 3 * se + 1e-12
        assert pem == pytest.approx((a[i] * sig[i]) ** 2 / np.sum((a * sig) ** 2), abs=1e-8)


@given(st.floats(-1e3, 1e3).filter(lambda x: abs(x) > 1e-3), st.floats(-1e3, 1e3))
def test_affine_invariance(alpha, beta):
    ss = pem_samples(dist_of([0.1, 0.2, 0.15]))
    y = np.sin(ss.nodes[:, 0]) + ss.nodes[:, 1] ** 2 + ss.nodes[:, 0] * ss.nodes[:, 2]
    for i in range(3):
        assert sobol_first_order(alpha * y + beta, ss, i) == pytest.approx(
            sobol_first_order(y, ss, i), rel=1e-7, abs=1e-12)


def test_indices_bounded_with_negative_weights(rng):
    ss = pem_samples(dist_of(rng.uniform(0.05, 0.2, 9)))
    for _ in range(50):
        y = rng.normal(size=(len(ss), 4))
        S = np.stack([sobol_first_order(y, ss, i) for i in range(9)])
        assert np.all((S >= 0) & (S <= 1))


def test_local_fd_exact_on_affine():
    m = FunctionModel(lambda r, P: np.repeat(3 * P[:, :1], 5, axis=1), 5)
    st_ = local_sensitivities(m, PROFILE, np.ones(2))
    assert np.allclose(st_.values[..., 0], 3.0, rtol=1e-12)
    assert np.all(st_.values[..., 1] == 0)
    assert st_.n_runs == 5


def test_local_fd_richardson():
    quad = FunctionModel(lambda r, P: P[:, :1] ** 2, 1)
    assert local_sensitivities(quad, PROFILE, [1.0]).values[0, 0, 0] == pytest.approx(2.0, rel=1e-8)
    cube = FunctionModel(lambda r, P: P[:, :1] ** 3, 1)
    e1 = local_sensitivities(cube, PROFILE, [1.0], step=1e-2).values[0, 0, 0] - 3
    e2 = local_sensitivities(cube, PROFILE, [1.0], step=5e-3).values[0, 0, 0] - 3
    assert e1 / e2 == pytest.approx(4.0, rel=1e-3)


class _Fragile:
    output_names = ("y",)

    def times(self, profile):
        return np.array([1.0])

    def run(self, profile, p_tilde, control=None):
        P = np.atleast_2d(p_tilde)
        if np.any(P[:, 2] < 1):
            raise IntegrationError("boom", 3.0)
        return ModelRun(P.sum(axis=1)[:, None, None], np.zeros(len(P), dtype=bool))


def test_local_failure_names_parameter():
    with pytest.raises(SimulationFailure) as exc:
        local_sensitivities(_Fragile(), PROFILE, np.ones(4))
    assert exc.value.index == 2


def test_global_failure_marks_stack_invalid():
    stack = global_sensitivity_stack(_Fragile(), PROFILE, dist_of([0.1] * 4))
    assert not stack.valid and stack.n_runs == 33


def test_stack_csv(tmp_path):
    m = FunctionModel(lambda r, P: np.stack([P @ [1.0, 2.0]] * 4, axis=1)[..., None]
                      * [1.0, 0.5], 4, ("V", "T"))
    stack = global_sensitivity_stack(m, PROFILE, dist_of([0.1, 0.1]))
    path = tmp_path / "s.csv"
    stack.to_csv(path)
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == 4 * 2 * 2
    assert set(rows[0]) == {"time_s", "output", "parameter", "value", "kind"}
    assert float(rows[1]["value"]) == pytest.approx(0.8)


@pytest.fixture(scope="module")
def spmet_model(params):
    return SpmetOutputModel(params, UNCERTAIN_PARAMETERS)


def test_spmet_zero_current_has_no_sensitivity(params, spmet_model):
    dist = ParameterDistribution.from_params(params, UNCERTAIN_PARAMETERS)
    stack = global_sensitivity_stack(spmet_model, CurrentProfile((0.0,) * 2, 100.0), dist)
    assert stack.valid and stack.n_runs == 163
    assert np.all(stack.values == 0)


def test_spmet_global_stack_bounds(params, spmet_model):
    dist = ParameterDistribution.from_params(params, UNCERTAIN_PARAMETERS)
    prof = CurrentProfile((-10.0, 5.0, -15.0, 0.0), 100.0)
    stack = global_sensitivity_stack(spmet_model, prof, dist)
    assert stack.shape == (80, 2, 9)
    assert np.all((stack.values >= 0) & (stack.values <= 1))
    assert np.all(stack.values.sum(axis=-1) <= 1 + 1e-6)
    # heat transfer coefficient only acts through temperature
    assert stack.values[:, 1, UNCERTAIN_PARAMETERS.index("h_c")].max() > 0.01


def test_arrhenius_anchor_keeps_reference_rate(params, spmet_model):
    p = spmet_model.physical(np.array([[1.0, 1.2, 1, 1, 0.9, 1, 1, 1, 1]]))
    from spmet_gsa.model import arrhenius
    assert arrhenius(p.Ds_p0[0], p.Ea_Ds_p[0], 298.15) == pytest.approx(
        arrhenius(params.Ds_p0, params.Ea_Ds_p, 298.15), rel=1e-12)
    assert arrhenius(p.k_p0[0], p.Ea_k_p[0], 298.15) == pytest.approx(
        arrhenius(params.k_p0, params.Ea_k_p, 298.15), rel=1e-12)
    assert p.Ea_k_p[0] == pytest.approx(0.9 * params.Ea_k_p)
    raw = SpmetOutputModel(params, UNCERTAIN_PARAMETERS, anchor_arrhenius=False)
    assert np.all(raw.physical(np.ones((1, 9))).Ds_p0 == params.Ds_p0)


def test_distribution_validation():
    with pytest.raises(ValueError):
        ParameterDistribution(("a",), [0.0], 0.1)
    with pytest.raises(ValueError):
        ParameterDistribution(("a",), [1.0], -0.1)
    with pytest.raises(ValueError):
        ParameterDistribution(("a", "b"), [1.0], 0.1)
