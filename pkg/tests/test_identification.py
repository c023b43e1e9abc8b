import numpy as np
import pytest
from hypothesis import given, strategies as st

from spmet_gsa.defaults import UNCERTAIN_PARAMETERS
from spmet_gsa.identification import (McStudy, correlation_matrix, efficiency,
                                      empirical_variance, estimate_parameters,
                                      monte_carlo_study, noisy_outputs, start_guesses,
                                      summary_report, whiten)
from spmet_gsa.sensitivity import FunctionModel, SpmetOutputModel
from spmet_gsa.simulator import CurrentProfile

PROFILE = CurrentProfile((1.0,), 10.0)
RICH = CurrentProfile((-10.0, 4.0, -12.0, 0.0, 6.0, -8.0, 2.0, -5.0, 7.0, 0.0), 100.0)


def _linear(K=30, n=3, seed=5):
    X = np.random.default_rng(seed).normal(size=(K, n)) * [1.0, 0.5, 2.0][:n]

    def func(rates, P):
        return (P @ X.T)[..., None]
    return FunctionModel(func, K), X


def test_variance_and_efficiency_examples():
    assert empirical_variance([[1.0], [1.2]])[0] == pytest.approx(0.02, rel=1e-12)
    assert efficiency([2.0, 4.0], [2.0, 2.0]) == pytest.approx([1.0, 2.0])
    with pytest.raises(ValueError):
        efficiency([1.0], [0.0])
    with pytest.raises(ValueError):
        empirical_variance([[1.0]])


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=20), st.floats(-100, 100),
       st.floats(0.01, 100))
def test_variance_properties(vals, shift, c):
    E = np.array(vals)[:, None]
    v = empirical_variance(E)
    assert v >= 0
    assert empirical_variance(E + shift) == pytest.approx(v, rel=1e-6, abs=1e-9)
    assert np.allclose(efficiency(c * (v + 1), c * (v + 2)), (v + 1) / (v + 2))


def test_correlation_matrix(rng):
    E = rng.normal(size=(50, 4))
    E[:, 3] = 1.0
    C = correlation_matrix(E)
    assert np.array_equal(np.diag(C), np.ones(4))
    assert np.allclose(C, C.T) and np.all(np.abs(C) <= 1)
    assert np.allclose(C[:3, :3], np.corrcoef(E[:, :3].T))
    assert np.all(C[3, :3] == 0)


def test_noisy_outputs_reproducible():
    Y = np.zeros((100, 2))
    a = noisy_outputs(Y, (1e-2, 0.3), 7)
    assert np.array_equal(a, noisy_outputs(Y, (1e-2, 0.3), 7))
    assert not np.array_equal(a, noisy_outputs(Y, (1e-2, 0.3), 8))
    assert np.array_equal(noisy_outputs(Y, (0.0, 0.0), 1), Y)
    assert np.array_equal(whiten(np.ones((2, 2)), (4.0, 0.25)), [[0.5, 2.0], [0.5, 2.0]])


def test_linear_recovery_and_box():
    model, X = _linear()
    truth = np.array([1.1, 0.9, 1.2])
    data = model.run(PROFILE, truth[None]).Y[0]
    res = estimate_parameters(data, model, PROFILE, np.ones(3), noise_vars=(1.0,))
    assert np.allclose(res.p_hat, truth, atol=1e-8)
    assert res.converged and res.residual < 1e-14
    # truth outside the box: the estimate stays on the boundary
    far = model.run(PROFILE, np.array([[2.0, 1.0, 1.0]])).Y[0]
    res = estimate_parameters(far, model, PROFILE, np.ones(3), noise_vars=(1.0,))
    assert res.p_hat[0] == 1.5 and np.all((res.p_hat >= 0.5) & (res.p_hat <= 1.5))
    with pytest.raises(ValueError):
        estimate_parameters(data, model, PROFILE, np.full(3, 2.0))


def test_linear_gaussian_variance_oracle():
    model, X = _linear(K=40)
    sigma2 = 0.05
    study = monte_carlo_study(PROFILE, np.ones(3), 200, (sigma2,), 0, model, n_starts=1)
    assert study.n_mc == 200 and study.n_failed == 0
    # every replicate equals the closed-form least-squares solution
    Y = X @ np.ones(3)
    ols = np.array([np.linalg.lstsq(X, noisy_outputs(Y[:, None], (sigma2,), r)[:, 0],
                                    rcond=None)[0] for r in range(200)])
    assert np.max(np.abs(study.estimates - ols)) < 1e-8
    # a 200-sample variance has a relative standard error near 0.1
    predicted = np.diag(np.linalg.inv(X.T @ X / sigma2))
    assert np.allclose(study.variance, predicted, rtol=0.2)
    assert np.allclose(study.mean, 1.0, atol=4 * np.sqrt(predicted / 200))


def test_zero_noise_study_has_zero_variance():
    model, _ = _linear()
    study = monte_carlo_study(PROFILE, np.ones(3), 5, (0.0,), 0, model)
    assert np.all(study.variance == 0.0)
    assert np.array_equal(np.diag(study.correlation), np.ones(3))


def test_start_guesses():
    s = start_guesses(np.ones(4), 3, seed=2)
    assert np.array_equal(s[0], np.ones(4)) and s.shape == (3, 4)
    assert np.all((s >= 0.5) & (s <= 1.5))
    assert np.array_equal(s, start_guesses(np.ones(4), 3, seed=2))


def test_study_csv_round_trip_and_report(tmp_path):
    model, _ = _linear()
    a = monte_carlo_study(PROFILE, np.ones(3), 12, (0.2,), 1, model, label="local")
    b = monte_carlo_study(PROFILE, np.ones(3), 12, (0.1,), 2, model, label="global")
    a.to_csv(tmp_path / "a.csv")
    back = McStudy.from_csv(tmp_path / "a.csv")
    assert np.array_equal(back.estimates, a.estimates)
    paths = summary_report(a, b, tmp_path / "r1", {"local": CurrentProfile((1.0, -1.0), 100.0)})
    summary_report(McStudy.from_csv(paths["estimates_local"]),
                   McStudy.from_csv(paths["estimates_global"]), tmp_path / "r2",
                   {"local": CurrentProfile((1.0, -1.0), 100.0)})
    for key, p in paths.items():
        assert p.read_bytes() == (tmp_path / "r2" / p.name).read_bytes(), key
    rows = (tmp_path / "r1" / "efficiency.csv").read_text().splitlines()
    assert rows[0] == "parameter,var_local,var_global,eta" and len(rows) == 4


@pytest.fixture(scope="module")
def spmet(params):
    model = SpmetOutputModel(params, UNCERTAIN_PARAMETERS)
    return model, model.run(RICH, np.ones((1, 9)), control=[0]).Y[0]


def test_spmet_noise_free_fixed_point(spmet):
    model, data = spmet
    res = estimate_parameters(data, model, RICH, np.ones(9), starts=np.ones((1, 9)))
    assert res.residual == 0.0
    assert np.max(np.abs(res.p_hat - 1)) < 1e-6


def test_spmet_recovers_perturbed_parameter(spmet):
    model, data = spmet
    p0 = np.ones(9)
    p0[UNCERTAIN_PARAMETERS.index("k_n0")] = 1.05
    res = estimate_parameters(data, model, RICH, p0, starts=p0[None])
    assert np.max(np.abs(res.p_hat - 1)) < 1e-4
