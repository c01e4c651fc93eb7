import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cirtrack.estimator import KalmanFilter, KalmanState, NoiseSpec, kf_predict, kf_update
from cirtrack.exceptions import InvalidInputError, NumericalFailureError
from cirtrack.model import StateSpaceModel, spring_damper_model
from cirtrack.sim import plant_step

GOLDEN = (1 + np.sqrt(5)) / 2


def scalar_model():
    return StateSpaceModel([[1.0]], [[1.0]], [[1.0]])


def test_noise_spec_expands_scalars():
    m = spring_damper_model()
    nz = NoiseSpec.for_model(m, 1e-4, [1e-3, 2e-3])
    np.testing.assert_array_equal(nz.Q, 1e-4 * np.eye(4))
    np.testing.assert_array_equal(nz.R, np.diag([1e-3, 2e-3]))


@pytest.mark.parametrize("Q", [[[1.0, 2.0], [0.0, 1.0]], [[-1.0, 0.0], [0.0, 1.0]]])
def test_noise_spec_rejects_bad_covariance(Q):
    with pytest.raises(InvalidInputError):
        NoiseSpec(Q, [[1.0]])


def test_predict_zero():
    m = spring_damper_model()
    P = np.diag([1.0, 2.0, 3.0, 4.0])
    s = kf_predict(KalmanState(np.zeros(4), P), m, np.zeros(2), NoiseSpec.for_model(m))
    assert not s.x_hat.any()
    np.testing.assert_allclose(s.P, m.A @ P @ m.A.T)


def test_predict_scalar_substitution():
    m = scalar_model()
    s = kf_predict(KalmanState(np.array([2.0]), np.array([[1.0]])), m, [3.0],
                   NoiseSpec.for_model(m, 1.0, 1.0))
    assert s.x_hat[0] == 5.0
    assert s.P[0, 0] == 2.0


def test_predict_matches_independent_recursion():
    m = spring_damper_model()
    rng = np.random.default_rng(0)
    x = rng.standard_normal(4)
    L = rng.standard_normal((4, 4))
    P = L @ L.T
    u = rng.standard_normal(2)
    Q = 1e-3 * np.eye(4)
    s = kf_predict(KalmanState(x, P), m, u, NoiseSpec(Q, 1e-3 * np.eye(2)))
    x_o = np.einsum("ij,j->i", m.A, x) + np.einsum("ij,j->i", m.B, u)
    P_o = np.einsum("ij,jk,lk->il", m.A, P, m.A) + Q
    np.testing.assert_allclose(s.x_hat, x_o, atol=1e-12)
    np.testing.assert_allclose(s.P, P_o, atol=1e-12)


def test_predict_dimension_mismatch():
    m = spring_damper_model()
    with pytest.raises(InvalidInputError):
        kf_predict(KalmanState(np.zeros(4), np.eye(4)), m, np.zeros(3), NoiseSpec.for_model(m))


def test_update_with_perfect_prior_ignores_measurement():
    m = spring_damper_model()
    nz = NoiseSpec.for_model(m, 0.0, 1e-2)
    s = kf_update(KalmanState(np.ones(4), np.zeros((4, 4))), m, nz, [10.0, -10.0])
    assert not s.last_gain.any()
    np.testing.assert_array_equal(s.x_hat, np.ones(4))


def test_scalar_steady_state_golden_ratio():
    m = scalar_model()
    nz = NoiseSpec.for_model(m, 1.0, 1.0)
    s = KalmanState(np.zeros(1), np.array([[1.0]]))
    for _ in range(200):
        s = kf_update(kf_predict(s, m, [0.0], nz), m, nz, [0.0])
    P_pred = s.P[0, 0] + 1.0
    assert abs(P_pred - GOLDEN) < 1e-6
    assert abs(s.last_gain[0, 0] - 1 / GOLDEN) < 1e-6
    # fixed point of P = P/(P+1) + 1
    assert abs(P_pred - (P_pred / (P_pred + 1) + 1)) < 1e-12


def test_uninformative_measurement_gain_vanishes():
    m = spring_damper_model()
    nz = NoiseSpec.for_model(m, 1e-4, 1e12)
    s = kf_update(KalmanState(np.zeros(4), np.eye(4)), m, nz, [1.0, 1.0])
    assert abs(s.last_gain).max() < 1e-6


def test_singular_innovation_covariance():
    m = spring_damper_model()
    with pytest.raises(NumericalFailureError):
        kf_update(KalmanState(np.zeros(4), np.zeros((4, 4))), m, NoiseSpec.for_model(m), [0, 0])


def test_open_loop_limit():
    m = spring_damper_model()
    nz = NoiseSpec.for_model(m, 0.0, 1e12)
    rng = np.random.default_rng(1)
    U = rng.standard_normal((50, 2))
    Y = rng.standard_normal((51, 2))
    x0 = rng.standard_normal(4)
    kf = KalmanFilter(Q=0.0, R=1e12, x0=x0).fit(m)
    X = kf.filter(U, Y)
    x = x0.copy()
    for k in range(50):
        x = m.A @ x + m.B @ U[k]
        np.testing.assert_allclose(X[k + 1], x, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_covariance_stays_symmetric_psd(seed):
    rng = np.random.default_rng(seed)
    m = spring_damper_model()
    L = rng.standard_normal((4, 4))
    nz = NoiseSpec(L @ L.T * 10 ** rng.uniform(-6, 0), np.eye(2) * 10 ** rng.uniform(-6, 0))
    s = KalmanState(np.zeros(4), np.eye(4) * 10 ** rng.uniform(-3, 3))
    for _ in range(100):
        s = kf_update(kf_predict(s, m, rng.standard_normal(2), nz), m, nz, rng.standard_normal(2))
        np.testing.assert_allclose(s.P, s.P.T, atol=1e-9)
        assert np.linalg.eigvalsh(s.P).min() >= -1e-9


def test_state_estimate_unbiased_monte_carlo():
    m = spring_damper_model()
    nz = NoiseSpec.for_model(m, 1e-3, 1e-3)
    runs, T = 500, 100
    k = np.arange(T)
    U = np.column_stack([np.sin(0.1 * k), np.cos(0.07 * k)])
    errs = np.empty((runs, 4))
    for i in range(runs):
        rng = np.random.default_rng(1000 + i)
        x = np.zeros(4)
        y = m.C @ x + nz.measurement_factor @ rng.standard_normal(2)
        s = kf_update(KalmanState(np.zeros(4), np.eye(4)), m, nz, y)
        for j in range(T):
            x, y = plant_step(m, nz, x, U[j], rng)
            s = kf_update(kf_predict(s, m, U[j], nz), m, nz, y)
        errs[i] = s.x_hat - x
    mean = errs.mean(axis=0)
    bound = 4 * errs.std(axis=0, ddof=1) / np.sqrt(runs)
    assert np.all(np.abs(mean) <= bound)


def test_kalman_filter_estimator_api():
    kf = KalmanFilter(Q=1e-3)
    assert kf.get_params()["Q"] == 1e-3
    with pytest.raises(Exception):
        kf.step([0.0, 0.0])
