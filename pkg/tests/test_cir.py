import numpy as np
import pytest
from sklearn.base import clone

from cirtrack import matcore
from cirtrack.cir import CirState, CIRController, cir_step
from cirtrack.estimator import NoiseSpec
from cirtrack.exceptions import CirError, NumericalFailureError
from cirtrack.model import check_feasibility, rc_circuit_model, spring_damper_model
from cirtrack.sim import (
    ChannelComponent,
    ReferenceSignal,
    Scenario,
    monte_carlo,
    run_closed_loop,
    unbiasedness_check,
)
from cirtrack.squaring import batch_matrices

from oracles import random_square_system

REFS = {
    "step": [ChannelComponent("step", 1.0), ChannelComponent("step", -0.5, start=30)],
    "sine": [ChannelComponent("sine", 1.0, 100), ChannelComponent("sine", 0.7, 40, phase=1.0)],
    "sawtooth": [ChannelComponent("sawtooth", 1.0, 100), ChannelComponent("sine", 1.0, 100)],
}


def test_zero_synthetic_innovation():
    m = spring_damper_model()
    nz = NoiseSpec.for_model(m, 1e-4, 1e-4)
    st = CirState.initial(m, x0=np.array([0.1, 0.2, -0.3, 0.4]))
    y0 = m.C @ st.kalman.x_hat
    # with y = C x_hat the update leaves the estimate unchanged, so y_pred = C A x_hat
    y_pred = m.C @ m.A @ st.kalman.x_hat
    new, u = cir_step(st, m, nz, y0, y_pred)
    np.testing.assert_allclose(u, 0.0, atol=1e-14)
    np.testing.assert_allclose(new.y_pred, y_pred, atol=1e-14)
    assert new.k == 1 and new.u_prev is u


@pytest.mark.parametrize("kind", list(REFS))
def test_noise_free_exact_tracking_spring_damper(kind):
    m = spring_damper_model()
    tr = run_closed_loop(m, None, CIRController(), ReferenceSignal(REFS[kind]), 300)
    assert np.abs(tr.error[20:]).max() <= 1e-6


def test_noise_free_exact_tracking_rc():
    m = rc_circuit_model()
    tr = run_closed_loop(m, None, CIRController(Q=1e-5, R=1e-4), ReferenceSignal(REFS["step"]), 150,
                         x0=[0.5, -0.2])
    assert np.abs(tr.error[20:]).max() <= 1e-6


def test_design_covariances_must_be_positive():
    m = spring_damper_model()
    with pytest.raises(CirError) as info:
        run_closed_loop(m, None, CIRController(Q=0.0, R=0.0), ReferenceSignal(REFS["step"]), 20)
    assert isinstance(info.value, NumericalFailureError)
    assert info.value.step is not None


def test_matches_batch_left_inverse():
    rng = np.random.default_rng(7)
    for _ in range(5):
        m = random_square_system(rng, n_max=5, min_phase=True)
        r = 8
        x0 = rng.standard_normal(m.n)
        Yref = rng.standard_normal((r + 2, m.l))
        tr = run_closed_loop(m, None, CIRController(x0=x0), Yref, r, x0=x0)
        bm = batch_matrices(m, r)
        U = matcore.pinv(bm.M_r) @ (Yref[1 : r + 1].reshape(-1) - bm.Gamma_r @ x0)
        np.testing.assert_allclose(tr.u[:r].reshape(-1), U, atol=1e-6)


def test_causality_controller_sees_only_current_measurement():
    calls = []

    class Spy(CIRController):
        def step(self, y_meas, y_ref_next):
            calls.append((np.array(y_meas), np.array(y_ref_next)))
            return super().step(y_meas, y_ref_next)

    m = spring_damper_model()
    ref = ReferenceSignal(REFS["sine"])
    tr = run_closed_loop(m, NoiseSpec.for_model(m, 1e-4, 1e-4), Spy(), ref, 25, seed=3)
    assert len(calls) == 25
    yref = ref.values(25)
    for k, (y, r) in enumerate(calls):
        np.testing.assert_array_equal(y, tr.y[k])
        np.testing.assert_array_equal(r, yref[k + 1])


def test_unbiased_tracking_monte_carlo():
    m = spring_damper_model()
    nz = NoiseSpec.for_model(m, 1e-4, 1e-4)
    sc = Scenario(m, CIRController(), ReferenceSignal(REFS["sawtooth"]), 150, nz)
    s = monte_carlo(sc, 100, base_seed=50)
    assert unbiasedness_check(s, start=20).all()
    assert s.std_error[20:].min() > 0


def test_non_minimum_phase_warning():
    from cirtrack.exceptions import NonMinimumPhaseWarning
    from cirtrack.model import StateSpaceModel

    m = StateSpaceModel([[0.5, 0.0], [0.0, 0.2]], [[1.0], [1.0]], [[1.0, -1.2]])  # zero at z = 2
    rep = check_feasibility(m)
    np.testing.assert_allclose(rep.zeros, [2.0])
    assert rep.min_phase is False
    with pytest.warns(NonMinimumPhaseWarning):
        tr = run_closed_loop(m, None, CIRController(), ReferenceSignal([ChannelComponent("step")]), 10)
    assert tr.metadata["min_phase"] is False


def test_estimator_protocol():
    c = CIRController(Q=1e-3)
    c2 = clone(c)
    assert c2.get_params() == c.get_params()
    m = spring_damper_model()
    c.fit(m)
    u1 = c.step([0.1, 0.0], [1.0, 1.0])
    c.reset()
    np.testing.assert_array_equal(c.step([0.1, 0.0], [1.0, 1.0]), u1)
