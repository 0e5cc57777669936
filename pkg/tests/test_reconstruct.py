import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pv_ident.errors import DenominatorUnderflow
from pv_ident.model import MODES, PhysicalParams
from pv_ident.reconstruct import (
    CLAMP_HIGH,
    CLAMP_LOW,
    WFilterState,
    eta2_step,
    eta_hat,
    flags_to_str,
    physical_estimate,
)
from pv_ident.regressor import lowpass_array
from pv_ident.simulator import RippleInput, SimConfig, simulate

LAM = 6e5
DT = 1e-7  # the estimator cadence


def heads_of(mode):
    e = mode.eta
    return (e.eta1, e.eta3, e.eta4, e.eta5)


def test_denominator_underflow_before_warmup():
    w = WFilterState(LAM, 0.958)
    with pytest.raises(DenominatorUnderflow):
        eta2_step(w, heads_of(MODES["STC"]), 4.54, 16.7, DT)


def test_eta2_steady_state_fixed_point(stc):
    traj = simulate(SimConfig(duration=2e-4), stc, RippleInput(stc.mean_current, 0.0))
    w = WFilterState(LAM, stc.b)
    w.warm_start(heads_of(stc), traj.u[0], traj.y[0])
    vals = [eta2_step(w, heads_of(stc), traj.u[k], traj.y[k], DT) for k in range(0, len(traj.t), 10)]
    assert vals[-1] == pytest.approx(stc.eta.eta2, rel=1e-9)


def test_eta2_from_cold_filters_converges_at_rate_lambda(stc):
    traj = simulate(SimConfig(duration=1e-4), stc, RippleInput(stc.mean_current, 0.0))
    w = WFilterState(LAM, stc.b)
    w.primed = True
    w.st[:] = 0.0
    w.prev[:] = 0.0
    # half-charged denominator, other filters empty
    w.st[0] = math.exp(stc.b * (traj.y[0] + stc.eta.eta5 * traj.u[0])) * 0.5
    vals = [eta2_step(w, heads_of(stc), traj.u[k], traj.y[k], DT) for k in range(0, len(traj.t), 10)]
    err = np.abs(np.array(vals) / stc.eta.eta2 - 1)
    assert err[-1] < 1e-9
    assert err[200] < err[20] * math.exp(-0.5 * LAM * 180 * DT)


def test_eta2_rippled_stc(stc_trajectory, stc):
    tr = stc_trajectory
    w = WFilterState(LAM, stc.b)
    w.warm_start(heads_of(stc), tr.u[0], tr.y[0])
    errs = []
    for k in range(10, len(tr.t), 10):
        v = eta2_step(w, heads_of(stc), tr.u[k], tr.y[k], DT)
        if tr.t[k] >= 1e-3:
            errs.append(abs(v / stc.eta.eta2 - 1))
    assert max(errs) <= 0.01


def test_eta2_formula_reduction(stc_trajectory):
    tr = stc_trajectory
    b = 0.958
    n = 2000
    w = WFilterState(LAM, b)
    y = tr.y[:n:10]
    u = tr.u[:n:10]
    w.warm_start((0.0, 0.0, 0.0, 0.0), u[0], y[0])
    got = [eta2_step(w, (0.0, 0.0, 0.0, 0.0), u[k], y[k], DT) for k in range(1, len(y))]
    # oracle: same filters applied to whole arrays from the warm start
    den = lowpass_array(np.exp(b * y) - math.exp(b * y[0]), LAM, DT) + math.exp(b * y[0])
    lp_y = lowpass_array(y - y[0], LAM, DT) + y[0]
    expected = -LAM * (y - lp_y) / den
    assert np.allclose(got, expected[1:], rtol=1e-9, atol=1e-12 * np.abs(expected).max())


def test_physical_estimate_at_truth(stc):
    est = physical_estimate(stc.theta.heads, stc.eta.eta2, stc.truth)
    assert np.allclose(est.K_hat, stc.truth.as_array(), rtol=1e-10, atol=0)
    assert est.clamped_flags == (False,) * 5
    assert flags_to_str(est.clamped_flags) == "00000"


def test_non_positive_eta4_goes_to_upper_clamp(stc):
    th = stc.theta.heads.copy()
    th[2] = th[0] * th[1] * 0.5  # eta4 = theta3 - theta1*theta2 < 0
    est = physical_estimate(th, stc.eta.eta2, stc.truth)
    assert est.K_hat[0] == CLAMP_HIGH * stc.truth.capacitance
    assert est.clamped_flags[0]
    assert np.isinf(est.unclamped[0])


def test_eta2_twenty_times(stc):
    est = physical_estimate(stc.theta.heads, 20 * stc.eta.eta2, stc.truth)
    assert est.K_hat[3] == CLAMP_HIGH * stc.truth.saturation_current
    assert est.clamped_flags[3]
    # C, Rp, Rs untouched; Iirr = Iirr - 19 I0 stays well inside its band
    assert est.clamped_flags[:3] == (False, False, False)
    assert est.unclamped[4] == pytest.approx(5.0 - 19 * 10.57e-9, rel=1e-10)
    assert not est.clamped_flags[4]


def test_nan_eta2_is_clamped(stc):
    est = physical_estimate(stc.theta.heads, float("nan"), stc.truth)
    assert est.clamped_flags[3] and est.clamped_flags[4]
    assert np.all(np.isfinite(est.K_hat))


def test_clamping_leaves_theta_alone(stc):
    th = np.zeros(4)
    physical_estimate(th, 0.0, stc.truth)
    assert not th.any()


def test_eta_hat_assembly(stc):
    e = stc.eta
    assert np.allclose(eta_hat(stc.theta.heads, e.eta2), e.as_array(), rtol=1e-13)


@given(st.lists(st.floats(-1e7, 1e7, allow_nan=False), min_size=4, max_size=4), st.floats(-1.0, 1.0))
@settings(max_examples=300, deadline=None)
def test_clamp_transparency(theta, eta2):
    nominal = MODES["STC"].truth
    est = physical_estimate(np.array(theta), eta2, nominal)
    nom = nominal.as_array()
    for i in range(5):
        raw = est.unclamped[i]
        outside = not (CLAMP_LOW * nom[i] <= raw <= CLAMP_HIGH * nom[i])
        assert est.clamped_flags[i] == outside
        assert CLAMP_LOW * nom[i] <= est.K_hat[i] <= CLAMP_HIGH * nom[i]
        if not outside:
            assert est.K_hat[i] == raw


def test_params_property(stc):
    est = physical_estimate(stc.theta.heads, stc.eta.eta2, stc.truth)
    assert isinstance(est.params, PhysicalParams)
