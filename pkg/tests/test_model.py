import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pv_ident.errors import DegenerateEta, ExpOverflow, NegativeIrradianceCurrent
from pv_ident.model import (
    IDEALITY_FACTOR,
    MODES,
    EtaParams,
    OperatingMode,
    PhysicalParams,
    compute_b,
    eta_from_physical,
    eta_heads_from_theta,
    get_mode,
    physical_from_eta,
    plant_output,
    plant_rhs,
    theta_from_eta,
)
from pv_ident.simulator import steady_state_voltage


def rel(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.abs(b)))


# Table values written out by hand (display units) as an independent oracle.
TABLE = {
    "STC": (0.6e-6, 112.55, 0.2747, 10.57e-9, 5.00),
    "Mode1": (0.6e-6, 150.28, 0.2747, 17.68e-9, 3.75),
    "Mode2": (0.6e-6, 152.02, 0.2747, 18.24e-9, 3.70),
    "Mode3": (0.6e-6, 157.23, 0.2747, 18.97e-9, 3.58),
}


def test_catalog_is_in_si_units():
    for label, row in TABLE.items():
        assert np.allclose(MODES[label].truth.as_array(), row, rtol=1e-15, atol=0)
    assert MODES["STC"].b == 0.958
    assert [m.mean_current for m in MODES.values()] == [4.54, 3.40, 3.36, 3.25]


@pytest.mark.parametrize("label", ["mode1", "MODE1", "Mode 1", "mode_1"])
def test_get_mode_spellings(label):
    assert get_mode(label) is MODES["Mode1"]


def test_get_mode_unknown():
    with pytest.raises(KeyError):
        get_mode("Mode9")


def test_eta_unit_values():
    eta = eta_from_physical(PhysicalParams(1.0, 1.0, 1.0, 1.0, 1.0))
    assert eta.as_array().tolist() == [1.0, 1.0, 2.0, 1.0, 1.0]


def test_eta_stc():
    eta = MODES["STC"].eta
    expected = (1.4808e4, 1.7617e-2, 8.3333e6, 1.6667e6, 0.2747)
    assert rel(eta.as_array(), expected) < 5e-5


def test_eta_mode1_eta1():
    assert rel(MODES["Mode1"].eta.eta1, 1.0 / (150.28 * 0.6e-6)) < 1e-15
    assert abs(MODES["Mode1"].eta.eta1 - 1.1090e4) / 1.1090e4 < 5e-5


def test_eta6_eta7_by_construction():
    eta = eta_from_physical(MODES["STC"].truth, b=0.958)
    assert eta.eta6 == 0.958 * eta.eta5
    assert eta.eta7 == eta.eta4 + eta.eta1 * eta.eta5
    with pytest.raises(ValueError):
        _ = eta_from_physical(MODES["STC"].truth).eta6


def test_eta_from_invalid_physical():
    with pytest.raises(ValueError):
        eta_from_physical(PhysicalParams(1.0, 1.0, 1.0, 1.0, 0.0))


def test_physical_from_eta_boundary_zero_iirr():
    K = physical_from_eta(EtaParams(1, 1, 1, 1, 1))
    assert K.as_array().tolist() == [1.0, 1.0, 1.0, 1.0, 0.0]
    assert not K.is_valid()


def test_physical_from_eta_stc_roundtrip():
    K = physical_from_eta(MODES["STC"].eta)
    assert rel(K.as_array(), TABLE["STC"]) < 1e-13


def test_physical_from_eta_near_degenerate():
    K = physical_from_eta(EtaParams(1.0, 1.0, 1.0 + 1e-12, 1.6667e6, 1.0))
    assert 0 < K.irradiance_current < 1e-18


def test_physical_from_eta_errors():
    with pytest.raises(DegenerateEta):
        physical_from_eta(EtaParams(1.0, 1.0, 2.0, 0.0, 1.0))
    with pytest.raises(DegenerateEta):
        physical_from_eta(EtaParams(1e-31, 1.0, 2.0, 1.0, 1.0))
    with pytest.raises(NegativeIrradianceCurrent):
        physical_from_eta(EtaParams(1.0, 2.0, 1.0, 1.0, 1.0))


def test_theta_zero_rs():
    eta = EtaParams(3.0, 1.0, 5.0, 7.0, 0.0)
    assert theta_from_eta(eta).theta.tolist() == [0.0, 3.0, 7.0, 5.0, 0.0, 0.0, 0.0, 0.0]


def test_theta_stc():
    th = MODES["STC"].theta.heads
    assert rel(th, (0.2747, 1.4808e4, 1.6707e6, 8.3333e6)) < 5e-5


def test_heads_trivial():
    assert eta_heads_from_theta((0, 1, 1, 1)) == (1.0, 1.0, 1.0, 0.0)


def test_heads_stc_inverse():
    eta = MODES["STC"].eta
    eta1, eta3, eta4, eta5 = eta_heads_from_theta(MODES["STC"].theta.heads)
    assert rel([eta1, eta3, eta4, eta5], [eta.eta1, eta.eta3, eta.eta4, eta.eta5]) < 1e-14
    assert abs(eta4 - 1.6667e6) / 1.6667e6 < 5e-5


valid_K = st.tuples(
    st.floats(1e-9, 1e-3),
    st.floats(1.0, 1e4),
    st.floats(1e-3, 10.0),
    st.floats(1e-12, 1e-6),
    st.floats(0.1, 20.0),
).map(lambda v: PhysicalParams(*v))


@given(valid_K)
@settings(max_examples=300, deadline=None)
def test_bijection_property(K):
    assert rel(physical_from_eta(eta_from_physical(K)).as_array(), K.as_array()) <= 1e-12
    eta = eta_from_physical(K)
    assert rel(eta_from_physical(physical_from_eta(eta)).as_array(), eta.as_array()) <= 1e-12


@given(valid_K)
@settings(max_examples=300, deadline=None)
def test_theta_block_structure(K):
    eta = eta_from_physical(K)
    th = theta_from_eta(eta).theta
    assert np.all(th > 0)
    assert np.allclose(th[4:], th[0] * th[:4], rtol=1e-15, atol=0)
    assert th[5] / th[1] == pytest.approx(th[0], rel=1e-15)
    heads = eta_heads_from_theta(th[:4])
    assert rel(heads, [eta.eta1, eta.eta3, eta.eta4, eta.eta5]) <= 1e-12


def test_compute_b():
    b1 = compute_b(IDEALITY_FACTOR, 298.15)
    assert b1 == pytest.approx(34.48, abs=5e-3)
    assert compute_b(IDEALITY_FACTOR, 298.15, 36) == pytest.approx(0.9578, abs=5e-5)
    assert compute_b(1.2, 600.0) == pytest.approx(compute_b(1.2, 300.0) / 2, rel=1e-15)
    with pytest.raises(ValueError):
        compute_b(0.0, 300.0)
    with pytest.raises(ValueError):
        compute_b(1.0, 300.0, 0)


def test_plant_rhs_examples(stc):
    eta = stc.eta
    assert plant_rhs(0.0, 0.0, eta, stc.b) == eta.eta3 - eta.eta2
    assert plant_rhs(0.0, 1.0, EtaParams(1, 1, 2, 1, 1), 1.0) == 0.0
    x_star = steady_state_voltage(eta, stc.b, stc.mean_current)
    assert abs(plant_rhs(x_star, stc.mean_current, eta, stc.b)) <= 1e-9 * eta.eta3
    with pytest.raises(ExpOverflow):
        plant_rhs(1000.0, 0.0, eta, 1.0)


def test_plant_rhs_strictly_decreasing(stc):
    xs = np.linspace(-5, 25, 301)
    f = [plant_rhs(x, 4.54, stc.eta, stc.b) for x in xs]
    assert np.all(np.diff(f) < 0)


def test_plant_output():
    assert plant_output(19.0, 0.0, 0.2747) == 19.0
    assert plant_output(19.0, 4.54, 0.2747) == pytest.approx(17.753, abs=5e-4)
    y = plant_output(19.0, 4.54, 0.2747)
    assert y + 0.2747 * 4.54 == pytest.approx(19.0, rel=1e-15)


def test_operating_mode_validation():
    with pytest.raises(ValueError):
        OperatingMode("x", 1000, 300, 0.0, MODES["STC"].truth, 1.0)
