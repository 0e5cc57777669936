import json
import math

import numpy as np
import pytest

from pv_ident.csvio import read_csv, write_csv
from pv_ident.errors import ConfigError
from pv_ident.harness import (
    CONVERGED,
    ESTIMATES_HEADER,
    NOT_CONVERGED,
    calibrate_gain_multiplier,
    convergence_time,
    decay_time,
    error_norm,
    export_csv,
    modes_config,
    run_scenario_modes,
    run_scenario_stc,
    stc_config,
    write_outputs,
)

# Hand arithmetic on the table (display units), independent of pv_ident.model.
ROWS = {  # Rp, Iirr, I0 [A]; C = 0.6 uF and Rs = 0.2747 everywhere
    "Mode1": (150.28, 3.75, 17.68e-9),
    "Mode2": (152.02, 3.70, 18.24e-9),
    "Mode3": (157.23, 3.58, 18.97e-9),
}


def heads(label):
    Rp, Iirr, I0 = ROWS[label]
    C, Rs = 0.6e-6, 0.2747
    eta1 = 1 / (Rp * C)
    eta4 = 1 / C
    return np.array([Rs, eta1, eta4 + eta1 * Rs, (Iirr + I0) / C])


def jump(a, b):
    return float(np.linalg.norm(heads(a) - heads(b)))


def test_error_norm():
    assert error_norm([1, 2, 3, 4], [1, 2, 3, 4]) == 0.0
    assert error_norm([3, 4, 0, 0], [0, 0, 0, 0]) == 5.0


def test_derived_jump_values():
    assert jump("Mode3", "Mode1") == pytest.approx(283333.33, rel=1e-4)
    assert jump("Mode1", "Mode2") == pytest.approx(83333.33, rel=1e-4)


def test_convergence_time_metric():
    t = np.arange(10.0)
    truth = np.ones(5)
    K = np.ones((10, 5))
    K[:4, 2] = 1.5
    K[6, 0] = 1.03  # excursion: convergence only after it
    assert convergence_time(t, K, truth, 0.02) == 7.0
    K[-1, 1] = 2.0
    assert convergence_time(t, K, truth, 0.02) is None


def test_decay_time_metric():
    t = np.arange(0, 10.0)
    err = 100.0 * np.exp(-t)
    jump_, peak, tau = decay_time(t, err, 0.05)
    assert jump_ == 100.0 and peak == 100.0
    assert tau == pytest.approx(3.0)


def test_config_validation():
    with pytest.raises(ConfigError):
        stc_config(scenario="other")
    with pytest.raises(ConfigError):
        stc_config(gammas=(1, 2, 3))
    with pytest.raises(ConfigError):
        stc_config(lam=0)
    with pytest.raises(ConfigError):
        stc_config(schedule=[(0, "Mode7")])
    with pytest.raises(ConfigError):
        stc_config(schedule=[(0.01, "STC")])
    with pytest.raises(ConfigError):
        stc_config(theta_init="random")


def test_stc_default_run(stc_run):
    rep = stc_run.report
    assert rep.status == CONVERGED
    assert 12e-3 <= rep.convergence_time <= 18e-3
    assert all(v <= 0.02 for v in rep.windows[0].final_rel_error.values())
    assert rep.excitation_verdict == "EXCITED"


def test_zero_gain_never_moves():
    res = run_scenario_stc(stc_config(gain_multiplier=0.0, duration=2e-3))
    assert res.report.status == NOT_CONVERGED
    assert not res.mon[:, 3:7].any()


def test_degenerate_horizon():
    res = run_scenario_stc(stc_config(duration=83e-6))
    assert res.report.status == NOT_CONVERGED
    assert res.report.convergence_time is None


def test_modes_default_run(modes_run):
    rep = modes_run.report
    assert rep.status == CONVERGED
    switches = rep.windows[1:]
    assert [w.mode for w in switches] == ["Mode1", "Mode2", "Mode3"]
    for w, (a, b) in zip(switches, [("Mode3", "Mode1"), ("Mode1", "Mode2"), ("Mode2", "Mode3")]):
        assert w.jump == pytest.approx(jump(a, b), rel=0.01)
        assert w.decay_time is not None and w.decay_time <= 18e-3


def test_single_mode_schedule_stays_at_truth():
    res = run_scenario_modes(modes_config(schedule=[(0.0, "Mode3")], duration=0.01))
    err = np.linalg.norm(res.theta_error(), axis=1)
    assert err.max() <= 1e-6 * np.linalg.norm(heads("Mode3"))


def test_reversed_schedule_baseline():
    res = run_scenario_modes(
        modes_config(schedule=[(0.0, "Mode3"), (0.02, "Mode2"), (0.04, "Mode1"), (0.06, "Mode3")])
    )
    switches = res.report.windows[1:]
    for w, (a, b) in zip(switches, [("Mode3", "Mode2"), ("Mode2", "Mode1"), ("Mode1", "Mode3")]):
        assert w.jump == pytest.approx(jump(a, b), rel=0.01)
        assert w.decay_time is not None and w.decay_time <= 18e-3
    # regression baseline recorded on first run
    baseline = [0.427e-3, 2.483e-3, 0.678e-3]
    assert [w.decay_time for w in switches] == pytest.approx(baseline, rel=0.01)


def test_calibration_rejects_bad_target():
    with pytest.raises(ValueError):
        calibrate_gain_multiplier(0.0)


def test_calibration_targets():
    m15 = calibrate_gain_multiplier(15.0)
    t15 = run_scenario_stc(stc_config(gain_multiplier=m15)).report.convergence_time
    assert 12e-3 <= t15 <= 18e-3
    m30 = calibrate_gain_multiplier(30.0)
    t30 = run_scenario_stc(stc_config(gain_multiplier=m30, duration=0.06)).report.convergence_time
    assert 24e-3 <= t30 <= 36e-3
    assert 0.3 <= m30 / m15 <= 0.8


def test_csv_basics(tmp_path):
    p = export_csv([], tmp_path / "e.csv", ["a", "b"])
    assert p.read_text(encoding="utf-8") == "a,b\n"
    p = export_csv([[0.1, 1], [0.2, 2], [1 / 3, 3]], tmp_path / "f.csv", ["a", "b"])
    lines = p.read_bytes().split(b"\n")
    assert len(lines) == 5 and lines[-1] == b""  # 4 lines, newline-terminated
    assert b"\r" not in p.read_bytes()
    assert float(lines[3].split(b",")[0]) == 1 / 3
    with pytest.raises(OSError, match="cannot write"):
        write_csv(tmp_path / "missing" / "x.csv", ["a"], [])
    with pytest.raises(ValueError):
        write_csv(tmp_path / "d.csv", ["a"], [], decimation=0)


def test_outputs_consistent_with_report(stc_run, tmp_path):
    paths = write_outputs(stc_run, tmp_path, dump_regressor=False, dump_drem=True)
    header, rows = read_csv(paths["estimates"])
    assert header == ESTIMATES_HEADER
    final = [float(v) for v in rows[-1][1:6]]
    rep = json.loads(paths["report"].read_text(encoding="utf-8"))
    assert final == [rep["windows"][0]["final_K_hat"][n] for n in ("C", "Rp", "Rs", "I0", "Iirr")]
    # recompute the convergence time offline from the CSV
    t = np.array([float(r[0]) for r in rows])
    K = np.array([[float(v) for v in r[1:6]] for r in rows])
    truth = np.array([0.6e-6, 112.55, 0.2747, 10.57e-9, 5.0])
    assert convergence_time(t, K, truth, 0.02) == rep["windows"][0]["convergence_time"]
    dh, drows = read_csv(paths["drem"])
    assert dh[:3] == ["t", "Delta", "excitation_integral"]
    assert len(drows) == len(rows)
    eh, erows = read_csv(paths["theta_error"])
    assert eh[0:2] == ["t", "err_norm"] and len(erows) == len(rows)


def test_decimated_outputs(stc_run, tmp_path):
    paths = write_outputs(stc_run, tmp_path, decimation=100)
    _, rows = read_csv(paths["estimates"])
    assert len(rows) == math.ceil(len(stc_run.t) / 100)
