"""Fused plant + estimator loop.

The loop is compiled with numba and stitched together from the per-module
step kernels, so the object-level APIs in ``regressor``, ``drem`` and
``reconstruct`` and this loop share one implementation of every update.
The estimator side reads only (t, u, u_dot, u_ddot, y); the plant state is
used to produce y and is otherwise invisible to it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .drem import extension_update, gradient_update, mix_kernel
from .reconstruct import DENOMINATOR_FLOOR, physical_kernel, w_update, w_warm_start
from .regressor import N_BANK, hold_coefficients, regressor_update, scale_factor
from .simulator import OK, check_step, input_kernel, rk4_step

# monitor columns (one row per estimator update)
MON_T, MON_DELTA, MON_INTEGRAL, MON_THETA, MON_ETA2, MON_SEG = 0, 1, 2, 3, 7, 8
MON_COLS = 9
# estimate record columns
REC_T, REC_K, REC_FLAGS, REC_SEG = 0, 1, 6, 7
REC_COLS = 8
# regressor dump columns: t, psi, z, omega_1..8 (after scaling)
REG_COLS = 11


@dataclass
class LoopState:
    """Everything carried across kernel calls (used for pre-roll continuation)."""

    x: float
    theta_hat: np.ndarray
    integral: float = 0.0
    reg_st: np.ndarray = field(default_factory=lambda: np.zeros(N_BANK))
    reg_prev: np.ndarray = field(default_factory=lambda: np.zeros((N_BANK, 2)))
    reg_primed: bool = False
    Phi_f: np.ndarray = field(default_factory=lambda: np.zeros((8, 8)))
    Y_f: np.ndarray = field(default_factory=lambda: np.zeros(8))
    w_st: np.ndarray = field(default_factory=lambda: np.zeros(3))
    w_prev: np.ndarray = field(default_factory=lambda: np.zeros((3, 2)))
    w_primed: bool = False


@njit(cache=True)
def _loop(
    x,
    k0,
    n_steps,
    h,
    cadence,
    starts,
    etas,
    bs,
    means,
    frac,
    omega_r,
    noms,
    lam,
    reg_coef,
    w_coef,
    scale,
    normalized,
    decay,
    c,
    d,
    gammas,
    theta_hat,
    integral,
    reg_st,
    reg_prev,
    reg_primed,
    Phi_f,
    Y_f,
    w_st,
    w_prev,
    w_primed,
    record_every,
    k_start,
    hold_steps,
    emit_last,
    mon,
    rec,
    reg_dump,
):
    E, c0, c1, c2 = reg_coef
    Ew, c0w, c1w, c2w = w_coef
    dt_d = cadence * h
    n_seg = starts.shape[0]
    seg = 0
    om = np.empty(8)
    om_s = np.empty(8)
    Phi = np.empty((8, 8))
    Y = np.empty(8)
    calY = np.empty(8)
    K = np.empty(5)
    Kraw = np.empty(5)
    flags = np.zeros(5, dtype=np.bool_)
    j_mon = 0
    j_rec = 0
    hold_until = k_start
    for i in range(n_steps + 1):
        k = k0 + i
        while seg + 1 < n_seg and k >= starts[seg + 1]:
            seg += 1
            # a step in a known signal (b or mean current) restarts the filter transient
            if hold_steps > 0 and (bs[seg] != bs[seg - 1] or means[seg] != means[seg - 1]):
                hold_until = max(hold_until, starts[seg] + hold_steps)
        t = k * h
        if i == n_steps and not emit_last:
            break
        b = bs[seg]
        u, ud, udd = input_kernel(t, means[seg], frac, omega_r)
        y = x - etas[seg, 4] * u

        psi, z = regressor_update(reg_st, reg_prev, reg_primed, u, ud, udd, y, b, lam, E, c0, c1, c2, om)
        reg_primed = True

        if i % cadence == 0:
            kappa = scale_factor(om, scale, normalized)
            for q in range(8):
                om_s[q] = kappa * om[q]
            z_s = kappa * z
            delta = 0.0
            # extension and gradient stay idle until the filter start-up transient is gone
            if k >= hold_until:
                extension_update(Phi_f, Y_f, om_s, z_s, decay, c, d, Phi, Y)
                delta = mix_kernel(Phi, Y, calY)
                integral += gradient_update(theta_hat, gammas, delta, calY[:4], dt_d)

            eta1 = theta_hat[1]
            eta3 = theta_hat[3]
            eta4 = theta_hat[2] - theta_hat[0] * theta_hat[1]
            eta5 = theta_hat[0]
            num, den = w_update(w_st, w_prev, w_primed, eta1, eta3, eta4, eta5, u, y, b, lam, Ew, c0w, c1w, c2w)
            w_primed = True
            eta2 = num / den if den >= DENOMINATOR_FLOOR else np.nan

            if j_mon < mon.shape[0]:
                mon[j_mon, MON_T] = t
                mon[j_mon, MON_DELTA] = delta
                mon[j_mon, MON_INTEGRAL] = integral
                for q in range(4):
                    mon[j_mon, MON_THETA + q] = theta_hat[q]
                mon[j_mon, MON_ETA2] = eta2
                mon[j_mon, MON_SEG] = seg
            if (i // cadence) % record_every == 0 and j_rec < rec.shape[0]:
                physical_kernel(theta_hat, eta2, noms[seg], K, Kraw, flags)
                rec[j_rec, REC_T] = t
                bits = 0
                for q in range(5):
                    rec[j_rec, REC_K + q] = K[q]
                    if flags[q]:
                        bits |= 1 << q
                rec[j_rec, REC_FLAGS] = bits
                rec[j_rec, REC_SEG] = seg
                if reg_dump.shape[0] > j_rec:
                    reg_dump[j_rec, 0] = t
                    reg_dump[j_rec, 1] = psi
                    reg_dump[j_rec, 2] = z_s
                    for q in range(8):
                        reg_dump[j_rec, 3 + q] = om_s[q]
                j_rec += 1
            j_mon += 1

        if i == n_steps:
            break
        x_new = rk4_step(x, t, h, etas[seg], b, means[seg], frac, omega_r)
        status = check_step(x, x_new, b)
        if status != OK:
            return x, integral, status, k, j_mon, j_rec, reg_primed, w_primed
        x = x_new
    return x, integral, OK, k0 + n_steps, j_mon, j_rec, reg_primed, w_primed


@dataclass
class LoopSettings:
    step: float
    cadence: int
    lam: float
    scale: float
    normalized: bool
    a: float
    c: float
    d: float
    gammas: np.ndarray
    record_every: int
    ripple_fraction: float
    ripple_omega: float


@dataclass
class LoopOutput:
    mon: np.ndarray
    rec: np.ndarray
    reg: Optional[np.ndarray]
    status: int
    fail_step: int


def run_loop(
    state: LoopState,
    k0: int,
    n_steps: int,
    settings: LoopSettings,
    sched,
    noms: np.ndarray,
    dump_regressor: bool = False,
    gammas: Optional[np.ndarray] = None,
    k_start: int = 0,
    emit_last: bool = True,
    hold_steps: int = 0,
) -> LoopOutput:
    """Run ``n_steps`` plant steps from step ``k0``, mutating ``state`` in place.

    With ``emit_last=False`` the sample at step ``k0 + n_steps`` is left for
    the next call, so consecutive calls see every sample exactly once.
    """
    starts, etas, bs, means = sched
    cad = settings.cadence
    n_mon = n_steps // cad + 1
    n_rec = (n_mon - 1) // settings.record_every + 1
    mon = np.full((n_mon, MON_COLS), np.nan)
    rec = np.full((n_rec, REC_COLS), np.nan)
    reg = np.full((n_rec if dump_regressor else 0, REG_COLS), np.nan)
    gam = settings.gammas if gammas is None else gammas
    dt_d = cad * settings.step
    x, integral, status, k_fail, j_mon, j_rec, rp, wp = _loop(
        state.x,
        k0,
        n_steps,
        settings.step,
        cad,
        starts,
        etas,
        bs,
        means,
        settings.ripple_fraction,
        settings.ripple_omega,
        noms,
        settings.lam,
        hold_coefficients(settings.lam, settings.step),
        hold_coefficients(settings.lam, dt_d),
        settings.scale,
        settings.normalized,
        math.exp(-settings.a * dt_d),
        settings.c,
        settings.d,
        np.asarray(gam, dtype=float),
        state.theta_hat,
        state.integral,
        state.reg_st,
        state.reg_prev,
        state.reg_primed,
        state.Phi_f,
        state.Y_f,
        state.w_st,
        state.w_prev,
        state.w_primed,
        settings.record_every,
        k_start,
        hold_steps,
        emit_last,
        mon,
        rec,
        reg,
    )
    state.x = x
    state.integral = integral
    state.reg_primed = bool(rp)
    state.w_primed = bool(wp)
    return LoopOutput(mon[:j_mon], rec[:j_rec], reg[:j_rec] if dump_regressor else None, status, k_fail)


def warm_start_w(state: LoopState, u: float, y: float, b: float) -> None:
    th = state.theta_hat
    w_warm_start(state.w_st, state.w_prev, th[1], th[3], th[2] - th[0] * th[1], th[0], u, y, b)
    state.w_primed = True
