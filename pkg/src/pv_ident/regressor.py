"""Filtered linear regression z = Omega^T theta built from (u, u_dot, u_ddot, y).

Every continuous filter is a cascade of one primitive, the first-order
low-pass lam/(p+lam). Its discrete update is exact for an input that follows
the quadratic through the last three samples (a second-order hold), which
keeps the discretization error of the regression identity at O(dt^3). The
pure lag 1/(p+lam) is the low-pass state divided by lam; the wash-out
lam*p/(p+lam) is lam*(input - low-pass state).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .errors import StepTooLarge

LOWPASS, LAG, WASHOUT = "lowpass", "lag", "washout"
MAX_POLE_STEP = 0.1  # pole * dt bound

# bank layout
_PSI_LP1, _PSI_LP2 = 0, 1
_PHI0 = 2  # 2 + 2j, 3 + 2j for j in 0..3
_SWAP_LAG, _SWAP_OUT = 10, 11
_PHIU0 = 12  # 12 + 2j, 13 + 2j
N_BANK = 20


def _phi_functions(z: float, kmax: int) -> list[float]:
    """phi_k(z) = sum_j z^j / (j+k)!  for k = 0..kmax, by series (|z| <= 0.1)."""
    out = []
    for k in range(kmax + 1):
        term = 1.0 / math.factorial(k)
        total = term
        j = 0
        while abs(term) > 1e-18 * abs(total):
            j += 1
            term *= z / (j + k)
            total += term
        out.append(total)
    return out


def hold_coefficients(pole: float, dt: float) -> tuple[float, float, float, float]:
    """Coefficients (E, c0, c1, c2) of the second-order-hold low-pass update

        x+ = E x + c0 v1 + c1 (v2 - v0) + c2 (v2 - 2 v1 + v0)

    with v0, v1, v2 the inputs one step before the interval, at its start and
    at its end. With a = pole * dt: c0 = a phi_1(-a), c1 = a phi_2(-a) / 2 and
    c2 = a phi_3(-a).
    """
    if not pole > 0 or not dt > 0:
        raise ValueError("pole and dt must be positive")
    a = pole * dt
    if a > MAX_POLE_STEP:
        raise StepTooLarge(f"pole*dt = {a:g} exceeds {MAX_POLE_STEP}")
    _, p1, p2, p3 = _phi_functions(-a, 3)
    # int_0^1 a e^{-a(1-s)} s^n ds = a n! phi_{n+1}(-a)
    j0 = a * p1
    j1 = a * p2
    j2 = 2.0 * a * p3
    return math.exp(-a), j0, 0.5 * j1, 0.5 * j2


@njit(cache=True)
def hold_advance(st, prev, i, v, primed, E, c0, c1, c2):
    """Advance low-pass state ``st[i]`` to input ``v``; ``prev[i]`` holds the
    two previous inputs. Unprimed calls only latch ``v``."""
    if primed:
        v1 = prev[i, 0]
        v0 = prev[i, 1]
        st[i] = E * st[i] + c0 * v1 + c1 * (v - v0) + c2 * (v - 2.0 * v1 + v0)
        prev[i, 1] = v1
    else:
        prev[i, 1] = v
    prev[i, 0] = v
    return st[i]


@dataclass
class FirstOrderFilter:
    """Scalar filter with pole ``pole``; ``kind`` picks the output map.

    The first call only latches the input (state stays at its initial value);
    every later call advances the state across one interval of length ``dt``.
    """

    pole: float
    kind: str = LOWPASS
    state: float = 0.0
    prev: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.pole > 0:
            raise ValueError("pole must be positive")
        if self.kind not in (LOWPASS, LAG, WASHOUT):
            raise ValueError(f"unknown filter kind {self.kind!r}")

    def output(self, v: float) -> float:
        if self.kind == LOWPASS:
            return self.state
        if self.kind == LAG:
            return self.state / self.pole
        return self.pole * (v - self.state)

    def step(self, v: float, dt: float) -> float:
        E, c0, c1, c2 = hold_coefficients(self.pole, dt)
        primed = self.prev is not None
        if not primed:
            self.prev = np.zeros((1, 2))
        st = np.array([self.state])
        hold_advance(st, self.prev, 0, float(v), primed, E, c0, c1, c2)
        self.state = float(st[0])
        return self.output(v)


def filter_step(f: FirstOrderFilter, v: float, dt: float) -> float:
    return f.step(v, dt)


@njit(cache=True)
def _lowpass_run(v, E, c0, c1, c2, out):
    st = np.zeros(1)
    prev = np.zeros((1, 2))
    for k in range(v.shape[0]):
        out[k] = hold_advance(st, prev, 0, v[k], k > 0, E, c0, c1, c2)


def lowpass_array(v, pole, dt):
    """Low-pass an evenly sampled array from zero state."""
    v = np.ascontiguousarray(v, dtype=float)
    out = np.empty_like(v)
    _lowpass_run(v, *hold_coefficients(pole, dt), out)
    return out


def psi_of(y, b):
    return -np.exp(-b * y) / b


def phi_of(u, u_dot, y, b) -> np.ndarray:
    e = math.exp(-b * y)
    return np.array([-u_dot * e, -y * e, -u * e, e])


@dataclass
class SwapState:
    """Filters realizing lam^2/(p+lam)^2 (u_dot * psi_dot) without psi_dot."""

    lam: float
    washout: FirstOrderFilter = field(init=False)
    lag: FirstOrderFilter = field(init=False)
    outer: FirstOrderFilter = field(init=False)

    def __post_init__(self):
        self.washout = FirstOrderFilter(self.lam, WASHOUT)
        self.lag = FirstOrderFilter(self.lam, LAG)
        self.outer = FirstOrderFilter(self.lam, LOWPASS)


def swapped_udotpsidot(state: SwapState, u_dot, u_ddot, psi, lam, dt) -> float:
    """One sample of lam/(p+lam) [u_dot W psi - 1/(p+lam)(u_ddot W psi)], W = lam p/(p+lam)."""
    if lam != state.lam:
        raise ValueError("lam does not match the swap-branch filters")
    w = state.washout.step(psi, dt)
    inner = u_dot * w - state.lag.step(u_ddot * w, dt)
    return state.outer.step(inner, dt)


@njit(cache=True)
def regressor_update(st, prev, primed, u, ud, udd, y, b, lam, E, c0, c1, c2, omega):
    """Advance the 20-state bank by one sample; write Omega into ``omega``.

    Returns (psi, z). When ``primed`` is False the inputs are only latched.
    """
    e = math.exp(-b * y)
    psi = -e / b

    # z = (lam p/(p+lam))^2 psi
    s1 = lam * (psi - hold_advance(st, prev, _PSI_LP1, psi, primed, E, c0, c1, c2))
    z = lam * (s1 - hold_advance(st, prev, _PSI_LP2, s1, primed, E, c0, c1, c2))

    for j in range(4):
        if j == 0:
            p = -ud * e
        elif j == 1:
            p = -y * e
        elif j == 2:
            p = -u * e
        else:
            p = e
        # upper block: lam^2 p/(p+lam)^2 phi = washout(lowpass(phi))
        i = _PHI0 + 2 * j
        l1 = hold_advance(st, prev, i, p, primed, E, c0, c1, c2)
        omega[j] = lam * (l1 - hold_advance(st, prev, i + 1, l1, primed, E, c0, c1, c2))
        # lower block: -b lam^2/(p+lam)^2 (phi u_dot)
        i = _PHIU0 + 2 * j
        l1 = hold_advance(st, prev, i, p * ud, primed, E, c0, c1, c2)
        omega[4 + j] = -b * hold_advance(st, prev, i + 1, l1, primed, E, c0, c1, c2)

    # swapped realization of lam^2/(p+lam)^2 (u_dot psi_dot); s1 is the washed-out psi
    inner = ud * s1 - hold_advance(st, prev, _SWAP_LAG, udd * s1, primed, E, c0, c1, c2) / lam
    omega[0] += b * hold_advance(st, prev, _SWAP_OUT, inner, primed, E, c0, c1, c2)
    return psi, z


@dataclass
class RegressorSample:
    t: float
    psi: float
    phi: np.ndarray
    z: float
    omega: np.ndarray


@dataclass
class RegressorState:
    lam: float
    b: float
    dt: float
    st: np.ndarray = field(default_factory=lambda: np.zeros(N_BANK))
    prev: np.ndarray = field(default_factory=lambda: np.zeros((N_BANK, 2)))
    primed: bool = False

    def __post_init__(self):
        self.coefficients = hold_coefficients(self.lam, self.dt)


def regressor_step(state: RegressorState, t, u, u_dot, u_ddot, y) -> RegressorSample:
    """Consume one measurable sample. Ground-truth x is never an input."""
    omega = np.empty(8)
    psi, z = regressor_update(
        state.st, state.prev, state.primed, u, u_dot, u_ddot, y, state.b, state.lam, *state.coefficients, omega
    )
    state.primed = True
    return RegressorSample(t, float(psi), phi_of(u, u_dot, y, state.b), float(z), omega)


@njit(cache=True)
def _regressor_run(u, ud, udd, y, b, lam, E, c0, c1, c2, psi_out, z_out, om_out):
    st = np.zeros(N_BANK)
    prev = np.zeros((N_BANK, 2))
    for k in range(u.shape[0]):
        psi, z = regressor_update(st, prev, k > 0, u[k], ud[k], udd[k], y[k], b[k], lam, E, c0, c1, c2, om_out[k])
        psi_out[k] = psi
        z_out[k] = z


def compute_regressor(u, u_dot, u_ddot, y, b, lam, dt):
    """Run the bank over whole arrays. ``b`` may be a scalar or per-sample array.

    Returns (psi, z, omega) with omega of shape (N, 8).
    """
    u = np.ascontiguousarray(u, dtype=float)
    n = u.shape[0]
    b_arr = np.broadcast_to(np.asarray(b, dtype=float), (n,)).copy()
    coef = hold_coefficients(lam, dt)
    psi = np.empty(n)
    z = np.empty(n)
    om = np.empty((n, 8))
    _regressor_run(
        u,
        np.ascontiguousarray(u_dot, dtype=float),
        np.ascontiguousarray(u_ddot, dtype=float),
        np.ascontiguousarray(y, dtype=float),
        b_arr,
        lam,
        *coef,
        psi,
        z,
        om,
    )
    return psi, z, om


FIXED, NORMALIZED = "fixed", "normalized"


@njit(cache=True)
def scale_factor(omega, scale, normalized):
    if normalized:
        s = 0.0
        for i in range(omega.shape[0]):
            s += omega[i] * omega[i]
        return scale / (1.0 + s)
    return scale


def scale_regression(z, omega, scale: float = 1.0, mode: str = FIXED):
    """Multiply z and Omega by a common positive factor; the LRE is unchanged.

    ``fixed`` uses ``scale`` itself, ``normalized`` uses scale/(1 + |Omega|^2).
    """
    if mode not in (FIXED, NORMALIZED):
        raise ValueError(f"unknown scaling mode {mode!r}")
    omega = np.asarray(omega, dtype=float)
    k = scale_factor(omega, float(scale), mode == NORMALIZED)
    return z * k, omega * k
