"""From estimated theta heads to eta-hat and clamped physical parameters.

eta2 is not a component of theta. It is recovered from the state equation
filtered by lam/(p+lam), using the current estimates of the other four
parameters under the filters (certainty equivalence):

    eta2 = LP[exp(b x_hat)]^-1 * ( LP[eta3 - eta4 u - eta1 x_hat] - W[x_hat] )

with x_hat = y + eta5_hat u, LP = lam/(p+lam) and W = lam p/(p+lam).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import DenominatorUnderflow
from .model import PhysicalParams
from .regressor import hold_advance, hold_coefficients

DENOMINATOR_FLOOR = 1e-30
CLAMP_LOW, CLAMP_HIGH = 0.1, 10.0
PARAM_NAMES = ("C", "Rp", "Rs", "I0", "Iirr")


@njit(cache=True)
def w_update(st, prev, primed, eta1, eta3, eta4, eta5, u, y, b, lam, E, c0, c1, c2):
    """Advance the three eta2 filters; returns (numerator, denominator)."""
    x_hat = y + eta5 * u
    den = hold_advance(st, prev, 0, math.exp(b * x_hat), primed, E, c0, c1, c2)
    lp = hold_advance(st, prev, 1, eta3 - eta4 * u - eta1 * x_hat, primed, E, c0, c1, c2)
    washout = lam * (x_hat - hold_advance(st, prev, 2, x_hat, primed, E, c0, c1, c2))
    return lp - washout, den


@njit(cache=True)
def w_warm_start(st, prev, eta1, eta3, eta4, eta5, u, y, b):
    """Put every filter at the equilibrium of a constant input."""
    x_hat = y + eta5 * u
    v = (math.exp(b * x_hat), eta3 - eta4 * u - eta1 * x_hat, x_hat)
    for i in range(3):
        st[i] = v[i]
        prev[i, 0] = v[i]
        prev[i, 1] = v[i]


@dataclass
class WFilterState:
    lam: float
    b: float
    st: np.ndarray = field(default_factory=lambda: np.zeros(3))
    prev: np.ndarray = field(default_factory=lambda: np.zeros((3, 2)))
    primed: bool = False

    def warm_start(self, heads, u, y) -> None:
        eta1, eta3, eta4, eta5 = heads
        w_warm_start(self.st, self.prev, eta1, eta3, eta4, eta5, u, y, self.b)
        self.primed = True


def eta2_step(w: WFilterState, heads, u, y, dt) -> float:
    """One sample of eta2-hat. ``heads`` is (eta1, eta3, eta4, eta5)-hat."""
    eta1, eta3, eta4, eta5 = (float(h) for h in heads)
    coef = hold_coefficients(w.lam, dt)
    num, den = w_update(w.st, w.prev, w.primed, eta1, eta3, eta4, eta5, float(u), float(y), w.b, w.lam, *coef)
    w.primed = True
    if not den >= DENOMINATOR_FLOOR:
        raise DenominatorUnderflow(f"denominator {den:g} below {DENOMINATOR_FLOOR:g}; filters not warmed up")
    return float(num / den)


@njit(cache=True)
def physical_kernel(heads, eta2, nominal, out, raw, flags):
    """Fill clamped K-hat into ``out``, unclamped into ``raw``, flags into ``flags``.

    A non-positive (or non-finite) divisor sends the affected entry to the
    upper clamp.
    """
    t1 = heads[0]
    t2 = heads[1]
    t3 = heads[2]
    t4 = heads[3]
    eta1 = t2
    eta3 = t4
    eta4 = t3 - t1 * t2
    eta5 = t1
    inf = np.inf
    pos4 = eta4 > 0.0
    raw[0] = 1.0 / eta4 if pos4 else inf
    raw[1] = eta4 / eta1 if eta1 > 0.0 else inf
    raw[2] = eta5
    raw[3] = eta2 / eta4 if pos4 else inf
    raw[4] = (eta3 - eta2) / eta4 if pos4 else inf
    n_flag = 0
    for i in range(5):
        lo = CLAMP_LOW * nominal[i]
        hi = CLAMP_HIGH * nominal[i]
        v = raw[i]
        if not (v == v) or v > hi:
            v = hi
            flags[i] = True
        elif v < lo:
            v = lo
            flags[i] = True
        else:
            flags[i] = False
        if flags[i]:
            n_flag += 1
        out[i] = v
    return n_flag


@dataclass(frozen=True)
class PhysicalEstimate:
    K_hat: np.ndarray
    clamped_flags: tuple
    unclamped: np.ndarray

    @property
    def params(self) -> PhysicalParams:
        return PhysicalParams.from_array(self.K_hat)


def eta_hat(theta_hat, eta2_hat) -> np.ndarray:
    t1, t2, t3, t4 = (float(v) for v in theta_hat)
    return np.array([t2, eta2_hat, t4, t3 - t1 * t2, t1])


def physical_estimate(theta_hat, eta2_hat, nominal: PhysicalParams) -> PhysicalEstimate:
    """K-hat via the eta heads and eta2-hat, clamped to [0.1, 10] x nominal.

    Clamping touches only this report; theta-hat itself is never modified.
    """
    out = np.empty(5)
    raw = np.empty(5)
    flags = np.zeros(5, dtype=np.bool_)
    physical_kernel(np.asarray(theta_hat, dtype=float), float(eta2_hat), nominal.as_array(), out, raw, flags)
    return PhysicalEstimate(out, tuple(bool(f) for f in flags), raw)


def flags_to_str(flags) -> str:
    return "".join("1" if f else "0" for f in flags)
