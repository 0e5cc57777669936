"""Ripple current source and fixed-step RK4 integration of the PV plant."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence, Union

import numpy as np
from numba import njit
from scipy.optimize import brentq

from .csvio import write_csv
from .errors import BracketFailure, ExpOverflow, StepTooLarge
from .model import EXP_LIMIT, EtaParams, OperatingMode, get_mode, plant_rhs, rhs_kernel

log = logging.getLogger(__name__)

STEADY_STATE = "steady"
MAX_STEP_JUMP = 1.0  # V per step, stability tripwire

OK, OVERFLOW, JUMP = 0, 1, 2


@dataclass(frozen=True)
class RippleInput:
    mean: float
    ripple_fraction: float = 0.05
    frequency: float = 20e3

    def __post_init__(self):
        if not self.mean > 0:
            raise ValueError("ripple mean must be positive")
        if not 0 <= self.ripple_fraction < 1:
            raise ValueError("ripple_fraction must lie in [0, 1)")
        if not self.frequency > 0:
            raise ValueError("frequency must be positive")

    @property
    def omega(self) -> float:
        return 2.0 * math.pi * self.frequency


@dataclass
class SimConfig:
    step: float = 1e-8
    duration: float = 30e-3
    initial_state: Union[float, str] = STEADY_STATE
    # (switch_time, mode_label); empty means "use the mode passed to integrate_plant"
    mode_schedule: Sequence[tuple[float, str]] = field(default_factory=list)
    decimation: int = 1

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step must be positive")
        if self.duration < self.step:
            raise ValueError("duration must be at least one step")
        times = [t for t, _ in self.mode_schedule]
        if times:
            if times[0] != 0:
                raise ValueError("mode schedule must start at t = 0")
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ValueError("mode schedule times must be strictly increasing")
        if self.decimation < 1:
            raise ValueError("decimation must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.step))


@dataclass(frozen=True)
class SampleRecord:
    t: float
    u: float
    u_dot: float
    u_ddot: float
    y: float
    x_true: float


@dataclass
class Segment:
    """A stretch of constant plant parameters starting at integer step ``start``."""

    start: int
    mode: OperatingMode
    ripple: RippleInput

    @property
    def eta(self) -> np.ndarray:
        return self.mode.eta.as_array()


@dataclass
class Trajectory:
    t: np.ndarray
    u: np.ndarray
    u_dot: np.ndarray
    u_ddot: np.ndarray
    y: np.ndarray
    x_true: np.ndarray

    def __len__(self):
        return len(self.t)

    def records(self) -> Iterator[SampleRecord]:
        for row in zip(self.t, self.u, self.u_dot, self.u_ddot, self.y, self.x_true):
            yield SampleRecord(*(float(v) for v in row))


@njit(cache=True)
def input_kernel(t, mean, frac, omega):
    s = math.sin(omega * t)
    c = math.cos(omega * t)
    amp = mean * frac
    return mean * (1.0 + frac * s), amp * omega * c, -amp * omega * omega * s


def input_at(t: float, r: RippleInput) -> tuple[float, float, float]:
    """Ripple current and its two exact time derivatives at time ``t``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    u, ud, udd = input_kernel(float(t), r.mean, r.ripple_fraction, r.omega)
    return float(u), float(ud), float(udd)


def steady_state_voltage(eta: EtaParams, b: float, u_const: float) -> float:
    """Equilibrium junction voltage for a constant current ``u_const``."""
    lo, hi = -5.0 / b, 60.0 / b
    f_lo = plant_rhs(lo, u_const, eta, b)
    f_hi = plant_rhs(hi, u_const, eta, b)
    if not (f_lo > 0 > f_hi):
        raise BracketFailure(
            f"no sign change on [{lo:g}, {hi:g}]: rhs = {f_lo:g}, {f_hi:g}"
        )
    x = brentq(lambda v: plant_rhs(v, u_const, eta, b), lo, hi, xtol=1e-15, rtol=1e-15)
    tol = 1e-9 * max(eta.eta3, eta.eta4 * u_const)
    if abs(plant_rhs(x, u_const, eta, b)) > tol:
        raise BracketFailure(f"root at {x!r} misses residual tolerance {tol:g}")
    return float(x)


@njit(cache=True)
def rk4_step(x, t, h, eta, b, mean, frac, omega):
    """One classic RK4 step with the analytic ripple current as forcing."""
    u0 = mean * (1.0 + frac * math.sin(omega * t))
    um = mean * (1.0 + frac * math.sin(omega * (t + 0.5 * h)))
    u1 = mean * (1.0 + frac * math.sin(omega * (t + h)))
    k1 = rhs_kernel(x, u0, eta, b)
    k2 = rhs_kernel(x + 0.5 * h * k1, um, eta, b)
    k3 = rhs_kernel(x + 0.5 * h * k2, um, eta, b)
    k4 = rhs_kernel(x + h * k3, u1, eta, b)
    return x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@njit(cache=True)
def check_step(x_old, x_new, b):
    if not math.isfinite(x_new) or b * x_new > EXP_LIMIT:
        return OVERFLOW
    if abs(x_new - x_old) > MAX_STEP_JUMP:
        return JUMP
    return OK


@njit(cache=True)
def _integrate(x0, k0, n, h, starts, etas, bs, means, frac, omega, dec, out):
    """Advance ``n`` steps from step ``k0``; fill every ``dec``-th sample into ``out``.

    Returns (final x, status, failing step).
    """
    x = x0
    seg = 0
    n_seg = starts.shape[0]
    j = 0
    for i in range(n + 1):
        k = k0 + i
        while seg + 1 < n_seg and k >= starts[seg + 1]:
            seg += 1
        t = k * h
        if i % dec == 0 and j < out.shape[0]:
            u, ud, udd = input_kernel(t, means[seg], frac, omega)
            out[j, 0] = t
            out[j, 1] = u
            out[j, 2] = ud
            out[j, 3] = udd
            out[j, 4] = x - etas[seg, 4] * u
            out[j, 5] = x
            j += 1
        if i == n:
            break
        x_new = rk4_step(x, t, h, etas[seg], bs[seg], means[seg], frac, omega)
        status = check_step(x, x_new, bs[seg])
        if status != OK:
            return x, status, k
        x = x_new
    return x, OK, k0 + n


def resolve_schedule(
    config: SimConfig,
    mode: Optional[OperatingMode],
    ripple: Optional[RippleInput],
) -> list[Segment]:
    """Turn a time schedule into step-aligned segments.

    With an explicit schedule each segment's ripple mean is that mode's mean
    current; fraction and frequency come from ``ripple`` (or the defaults).
    """
    frac = ripple.ripple_fraction if ripple else 0.05
    freq = ripple.frequency if ripple else 20e3
    if not config.mode_schedule:
        if mode is None:
            raise ValueError("need either a mode or a mode schedule")
        rip = ripple or RippleInput(mode.mean_current, frac, freq)
        return [Segment(0, mode, rip)]
    segments = []
    for t_switch, label in config.mode_schedule:
        k = int(round(t_switch / config.step))
        if abs(k * config.step - t_switch) > 1e-6 * config.step:
            log.warning("switch at %g s moved to step boundary %g s", t_switch, k * config.step)
        m = get_mode(label) if isinstance(label, str) else label
        segments.append(Segment(k, m, RippleInput(m.mean_current, frac, freq)))
    return segments


def segment_arrays(segments: Sequence[Segment]):
    starts = np.array([s.start for s in segments], dtype=np.int64)
    etas = np.array([s.eta for s in segments])
    bs = np.array([s.mode.b for s in segments])
    means = np.array([s.ripple.mean for s in segments])
    return starts, etas, bs, means


def initial_voltage(config: SimConfig, first: Segment) -> float:
    if config.initial_state == STEADY_STATE:
        return steady_state_voltage(first.mode.eta, first.mode.b, first.ripple.mean)
    return float(config.initial_state)


def raise_for_status(status: int, step: int, h: float) -> None:
    if status == OVERFLOW:
        raise ExpOverflow(f"plant state left exp range at t = {step * h:g} s")
    if status == JUMP:
        raise StepTooLarge(f"junction voltage moved more than {MAX_STEP_JUMP} V in one step at t = {step * h:g} s")


def simulate(
    config: SimConfig,
    mode: Optional[OperatingMode] = None,
    ripple: Optional[RippleInput] = None,
) -> Trajectory:
    """Integrate the plant and return decimated samples as arrays."""
    segments = resolve_schedule(config, mode, ripple)
    starts, etas, bs, means = segment_arrays(segments)
    rip = segments[0].ripple
    n = config.n_steps
    dec = config.decimation
    out = np.empty((n // dec + 1, 6))
    x0 = initial_voltage(config, segments[0])
    _, status, k = _integrate(
        x0, 0, n, config.step, starts, etas, bs, means, rip.ripple_fraction, rip.omega, dec, out
    )
    raise_for_status(status, k, config.step)
    return Trajectory(*(out[:, i].copy() for i in range(6)))


def integrate_plant(
    config: SimConfig,
    mode: Optional[OperatingMode] = None,
    ripple: Optional[RippleInput] = None,
    chunk: int = 100_000,
) -> Iterator[SampleRecord]:
    """Stream ``SampleRecord`` objects, one per (decimated) step.

    Integration proceeds chunk by chunk so memory stays bounded for long runs.
    """
    segments = resolve_schedule(config, mode, ripple)
    starts, etas, bs, means = segment_arrays(segments)
    rip = segments[0].ripple
    n_total = config.n_steps
    dec = config.decimation
    chunk = max(dec, (chunk // dec) * dec)
    x = initial_voltage(config, segments[0])
    k0 = 0
    while k0 <= n_total:
        n = min(chunk, n_total - k0)
        out = np.empty((n // dec + 1, 6))
        x_end, status, k = _integrate(
            x, k0, n, config.step, starts, etas, bs, means, rip.ripple_fraction, rip.omega, dec, out
        )
        raise_for_status(status, k, config.step)
        # the last row duplicates the next chunk's first row
        rows = out if k0 + n == n_total else out[:-1]
        for row in rows:
            yield SampleRecord(*(float(v) for v in row))
        if k0 + n == n_total:
            return
        x = x_end
        k0 += n


TRAJECTORY_HEADER = ["t", "u", "udot", "uddot", "y", "x_true"]


def export_trajectory(traj: Trajectory, path, decimation: int = 1) -> None:
    cols = (traj.t, traj.u, traj.u_dot, traj.u_ddot, traj.y, traj.x_true)
    rows = zip(*(c[::decimation] for c in cols))
    write_csv(path, TRAJECTORY_HEADER, rows)
