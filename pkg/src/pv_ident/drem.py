"""Dynamic regressor extension and mixing with element-wise gradient laws.

The vector regression z = Omega^T theta is extended to a matrix regression
Y = Phi theta through a first-order (Kreisselmeier) filter plus a feedforward
term, then multiplied by adj(Phi) so that each component obeys its own
scalar regression calY_i = Delta theta_i with Delta = det(Phi).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import StepTooLarge

N = 8
MAX_DECAY_STEP = 0.1  # a * dt bound for the extension filter

EXCITED, STALLED = "EXCITED", "STALLED"


@dataclass
class ExtensionState:
    a: float
    c: float
    d: float
    Phi_f: np.ndarray = field(default_factory=lambda: np.zeros((N, N)))
    Y_f: np.ndarray = field(default_factory=lambda: np.zeros(N))

    def __post_init__(self):
        if min(self.a, self.c, self.d) <= 0:
            raise ValueError("a, c and d must be positive")


@dataclass(frozen=True)
class MixedSample:
    delta: float
    calY: np.ndarray


@dataclass
class EstimatorState:
    theta_hat: np.ndarray
    gammas: np.ndarray
    excitation_integral: float = 0.0
    t: float = 0.0
    history: list = field(default_factory=list)

    def __post_init__(self):
        self.theta_hat = np.array(self.theta_hat, dtype=float).reshape(4)
        self.gammas = np.array(self.gammas, dtype=float).reshape(4)
        if np.any(self.gammas < 0):
            raise ValueError("gains must be non-negative")
        if not self.history:
            self.history.append((self.t, self.excitation_integral))


@njit(cache=True)
def extension_update(Phi_f, Y_f, omega, z, decay, c, d, Phi, Y):
    """Advance (Phi_f, Y_f) by one hold interval and form (Phi, Y) in place."""
    g = 1.0 - decay
    for i in range(N):
        Y_f[i] = decay * Y_f[i] + g * omega[i] * z
        Y[i] = c * Y_f[i] + d * omega[i] * z
        for j in range(N):
            oo = omega[i] * omega[j]
            Phi_f[i, j] = decay * Phi_f[i, j] + g * oo
            Phi[i, j] = c * Phi_f[i, j] + d * oo


def extension_step(ext: ExtensionState, omega, z, dt):
    if ext.a * dt > MAX_DECAY_STEP:
        raise StepTooLarge(f"a*dt = {ext.a * dt:g} exceeds {MAX_DECAY_STEP}")
    Phi = np.empty((N, N))
    Y = np.empty(N)
    extension_update(
        ext.Phi_f, ext.Y_f, np.asarray(omega, dtype=float), float(z), math.exp(-ext.a * dt), ext.c, ext.d, Phi, Y
    )
    return Phi, Y


@njit(cache=True)
def _lu_inplace(A, piv):
    """Partial-pivot LU of square A in place. Returns (det, singular)."""
    n = A.shape[0]
    det = 1.0
    for k in range(n):
        p = k
        big = abs(A[k, k])
        for i in range(k + 1, n):
            if abs(A[i, k]) > big:
                big = abs(A[i, k])
                p = i
        piv[k] = p
        if big == 0.0:
            return 0.0, True
        if p != k:
            for j in range(n):
                tmp = A[k, j]
                A[k, j] = A[p, j]
                A[p, j] = tmp
            det = -det
        det *= A[k, k]
        inv = 1.0 / A[k, k]
        for i in range(k + 1, n):
            A[i, k] *= inv
            f = A[i, k]
            if f != 0.0:
                for j in range(k + 1, n):
                    A[i, j] -= f * A[k, j]
    return det, False


@njit(cache=True)
def _lu_solve(LU, piv, b):
    n = LU.shape[0]
    x = b.copy()
    for k in range(n):
        p = piv[k]
        if p != k:
            tmp = x[k]
            x[k] = x[p]
            x[p] = tmp
    for i in range(n):
        s = x[i]
        for j in range(i):
            s -= LU[i, j] * x[j]
        x[i] = s
    for i in range(n - 1, -1, -1):
        s = x[i]
        for j in range(i + 1, n):
            s -= LU[i, j] * x[j]
        x[i] = s / LU[i, i]
    return x


@njit(cache=True)
def determinant(A):
    work = A.copy()
    piv = np.empty(A.shape[0], dtype=np.int64)
    det, _ = _lu_inplace(work, piv)
    return det


@njit(cache=True)
def adjugate_cofactor(A):
    """adj(A) from signed minors; valid for any A, including singular ones."""
    n = A.shape[0]
    adj = np.empty((n, n))
    minor = np.empty((n - 1, n - 1))
    for r in range(n):
        for col in range(n):
            # adj[col, r] = (-1)^(r+col) det(A without row r, column col)
            ii = 0
            for i in range(n):
                if i == r:
                    continue
                jj = 0
                for j in range(n):
                    if j == col:
                        continue
                    minor[ii, jj] = A[i, j]
                    jj += 1
                ii += 1
            sign = 1.0 if (r + col) % 2 == 0 else -1.0
            adj[col, r] = sign * determinant(minor)
    return adj


@njit(cache=True)
def mix_kernel(Phi, Y, calY):
    """Delta = det(Phi), calY = adj(Phi) Y written in place. Returns Delta.

    A nonsingular Phi goes through one LU factorization (calY = Delta * Phi^-1 Y);
    an exactly singular one falls back to cofactors so calY stays defined.
    """
    n = Phi.shape[0]
    work = Phi.copy()
    piv = np.empty(n, dtype=np.int64)
    det, singular = _lu_inplace(work, piv)
    if not singular and det != 0.0 and math.isfinite(det):
        w = _lu_solve(work, piv, Y)
        for i in range(n):
            calY[i] = det * w[i]
        return det
    adj = adjugate_cofactor(Phi)
    for i in range(n):
        s = 0.0
        for j in range(n):
            s += adj[i, j] * Y[j]
        calY[i] = s
    return determinant(Phi)


def mix(Phi, Y) -> MixedSample:
    Phi = np.ascontiguousarray(Phi, dtype=float)
    calY = np.empty(Phi.shape[0])
    delta = mix_kernel(Phi, np.ascontiguousarray(Y, dtype=float), calY)
    return MixedSample(float(delta), calY)


def adjugate(A) -> np.ndarray:
    """adj(A) for diagnostics; uses Delta * A^-1 when A is nonsingular."""
    A = np.ascontiguousarray(A, dtype=float)
    n = A.shape[0]
    out = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        col = np.empty(n)
        mix_kernel(A, e, col)
        out[:, j] = col
    return out


@njit(cache=True)
def gradient_update(theta_hat, gammas, delta, calY, dt):
    """theta_i' = gamma_i Delta (calY_i - Delta theta_i), solved exactly over dt.

    With Delta and calY held over the interval each error decays by
    exp(-gamma_i Delta^2 dt), so the step is the Euler increment scaled by
    phi1(x) = (1 - exp(-x)) / x, x = gamma_i Delta^2 dt. It is monotone for
    any gain and needs no division by Delta.
    Returns Delta^2 * dt for the excitation integral.
    """
    d2 = delta * delta
    for i in range(theta_hat.shape[0]):
        x = gammas[i] * d2 * dt
        scale = dt if x < 1e-300 else -math.expm1(-x) / (gammas[i] * d2)
        theta_hat[i] += scale * gammas[i] * delta * (calY[i] - delta * theta_hat[i])
    return d2 * dt


def gradient_step(est: EstimatorState, mixed: MixedSample, dt: float) -> EstimatorState:
    inc = gradient_update(est.theta_hat, est.gammas, mixed.delta, np.asarray(mixed.calY[:4], dtype=float), dt)
    est.excitation_integral += float(inc)
    est.t += dt
    est.history.append((est.t, est.excitation_integral))
    return est


def excitation_verdict(times, integral, growth: float = 0.1) -> str:
    """EXCITED when the integral grew by ``growth`` (relative) over the second half."""
    times = np.asarray(times, dtype=float)
    integral = np.asarray(integral, dtype=float)
    if times.size < 2:
        return STALLED
    t_mid = 0.5 * (times[0] + times[-1])
    mid = float(np.interp(t_mid, times, integral))
    end = float(integral[-1])
    if end > 0 and end - mid >= growth * mid:
        return EXCITED
    return STALLED


def excitation_report(est: EstimatorState) -> tuple[float, str]:
    times, values = zip(*est.history)
    return est.excitation_integral, excitation_verdict(times, values)
