"""Parameter algebra and plant equations for the dynamic single-diode PV model.

All quantities are SI base units: farads, ohms, amperes, volts, seconds.
The plant is

    dx/dt = -eta1*x - eta2*exp(b*x) + eta3 - eta4*u
        y = x - eta5*u

with x the junction (capacitor) voltage, u the array current and y the
terminal voltage.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .errors import DegenerateEta, ExpOverflow, NegativeIrradianceCurrent

ELEMENTARY_CHARGE = 1.602e-19  # C
BOLTZMANN = 1.3806503e-23  # J/K

POSITIVITY_FLOOR = 1e-30
# largest argument with finite exp() in double precision
EXP_LIMIT = 709.78


@dataclass(frozen=True)
class PhysicalParams:
    """The five unknowns K = (C, Rp, Rs, I0, Iirr)."""

    capacitance: float
    parallel_resistance: float
    series_resistance: float
    saturation_current: float
    irradiance_current: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.capacitance,
                self.parallel_resistance,
                self.series_resistance,
                self.saturation_current,
                self.irradiance_current,
            ]
        )

    @classmethod
    def from_array(cls, values) -> "PhysicalParams":
        return cls(*(float(v) for v in values))

    def is_valid(self) -> bool:
        values = self.as_array()
        return bool(np.all(np.isfinite(values)) and np.all(values > 0))

    def validate(self) -> None:
        if not self.is_valid():
            raise ValueError(f"physical parameters must be finite and positive: {self}")


@dataclass(frozen=True)
class EtaParams:
    """Transformed parameters entering the plant linearly.

    ``b`` is carried along only so that ``eta6`` can be formed; it is not an
    unknown.
    """

    eta1: float
    eta2: float
    eta3: float
    eta4: float
    eta5: float
    b: Optional[float] = None

    @property
    def eta6(self) -> float:
        if self.b is None:
            raise ValueError("eta6 needs the diode coefficient b")
        return self.b * self.eta5

    @property
    def eta7(self) -> float:
        return self.eta4 + self.eta1 * self.eta5

    def as_array(self) -> np.ndarray:
        return np.array([self.eta1, self.eta2, self.eta3, self.eta4, self.eta5])

    def is_valid(self) -> bool:
        v = self.as_array()
        return bool(np.all(np.isfinite(v)) and np.all(v > 0) and self.eta3 > self.eta2)


@dataclass(frozen=True)
class ThetaParams:
    """LRE parameter theta = [mu; eta5*mu] with mu = (eta5, eta1, eta7, eta3)."""

    theta: np.ndarray = field(repr=True)

    def __post_init__(self):
        arr = np.asarray(self.theta, dtype=float).reshape(8)
        object.__setattr__(self, "theta", arr)

    @property
    def heads(self) -> np.ndarray:
        """The four components the estimator actually tracks."""
        return self.theta[:4].copy()


@dataclass(frozen=True)
class DiodeCoefficient:
    b: float
    n: Optional[float] = None
    temperature: Optional[float] = None
    series_cell_count: Optional[int] = None

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError("b must be positive")


@dataclass(frozen=True)
class OperatingMode:
    label: str
    irradiance: float  # W/m^2
    temperature: float  # K
    mean_current: float  # A
    truth: PhysicalParams
    b: float  # 1/V

    def __post_init__(self):
        if not self.mean_current > 0:
            raise ValueError("mean_current must be positive")
        self.truth.validate()

    @property
    def eta(self) -> EtaParams:
        return eta_from_physical(self.truth, self.b)

    @property
    def theta(self) -> ThetaParams:
        return theta_from_eta(self.eta)


def _mode(label, G, T, ipv, C_uF, Rp, Rs, Iirr, I0_nA, b) -> OperatingMode:
    # catalog is written in the table's display units; convert once here
    truth = PhysicalParams(C_uF * 1e-6, Rp, Rs, I0_nA * 1e-9, Iirr)
    return OperatingMode(label, G, T, ipv, truth, b)


MODES: dict[str, OperatingMode] = {
    "STC": _mode("STC", 1000.0, 298.15, 4.54, 0.6, 112.55, 0.2747, 5.00, 10.57, 0.958),
    "Mode1": _mode("Mode1", 748.9, 302.15, 3.40, 0.6, 150.28, 0.2747, 3.75, 17.68, 0.945),
    "Mode2": _mode("Mode2", 740.4, 302.40, 3.36, 0.6, 152.02, 0.2747, 3.70, 18.24, 0.944),
    "Mode3": _mode("Mode3", 715.8, 302.71, 3.25, 0.6, 157.23, 0.2747, 3.58, 18.97, 0.943),
}
IDEALITY_FACTOR = 1.1287


def get_mode(label: str) -> OperatingMode:
    """Look up a catalog mode; accepts ``mode1``/``MODE1``/``Mode 1`` spellings."""
    key = label.replace(" ", "").replace("_", "").lower()
    for name, mode in MODES.items():
        if name.lower() == key:
            return mode
    raise KeyError(f"unknown operating mode {label!r}; known: {', '.join(MODES)}")


def eta_from_physical(K: PhysicalParams, b: Optional[float] = None) -> EtaParams:
    K.validate()
    C = K.capacitance
    return EtaParams(
        eta1=1.0 / (K.parallel_resistance * C),
        eta2=K.saturation_current / C,
        eta3=(K.irradiance_current + K.saturation_current) / C,
        eta4=1.0 / C,
        eta5=K.series_resistance,
        b=b,
    )


def physical_from_eta(eta: EtaParams) -> PhysicalParams:
    """Inverse map K = (1/eta4, eta4/eta1, eta5, eta2/eta4, (eta3-eta2)/eta4).

    ``eta3 == eta2`` is accepted and yields a zero irradiance current (the
    result then fails ``PhysicalParams.is_valid``); ``eta3 < eta2`` raises.
    """
    if eta.eta4 <= POSITIVITY_FLOOR or eta.eta1 <= POSITIVITY_FLOOR:
        raise DegenerateEta(f"eta1={eta.eta1!r}, eta4={eta.eta4!r} at or below floor")
    if eta.eta3 < eta.eta2:
        raise NegativeIrradianceCurrent(f"eta3={eta.eta3!r} < eta2={eta.eta2!r}")
    return PhysicalParams(
        capacitance=1.0 / eta.eta4,
        parallel_resistance=eta.eta4 / eta.eta1,
        series_resistance=eta.eta5,
        saturation_current=eta.eta2 / eta.eta4,
        irradiance_current=(eta.eta3 - eta.eta2) / eta.eta4,
    )


def theta_from_eta(eta: EtaParams) -> ThetaParams:
    mu = np.array([eta.eta5, eta.eta1, eta.eta7, eta.eta3])
    return ThetaParams(np.concatenate([mu, eta.eta5 * mu]))


def eta_heads_from_theta(theta14) -> tuple[float, float, float, float]:
    """Map (theta1..theta4) to (eta1, eta3, eta4, eta5).

    No sign checks: during estimation eta4 may transiently be non-positive.
    """
    t1, t2, t3, t4 = (float(v) for v in theta14)
    return t2, t4, t3 - t1 * t2, t1


def compute_b(n: float, temperature: float, series_cell_count: int = 1) -> float:
    """Diode exponential coefficient q / (n k T N_s) in 1/V."""
    if n <= 0 or temperature <= 0:
        raise ValueError("n and temperature must be positive")
    if series_cell_count < 1:
        raise ValueError("series_cell_count must be >= 1")
    return ELEMENTARY_CHARGE / (n * BOLTZMANN * temperature * series_cell_count)


@njit(cache=True)
def rhs_kernel(x, u, eta, b):
    return -eta[0] * x - eta[1] * math.exp(b * x) + eta[2] - eta[3] * u


def plant_rhs(x: float, u: float, eta: EtaParams, b: float) -> float:
    if b * x > EXP_LIMIT:
        raise ExpOverflow(f"exp({b * x:g}) overflows")
    return float(rhs_kernel(float(x), float(u), eta.as_array(), float(b)))


def plant_output(x, u, eta5):
    return x - eta5 * u
