"""Exception types raised by the identification toolkit."""


class PVIdentError(Exception):
    """Base class for all toolkit errors."""


class DegenerateEta(PVIdentError):
    """A transformed parameter needed as a divisor is at or below the positivity floor."""


class NegativeIrradianceCurrent(PVIdentError):
    """eta3 <= eta2, which would give a non-positive irradiance current."""


class ExpOverflow(PVIdentError):
    """The diode exponential left the representable double range."""


class BracketFailure(PVIdentError):
    """No sign change of the plant right-hand side on the search bracket."""


class StepTooLarge(PVIdentError):
    """A discretization step violates an accuracy or stability guard."""


class DenominatorUnderflow(PVIdentError):
    """The eta2 reconstruction denominator is too small to divide by."""


class CalibrationFailure(PVIdentError):
    """No gain multiplier in the search range reaches the target time."""


class ConfigError(PVIdentError):
    """Malformed or inconsistent scenario configuration."""
