class ConfigError(ValueError):
    """Invalid channel, ensemble, rate or sweep configuration."""


class UnsupportedMassError(ValueError):
    """A distribution puts mass where the reference law is zero."""


class ZeroChannelPowerError(ValueError):
    """A zero channel entry was raised to a negative power."""


class NoBoundaryError(ValueError):
    """The tilt family never leaves the G-set on [0, 1]."""


class DegenerateTiltError(ValueError):
    """Tilt normalization underflowed."""


class InconsistentMarginalsError(ValueError):
    """No coupling matches the requested marginals."""


class InfeasibleError(RuntimeError):
    """No grid point satisfies an exponent constraint."""
