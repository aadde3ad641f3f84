"""Exception hierarchy shared by every module of the package."""


class PGError(Exception):
    """Base class for all errors raised by pgsolve."""


class ValidationError(PGError, ValueError):
    """A parameter or configuration value is outside its admissible set."""

    def __init__(self, field, message=None):
        self.field = field
        super().__init__(message or f"invalid value for {field!r}")


class NonPositiveConstant(ValidationError):
    def __init__(self, name, value=None):
        super().__init__(name, f"{name} must be strictly positive (got {value!r})")


class EquatorCrossing(ValidationError):
    def __init__(self, f_min):
        super().__init__(
            "beta", f"Coriolis parameter f0 + beta*y reaches {f_min!r} <= 0 inside [0, Ly]"
        )


class UntaggedField(PGError, ValueError):
    """A boundary-aware operation was applied to a field without a bc tag."""


class NoConvergence(PGError, RuntimeError):
    def __init__(self, iterations, residual, what="linear solve"):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"{what} did not converge after {iterations} iterations (residual {residual:.3e})"
        )


class ZeroTemperatureNorm(PGError, ValueError):
    """The velocity/temperature ratio is undefined for a zero temperature field."""


class BlowUp(PGError, RuntimeError):
    def __init__(self, t, value):
        self.t = t
        self.value = value
        super().__init__(f"solution magnitude {value:.3e} exceeded the blow-up threshold at t={t:.6g}")


class CFLViolation(PGError, ValueError):
    def __init__(self, dt, dt_max):
        self.dt = dt
        self.dt_max = dt_max
        super().__init__(f"time step {dt:.3e} exceeds the advective limit {dt_max:.3e}")


class ParseError(PGError, ValueError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnknownKey(PGError, KeyError):
    def __init__(self, name):
        self.name = name
        super().__init__(name)

    def __str__(self):
        return f"unknown configuration key {self.name!r}"


class UnknownPreset(PGError, ValueError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"unknown field preset {name!r}")


class FormatError(PGError, ValueError):
    """A snapshot file is malformed or does not match the expected grid."""


class SnapshotIOError(PGError, OSError):
    """Reading or writing a snapshot failed at the operating-system level."""
