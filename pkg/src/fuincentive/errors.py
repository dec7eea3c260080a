"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A scenario file or configuration violates its contract."""


class DegenerateBandwidthError(ValueError):
    """Median heuristic cannot produce a positive bandwidth."""


class DegenerateStateError(ArithmeticError):
    """An operation was asked to evaluate at a point where it is undefined
    (for instance a zero total participation mass)."""


class IntegrityError(ArithmeticError):
    """A numerical invariant was violated beyond its round-off tolerance."""
