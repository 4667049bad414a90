"""Exception types shared across the package."""


class OrbitLiftError(Exception):
    """Base class for all orbitlift errors."""


class NotOrthogonal(OrbitLiftError):
    """A supplied matrix fails the orthogonality check."""


class OrderExceeded(OrbitLiftError):
    """Group closure grew past the allowed order (infinite or too-large group)."""


class DimensionMismatch(OrbitLiftError):
    """Inputs disagree on ambient dimension or coordinate count."""


class NonHyperbolic(OrbitLiftError):
    """An invariant value has no all-real root multiset (it lies outside the image of the orbit map)."""


class Inconsistent(OrbitLiftError):
    """An invariant value violates an algebraic relation between the generators."""


class MissingFiberOracle(OrbitLiftError):
    """Fiber inversion was requested for a generator system with no built-in solver and no supplied representatives."""


class WindowTooSmall(OrbitLiftError):
    """Not enough grid samples around the requested instant."""


class LemmaViolated(OrbitLiftError):
    """The order-of-flatness consistency condition fails at the requested zero, so no
    differentiable continuation can be constructed from this instant with the given data."""


class NotInOrbit(OrbitLiftError):
    """A supplied start point does not lie in the orbit of the first fiber representative."""


class ResidualExceeded(OrbitLiftError):
    """A lift failed its residual contract against the source curve."""


class OrbitMismatch(OrbitLiftError):
    """One-sided derivatives at a singular instant do not lie in a common group orbit."""


class IsotropyInsufficient(OrbitLiftError):
    """No isotropy element matches the one-sided derivatives although a full-group element does;
    usually the zero-locating tolerance clipped the true singular instant."""
