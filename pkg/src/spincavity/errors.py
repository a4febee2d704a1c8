"""Exception taxonomy shared by all modules."""


class SpinCavityError(Exception):
    """Base class for package-specific errors."""


class NoRoot(SpinCavityError):
    """A bracketed root search found no solution inside the bracket."""


class InvalidTemperature(SpinCavityError):
    """Temperature must be strictly positive."""


class DegenerateLinewidth(SpinCavityError):
    """A loss rate or linewidth that must be positive is zero or negative."""


class GridTooCoarse(SpinCavityError):
    """A quadrature grid failed its convergence or coverage requirement."""


class OutOfDomain(SpinCavityError):
    """A requested position lies outside the mapped region."""


class EmptyLattice(SpinCavityError):
    """No lattice sites fall inside the crystal volume."""


class SingularFit(SpinCavityError):
    """The least-squares problem is degenerate or underdetermined."""


class DomainStep(SpinCavityError):
    """A finite-difference step left the model's valid domain."""


class SchemaError(SpinCavityError):
    """Input data or configuration violates the documented schema."""
