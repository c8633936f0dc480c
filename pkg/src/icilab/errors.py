"""Exception types shared across the package."""


class IcilabError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(IcilabError):
    """Operand shapes incompatible for an operation."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(shapes)
        super().__init__(f"{op}: incompatible shapes {', '.join(str(s) for s in shapes)}")


class NonFiniteError(IcilabError):
    """A value that must be finite contains NaN or Inf."""


class LangevinDivergence(IcilabError):
    """A Langevin chain produced a non-finite iterate."""


class TrainingDivergence(IcilabError):
    """A training loss became non-finite."""

    def __init__(self, iteration: int, loss_name: str):
        self.iteration = iteration
        self.loss_name = loss_name
        super().__init__(f"non-finite loss '{loss_name}' at iteration {iteration}")


class DataError(IcilabError):
    """A dataset or data file violates its contract."""
