"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """Raised when a caller breaks an operation's preconditions."""


class ShapeError(ContractViolation):
    """Raised by a tensor op whose operand shapes are incompatible."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = shapes
        shown = " and ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {shown}")


class NoLinkFallback(UserWarning):
    """Warned when a class without links is padded with zero padding instead."""
