"""Exception types shared across the engine."""


class FavexError(Exception):
    """Base class for all engine errors."""


class ParseError(FavexError):
    """Raised when a model or input document is malformed."""


class ShapeError(FavexError):
    """Raised on dimension mismatches (carries the offending layer index)."""

    def __init__(self, message, layer=None):
        super().__init__(message if layer is None else f"layer {layer}: {message}")
        self.layer = layer


class DomainError(FavexError):
    """Raised when an input box is inverted (lower > upper)."""


class ConflictError(FavexError):
    """A phase constraint contradicts the proven pre-activation interval.

    Signals an infeasible subproblem; callers treat the region as empty
    (vacuously verified).
    """


class NoAmbiguousNeuron(FavexError):
    """No ReLU is ambiguous under the current constraints; the subproblem
    is a fully-determined linear region."""
