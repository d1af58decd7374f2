"""Exception types shared across the toolkit."""


class DegenerateInputError(ValueError):
    """A zero-norm vector was passed where the cosine metric needs a direction."""


class FormatError(ValueError):
    """An on-disk file does not conform to its declared format."""


class NumericalError(RuntimeError):
    """A computation produced non-finite values and was aborted."""


class EmptyGenerationError(RuntimeError):
    """The autoregressive stage produced an empty sequence; the caller decides whether to retry."""
