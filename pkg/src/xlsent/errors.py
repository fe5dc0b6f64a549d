class DataFormatError(ValueError):
    """Input file or object violates its documented format."""


class NumericalError(RuntimeError):
    """A numeric routine could not produce a valid result."""
