"""Exception types shared across the toolkit."""


class ShapeError(ValueError):
    """An array argument has an incompatible shape.

    Messages name the offending dimension so callers can report it directly.
    """


class ConfigError(ValueError):
    """A module or pipeline configuration is invalid (kernel sizes, head
    counts, thresholds out of range, ...)."""


class GeometryError(ValueError):
    """A geometric input is degenerate or out of range (zero-area polygon,
    inverted box, polygon outside its raster canvas)."""


class ParseError(ValueError):
    """An input file cannot be parsed or fails schema validation."""


class ImageIdMismatch(ValueError):
    """Inputs that must describe the same image disagree on the image id."""


class EmptyProposalSet(ValueError):
    """An instance-level operation received zero proposals."""
