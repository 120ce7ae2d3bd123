"""Exception types shared across the package."""


class ShapeError(ValueError):
    """An array does not have the shape the operation requires."""


class TopologyError(ValueError):
    """The skeleton parent map is not a tree rooted at the palm joint."""


class DegenerateGeometryError(ValueError):
    """Zero-length or parallel bones where angles/curvatures are needed."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration values."""


class GenerationError(RuntimeError):
    """The pose sampler exhausted its rejection budget."""


class RenderError(RuntimeError):
    """The pose falls outside the mask projection frame."""


class ChannelError(RuntimeError):
    """Degenerate simulator geometry (reflector on top of an antenna)."""


class ParseError(ValueError):
    """A dataset/checkpoint/config file failed to parse.

    Carries the byte offset (or record index) where parsing failed when
    that is known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
