"""Exception types shared across the toolkit."""


class GcfError(Exception):
    """Base class for all toolkit errors."""


class ParseError(GcfError):
    """Malformed input file (bad line, index out of range)."""


class DegenerateMesh(GcfError):
    """Mesh has no vertices or no triangles."""


class BehindCamera(GcfError):
    """Point projects behind the camera near plane."""


class BufferMismatch(GcfError):
    """Render buffers do not match the mesh/camera they are used with."""


class DimensionMismatch(GcfError):
    """Spatially aligned inputs have inconsistent shapes."""


class PredictorFailure(GcfError):
    """A correspondence predictor produced an unusable result."""


class EmptyRenderAtStart(GcfError):
    """Refinement cannot start: the initial pose renders no pixels."""


class NotARotation(GcfError):
    """Matrix is not orthonormal with determinant +1."""


class ZeroGtTranslation(GcfError):
    """Relative translation error is undefined for a zero ground-truth translation."""


class NoValidVertices(GcfError):
    """Every vertex was excluded (e.g. all project behind the camera)."""


class ConfigError(GcfError):
    """Invalid configuration file or value; the message names the offending key."""
