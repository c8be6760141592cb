"""
Exception hierarchy
====================
Every precondition failure raises one of these; the CLI maps UsageError to
exit code 1 and everything else to exit code 2.
"""


class DensityFitError(Exception):
    """Base class for all densityfit errors"""


class UsageError(DensityFitError):
    """Bad command line"""


class GridError(DensityFitError, ValueError):
    """Invalid grid geometry, field contents or query point"""


class RenderError(DensityFitError, ValueError):
    """Invalid ray, samples or camera"""


class GeometryError(DensityFitError, ValueError):
    """Invalid panorama / cutout / lifting input"""


class LossError(DensityFitError, ValueError):
    """Invalid loss input (shapes, NaN, empty support, pair sampling)"""


class SceneError(DensityFitError, ValueError):
    """Scene description violates its invariants"""


class OptimizeError(DensityFitError, ValueError):
    """Invalid optimizer configuration or state"""


class MetricError(DensityFitError, ValueError):
    """Invalid metric input"""


class DivergenceError(DensityFitError):
    """Loss became non-finite; carries the trace up to the failing epoch"""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class FormatError(DensityFitError):
    """Malformed or truncated file; carries the byte offset of the problem"""

    def __init__(self, message, path=None, offset=None):
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte {offset}")
        full = f"{message} ({', '.join(where)})" if where else message
        super().__init__(full)
        self.path = path
        self.offset = offset
