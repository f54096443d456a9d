"""Exception types shared across the package."""


class TraceLabError(Exception):
    """Base class for all tracelab errors."""


class MeshError(TraceLabError):
    """Invalid mesh construction, refinement over budget, or bad mesh data."""


class ZeroTraceError(TraceLabError):
    """Field vanishes on the boundary, so the trace quotient is undefined."""


class ConfigError(TraceLabError):
    """Experiment configuration failed validation."""


class SolveError(TraceLabError):
    """Hard solver failure (NaN energy, oracle non-convergence)."""
