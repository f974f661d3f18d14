"""Exception hierarchy shared across the package."""


class CoEditError(Exception):
    pass


class ParameterError(CoEditError, ValueError):
    """An argument or config value is outside its allowed range."""


class ShapeError(CoEditError, ValueError):
    """Array arguments have incompatible shapes."""


class DegenerateAttentionError(CoEditError):
    """The editing attention map carries no mass; the ownership threshold is undefined."""


class NumericDivergenceError(CoEditError):
    def __init__(self, message, step=None, iteration=None):
        super().__init__(message)
        self.step = step
        self.iteration = iteration


class IncompleteTraceError(CoEditError):
    pass


class DenoiserError(CoEditError):
    """A denoiser call failed; ``branch`` names the condition that was queried."""

    def __init__(self, message, branch=None):
        super().__init__(message)
        self.branch = branch
