"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit with 2,
numerical failures with 3.
"""


class ConfigurationError(ValueError):
    """Invalid configuration, dimensions, or arguments."""


class NumericalError(RuntimeError):
    """A numerical operation failed (lost definiteness, singular system, ...)."""


class MatchingInfeasibleError(NumericalError):
    """No positive definite control weight can reproduce the requested diffusion.

    Raised when range(D) != range(G): a diffusion matrix can be written as
    lambda * G @ R_inv @ G.T with R_inv symmetric positive definite only if
    the ranges of D and G coincide.
    """
