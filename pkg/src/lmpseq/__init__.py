"""Locally most powerful sequential tests for one-sided alternatives.

The (b, c)-generated test continues sampling while the score statistic
``z_n`` stays inside ``(b + A_c, b + B_c)`` and rejects on stopping when
``z_n >= b``.  The boundaries come from the fixed point of a one-dimensional
Bellman operator on the score scale.
"""

__version__ = "0.1.0"

from .errors import (CapacityError, ConfigError, DomainError, GridTooNarrowError,  # noqa: E402
                     LmpseqError, NumericError, StaleInputError, UnsupportedModelError,
                     ValidationError)
from .model import (Kind, ObservationModel, bernoulli_mean, custom_discrete,  # noqa: E402
                    normal_mean, poisson_mean, triangular_normal)
from .rho import GridConfig, RhoGrid, g, h_c, rho_fixed_point  # noqa: E402
from .thresholds import (DesignConfig, TestDesign, fixed_sample_design,  # noqa: E402
                         make_design, mirror_design, solve_thresholds)

__all__ = [
    "CapacityError", "ConfigError", "DomainError", "GridTooNarrowError", "LmpseqError",
    "NumericError", "StaleInputError", "UnsupportedModelError", "ValidationError",
    "Kind", "ObservationModel", "bernoulli_mean", "custom_discrete", "normal_mean",
    "poisson_mean", "triangular_normal", "GridConfig", "RhoGrid", "g", "h_c",
    "rho_fixed_point", "DesignConfig", "TestDesign", "fixed_sample_design", "make_design",
    "mirror_design", "solve_thresholds",
]
