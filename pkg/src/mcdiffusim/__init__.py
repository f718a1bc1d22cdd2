"""Diffusive molecular channel with multiple fully-absorbing spherical receivers.

Analytic interference models (center / surface-point / barycenter negative
sources), a general multi-cell Volterra time-marching solver, and a seeded
Brownian-dynamics Monte Carlo oracle.
"""

from .analytic import (
    SeriesParams,
    TimeGrid,
    cumulative_single,
    erfc,
    free_space_concentration,
    hitting_rate,
    peak_time,
    two_receiver_cir,
    two_receiver_cumulative,
)
from .geometry import (
    BarycenterSet,
    GammaDeltaCoefficients,
    Scenario,
    SourceModel,
    SphericalCell,
    displacement,
    gamma_weight,
    kernel_distances,
    predict_barycenters,
    s_point,
)
from .particle import (
    DetectionMode,
    SimConfig,
    SimResult,
    detect_absorption,
    estimate_barycenter,
    run,
    step,
)
from .volterra import RateSolution, clamp_rates, negative_rate_diagnostics, solve

__version__ = "0.1.0"
