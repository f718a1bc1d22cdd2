"""Closed-form diffusion responses: free space, single receiver, two receivers.

The two-receiver closed form is an infinite series of complementary error
functions obtained by Laplace-transforming the coupled absorption-rate
equations; it converges geometrically with ratio kappa = R^2/(d_RI * d_IR),
which is < 1 for any non-overlapping configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

SERIES_TOL = 1e-10
SERIES_MAX_TERMS = 10_000


def erfc(x):
    """Complementary error function, vectorized, ~1e-15 relative accuracy."""
    return special.erfc(x)


def free_space_concentration(q: float, r, t, diffusion: float):
    """Radially symmetric impulse solution of the diffusion equation.

    Value at distance r and time t > 0 for q molecules released at the
    origin at t = 0, with the normalization q / sqrt(4 pi D t^3).
    """
    r = np.asarray(r, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("t must be positive")
    return q / np.sqrt(4.0 * np.pi * diffusion * t**3) * np.exp(-(r**2) / (4.0 * diffusion * t))


def _check_geometry(r: float, radius: float):
    if not (radius > 0 and r > radius):
        raise ValueError(f"need r > R > 0, got r={r}, R={radius}")


def hitting_rate(r: float, radius: float, diffusion: float, t):
    """First-hit rate density on a single absorbing sphere.

    Probability per unit time that a molecule released at the origin at t = 0
    is absorbed by a sphere of radius R centered at distance r, at time t.
    Defined as 0 at t = 0; integrates to R/r over (0, inf).
    """
    _check_geometry(r, radius)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    if t.ndim == 0:
        if t > 0:
            tv = float(t)
            a = (r - radius) ** 2 / (4.0 * diffusion * tv)
            return radius * (r - radius) / (r * math.sqrt(4.0 * math.pi * diffusion * tv**3)) * math.exp(-a)
        return 0.0
    out = np.zeros_like(t)
    pos = t > 0
    tp = t[pos]
    out[pos] = (
        radius * (r - radius)
        / (r * np.sqrt(4.0 * np.pi * diffusion * tp**3))
        * np.exp(-((r - radius) ** 2) / (4.0 * diffusion * tp))
    )
    return out


def peak_time(r: float, radius: float, diffusion: float) -> float:
    """Time at which the single-receiver hitting rate is maximal: (r-R)^2/(6D)."""
    _check_geometry(r, radius)
    return (r - radius) ** 2 / (6.0 * diffusion)


def cumulative_single(n_emitted: float, r: float, radius: float, diffusion: float, t):
    """Expected molecules absorbed by an isolated sphere up to time t.

    Closed form N_T * (R/r) * erfc((r-R) / (2 sqrt(D t))); nondecreasing in t
    with limit N_T * R/r.
    """
    _check_geometry(r, radius)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    out = np.zeros_like(t)
    pos = t > 0
    with np.errstate(divide="ignore"):
        out = np.where(
            pos,
            n_emitted * radius / r * erfc((r - radius) / (2.0 * np.sqrt(diffusion * np.where(pos, t, 1.0)))),
            0.0,
        )
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SeriesParams:
    """Laplace-domain parameters of the two-receiver closed-form series.

    alpha, delta, kappa are dimensionless amplitudes; beta, epsilon, gamma_s
    carry units of sqrt(seconds) and shift the erfc arguments. kappa < 1 is
    the geometric convergence ratio and is guaranteed by non-overlap.
    """

    alpha: float
    beta: float
    delta: float
    epsilon: float
    kappa: float
    gamma_s: float

    def __post_init__(self):
        if not (0.0 < self.kappa < 1.0):
            raise ValueError(f"series requires 0 < kappa < 1, got {self.kappa}")
        if min(self.beta, self.epsilon, self.gamma_s) <= 0:
            raise ValueError("beta, epsilon, gamma_s must be positive")

    @classmethod
    def from_distances(cls, r_r: float, r_i: float, d_ri: float, d_ir: float,
                       radius: float, diffusion: float) -> "SeriesParams":
        """Build from the scenario distances.

        r_r, r_i: transmitter-to-center distances of receiver and interferer;
        d_ri: distance from the interferer's source point to the receiver
        center; d_ir: the reverse (equal to d_ri only in the C model or in
        symmetric geometries). Both cells share radius `radius`.
        """
        _check_geometry(r_r, radius)
        _check_geometry(r_i, radius)
        if min(d_ri, d_ir) <= 0:
            raise ValueError("source-to-center distances must be positive")
        # convergence (kappa < 1) and positivity are enforced at construction
        sqrt_d = math.sqrt(diffusion)
        return cls(
            alpha=radius / r_r,
            beta=(r_r - radius) / sqrt_d,
            delta=radius**2 / (d_ri * r_i),
            epsilon=(d_ri + r_i - 2.0 * radius) / sqrt_d,
            kappa=radius**2 / (d_ri * d_ir),
            gamma_s=(d_ri + d_ir - 2.0 * radius) / sqrt_d,
        )


def two_receiver_cumulative(params: SeriesParams, n_emitted: float, t,
                            tol: float = SERIES_TOL,
                            max_terms: int = SERIES_MAX_TERMS):
    """Molecules absorbed by the receiver up to time t with one interferer.

    Evaluates the truncated erfc series; truncation stops when the next term
    of both sums falls below tol times the partial sum. Returns 0 at t = 0.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    pos = t > 0
    inv = np.zeros_like(t)
    inv[pos] = 1.0 / (2.0 * np.sqrt(t[pos]))
    total = np.zeros_like(t)
    kappa_n = 1.0
    for n in range(max_terms):
        term_a = params.alpha * kappa_n * erfc((params.beta + n * params.gamma_s) * inv)
        term_b = params.delta * kappa_n * erfc((params.epsilon + n * params.gamma_s) * inv)
        total += term_a - term_b
        if n >= 2 and max(np.max(term_a), np.max(term_b)) < tol * max(np.max(np.abs(total)), 1e-300):
            break
        kappa_n *= params.kappa
    total[~pos] = 0.0
    out = n_emitted * total
    return float(out[0]) if scalar else out


def two_receiver_cir(params: SeriesParams, t,
                     tol: float = SERIES_TOL,
                     max_terms: int = SERIES_MAX_TERMS):
    """Perturbed channel impulse response (rate density, per emitted molecule).

    Term-by-term time derivative of the cumulative series: each erfc term
    differentiates to an inverse-Gaussian-shaped kernel. Defined as 0 at t = 0.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    pos = t > 0
    tp = np.where(pos, t, 1.0)

    def dterm(a):
        # d/dt erfc(a / (2 sqrt(t))) = a / (2 sqrt(pi t^3)) * exp(-a^2/(4t))
        val = a / (2.0 * np.sqrt(np.pi * tp**3)) * np.exp(-(a**2) / (4.0 * tp))
        return np.where(pos, val, 0.0)

    total = np.zeros_like(t)
    kappa_n = 1.0
    for n in range(max_terms):
        term_a = params.alpha * kappa_n * dterm(params.beta + n * params.gamma_s)
        term_b = params.delta * kappa_n * dterm(params.epsilon + n * params.gamma_s)
        total += term_a - term_b
        if n >= 2 and max(np.max(np.abs(term_a)), np.max(np.abs(term_b))) < tol * max(np.max(np.abs(total)), 1e-300):
            break
        kappa_n *= params.kappa
    return float(total[0]) if scalar else total


@dataclass(frozen=True)
class TimeGrid:
    """Uniform evaluation grid t_m = m * dt, m = 1..steps (t = 0 excluded)."""

    dt: float
    steps: int

    def __post_init__(self):
        if not (self.dt > 0):
            raise ValueError("dt must be positive")
        if not (self.steps > 0):
            raise ValueError("steps must be positive")

    @property
    def horizon(self) -> float:
        return self.dt * self.steps

    @property
    def times(self) -> np.ndarray:
        """Evaluation times, excluding t = 0."""
        return np.arange(1, self.steps + 1) * self.dt

    @property
    def times_from_zero(self) -> np.ndarray:
        """Grid including the t = 0 sample (responses are 0 there)."""
        return np.arange(self.steps + 1) * self.dt

    @classmethod
    def from_horizon(cls, dt: float, horizon: float) -> "TimeGrid":
        return cls(dt=dt, steps=int(round(horizon / dt)))
