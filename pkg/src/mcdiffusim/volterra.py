"""Time-marching solver for the coupled absorption-rate integral equations.

Each cell's rate equals its isolated-cell response minus the convolution of
every other cell's rate with the diffusion kernel evaluated at the distance
from that cell's negative-source point to this cell's center. Because the
kernel vanishes at t = 0, a trapezoidal discretization of the convolution
never references the newest sample and the march is fully explicit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .analytic import TimeGrid, hitting_rate, peak_time
from .geometry import (
    DEFAULT_COEFFICIENTS,
    BarycenterSet,
    GammaDeltaCoefficients,
    Scenario,
    SourceModel,
    kernel_distances,
    predict_barycenters,
)

log = logging.getLogger(__name__)

NEGATIVE_RATE_TOL = 1e-6


@dataclass(frozen=True)
class RateSolution:
    """Per-cell absorption rates and cumulative counts on a uniform grid.

    `times` includes t = 0 (all entries zero there). `rates` is in
    molecules/s (already scaled by the emitted count), `cumulative` in
    molecules.
    """

    grid: TimeGrid
    times: np.ndarray       # (M+1,)
    rates: np.ndarray       # (K, M+1), molecules/s
    cumulative: np.ndarray  # (K, M+1), molecules
    labels: tuple[str, ...]

    def final_counts(self) -> np.ndarray:
        return self.cumulative[:, -1]

    def value_at(self, t: float, cell: int = 0) -> float:
        """Cumulative count of `cell` at the grid point nearest to t."""
        m = int(round(t / self.grid.dt))
        if not (0 <= m < self.times.size):
            raise ValueError(f"t={t} outside the solved horizon")
        return float(self.cumulative[cell, m])


def solve(scenario: Scenario, model: SourceModel, grid: TimeGrid,
          coeffs: GammaDeltaCoefficients = DEFAULT_COEFFICIENTS,
          sources: "BarycenterSet | None" = None) -> RateSolution:
    """March the coupled rate equations for all cells of `scenario`.

    The negative-source points are fixed by `model` (C/S/B) unless an explicit
    `sources` set is supplied (e.g. barycenters measured from simulation). The
    kernel for absorption onto cell k always uses cell k's own radius.

    Negative rate transients are kept as-is: small ones come from the
    discretization, larger ones from the negative-source approximation itself
    (typically for a cell shadowed by another between it and the transmitter).
    Both are reported by `negative_rate_diagnostics`; `clamp_rates` produces a
    clamped copy for presentation.
    """
    k = scenario.n_cells
    d_mat = None
    if k > 1:
        if sources is None:
            sources = predict_barycenters(scenario, model, coeffs)
        d_mat = kernel_distances(scenario, sources)

    t_peak_min = min(
        peak_time(c.distance_from_origin, c.radius, scenario.diffusion)
        for c in scenario.cells
    )
    if grid.dt > t_peak_min / 20.0:
        log.warning(
            "dt=%.3g is coarse relative to the fastest response peak %.3g s; "
            "expect discretization artifacts", grid.dt, t_peak_min,
        )

    m_steps = grid.steps
    dt = grid.dt
    times = grid.times_from_zero
    n_t = float(scenario.emitted)

    # Direct transmitter drive and pairwise kernels, precomputed on the grid.
    drive = np.empty((k, m_steps + 1))
    for i, c in enumerate(scenario.cells):
        drive[i] = n_t * hitting_rate(c.distance_from_origin, c.radius, scenario.diffusion, times)
    kernels = {}
    for i, c in enumerate(scenario.cells):
        for j in range(k):
            if j != i:
                kernels[i, j] = hitting_rate(d_mat[i, j], c.radius, scenario.diffusion, times)

    rates = np.zeros((k, m_steps + 1))
    for m in range(1, m_steps + 1):
        for i in range(k):
            acc = drive[i, m]
            if m >= 2:
                # interior trapezoid samples; both endpoints carry zero weight
                for j in range(k):
                    if j != i:
                        acc -= dt * np.dot(rates[j, 1:m], kernels[i, j][m - 1:0:-1])
            rates[i, m] = acc

    max_rate = float(np.max(np.abs(rates))) if rates.size else 0.0
    min_rate = float(np.min(rates))
    if min_rate < -NEGATIVE_RATE_TOL * max_rate:
        log.warning(
            "negative rate transient: min rate %.4g molecules/s (peak %.4g); "
            "kept unclamped, see negative_rate_diagnostics", min_rate, max_rate,
        )

    cumulative = np.zeros_like(rates)
    cumulative[:, 1:] = np.cumsum((rates[:, 1:] + rates[:, :-1]) * (dt / 2.0), axis=1)

    return RateSolution(
        grid=grid,
        times=times,
        rates=rates,
        cumulative=cumulative,
        labels=tuple(c.label for c in scenario.cells),
    )


@dataclass(frozen=True)
class ClampDiagnostics:
    """Negative-transient report for a computed solution."""

    min_rate: np.ndarray        # per cell, molecules/s
    clamped_fraction: np.ndarray  # per cell, fraction of grid points < 0


def negative_rate_diagnostics(solution: RateSolution) -> ClampDiagnostics:
    """Report how negative the discretization transients got, per cell."""
    rates = solution.rates
    return ClampDiagnostics(
        min_rate=rates.min(axis=1),
        clamped_fraction=(rates < 0).mean(axis=1),
    )


def clamp_rates(solution: RateSolution) -> RateSolution:
    """Copy of `solution` with negative rates zeroed and counts re-integrated.

    Presentation aid only; the unclamped solution is the faithful one.
    """
    rates = np.maximum(solution.rates, 0.0)
    dt = solution.grid.dt
    cumulative = np.zeros_like(rates)
    cumulative[:, 1:] = np.cumsum((rates[:, 1:] + rates[:, :-1]) * (dt / 2.0), axis=1)
    return RateSolution(
        grid=solution.grid,
        times=solution.times,
        rates=rates,
        cumulative=cumulative,
        labels=solution.labels,
    )
