"""Scenario geometry: absorbing spherical cells, source points, barycenter model.

All distances are in micrometers, time in seconds, diffusion coefficients in
um^2/s. The transmitter always sits at the origin. Each absorbing cell can be
represented, for interference modelling, by a single "negative source" point:
its center (C), the surface point facing the transmitter (S), or a modelled
absorption barycenter (B) that interpolates between the two and is pushed away
from neighbouring cells.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


def as_vec3(v) -> np.ndarray:
    """Coerce to a finite float64 3-vector."""
    a = np.asarray(v, dtype=float)
    if a.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite coordinates: {a}")
    return a


class SourceModel(str, Enum):
    """Placement rule for each cell's negative source point."""

    C = "C"  # cell center
    S = "S"  # surface point closest to the transmitter
    B = "B"  # modelled absorption barycenter


@dataclass(frozen=True)
class GammaDeltaCoefficients:
    """Empirical coefficients of the barycenter model.

    ``gamma(r) = g0 + g1*exp(-r/(s1*R)) + g2*exp(-r/(s2*R))`` weights the
    surface point against the center; ``|delta|(d) = d0*R*exp(-d1*(d-2R)/(2R))``
    is the mutual-repulsion displacement between cells at center distance d.
    Defaults were fitted at D = 79.4 um^2/s, T = 2 s, R = 1 um.
    """

    g0: float = 0.13
    g1: float = 0.51
    s1: float = 0.8
    g2: float = 0.36
    s2: float = 3.0
    d0: float = 0.21
    d1: float = 0.8


DEFAULT_COEFFICIENTS = GammaDeltaCoefficients()


@dataclass(frozen=True)
class SphericalCell:
    """Fully-absorbing sphere; the transmitter (origin) must lie outside it."""

    center: np.ndarray
    radius: float
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "center", as_vec3(self.center))
        self.center.setflags(write=False)
        if not (self.radius > 0):
            raise ValueError(f"radius must be positive, got {self.radius}")
        if self.distance_from_origin <= self.radius:
            raise ValueError(
                f"cell '{self.label}' covers the transmitter: "
                f"|center|={self.distance_from_origin:.6g} <= R={self.radius:.6g}"
            )

    def __eq__(self, other):
        if not isinstance(other, SphericalCell):
            return NotImplemented
        return (
            self.label == other.label
            and self.radius == other.radius
            and bool(np.array_equal(self.center, other.center))
        )

    def __hash__(self):
        return hash((self.label, self.radius, tuple(self.center)))

    @property
    def distance_from_origin(self) -> float:
        return float(np.linalg.norm(self.center))

    def contains(self, point, tol: float = 0.0) -> bool:
        return float(np.linalg.norm(as_vec3(point) - self.center)) <= self.radius + tol


@dataclass(frozen=True)
class Scenario:
    """Pointwise transmitter at the origin plus a set of absorbing cells.

    Cell 0 is, by convention, the receiver under observation; the rest are
    interferers. Cells must be pairwise non-overlapping.
    """

    diffusion: float
    emitted: int
    cells: tuple[SphericalCell, ...]

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(self.cells))
        if not (self.diffusion > 0):
            raise ValueError("diffusion coefficient must be positive")
        if not (self.emitted > 0):
            raise ValueError("emitted molecule count must be positive")
        if not self.cells:
            raise ValueError("scenario needs at least one cell")
        for i, a in enumerate(self.cells):
            for b in self.cells[i + 1:]:
                gap = float(np.linalg.norm(a.center - b.center))
                if gap < a.radius + b.radius - 1e-12:
                    raise ValueError(
                        f"cells '{a.label}' and '{b.label}' overlap: "
                        f"|c_i-c_j|={gap:.6g} < {a.radius + b.radius:.6g}"
                    )

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def centers(self) -> np.ndarray:
        """(K, 3) array of cell centers."""
        return np.array([c.center for c in self.cells])

    def radii(self) -> np.ndarray:
        return np.array([c.radius for c in self.cells])

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "diffusion_um2_per_s": self.diffusion,
            "emitted": self.emitted,
            "cells": [
                {
                    "label": c.label,
                    "center_um": [float(x) for x in c.center],
                    "radius_um": c.radius,
                }
                for c in self.cells
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        schema = d.get("schema", SCHEMA_VERSION)
        if schema != SCHEMA_VERSION:
            raise ValueError(f"unsupported scenario schema {schema}")
        cells = tuple(
            SphericalCell(
                center=c["center_um"],
                radius=float(c["radius_um"]),
                label=str(c.get("label", f"cell{i}")),
            )
            for i, c in enumerate(d["cells"])
        )
        return cls(
            diffusion=float(d["diffusion_um2_per_s"]),
            emitted=int(d["emitted"]),
            cells=cells,
        )

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "Scenario":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class BarycenterSet:
    """One negative-source point per cell, under a given placement model."""

    model: SourceModel
    points: np.ndarray  # (K, 3)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be (K, 3), got {pts.shape}")
        object.__setattr__(self, "points", pts)
        pts.setflags(write=False)


def s_point(cell: SphericalCell) -> np.ndarray:
    """Surface point of `cell` closest to the transmitter at the origin.

    Lies on the segment from the origin to the center, at distance
    |center| - radius from the origin.
    """
    return cell.center * (1.0 - cell.radius / cell.distance_from_origin)


def gamma_weight(r: float, radius: float,
                 coeffs: GammaDeltaCoefficients = DEFAULT_COEFFICIENTS) -> float:
    """Interpolation weight between a cell's S-point and its center.

    Double-exponential decay in the center distance r; tends to 1 as the cell
    approaches the transmitter (barycenter at the S-point) and to the constant
    floor for far cells (barycenter near the center).
    """
    if not (r > 0 and radius > 0):
        raise ValueError("r and radius must be positive")
    c = coeffs
    return c.g0 + c.g1 * math.exp(-r / (c.s1 * radius)) + c.g2 * math.exp(-r / (c.s2 * radius))


def displacement(target_center, other_center, radius: float,
                 coeffs: GammaDeltaCoefficients = DEFAULT_COEFFICIENTS) -> np.ndarray:
    """Repulsion shift of `target` cell's barycenter away from `other` cell.

    Directed from the other center toward the target center, with magnitude
    decaying exponentially in the center-to-center distance d; maximal
    (d0 * R) when the cells touch at d = 2R.
    """
    tc = as_vec3(target_center)
    oc = as_vec3(other_center)
    diff = tc - oc
    d = float(np.linalg.norm(diff))
    if d < 2.0 * radius - 1e-12:
        raise ValueError(f"cells too close for displacement model: d={d:.6g} < 2R={2*radius:.6g}")
    norm = coeffs.d0 * radius * math.exp(-coeffs.d1 * (d - 2.0 * radius) / (2.0 * radius))
    return (diff / d) * norm


def predict_barycenters(scenario: Scenario, model: SourceModel,
                        coeffs: GammaDeltaCoefficients = DEFAULT_COEFFICIENTS) -> BarycenterSet:
    """Negative-source points for every cell under the C, S or B model.

    The B model interpolates S-point and center with the gamma weight and adds
    the pairwise repulsion displacements from every other cell. If the summed
    displacements push a point outside its own sphere it is clamped radially
    back to the surface (unphysical regime, logged as a warning).
    """
    model = SourceModel(model)
    k = scenario.n_cells
    points = np.empty((k, 3))
    for i, cell in enumerate(scenario.cells):
        if model is SourceModel.C:
            points[i] = cell.center
        elif model is SourceModel.S:
            points[i] = s_point(cell)
        else:
            g = gamma_weight(cell.distance_from_origin, cell.radius, coeffs)
            b = g * s_point(cell) + (1.0 - g) * cell.center
            for j, other in enumerate(scenario.cells):
                if j != i:
                    b = b + displacement(cell.center, other.center, cell.radius, coeffs)
            off = b - cell.center
            dist = float(np.linalg.norm(off))
            if dist > cell.radius:
                log.warning(
                    "barycenter of cell '%s' pushed outside its sphere "
                    "(|B-C|=%.4g > R=%.4g); clamping to the surface",
                    cell.label, dist, cell.radius,
                )
                b = cell.center + off * (cell.radius / dist)
            points[i] = b
    return BarycenterSet(model=model, points=points)


def kernel_distances(scenario: Scenario, sources: BarycenterSet) -> np.ndarray:
    """(K, K) matrix of distances from cell j's source point to cell k's center.

    Entry [k, j] feeds the diffusion kernel coupling cell j's absorption into
    cell k's rate. The diagonal is not meaningful and is set to NaN.
    """
    centers = scenario.centers()
    d = np.linalg.norm(centers[:, None, :] - sources.points[None, :, :], axis=2)
    np.fill_diagonal(d, np.nan)
    return d
