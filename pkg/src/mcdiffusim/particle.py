"""Brownian-dynamics Monte Carlo of molecules absorbed by spherical cells.

Molecules start at the origin, take Gaussian steps of standard deviation
sqrt(2 D dt) per axis, and are removed on first contact with any cell. Three
detection modes are provided: `endpoint` checks only the post-step position
(deliberately reproducing the step-size bias of position-check simulators);
`segment` intersects the whole displacement segment with every sphere and is
the default; `bridge` adds a Brownian-bridge crossing probability for chords
that pass near a sphere without touching it, removing most of the residual
O(sqrt(dt)) absorption deficit of the pure chord test.

Every molecule owns an independent counter-based random stream derived from
(seed, molecule index), so results are bit-identical for any thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numba
import numpy as np
from numba import njit, prange

from .geometry import Scenario


class DetectionMode(str, Enum):
    ENDPOINT = "endpoint"
    SEGMENT = "segment"
    BRIDGE = "bridge"


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo run settings.

    `molecules` defaults to the scenario's emitted count. `bin_width` sets the
    resolution of the cumulative count traces; raw events are always kept.
    """

    dt: float
    horizon: float
    seed: int = 0
    molecules: int | None = None
    detection: DetectionMode = DetectionMode.SEGMENT
    bin_width: float = 1e-3
    threads: int | None = None

    def __post_init__(self):
        if not (self.dt > 0):
            raise ValueError("dt must be positive")
        if self.horizon < self.dt:
            raise ValueError("horizon must be at least one step")
        object.__setattr__(self, "detection", DetectionMode(self.detection))


@dataclass(frozen=True)
class SimResult:
    """Absorption events, binned counts and measured barycenters of one run."""

    times: np.ndarray            # (B,) right edges of the output bins
    counts: np.ndarray           # (K, B) cumulative absorbed per cell
    event_cell: np.ndarray       # (E,) cell index per absorption, time-sorted
    event_time: np.ndarray       # (E,) absorption time, s
    event_point: np.ndarray      # (E, 3) absorption point on the cell surface
    survivors: int
    molecules: int
    labels: tuple[str, ...]

    def final_counts(self) -> np.ndarray:
        return self.counts[:, -1]

    def events_of(self, cell: int) -> np.ndarray:
        """(n, 3) absorption points of one cell."""
        return self.event_point[self.event_cell == cell]


# ---------------------------------------------------------------------------
# counter-based RNG: one splitmix64 stream per molecule, Box-Muller normals

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
TWO_M53 = 1.0 / 9007199254740992.0  # 2^-53


@njit(inline="always")
def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(inline="always")
def _stream_init(seed, molecule):
    return _mix64(np.uint64(seed) ^ _mix64(np.uint64(molecule) + GOLDEN))


@njit(inline="always")
def _next_uniform(state):
    # splitmix64 step; uniform in (0, 1]
    state = state + GOLDEN
    z = _mix64(state)
    return state, ((z >> np.uint64(11)) + np.uint64(1)) * TWO_M53


@njit(inline="always")
def _next_normal_pair(state):
    # Marsaglia polar transform: exact normals from uniforms, no trig
    while True:
        state, u1 = _next_uniform(state)
        state, u2 = _next_uniform(state)
        vx = 2.0 * u1 - 1.0
        vy = 2.0 * u2 - 1.0
        s = vx * vx + vy * vy
        if 0.0 < s < 1.0:
            factor = math.sqrt(-2.0 * math.log(s) / s)
            return state, vx * factor, vy * factor


@njit(inline="always")
def _next_step_normals(state, spare, have_spare):
    """Three standard normals per walk step; Box-Muller with a carried spare."""
    state, g1, g2 = _next_normal_pair(state)
    if have_spare:
        return state, g1, g2, spare, 0.0, False
    state, g3, g4 = _next_normal_pair(state)
    return state, g1, g2, g3, g4, True


@njit(inline="always")
def _segment_entry(px, py, pz, dx, dy, dz, cx, cy, cz, radius):
    """Smallest s in [0, 1] with |p + s*d - c| = radius, or 2.0 if none."""
    mx = px - cx
    my = py - cy
    mz = pz - cz
    a = dx * dx + dy * dy + dz * dz
    if a <= 0.0:
        return 2.0
    b = mx * dx + my * dy + mz * dz
    c = mx * mx + my * my + mz * mz - radius * radius
    if c <= 0.0:
        return 0.0  # start already on/inside the sphere (roundoff)
    disc = b * b - a * c
    if disc < 0.0:
        return 2.0
    s = (-b - math.sqrt(disc)) / a
    if 0.0 <= s <= 1.0:
        return s
    return 2.0


MODE_ENDPOINT = 0
MODE_SEGMENT = 1
MODE_BRIDGE = 2


@njit(parallel=True, cache=True, fastmath=True)
def _run_kernel(cx, cy, cz, rad, n_mol, n_steps, step_sigma, dt, seed, mode,
                diffusion, out_cell, out_time, out_px, out_py, out_pz):
    n_cells = cx.size
    for m in prange(n_mol):
        state = _stream_init(seed, m)
        x = 0.0
        y = 0.0
        z = 0.0
        hit_cell = -1
        hit_time = -1.0
        hx = 0.0
        hy = 0.0
        hz = 0.0
        spare = 0.0
        have_spare = False
        for step in range(n_steps):
            state, g1, g2, g3, spare, have_spare = _next_step_normals(state, spare, have_spare)
            ddx = g1 * step_sigma
            ddy = g2 * step_sigma
            ddz = g3 * step_sigma
            nx = x + ddx
            ny = y + ddy
            nz = z + ddz
            if mode != MODE_ENDPOINT:
                best_s = 2.0
                best_k = -1
                for k in range(n_cells):
                    s = _segment_entry(x, y, z, ddx, ddy, ddz, cx[k], cy[k], cz[k], rad[k])
                    if s < best_s:
                        best_s = s
                        best_k = k
                if best_k >= 0:
                    hit_cell = best_k
                    hit_time = (step + best_s) * dt
                    hx = x + best_s * ddx
                    hy = y + best_s * ddy
                    hz = z + best_s * ddz
                    break
                if mode == MODE_BRIDGE:
                    # chord missed every sphere: the Brownian bridge between the
                    # endpoints may still have touched one. Near a surface, the
                    # one-sided crossing probability is exp(-a*b/(D*dt)) for
                    # start/end clearances a, b (flat-wall approximation, valid
                    # for step lengths well below the radius).
                    for k in range(n_cells):
                        ex0 = x - cx[k]
                        ey0 = y - cy[k]
                        ez0 = z - cz[k]
                        d0_sq = ex0 * ex0 + ey0 * ey0 + ez0 * ez0
                        reach = rad[k] + 6.0 * step_sigma
                        if d0_sq > reach * reach:
                            continue
                        ex1 = nx - cx[k]
                        ey1 = ny - cy[k]
                        ez1 = nz - cz[k]
                        a = math.sqrt(d0_sq) - rad[k]
                        b = math.sqrt(ex1 * ex1 + ey1 * ey1 + ez1 * ez1) - rad[k]
                        p_hit = math.exp(-a * b / (diffusion * dt))
                        state, u = _next_uniform(state)
                        if u < p_hit:
                            hit_cell = k
                            hit_time = (step + 1) * dt
                            # surface point closest to the chord
                            s_mid = min(max(-(ex0 * ddx + ey0 * ddy + ez0 * ddz)
                                            / (ddx * ddx + ddy * ddy + ddz * ddz), 0.0), 1.0)
                            px = x + s_mid * ddx - cx[k]
                            py = y + s_mid * ddy - cy[k]
                            pz = z + s_mid * ddz - cz[k]
                            norm = math.sqrt(px * px + py * py + pz * pz)
                            scale = rad[k] / norm if norm > 0.0 else 0.0
                            hx = cx[k] + px * scale
                            hy = cy[k] + py * scale
                            hz = cz[k] + pz * scale
                            break
                    if hit_cell >= 0:
                        break
            else:
                for k in range(n_cells):
                    ex = nx - cx[k]
                    ey = ny - cy[k]
                    ez = nz - cz[k]
                    if ex * ex + ey * ey + ez * ez <= rad[k] * rad[k]:
                        hit_cell = k
                        hit_time = (step + 1) * dt
                        s = _segment_entry(x, y, z, ddx, ddy, ddz, cx[k], cy[k], cz[k], rad[k])
                        if s <= 1.0:
                            hx = x + s * ddx
                            hy = y + s * ddy
                            hz = z + s * ddz
                        else:
                            # endpoint inside but no clean root: project radially
                            norm = math.sqrt(ex * ex + ey * ey + ez * ez)
                            scale = rad[k] / norm if norm > 0.0 else 0.0
                            hx = cx[k] + ex * scale
                            hy = cy[k] + ey * scale
                            hz = cz[k] + ez * scale
                        break
                if hit_cell >= 0:
                    break
            x = nx
            y = ny
            z = nz
        out_cell[m] = hit_cell
        out_time[m] = hit_time
        out_px[m] = hx
        out_py[m] = hy
        out_pz[m] = hz


@njit(parallel=True, cache=True, fastmath=True)
def _paired_endpoint_kernel(cx, cy, cz, rad, n_mol, n_fine_steps, ratio,
                            step_sigma, seed, out_fine, out_coarse):
    """Endpoint detection at two step sizes on one shared Brownian path.

    The walk advances at the fine step; the coarse detector only inspects the
    positions at every `ratio`-th step, which is exactly a coarse random walk.
    Sharing the path makes the fine/coarse count difference almost noise-free.
    """
    n_cells = cx.size
    for m in prange(n_mol):
        state = _stream_init(seed, m)
        x = 0.0
        y = 0.0
        z = 0.0
        spare = 0.0
        have_spare = False
        fine_cell = -1
        coarse_cell = -1
        for step in range(n_fine_steps):
            state, g1, g2, g3, spare, have_spare = _next_step_normals(state, spare, have_spare)
            x += g1 * step_sigma
            y += g2 * step_sigma
            z += g3 * step_sigma
            inside = -1
            for k in range(n_cells):
                ex = x - cx[k]
                ey = y - cy[k]
                ez = z - cz[k]
                if ex * ex + ey * ey + ez * ez <= rad[k] * rad[k]:
                    inside = k
                    break
            if inside >= 0 and fine_cell < 0:
                fine_cell = inside
            if (step + 1) % ratio == 0 and coarse_cell < 0:
                coarse_cell = inside
            if fine_cell >= 0 and coarse_cell >= 0:
                break
        out_fine[m] = fine_cell
        out_coarse[m] = coarse_cell


def paired_endpoint_counts(scenario: Scenario, dt_coarse: float, dt_fine: float,
                           horizon: float, seed: int = 0,
                           molecules: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell absorbed counts under endpoint detection at two step sizes.

    Both detections observe the same Brownian paths (dt_coarse must be an
    integer multiple of dt_fine), so the systematic step-size bias can be
    estimated with far less Monte Carlo noise than two independent runs.
    Returns (counts_fine, counts_coarse).
    """
    ratio = dt_coarse / dt_fine
    if abs(ratio - round(ratio)) > 1e-9:
        raise ValueError("dt_coarse must be an integer multiple of dt_fine")
    ratio = int(round(ratio))
    n_mol = molecules if molecules is not None else scenario.emitted
    n_fine_steps = int(round(horizon / dt_fine))
    centers = scenario.centers()
    out_fine = np.full(n_mol, -1, dtype=np.int64)
    out_coarse = np.full(n_mol, -1, dtype=np.int64)
    _paired_endpoint_kernel(
        np.ascontiguousarray(centers[:, 0]),
        np.ascontiguousarray(centers[:, 1]),
        np.ascontiguousarray(centers[:, 2]),
        np.ascontiguousarray(scenario.radii()),
        n_mol,
        n_fine_steps,
        ratio,
        math.sqrt(2.0 * scenario.diffusion * dt_fine),
        np.uint64(seed),
        out_fine,
        out_coarse,
    )
    k = scenario.n_cells
    counts_fine = np.array([(out_fine == c).sum() for c in range(k)])
    counts_coarse = np.array([(out_coarse == c).sum() for c in range(k)])
    return counts_fine, counts_coarse


def step(position, dt: float, diffusion: float, rng: np.random.Generator) -> np.ndarray:
    """One Brownian increment: each axis moves by N(0, 1) * sqrt(2 D dt)."""
    if not (dt > 0):
        raise ValueError("dt must be positive")
    return np.asarray(position, dtype=float) + rng.standard_normal(3) * math.sqrt(2.0 * diffusion * dt)


def detect_absorption(p0, p1, cells, mode: DetectionMode = DetectionMode.SEGMENT):
    """First absorption along the step from p0 to p1, or None.

    Segment mode returns the cell whose sphere the segment enters first
    (smallest entry parameter; ties go to the lower cell index) together with
    the entry point. Endpoint mode only triggers when p1 ends inside a cell,
    but still reports the segment entry point for barycenter bookkeeping.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    d = p1 - p0
    mode = DetectionMode(mode)
    best = None
    for k, cell in enumerate(cells):
        if mode is DetectionMode.ENDPOINT and not cell.contains(p1):
            continue
        s = _segment_entry(p0[0], p0[1], p0[2], d[0], d[1], d[2],
                           cell.center[0], cell.center[1], cell.center[2], cell.radius)
        if mode is DetectionMode.ENDPOINT:
            if s > 1.0:
                off = p1 - cell.center
                norm = np.linalg.norm(off)
                point = cell.center + off * (cell.radius / norm) if norm > 0 else cell.center.copy()
                return k, point
            return k, p0 + s * d
        if s <= 1.0 and (best is None or s < best[0]):
            best = (s, k)
    if best is None:
        return None
    s, k = best
    return k, p0 + s * d


def run(scenario: Scenario, config: SimConfig) -> SimResult:
    """Simulate all molecules and collect events, counts and survivors."""
    n_mol = config.molecules if config.molecules is not None else scenario.emitted
    if n_mol < 0:
        raise ValueError("molecule count must be nonnegative")
    n_steps = int(round(config.horizon / config.dt))
    centers = scenario.centers()
    radii = scenario.radii()

    out_cell = np.full(n_mol, -1, dtype=np.int64)
    out_time = np.full(n_mol, -1.0)
    out_px = np.zeros(n_mol)
    out_py = np.zeros(n_mol)
    out_pz = np.zeros(n_mol)

    if n_mol > 0:
        old_threads = numba.get_num_threads()
        if config.threads is not None:
            numba.set_num_threads(min(config.threads, numba.config.NUMBA_NUM_THREADS))
        try:
            _run_kernel(
                np.ascontiguousarray(centers[:, 0]),
                np.ascontiguousarray(centers[:, 1]),
                np.ascontiguousarray(centers[:, 2]),
                np.ascontiguousarray(radii),
                n_mol,
                n_steps,
                math.sqrt(2.0 * scenario.diffusion * config.dt),
                config.dt,
                np.uint64(config.seed),
                {DetectionMode.ENDPOINT: MODE_ENDPOINT,
                 DetectionMode.SEGMENT: MODE_SEGMENT,
                 DetectionMode.BRIDGE: MODE_BRIDGE}[config.detection],
                scenario.diffusion,
                out_cell, out_time, out_px, out_py, out_pz,
            )
        finally:
            numba.set_num_threads(old_threads)

    absorbed = out_cell >= 0
    order = np.lexsort((np.nonzero(absorbed)[0], out_cell[absorbed], out_time[absorbed]))
    idx = np.nonzero(absorbed)[0][order]
    event_cell = out_cell[idx]
    event_time = out_time[idx]
    event_point = np.column_stack([out_px[idx], out_py[idx], out_pz[idx]])

    n_bins = max(int(math.ceil(config.horizon / config.bin_width)), 1)
    edges = np.arange(1, n_bins + 1) * config.bin_width
    k = scenario.n_cells
    counts = np.zeros((k, n_bins))
    for c in range(k):
        t_c = event_time[event_cell == c]
        counts[c] = np.searchsorted(np.sort(t_c), edges, side="right")

    return SimResult(
        times=edges,
        counts=counts,
        event_cell=event_cell,
        event_time=event_time,
        event_point=event_point,
        survivors=int(n_mol - absorbed.sum()),
        molecules=n_mol,
        labels=tuple(c.label for c in scenario.cells),
    )


def estimate_barycenter(result: SimResult, cell: int) -> np.ndarray:
    """Mean absorption point of one cell over the whole run."""
    pts = result.events_of(cell)
    if pts.shape[0] == 0:
        raise ValueError(f"cell {cell} absorbed no molecules; barycenter undefined")
    return pts.mean(axis=0)
