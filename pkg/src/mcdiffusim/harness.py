"""Experiment builders, sweeps and reports on top of the model/sim stack.

Everything here produces flat CSV artifacts; every row carries the inputs
that generated it so each output file is regenerable on its own.
"""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import analytic, particle, volterra
from .analytic import SeriesParams, TimeGrid
from .geometry import (
    BarycenterSet,
    Scenario,
    SourceModel,
    SphericalCell,
    kernel_distances,
    predict_barycenters,
    s_point,
)

DEFAULT_DIFFUSION = 79.4   # um^2/s, water-like medium
DEFAULT_RADIUS = 1.0       # um
DEFAULT_EMITTED = 10_000
SPEC_SCHEMA = 1


def build_single_interferer_scenario(r_r: float, d: float, theta_deg: float,
                                     radius: float = DEFAULT_RADIUS,
                                     diffusion: float = DEFAULT_DIFFUSION,
                                     emitted: int = DEFAULT_EMITTED) -> Scenario:
    """Receiver on the z-axis at distance r_r, interferer at distance d from it.

    theta is the angle at the receiver between the direction back to the
    transmitter and the direction to the interferer: 0 deg puts the interferer
    collinear between transmitter and receiver, 180 deg collinear beyond the
    receiver. The interferer stays in the y = 0 plane.
    """
    theta = math.radians(theta_deg)
    target = SphericalCell(center=(0.0, 0.0, r_r), radius=radius, label="R")
    interferer_center = np.array([
        d * math.sin(theta),
        0.0,
        r_r - d * math.cos(theta),
    ])
    interferer = SphericalCell(center=interferer_center, radius=radius, label="I")
    return Scenario(diffusion=diffusion, emitted=emitted, cells=(target, interferer))


def load_multi_interferer_template() -> dict:
    """Bundled four-interferer arc-sweep template (reconstructed layout)."""
    with resources.files("mcdiffusim.data").joinpath("multi_interferer.json").open() as fh:
        return json.load(fh)


def build_multi_interferer_scenario(alpha_deg: float, template: dict | None = None) -> Scenario:
    """Place the receiver on its arc at angle alpha among fixed interferers.

    The receiver center moves on the half circle of radius `target_r_um` in
    the z = 0 plane, at angle alpha from the x-axis.
    """
    if template is None:
        template = load_multi_interferer_template()
    alpha = math.radians(alpha_deg)
    tgt = template["target"]
    target = SphericalCell(
        center=(tgt["r_um"] * math.cos(alpha), tgt["r_um"] * math.sin(alpha), 0.0),
        radius=float(tgt["radius_um"]),
        label=str(tgt.get("label", "R")),
    )
    interferers = tuple(
        SphericalCell(center=c["center_um"], radius=float(c["radius_um"]),
                      label=str(c.get("label", f"I{i+1}")))
        for i, c in enumerate(template["interferers"])
    )
    return Scenario(
        diffusion=float(template["diffusion_um2_per_s"]),
        emitted=int(template["emitted"]),
        cells=(target,) + interferers,
    )


def series_params_for(scenario: Scenario, model: SourceModel) -> SeriesParams:
    """Closed-form series parameters for a two-cell scenario under one model."""
    if scenario.n_cells != 2:
        raise ValueError("the closed-form series applies to exactly two cells")
    a, b = scenario.cells
    if not math.isclose(a.radius, b.radius, rel_tol=1e-12):
        raise ValueError("the closed-form series assumes equal radii; use the solver")
    sources = predict_barycenters(scenario, model)
    d = kernel_distances(scenario, sources)
    return SeriesParams.from_distances(
        r_r=a.distance_from_origin,
        r_i=b.distance_from_origin,
        d_ri=d[0, 1],
        d_ir=d[1, 0],
        radius=a.radius,
        diffusion=scenario.diffusion,
    )


# ---------------------------------------------------------------------------
# reports

def peak_shift_report(scenario: Scenario, grid: TimeGrid,
                      sim_config: particle.SimConfig | None = None,
                      smooth_sigma: float = 5e-3) -> dict:
    """Peak-time comparison: isolated-receiver theory, B model, simulation.

    The simulated peak is the argmax of a Gaussian-smoothed histogram of the
    target's absorption times; it is flagged unstable below 500 events.
    """
    target = scenario.cells[0]
    t_single = analytic.peak_time(target.distance_from_origin, target.radius, scenario.diffusion)

    times = grid.times
    if scenario.n_cells == 2:
        params = series_params_for(scenario, SourceModel.B)
        cir = analytic.two_receiver_cir(params, times)
    else:
        solution = volterra.solve(scenario, SourceModel.B, grid)
        cir = solution.rates[0, 1:] / scenario.emitted
    t_model = float(times[int(np.argmax(cir))])

    report = {
        "t_peak_single_s": t_single,
        "t_peak_b_model_s": t_model,
        "model_shift_s": t_model - t_single,
        "model_shift_sign": int(np.sign(round(t_model - t_single, 12))),
    }

    if sim_config is not None:
        result = particle.run(scenario, sim_config)
        events = result.event_time[result.event_cell == 0]
        report["events"] = int(events.size)
        report["noisy_histogram"] = bool(events.size < 500)
        if events.size:
            hist_dt = grid.dt
            edges = np.arange(0.0, grid.horizon + hist_dt, hist_dt)
            hist, _ = np.histogram(events, bins=edges)
            half = int(math.ceil(4 * smooth_sigma / hist_dt))
            kern = np.exp(-0.5 * (np.arange(-half, half + 1) * hist_dt / smooth_sigma) ** 2)
            smooth = np.convolve(hist, kern / kern.sum(), mode="same")
            t_sim = float(edges[int(np.argmax(smooth))] + hist_dt / 2)
            report["t_peak_sim_s"] = t_sim
            report["sim_shift_s"] = t_sim - t_single
            report["sim_shift_sign"] = int(np.sign(round(t_sim - t_single, 12)))
    return report


def barycenter_report(scenario: Scenario, sim_config: particle.SimConfig) -> list[dict]:
    """Per-cell predicted (B model) versus measured absorption barycenters."""
    predicted = predict_barycenters(scenario, SourceModel.B)
    result = particle.run(scenario, sim_config)
    rows = []
    for k, cell in enumerate(scenario.cells):
        row = {
            "cell": cell.label,
            "radius_um": cell.radius,
            "r_um": cell.distance_from_origin,
            "predicted_um": predicted.points[k].tolist(),
            "events": int(np.sum(result.event_cell == k)),
        }
        try:
            measured = particle.estimate_barycenter(result, k)
        except ValueError:
            row["measured_um"] = None
            row["error_um"] = None
            row["error_over_radius"] = None
        else:
            err = float(np.linalg.norm(measured - predicted.points[k]))
            row["measured_um"] = measured.tolist()
            row["error_um"] = err
            row["error_over_radius"] = err / cell.radius
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# experiment specs and sweeps

@dataclass(frozen=True)
class ExperimentSpec:
    """Parsed experiment description (JSON schema 1)."""

    mode: str
    name: str = "experiment"
    scenario: Scenario | None = None
    models: tuple[SourceModel, ...] = ()
    theta_deg: tuple[float, ...] = ()
    d_um: tuple[float, ...] = ()
    alpha_deg: tuple[float, ...] = ()
    dt_s: tuple[float, ...] = ()
    r_r_um: float = 6.0
    radius_um: float = DEFAULT_RADIUS
    diffusion: float = DEFAULT_DIFFUSION
    emitted: int = DEFAULT_EMITTED
    horizon_s: float = 2.0
    solver_dt_s: float = 1e-4
    sim_dt_s: float = 1e-4
    detection: str = "segment"
    molecules: int | None = None
    simulate: bool = False
    measured_barycenters: bool = False
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "ExperimentSpec":
        if d.get("schema", SPEC_SCHEMA) != SPEC_SCHEMA:
            raise ValueError(f"unsupported experiment schema {d.get('schema')}")
        mode = d["mode"]
        if mode not in {"simulate", "model", "solve", "compare", "barycenter", "sweep"}:
            raise ValueError(f"unknown mode '{mode}'")
        scenario = None
        if "scenario" in d:
            sc = d["scenario"]
            if isinstance(sc, str):
                path = Path(sc)
                if base_dir is not None and not path.is_absolute():
                    path = base_dir / path
                scenario = Scenario.from_json(path)
            else:
                scenario = Scenario.from_dict(sc)
        models = tuple(SourceModel(m) for m in d.get("models", []))
        for axis in ("theta_deg", "alpha_deg"):
            for v in d.get(axis, []):
                if not (0.0 <= v < 360.0):
                    raise ValueError(f"{axis} values must lie in [0, 360), got {v}")
        spec = cls(
            mode=mode,
            name=str(d.get("name", "experiment")),
            scenario=scenario,
            models=models,
            theta_deg=tuple(d.get("theta_deg", [])),
            d_um=tuple(d.get("d_um", [])),
            alpha_deg=tuple(d.get("alpha_deg", [])),
            dt_s=tuple(d.get("dt_s", [])),
            r_r_um=float(d.get("r_r_um", 6.0)),
            radius_um=float(d.get("radius_um", DEFAULT_RADIUS)),
            diffusion=float(d.get("diffusion_um2_per_s", DEFAULT_DIFFUSION)),
            emitted=int(d.get("emitted", DEFAULT_EMITTED)),
            horizon_s=float(d.get("horizon_s", 2.0)),
            solver_dt_s=float(d.get("solver_dt_s", 1e-4)),
            sim_dt_s=float(d.get("sim_dt_s", 1e-4)),
            detection=str(d.get("detection", "segment")),
            molecules=d.get("molecules"),
            simulate=bool(d.get("simulate", False)),
            measured_barycenters=bool(d.get("measured_barycenters", False)),
            seed=int(d.get("seed", 0)),
        )
        if spec.mode == "sweep" and not (spec.theta_deg or spec.d_um or spec.alpha_deg or spec.dt_s):
            raise ValueError("sweep mode needs at least one non-empty axis")
        return spec

    @classmethod
    def from_json(cls, path) -> "ExperimentSpec":
        path = Path(path)
        with open(path) as fh:
            return cls.from_dict(json.load(fh), base_dir=path.parent)

    def sim_config(self, dt: float | None = None) -> particle.SimConfig:
        return particle.SimConfig(
            dt=dt if dt is not None else self.sim_dt_s,
            horizon=self.horizon_s,
            seed=self.seed,
            molecules=self.molecules,
            detection=self.detection,
        )

    def solver_grid(self, dt: float | None = None) -> TimeGrid:
        return TimeGrid.from_horizon(dt if dt is not None else self.solver_dt_s, self.horizon_s)


def _atomic_write_csv(path: Path, header: list[str], rows: list[list]):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_solution_csv(path, solution: volterra.RateSolution):
    header = (["t_s"]
              + [f"rate_{lbl}" for lbl in solution.labels]
              + [f"cum_{lbl}" for lbl in solution.labels])
    rows = [
        [f"{solution.times[m]:.10g}"]
        + [f"{solution.rates[k, m]:.10g}" for k in range(len(solution.labels))]
        + [f"{solution.cumulative[k, m]:.10g}" for k in range(len(solution.labels))]
        for m in range(solution.times.size)
    ]
    _atomic_write_csv(Path(path), header, rows)


def write_sim_csv(path, result: particle.SimResult):
    header = ["t_s"] + [f"cum_{lbl}" for lbl in result.labels]
    rows = [
        [f"{result.times[m]:.10g}"] + [f"{result.counts[k, m]:.10g}" for k in range(len(result.labels))]
        for m in range(result.times.size)
    ]
    _atomic_write_csv(Path(path), header, rows)


def write_events_csv(path, result: particle.SimResult):
    header = ["cell", "t_s", "x_um", "y_um", "z_um"]
    rows = [
        [int(result.event_cell[i]), f"{result.event_time[i]:.10g}",
         f"{result.event_point[i, 0]:.10g}", f"{result.event_point[i, 1]:.10g}",
         f"{result.event_point[i, 2]:.10g}"]
        for i in range(result.event_cell.size)
    ]
    _atomic_write_csv(Path(path), header, rows)


def _sweep_points(spec: ExperimentSpec) -> list[dict]:
    """Cartesian sweep grid; alpha and (theta, d, dt) axes are exclusive."""
    if spec.alpha_deg:
        return [{"alpha_deg": a} for a in spec.alpha_deg]
    thetas = spec.theta_deg or (0.0,)
    ds = spec.d_um or (2.0,)
    dts = spec.dt_s or (spec.sim_dt_s,)
    return [
        {"theta_deg": th, "d_um": dd, "dt_s": dt}
        for th in thetas for dd in ds for dt in dts
    ]


def _point_scenario(spec: ExperimentSpec, point: dict) -> Scenario:
    if "alpha_deg" in point:
        return build_multi_interferer_scenario(point["alpha_deg"])
    return build_single_interferer_scenario(
        r_r=spec.r_r_um, d=point["d_um"], theta_deg=point["theta_deg"],
        radius=spec.radius_um, diffusion=spec.diffusion, emitted=spec.emitted,
    )


def _point_name(point: dict) -> str:
    return "_".join(f"{k.split('_')[0]}{v:g}" for k, v in sorted(point.items()))


def _evaluate_point(spec: ExperimentSpec, point: dict, out_dir: Path) -> dict:
    scenario = _point_scenario(spec, point)
    row: dict = {"schema": SPEC_SCHEMA, **point,
                 "r_r_um": spec.r_r_um, "radius_um": spec.radius_um,
                 "diffusion_um2_per_s": spec.diffusion, "emitted": spec.emitted,
                 "horizon_s": spec.horizon_s, "seed": spec.seed}
    grid = spec.solver_grid()
    for model in spec.models:
        solution = volterra.solve(scenario, model, grid)
        for k, lbl in enumerate(solution.labels):
            row[f"n_{model.value}_{lbl}"] = float(solution.cumulative[k, -1])
        row[f"tpeak_{model.value}_s"] = float(
            solution.times[int(np.argmax(solution.rates[0]))])
    if spec.simulate or spec.mode == "simulate" or not spec.models:
        cfg = spec.sim_config(dt=point.get("dt_s"))
        result = particle.run(scenario, cfg)
        for k, lbl in enumerate(result.labels):
            row[f"n_sim_{lbl}"] = float(result.counts[k, -1])
        row["sim_dt_s"] = cfg.dt
        row["survivors"] = result.survivors
    return row


def run_sweep(spec: ExperimentSpec, out_dir, threads: int = 1) -> int:
    """Evaluate every sweep point; returns 0 on success, 2 on partial failure.

    One CSV per point plus an aggregate `sweep.csv`; failures are recorded in
    `manifest.json` and do not stop the run.
    """
    out_dir = Path(out_dir) / spec.name
    out_dir.mkdir(parents=True, exist_ok=True)
    points = _sweep_points(spec)
    manifest = {"schema": SPEC_SCHEMA, "points": []}
    lock = threading.Lock()
    results: list[dict | None] = [None] * len(points)

    def work(idx_point):
        idx, point = idx_point
        name = _point_name(point)
        try:
            row = _evaluate_point(spec, point, out_dir)
            header = list(row.keys())
            _atomic_write_csv(out_dir / f"{name}.csv", header, [[row[h] for h in header]])
            results[idx] = row
            entry = {"point": name, "status": "ok"}
        except Exception as exc:  # per-point isolation: record and continue
            entry = {"point": name, "status": "error", "error": f"{type(exc).__name__}: {exc}"}
        with lock:
            manifest["points"].append(entry)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, enumerate(points)))
    else:
        for item in enumerate(points):
            work(item)

    ok_rows = [r for r in results if r is not None]
    if ok_rows:
        header = sorted({k for r in ok_rows for k in r}, key=lambda k: (k != "schema", k))
        _atomic_write_csv(out_dir / "sweep.csv",
                          header, [[r.get(h, "") for h in header] for r in ok_rows])
    manifest["points"].sort(key=lambda e: e["point"])
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return 0 if len(ok_rows) == len(points) else 2
