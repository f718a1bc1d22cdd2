"""Command-line entry point: `mcdiffusim <mode> --spec spec.json [...]`."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness, particle, volterra
from .geometry import SourceModel, predict_barycenters
from .harness import ExperimentSpec

log = logging.getLogger(__name__)

MODES = ("simulate", "model", "solve", "compare", "barycenter", "sweep")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mcdiffusim",
        description="Diffusive molecular channel with multiple absorbing receivers",
    )
    p.add_argument("mode", choices=MODES)
    p.add_argument("--spec", required=True, help="experiment spec JSON")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for sweeps / simulation threads")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _require_scenario(spec: ExperimentSpec):
    if spec.scenario is None:
        raise SystemExit("this mode needs a 'scenario' entry in the spec")
    return spec.scenario


def _run_model(spec: ExperimentSpec, out_dir: Path) -> int:
    scenario = _require_scenario(spec)
    grid = spec.solver_grid()
    times = grid.times_from_zero
    models = spec.models or tuple(SourceModel)
    header = ["t_s"]
    cols = [times]
    for model in models:
        params = harness.series_params_for(scenario, model)
        header += [f"cum_{model.value}", f"cir_{model.value}"]
        cols.append(harness.analytic.two_receiver_cumulative(params, scenario.emitted, times))
        cols.append(harness.analytic.two_receiver_cir(params, times))
    rows = [[f"{c[m]:.10g}" for c in cols] for m in range(times.size)]
    harness._atomic_write_csv(out_dir / "model.csv", header, rows)
    return 0


def _run_solve(spec: ExperimentSpec, out_dir: Path) -> int:
    scenario = _require_scenario(spec)
    grid = spec.solver_grid()
    for model in spec.models or tuple(SourceModel):
        solution = volterra.solve(scenario, model, grid)
        harness.write_solution_csv(out_dir / f"solve_{model.value}.csv", solution)
    return 0


def _run_simulate(spec: ExperimentSpec, out_dir: Path, threads: int) -> int:
    scenario = _require_scenario(spec)
    cfg = particle.SimConfig(
        dt=spec.sim_dt_s, horizon=spec.horizon_s, seed=spec.seed,
        molecules=spec.molecules, detection=spec.detection,
        threads=threads if threads > 1 else None,
    )
    result = particle.run(scenario, cfg)
    harness.write_sim_csv(out_dir / "simulate.csv", result)
    harness.write_events_csv(out_dir / "events.csv", result)
    return 0


def _run_compare(spec: ExperimentSpec, out_dir: Path, threads: int) -> int:
    scenario = _require_scenario(spec)
    grid = spec.solver_grid()
    cfg = particle.SimConfig(
        dt=spec.sim_dt_s, horizon=spec.horizon_s, seed=spec.seed,
        molecules=spec.molecules, detection=spec.detection,
        threads=threads if threads > 1 else None,
    )
    result = particle.run(scenario, cfg)
    harness.write_sim_csv(out_dir / "simulate.csv", result)
    sources = None
    if spec.measured_barycenters:
        points = np.array([particle.estimate_barycenter(result, k)
                           for k in range(scenario.n_cells)])
        sources = harness.BarycenterSet(model=SourceModel.B, points=points)
    for model in spec.models or tuple(SourceModel):
        solution = volterra.solve(
            scenario, model, grid,
            sources=sources if model is SourceModel.B else None,
        )
        harness.write_solution_csv(out_dir / f"solve_{model.value}.csv", solution)
    report = harness.peak_shift_report(scenario, grid) if scenario.n_cells == 2 else {}
    summary = {
        "final_sim": {lbl: float(result.counts[k, -1]) for k, lbl in enumerate(result.labels)},
        "survivors": result.survivors,
        "measured_barycenters": spec.measured_barycenters,
        **report,
    }
    with open(out_dir / "compare.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return 0


def _run_barycenter(spec: ExperimentSpec, out_dir: Path, threads: int) -> int:
    scenario = _require_scenario(spec)
    cfg = particle.SimConfig(
        dt=spec.sim_dt_s, horizon=spec.horizon_s, seed=spec.seed,
        molecules=spec.molecules, detection=spec.detection,
        threads=threads if threads > 1 else None,
    )
    rows = harness.barycenter_report(scenario, cfg)
    header = ["cell", "r_um", "radius_um", "events",
              "pred_x_um", "pred_y_um", "pred_z_um",
              "meas_x_um", "meas_y_um", "meas_z_um",
              "error_um", "error_over_radius"]
    csv_rows = []
    for row in rows:
        meas = row["measured_um"] or [float("nan")] * 3
        csv_rows.append([
            row["cell"], row["r_um"], row["radius_um"], row["events"],
            *row["predicted_um"], *meas,
            row["error_um"] if row["error_um"] is not None else "",
            row["error_over_radius"] if row["error_over_radius"] is not None else "",
        ])
    harness._atomic_write_csv(out_dir / "barycenter.csv", header, csv_rows)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    spec = ExperimentSpec.from_json(args.spec)
    if spec.mode != args.mode:
        log.warning("spec declares mode '%s' but '%s' was requested; using '%s'",
                    spec.mode, args.mode, args.mode)
    if args.seed is not None:
        spec = ExperimentSpec(**{**spec.__dict__, "seed": args.seed})
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.mode == "sweep":
        return harness.run_sweep(spec, out_dir, threads=args.threads)
    if args.mode == "model":
        return _run_model(spec, out_dir)
    if args.mode == "solve":
        return _run_solve(spec, out_dir)
    if args.mode == "simulate":
        return _run_simulate(spec, out_dir, args.threads)
    if args.mode == "compare":
        return _run_compare(spec, out_dir, args.threads)
    return _run_barycenter(spec, out_dir, args.threads)


if __name__ == "__main__":
    sys.exit(main())
