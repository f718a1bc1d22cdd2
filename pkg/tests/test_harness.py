import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from mcdiffusim import SourceModel, TimeGrid, cli, harness
from mcdiffusim.harness import (
    ExperimentSpec,
    build_multi_interferer_scenario,
    build_single_interferer_scenario,
    series_params_for,
)


class TestScenarioBuilders:
    def test_single_interferer_theta_zero_between(self):
        sc = build_single_interferer_scenario(6.0, 2.0, 0.0)
        np.testing.assert_allclose(sc.cells[0].center, (0, 0, 6))
        np.testing.assert_allclose(sc.cells[1].center, (0, 0, 4), atol=1e-12)
        assert sc.cells[0].label == "R" and sc.cells[1].label == "I"

    def test_single_interferer_theta_180_behind(self):
        sc = build_single_interferer_scenario(6.0, 3.0, 180.0)
        np.testing.assert_allclose(sc.cells[1].center, (0, 0, 9), atol=1e-12)

    def test_single_interferer_distance_preserved(self):
        for theta in (0.0, 30.0, 90.0, 135.0):
            sc = build_single_interferer_scenario(6.0, 2.5, theta)
            d = np.linalg.norm(sc.cells[0].center - sc.cells[1].center)
            assert d == pytest.approx(2.5, rel=1e-12)

    def test_multi_interferer_target_on_arc(self):
        template = harness.load_multi_interferer_template()
        r = template["target"]["r_um"]
        for alpha in (0.0, 45.0, 90.0):
            sc = build_multi_interferer_scenario(alpha)
            tgt = sc.cells[0]
            assert tgt.distance_from_origin == pytest.approx(r, rel=1e-12)
            assert tgt.center[2] == 0.0
            assert math.degrees(math.atan2(tgt.center[1], tgt.center[0])) == pytest.approx(alpha, abs=1e-9)
        assert sc.n_cells == 1 + len(template["interferers"])


class TestSeriesParamsFor:
    def test_c_model_distances(self):
        sc = build_single_interferer_scenario(6.0, 3.0, 180.0)
        p = series_params_for(sc, SourceModel.C)
        assert p.alpha == pytest.approx(1 / 6)
        assert p.kappa == pytest.approx(1 / 9)

    def test_requires_two_cells(self, single_cell_scenario):
        with pytest.raises(ValueError, match="two cells"):
            series_params_for(single_cell_scenario, SourceModel.C)

    def test_requires_equal_radii(self):
        from mcdiffusim import Scenario, SphericalCell
        sc = Scenario(diffusion=79.4, emitted=100, cells=(
            SphericalCell((0, 0, 6), 1.0, "R"), SphericalCell((0, 0, 9), 0.5, "I")))
        with pytest.raises(ValueError, match="equal radii"):
            series_params_for(sc, SourceModel.C)


class TestExperimentSpec:
    def test_minimal(self):
        spec = ExperimentSpec.from_dict({"mode": "sweep", "theta_deg": [0, 90]})
        assert spec.mode == "sweep"
        assert spec.theta_deg == (0.0, 90.0)

    def test_unknown_mode(self):
        with pytest.raises(ValueError, match="unknown mode"):
            ExperimentSpec.from_dict({"mode": "frobnicate"})

    def test_angle_out_of_range(self):
        with pytest.raises(ValueError, match="theta_deg"):
            ExperimentSpec.from_dict({"mode": "sweep", "theta_deg": [400.0]})

    def test_sweep_needs_axis(self):
        with pytest.raises(ValueError, match="axis"):
            ExperimentSpec.from_dict({"mode": "sweep"})

    def test_inline_scenario(self):
        spec = ExperimentSpec.from_dict({
            "mode": "solve",
            "scenario": {
                "schema": 1, "diffusion_um2_per_s": 79.4, "emitted": 100,
                "cells": [{"label": "R", "center_um": [0, 0, 6], "radius_um": 1}],
            },
        })
        assert spec.scenario.n_cells == 1

    def test_scenario_path_relative_to_spec(self, tmp_path, single_cell_scenario):
        single_cell_scenario.to_json(tmp_path / "scn.json")
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps({"mode": "solve", "scenario": "scn.json"}))
        spec = ExperimentSpec.from_json(spec_path)
        assert spec.scenario == single_cell_scenario


class TestPeakShiftReport:
    def test_interferer_between_advances_peak(self):
        sc = build_single_interferer_scenario(6.0, 3.0, 0.0)
        rep = harness.peak_shift_report(sc, TimeGrid(1e-3, 500))
        assert rep["model_shift_sign"] == 1  # peak pushed later

    def test_interferer_behind_anticipates_peak(self):
        sc = build_single_interferer_scenario(6.0, 3.0, 180.0)
        rep = harness.peak_shift_report(sc, TimeGrid(1e-3, 500))
        assert rep["model_shift_sign"] == -1  # peak pulled earlier


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestCsvWriters:
    def test_solution_csv(self, tmp_path, single_cell_scenario):
        from mcdiffusim import solve
        sol = solve(single_cell_scenario, SourceModel.C, TimeGrid(1e-2, 20))
        harness.write_solution_csv(tmp_path / "s.csv", sol)
        rows = read_csv(tmp_path / "s.csv")
        assert rows[0] == ["t_s", "rate_R", "cum_R"]
        assert len(rows) == 1 + 21  # header + grid including t = 0
        assert float(rows[1][0]) == 0.0 and float(rows[1][2]) == 0.0
        assert float(rows[-1][2]) == pytest.approx(sol.final_counts()[0], rel=1e-9)

    def test_sim_and_events_csv(self, tmp_path, single_cell_scenario):
        from mcdiffusim import SimConfig, run
        res = run(single_cell_scenario,
                  SimConfig(dt=1e-3, horizon=0.1, seed=5, molecules=2000))
        harness.write_sim_csv(tmp_path / "sim.csv", res)
        harness.write_events_csv(tmp_path / "ev.csv", res)
        sim_rows = read_csv(tmp_path / "sim.csv")
        assert sim_rows[0] == ["t_s", "cum_R"]
        assert float(sim_rows[-1][1]) == res.final_counts()[0]
        ev_rows = read_csv(tmp_path / "ev.csv")
        assert ev_rows[0] == ["cell", "t_s", "x_um", "y_um", "z_um"]
        assert len(ev_rows) == 1 + res.event_time.size
        point = np.array([float(v) for v in ev_rows[1][2:]])
        assert np.linalg.norm(point - single_cell_scenario.cells[0].center) == pytest.approx(1.0, rel=1e-6)


SWEEP_SPEC = {
    "mode": "sweep",
    "name": "mini",
    "models": ["C", "S"],
    "theta_deg": [0.0, 90.0],
    "d_um": [3.0],
    "horizon_s": 0.2,
    "solver_dt_s": 1e-3,
    "emitted": 10000,
}


class TestRunSweep:
    def test_outputs_and_determinism(self, tmp_path):
        spec = ExperimentSpec.from_dict(SWEEP_SPEC)
        rc = harness.run_sweep(spec, tmp_path / "a")
        assert rc == 0
        out = tmp_path / "a" / "mini"
        files = sorted(p.name for p in out.iterdir())
        assert "sweep.csv" in files and "manifest.json" in files
        manifest = json.loads((out / "manifest.json").read_text())
        assert all(e["status"] == "ok" for e in manifest["points"])
        rows = read_csv(out / "sweep.csv")
        assert len(rows) == 1 + 2  # two sweep points
        # byte-identical rerun
        harness.run_sweep(spec, tmp_path / "b")
        for name in files:
            assert (tmp_path / "a" / "mini" / name).read_bytes() == \
                (tmp_path / "b" / "mini" / name).read_bytes()

    def test_partial_failure_recorded(self, tmp_path):
        # d = 1.5 < 2R makes the S-model kernel distance hit the receiver
        # sphere; the point fails but the sweep keeps going
        bad = dict(SWEEP_SPEC, d_um=[3.0, 1.5], theta_deg=[0.0])
        spec = ExperimentSpec.from_dict(bad)
        rc = harness.run_sweep(spec, tmp_path)
        assert rc == 2
        manifest = json.loads((tmp_path / "mini" / "manifest.json").read_text())
        status = {e["point"]: e["status"] for e in manifest["points"]}
        assert "error" in status.values() and "ok" in status.values()

    def test_threaded_matches_serial(self, tmp_path):
        spec = ExperimentSpec.from_dict(SWEEP_SPEC)
        harness.run_sweep(spec, tmp_path / "serial", threads=1)
        harness.run_sweep(spec, tmp_path / "par", threads=4)
        assert (tmp_path / "serial" / "mini" / "sweep.csv").read_bytes() == \
            (tmp_path / "par" / "mini" / "sweep.csv").read_bytes()


class TestCli:
    def write_spec(self, tmp_path, payload):
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(payload))
        return str(path)

    def two_cell_payload(self, mode, **extra):
        payload = {
            "mode": mode,
            "scenario": build_single_interferer_scenario(6.0, 3.0, 0.0).to_dict(),
            "horizon_s": 0.2,
            "solver_dt_s": 1e-3,
            "sim_dt_s": 1e-3,
            "molecules": 2000,
        }
        payload.update(extra)
        return payload

    def test_model_mode(self, tmp_path):
        spec = self.write_spec(tmp_path, self.two_cell_payload("model", models=["C", "B"]))
        rc = cli.main(["model", "--spec", spec, "--out", str(tmp_path / "out")])
        assert rc == 0
        rows = read_csv(tmp_path / "out" / "model.csv")
        assert rows[0] == ["t_s", "cum_C", "cir_C", "cum_B", "cir_B"]
        assert float(rows[-1][1]) > 0

    def test_solve_mode(self, tmp_path):
        spec = self.write_spec(tmp_path, self.two_cell_payload("solve", models=["C"]))
        rc = cli.main(["solve", "--spec", spec, "--out", str(tmp_path / "out")])
        assert rc == 0
        rows = read_csv(tmp_path / "out" / "solve_C.csv")
        assert rows[0] == ["t_s", "rate_R", "rate_I", "cum_R", "cum_I"]

    def test_simulate_mode(self, tmp_path):
        spec = self.write_spec(tmp_path, self.two_cell_payload("simulate"))
        rc = cli.main(["simulate", "--spec", spec, "--out", str(tmp_path / "out")])
        assert rc == 0
        assert (tmp_path / "out" / "simulate.csv").exists()
        assert (tmp_path / "out" / "events.csv").exists()

    def test_compare_mode_with_measured_barycenters(self, tmp_path):
        spec = self.write_spec(tmp_path, self.two_cell_payload(
            "compare", models=["C", "B"], measured_barycenters=True))
        rc = cli.main(["compare", "--spec", spec, "--out", str(tmp_path / "out")])
        assert rc == 0
        summary = json.loads((tmp_path / "out" / "compare.json").read_text())
        assert summary["measured_barycenters"] is True
        assert "model_shift_sign" in summary
        assert (tmp_path / "out" / "solve_B.csv").exists()

    def test_barycenter_mode(self, tmp_path):
        spec = self.write_spec(tmp_path, self.two_cell_payload("barycenter"))
        rc = cli.main(["barycenter", "--spec", spec, "--out", str(tmp_path / "out")])
        assert rc == 0
        rows = read_csv(tmp_path / "out" / "barycenter.csv")
        assert rows[0][0] == "cell"
        assert len(rows) == 3  # header + two cells

    def test_seed_override_changes_simulation(self, tmp_path):
        spec = self.write_spec(tmp_path, self.two_cell_payload("simulate"))
        cli.main(["simulate", "--spec", spec, "--out", str(tmp_path / "a"), "--seed", "1"])
        cli.main(["simulate", "--spec", spec, "--out", str(tmp_path / "b"), "--seed", "2"])
        cli.main(["simulate", "--spec", spec, "--out", str(tmp_path / "c"), "--seed", "1"])
        a = (tmp_path / "a" / "events.csv").read_bytes()
        b = (tmp_path / "b" / "events.csv").read_bytes()
        c = (tmp_path / "c" / "events.csv").read_bytes()
        assert a != b and a == c

    def test_sweep_mode(self, tmp_path):
        spec = self.write_spec(tmp_path, SWEEP_SPEC)
        rc = cli.main(["sweep", "--spec", spec, "--out", str(tmp_path / "out"),
                       "--threads", "2"])
        assert rc == 0
        assert (tmp_path / "out" / "mini" / "sweep.csv").exists()
