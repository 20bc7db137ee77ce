from __future__ import annotations

import csv
import json
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest

from sapsim import cli, scheme
from sapsim import scenario as scn
from sapsim.errors import SolverDivergenceError
from sapsim.scenario import (BodySpec, ClutterSpec, OrderStudySpec, OutputSpec, Scenario,
                             SphereSpec)

FIGURES = {"trajectory.png", "energy.png", "solver.png", "contacts.png"}


def small_clutter(tmp_path, seed=0, figures=False):
    s = Scenario(name="mini", dt=1e-2, duration=0.1, seed=seed, clutter=ClutterSpec(count=6),
                 outputs=OutputSpec(figures=figures))
    path = tmp_path / f"mini{seed}.json"
    path.write_text(s.to_json())
    return path


def spring_scenario(**study):
    body = BodySpec("prismatic", "spring", 1.0, (0.1,), (0.0,),
                    (("axis", (1.0, 0.0, 0.0)), ("stiffness", 100.0)))
    return Scenario(name="spring", scheme="midpoint", dt=1e-3, duration=0.05, gravity=(0.0, 0.0, 0.0),
                    bodies=(body,), outputs=OutputSpec(order_study=OrderStudySpec(**study)))


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_run_writes_artifacts(tmp_path):
    out = tmp_path / "out"
    assert cli.main([str(small_clutter(tmp_path, figures=True)), "--out", str(out)]) == 0
    names = {p.name for p in out.iterdir()}
    assert {"steps.csv", "contacts.csv", "timing.csv", "summary.json"} <= names
    assert FIGURES <= names
    summary = json.loads((out / "summary.json").read_text())
    assert summary["steps"] == 10 and summary["unconverged_steps"] == 0
    assert set(summary["figures"]) == FIGURES
    steps = read_csv(out / "steps.csv")
    assert len(steps) == 11
    assert {"time", "q0", "v0", "energy", "n_contacts", "iterations", "residual"} <= set(steps[0])
    assert len(read_csv(out / "timing.csv")) == 10
    rows = read_csv(out / "contacts.csv")
    assert rows and {r["region"] for r in rows} <= {"stiction", "sliding", "no_contact"}


def test_same_seed_gives_byte_identical_csv(tmp_path):
    path = small_clutter(tmp_path, seed=1)
    for d in ("a", "b"):
        assert cli.run(path, tmp_path / d) == 0
    for f in ("steps.csv", "contacts.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert cli.run(path, tmp_path / "c", seed=2) == 0
    assert (tmp_path / "a" / "steps.csv").read_bytes() != (tmp_path / "c" / "steps.csv").read_bytes()


def test_overrides_reach_the_solver(tmp_path):
    path = small_clutter(tmp_path)
    out = tmp_path / "o"
    assert cli.main([str(path), "--out", str(out), "--dt", "0.005", "--solver", "armijo",
                     "--linear", "sparse", "--eps-r", "1e-8"]) == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["dt"] == 0.005 and s["steps"] == 20


@pytest.mark.parametrize("text", ["{broken", '{"name": "x", "scheme": "rk4"}'])
def test_parse_error_exit_code(tmp_path, text):
    path = tmp_path / "bad.json"
    path.write_text(text)
    assert cli.run(path, tmp_path / "out") == cli.EXIT_PARSE == 2


def test_missing_file_exit_code(tmp_path):
    assert cli.run(tmp_path / "missing.json", tmp_path / "out") == 2


def test_divergence_exit_code_and_diagnostic(tmp_path, monkeypatch):
    real = scheme.step_with_problem
    calls = []

    def failing(*args, **kw):
        calls.append(1)
        if len(calls) == 3:
            raise SolverDivergenceError("non-finite velocities")
        return real(*args, **kw)

    monkeypatch.setattr(scheme, "step_with_problem", failing)
    out = tmp_path / "out"
    assert cli.run(small_clutter(tmp_path), out) == cli.EXIT_DIVERGED == 3
    diag = json.loads((out / "diagnostic.json").read_text())
    assert diag["error"] == "SolverDivergenceError" and diag["step"] == 2
    assert len(diag["q"]) == 6 * 7


def test_summary_metrics_for_resting_particle():
    body = BodySpec("particle", "ball", 1.0, (0.0, 0.0, 0.1), (0.0, 0.0, 0.0),
                    spheres=(SphereSpec(0.1),))
    s = Scenario.from_dict({**Scenario.load(scn.shipped("particle_rest")).to_dict(),
                            "duration": 0.5})
    assert s.bodies[0] == body
    summary = cli.summarize(cli.simulate(s))
    assert summary["penetration"] == pytest.approx(summary["penetration_target"], rel=0.05)
    assert summary["unconverged_steps"] == 0


def test_order_study_slopes():
    study = cli.order_study(spring_scenario(schemes=("explicit_euler", "midpoint"),
                                            dt_list=(4e-3, 2e-3, 1e-3)))
    assert study["explicit_euler"]["slope"] == pytest.approx(1.0, abs=0.1)
    assert study["midpoint"]["slope"] == pytest.approx(2.0, abs=0.1)
    assert all(v["monotone"] for v in study.values())


def test_order_study_finest_reference():
    study = cli.order_study(spring_scenario(schemes=("midpoint",), dt_list=(4e-3, 2e-3, 1e-3),
                                            reference="finest"))
    assert study["midpoint"]["slope"] == pytest.approx(2.0, abs=0.15)


def test_order_study_warns_on_non_monotone_errors(monkeypatch):
    real = cli.simulate

    def noisy(s, **kw):
        rec = real(s, **kw)
        if s.dt == 1e-3:
            rec.states[-1] = replace(rec.states[-1], q=rec.states[-1].q + 1.0)
        return rec

    monkeypatch.setattr(cli, "simulate", noisy)
    with pytest.warns(RuntimeWarning, match="not monotone"):
        study = cli.order_study(spring_scenario(schemes=("midpoint",), dt_list=(4e-3, 2e-3, 1e-3)))
    assert not study["midpoint"]["monotone"]
    assert np.isfinite(study["midpoint"]["slope"])


def test_order_study_needs_three_steps():
    from sapsim.errors import InvalidInputError
    with pytest.raises(InvalidInputError):
        cli.order_study(spring_scenario(), dt_list=(1e-3, 5e-4))


def test_order_study_written_to_summary(tmp_path):
    s = spring_scenario(schemes=("midpoint",), dt_list=(4e-3, 2e-3, 1e-3))
    path = tmp_path / "spring.json"
    path.write_text(s.to_json())
    assert cli.run(path, tmp_path / "out") == 0
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["order_study"]["midpoint"]["slope"] == pytest.approx(2.0, abs=0.1)
    assert (tmp_path / "out" / "order_study.png").exists()


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "sapsim.cli", "--help"], capture_output=True,
                         text=True, check=True)
    assert "--eps-r" in out.stdout
