from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sapsim import scenario as scn
from sapsim.errors import ScenarioError
from sapsim.scenario import (BodySpec, ClutterSpec, ContactSpec, HalfSpaceSpec, MaterialSpec,
                             OrderStudySpec, OutputSpec, Scenario, SolverSpec, SphereSpec)

from conftest import SHIPPED

pos = st.floats(1e-3, 1e3, allow_nan=False)
real = st.floats(-10, 10, allow_nan=False)
vec3 = st.tuples(real, real, real)
materials = st.none() | st.builds(MaterialSpec, pos, st.floats(0, 1), st.floats(0, 2))
spheres = st.builds(SphereSpec, pos, vec3, materials)


@st.composite
def bodies(draw):
    kind = draw(st.sampled_from(["particle", "free_body", "prismatic", "revolute"]))
    sph = tuple(draw(st.lists(spheres, max_size=2)))
    force = draw(vec3)
    if kind == "particle":
        return BodySpec(kind, "p", draw(pos), draw(vec3), draw(vec3), (), sph, force)
    if kind == "free_body":
        q0 = (*draw(vec3), 1.0, 0.0, 0.0, 0.0)
        v0 = (*draw(vec3), *draw(vec3))
        return BodySpec(kind, "b", draw(pos), q0, v0, (("inertia", draw(st.tuples(pos, pos, pos))),),
                        sph, force)
    params = [("axis", (0.0, 0.0, 1.0)), ("stiffness", draw(st.floats(0, 1e3))),
              ("damping", draw(st.floats(0, 10)))]
    if kind == "revolute":
        params.append(("arm", draw(vec3)))
    return BodySpec(kind, kind[0], draw(pos), (draw(real),), (draw(real),), tuple(sorted(params)),
                    sph, force)


scenarios = st.builds(
    Scenario,
    name=st.text("abcxyz_", min_size=1, max_size=8),
    scheme=st.sampled_from(["explicit_euler", "symplectic_euler", "implicit_euler", "midpoint"]),
    dt=st.floats(1e-5, 1e-1),
    duration=st.floats(0, 10),
    seed=st.integers(0, 2 ** 31),
    gravity=vec3,
    bodies=st.lists(bodies(), max_size=3).map(tuple),
    half_spaces=st.lists(st.builds(HalfSpaceSpec, vec3, real, materials), max_size=2).map(tuple),
    clutter=st.none() | st.builds(ClutterSpec, st.integers(1, 50), pos, material=materials),
    contact=st.builds(ContactSpec, st.floats(0.1, 1), pos),
    solver=st.builds(SolverSpec, st.floats(0, 1e-2), st.floats(0, 1e-10),
                     st.sampled_from(["exact", "armijo"]), st.integers(1, 200),
                     st.sampled_from(["auto", "sparse", "dense"])),
    outputs=st.builds(OutputSpec, figures=st.booleans(),
                      order_study=st.none() | st.builds(
                          OrderStudySpec, st.just(("midpoint",)),
                          st.lists(pos, min_size=3, max_size=4).map(tuple))),
)


@settings(max_examples=150, deadline=None)
@given(scenarios)
def test_json_round_trip_is_lossless(s):
    again = Scenario.from_json(s.to_json())
    assert again == s
    assert again.to_json() == s.to_json()


@pytest.mark.parametrize("name", SHIPPED)
def test_shipped_scenarios_round_trip(name):
    text = scn.shipped(name).read_text()
    s = Scenario.from_json(text)
    assert json.loads(s.to_json()) == json.loads(text)
    model, state = scn.build(s)
    assert state.q.shape == (model.n_q,)


def test_clutter_is_deterministic_in_seed():
    spec = ClutterSpec(count=10)
    a, _ = scn.clutter_bodies(spec, 3)
    b, _ = scn.clutter_bodies(spec, 3)
    c, _ = scn.clutter_bodies(spec, 4)
    assert a == b and a != c


def test_clutter_spheres_start_separated_inside_box():
    s = Scenario.load(scn.shipped("clutter"))
    _, state = scn.build(s)
    pos_ = state.q.reshape(-1, 7)[:, :3]
    radii = np.array([b.spheres[0].radius for b in scn.expand(s)[0]])
    hw = s.clutter.half_width
    assert np.all(np.abs(pos_[:, :2]) + radii[:, None] < hw)
    assert np.all(pos_[:, 2] - radii > 0)
    d = np.linalg.norm(pos_[:, None] - pos_[None], axis=-1) - radii[:, None] - radii[None]
    assert np.all(d[np.triu_indices(len(radii), 1)] > 0)


def test_overrides():
    s = Scenario(name="x").with_overrides(dt=0.01, seed=5, line_search="armijo",
                                          linear_solver="dense", eps_r=1e-9)
    assert (s.dt, s.seed, s.solver.line_search, s.solver.linear_solver, s.solver.eps_r) == \
        (0.01, 5, "armijo", "dense", 1e-9)
    assert Scenario(name="x", dt=0.01, duration=1.0).n_steps == 100


@pytest.mark.parametrize("text", [
    "{not json",
    "[]",
    '{"scheme": "midpoint"}',
    '{"name": "x", "scheme": "rk4"}',
    '{"name": "x", "dt": -1}',
    '{"name": "x", "colour": 1}',
    '{"name": "x", "bodies": [{"kind": "rocket", "name": "r", "mass": 1, "q0": [0], "v0": [0]}]}',
    '{"name": "x", "bodies": [{"kind": "particle", "name": "p", "mass": 1, "q0": [0, 0, 0], '
    '"v0": [0, 0, 0], "params": {"stiffness": 1}}]}',
    '{"name": "x", "bodies": [{"kind": "particle", "name": "p", "mass": 1, "q0": [0, 0, 0], '
    '"v0": [0, 0, 0], "spheres": [{"radius": -1}]}]}',
    '{"name": "x", "contact": {"default_material": {"stiffness": 0}}}',
    '{"name": "x", "solver": {"tolerance": 1}}',
])
def test_parse_errors(text):
    with pytest.raises(ScenarioError):
        Scenario.from_json(text)


def test_build_errors_are_scenario_errors():
    s = Scenario(name="x", bodies=(BodySpec("particle", "p", 1.0, (0.0, 0.0), (0.0, 0.0, 0.0)),))
    with pytest.raises(ScenarioError):
        scn.build(s)
    s = Scenario(name="x", bodies=(BodySpec("particle", "p", -1.0, (0.0, 0.0, 0.0),
                                            (0.0, 0.0, 0.0)),))
    with pytest.raises(ScenarioError):
        scn.build(s)


def test_missing_file():
    with pytest.raises(ScenarioError):
        Scenario.load("/nonexistent/scenario.json")
