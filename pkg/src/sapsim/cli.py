"""Scenario runner.

``simulate scenario.json --out DIR`` steps the scenario and writes

* ``steps.csv``     one row per step: time, q, v, energy, contact count,
                    solver statistics, max penetration and max slip speed
* ``contacts.csv``  one row per contact per step: trees, phi0, gamma, slip, region
* ``timing.csv``    wall time per step (kept apart so the other CSVs are
                    byte-identical across runs)
* ``summary.json``  final metrics and, when requested, an order-of-accuracy study
* ``*.png``         figures of the above

Exit codes: 0 on success, 2 for an unreadable or invalid scenario, 3 when the
simulation diverges (a ``diagnostic.json`` is written).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import geometry, plotting, scheme
from . import model as mdl
from .cone import Region
from .errors import InvalidInputError, SapSimError, ScenarioError
from .scenario import Scenario, build

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_DIVERGED = 3


@dataclass
class SimulationRecord:
    scenario: Scenario
    model: mdl.SystemModel
    states: list = field(default_factory=list)
    results: list = field(default_factory=list)
    contact_rows: list = field(default_factory=list)
    step_rows: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)
    max_friction: float = 0.0

    @property
    def final(self):
        return self.states[-1]


class Divergence(Exception):
    def __init__(self, error, step, state):
        super().__init__(str(error))
        self.error, self.step, self.state = error, step, state


def total_energy(model, q, v):
    M = mdl.mass_matrix(model, q)
    return float(0.5 * v @ M @ v + mdl.potential_energy(model, q))


def _tangential_speed(vc):
    return np.hypot(vc[:, 0], vc[:, 1]) if len(vc) else np.zeros(0)


def simulate(scenario, record_contacts=True, n_steps=None):
    """Run a scenario in memory and return a SimulationRecord."""
    model, state = build(scenario)
    th = scenario.theta_scheme()
    popt = scenario.problem_options()
    sopt = scenario.solver.build()
    rec = SimulationRecord(scenario, model, [state])
    n = scenario.n_steps if n_steps is None else n_steps
    for k in range(n):
        t0 = time.perf_counter()
        try:
            state, res, prob = scheme.step_with_problem(model, th, state, sopt, popt)
        except SapSimError as exc:
            raise Divergence(exc, k, rec.states[-1]) from exc
        rec.wall_times.append(time.perf_counter() - t0)
        vc = prob.contact_velocities(res.v)
        slip = _tangential_speed(vc)
        phi = prob.contacts.phi0
        if prob.n_c:
            rec.max_friction = max(rec.max_friction, float(np.max(prob.mu)))
        if record_contacts:
            for i, c in enumerate(prob.contacts.contacts):
                rec.contact_rows.append(
                    (k + 1, state.time, i, c.tree_a, c.tree_b, phi[i], *res.gamma[i], slip[i],
                     Region(int(res.regions[i])).name.lower()))
        rec.step_rows.append(dict(
            n_contacts=prob.n_c, iterations=res.iterations, evals=res.line_search_evals,
            converged=res.converged, residual=res.residual,
            penetration=float(max(0.0, -phi.min())) if prob.n_c else 0.0,
            slip=float(slip.max()) if prob.n_c else 0.0))
        rec.states.append(state)
        rec.results.append(res)
    return rec


def final_penetration(model, q, margin=geometry.DEFAULT_MARGIN):
    cs = geometry.detect_contacts(model, q, margin)
    return float(max(0.0, -cs.phi0.min())) if len(cs) else 0.0


def oscillator_reference(scenario, t):
    """Closed-form (q, v) of a single undamped or underdamped prismatic spring."""
    if len(scenario.bodies) != 1 or scenario.bodies[0].kind != "prismatic" or scenario.clutter:
        raise ScenarioError("analytic reference needs a single prismatic spring body")
    b = scenario.bodies[0]
    p = dict(b.params)
    k, d = p.get("stiffness", 0.0), p.get("damping", 0.0)
    if not k > 0:
        raise ScenarioError("analytic reference needs a positive spring stiffness")
    axis = np.asarray(p["axis"]) / np.linalg.norm(p["axis"])
    f = axis @ (b.mass * np.asarray(scenario.gravity) + np.asarray(b.force))
    x_eq = p.get("rest", 0.0) + f / k
    w0 = np.sqrt(k / b.mass)
    zeta = d / (2 * np.sqrt(k * b.mass))
    if zeta >= 1:
        raise ScenarioError("analytic reference needs an underdamped spring")
    wd = w0 * np.sqrt(1 - zeta ** 2)
    x0, v0 = b.q0[0] - x_eq, b.v0[0]
    a, c = x0, (v0 + zeta * w0 * x0) / wd
    e = np.exp(-zeta * w0 * t)
    x = e * (a * np.cos(wd * t) + c * np.sin(wd * t))
    v = -zeta * w0 * x + e * (-a * wd * np.sin(wd * t) + c * wd * np.cos(wd * t))
    return x + x_eq, v, w0


def fit_slope(dt, err):
    """Least-squares slope of log(err) against log(dt)."""
    return float(np.polyfit(np.log(dt), np.log(err), 1)[0])


def order_study(scenario, dt_list=None, schemes=None, duration=None, reference=None):
    """Global error of each scheme for each step size, with fitted slopes.

    The error is the maximum over the trajectory of the state error
    ``hypot(q - q_ref, (v - v_ref) / omega)`` (or the plain Euclidean state
    error against a fine-grid run). ``reference`` is "analytic" (single
    spring) or "finest" (each scheme at a quarter of the smallest step).
    """
    spec = scenario.outputs.order_study
    dt_list = tuple(dt_list or (spec.dt_list if spec else (4e-3, 2e-3, 1e-3, 5e-4)))
    schemes = tuple(schemes or (spec.schemes if spec else ("symplectic_euler", "midpoint")))
    reference = reference or (spec.reference if spec else "analytic")
    if len(dt_list) < 3:
        raise InvalidInputError("an order study needs at least three time steps")
    if reference not in ("analytic", "finest"):
        raise InvalidInputError(f"unknown reference {reference!r}")
    T = duration or (spec.duration if spec else None)
    if T is None:
        _, _, w0 = oscillator_reference(scenario, 0.0)
        T = 2 * np.pi / w0
    dt_max = max(dt_list)
    T = dt_max * max(1, round(T / dt_max))  # common end time on every grid
    dt_ref = min(dt_list) / 4
    out = {}
    for name in schemes:
        def trajectory(dt):
            s = replace(scenario, scheme=name, dt=dt, duration=T)
            return simulate(s, record_contacts=False).states

        ref = trajectory(dt_ref) if reference == "finest" else None
        errors = []
        for dt in dt_list:
            states = trajectory(dt)
            if ref is None:
                t = np.array([st.time for st in states])
                qa, va, w0 = oscillator_reference(scenario, t)
                q = np.array([st.q[0] for st in states])
                v = np.array([st.v[0] for st in states])
                err = np.hypot(q - qa, (v - va) / w0)
            else:
                err = []
                for st in states:
                    r = ref[int(round(st.time / dt_ref))]
                    err.append(np.linalg.norm(np.concatenate([st.q - r.q, st.v - r.v])))
            errors.append(float(np.max(err)))
        order = np.argsort(dt_list)
        monotone = bool(np.all(np.diff(np.asarray(errors)[order]) > 0))
        if not monotone:
            warnings.warn(f"order study for {name}: errors are not monotone in dt", RuntimeWarning)
        out[name] = {"dt": list(dt_list), "errors": errors, "slope": fit_slope(dt_list, errors),
                     "monotone": monotone}
    return out


def _num(x):
    return repr(float(x))


def write_steps_csv(rec, path):
    model = rec.model
    q_labels = [f"q{i}" for i in range(model.n_q)]
    v_labels = [f"v{i}" for i in range(model.n_v)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "time", *q_labels, *v_labels, "energy", "n_contacts", "iterations",
                    "line_search_evals", "converged", "residual", "max_penetration", "max_slip"])
        for k, st in enumerate(rec.states):
            row = rec.step_rows[k - 1] if k else None
            w.writerow([k, _num(st.time), *map(_num, st.q), *map(_num, st.v),
                        _num(total_energy(model, st.q, st.v)),
                        row["n_contacts"] if row else 0, row["iterations"] if row else 0,
                        row["evals"] if row else 0, int(row["converged"]) if row else 1,
                        _num(row["residual"]) if row else "0.0",
                        _num(row["penetration"]) if row else "0.0",
                        _num(row["slip"]) if row else "0.0"])


def write_contacts_csv(rec, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "time", "contact", "tree_a", "tree_b", "phi0", "gamma_t1", "gamma_t2",
                    "gamma_n", "slip", "region"])
        for r in rec.contact_rows:
            w.writerow([r[0], _num(r[1]), r[2], r[3], r[4], *map(_num, r[5:10]), r[10]])


def write_timing_csv(rec, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "wall_time_s"])
        for k, t in enumerate(rec.wall_times):
            w.writerow([k + 1, f"{t:.6e}"])


def summarize(rec, order=None):
    s = rec.scenario
    g = float(np.linalg.norm(s.gravity))
    energies = np.array([total_energy(rec.model, st.q, st.v) for st in rec.states])
    e0 = energies[0]
    drift = float(np.max(np.abs(energies - e0)) / abs(e0)) if e0 != 0 else float(
        np.max(np.abs(energies - e0)))
    iters = np.array([r.iterations for r in rec.results]) if rec.results else np.zeros(0, int)
    n = len(rec.step_rows)
    steady = rec.step_rows[n // 2:]
    out = {
        "name": s.name, "seed": s.seed, "scheme": s.scheme, "dt": s.dt, "steps": n,
        "final_time": rec.final.time,
        "penetration": final_penetration(rec.model, rec.final.q, s.contact.margin),
        "penetration_target": s.contact.beta ** 2 * g * s.dt ** 2 / (4 * np.pi ** 2),
        "max_slip": max((r["slip"] for r in steady), default=0.0),
        "slip_bound": rec.max_friction * s.contact.sigma * g * s.dt,
        "energy_drift": drift,
        "iterations": {
            "median": float(np.median(iters)) if iters.size else 0.0,
            "mean": float(np.mean(iters)) if iters.size else 0.0,
            "max": int(iters.max()) if iters.size else 0,
            "total": int(iters.sum()),
        },
        "line_search_evals": int(sum(r.line_search_evals for r in rec.results)),
        "unconverged_steps": int(sum(not r.converged for r in rec.results)),
        "max_contacts": max((r["n_contacts"] for r in rec.step_rows), default=0),
        "wall_time_s": float(sum(rec.wall_times)),
    }
    if order is not None:
        out["order_study"] = order
    return out


def _figure_data(rec):
    rows = rec.step_rows
    return {
        "time": [st.time for st in rec.states[1:]],
        "q": np.array([st.q for st in rec.states[1:]]),
        "q_labels": [f"q{i}" for i in range(rec.model.n_q)],
        "energy": [total_energy(rec.model, st.q, st.v) for st in rec.states[1:]],
        "step": list(range(1, len(rows) + 1)),
        "iterations": [r["iterations"] for r in rows],
        "n_contacts": [r["n_contacts"] for r in rows],
        "penetration": [r["penetration"] for r in rows],
        "slip": [r["slip"] for r in rows],
    }


def run(scenario_file, out_dir, seed=None, dt=None, solver=None, linear=None, eps_r=None):
    """Run a scenario file and write all artifacts; returns an exit code."""
    out = Path(out_dir)
    try:
        sc = Scenario.load(scenario_file).with_overrides(dt=dt, seed=seed, line_search=solver,
                                                         linear_solver=linear, eps_r=eps_r)
        sc.solver.build()
        build(sc)
    except (ScenarioError, InvalidInputError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    out.mkdir(parents=True, exist_ok=True)
    try:
        rec = simulate(sc)
        order = order_study(sc) if sc.outputs.order_study is not None else None
    except Divergence as exc:
        diag = {"error": type(exc.error).__name__, "message": str(exc.error), "step": exc.step,
                "time": exc.state.time, "q": exc.state.q.tolist(), "v": exc.state.v.tolist()}
        residual = getattr(exc.error, "residual", None)
        if residual is not None:
            diag["residual"] = residual
        (out / "diagnostic.json").write_text(json.dumps(diag, indent=2))
        print(f"simulation diverged at step {exc.step}: {exc.error}", file=sys.stderr)
        return EXIT_DIVERGED
    write_steps_csv(rec, out / "steps.csv")
    write_contacts_csv(rec, out / "contacts.csv")
    write_timing_csv(rec, out / "timing.csv")
    summary = summarize(rec, order)
    if sc.outputs.figures:
        summary["figures"] = [p.name for p in plotting.write_report(out, _figure_data(rec), order)]
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="simulate", description="Run a contact simulation scenario.")
    p.add_argument("scenario", help="scenario JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--dt", type=float, help="override the time step [s]")
    p.add_argument("--solver", choices=("exact", "armijo"), help="line search")
    p.add_argument("--linear", choices=("sparse", "dense"), help="Newton linear solver")
    p.add_argument("--eps-r", type=float, dest="eps_r", help="relative stopping tolerance")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return run(args.scenario, args.out, seed=args.seed, dt=args.dt, solver=args.solver,
               linear=args.linear, eps_r=args.eps_r)


if __name__ == "__main__":
    sys.exit(main())
