from __future__ import annotations

import numpy as np
import pytest

from sapsim import cone, geometry, oracle, sap, scheme
from sapsim import model as mdl
from sapsim.errors import InvalidInputError, LineSearchError
from sapsim.scheme import ContactProblem

from helpers import random_problem


def free_problem(A, v_star):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    J = geometry.ContactJacobian([len(A)], [], {}, np.zeros((0, 3, 3)))
    return ContactProblem([A], np.asarray(v_star, dtype=float), J, geometry.ContactSet([], []),
                          [], [A])


def y_of(p, v):
    return p.y(p.contact_velocities(v))


def test_cost_without_contacts():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    p = free_problem(A, [1.0, -1.0])
    assert sap.primal_cost(p, p.v_star) == 0.0
    v = np.array([0.3, 0.7])
    e = v - p.v_star
    assert sap.primal_cost(p, v) == pytest.approx(0.5 * e @ A @ e)
    np.testing.assert_allclose(sap.gradient(p, v), A @ e)
    np.testing.assert_array_equal(sap.hessian(p, v), A)


def test_cost_componentwise():
    rng = np.random.default_rng(0)
    p = random_problem(rng)
    v = rng.normal(size=p.n_v)
    e = v - p.v_star
    y = -(p.jacobian.dense() @ v - p.vhat.ravel()).reshape(-1, 3) / p.R
    reg = sum(cone.regularizer_cost(y[i], p.regs[i]) for i in range(p.n_c))
    assert sap.primal_cost(p, v) == pytest.approx(0.5 * e @ p.A @ e + reg, rel=1e-13)


def test_gradient_all_no_contact():
    rng = np.random.default_rng(1)
    p = random_problem(rng)
    # far above every contact: v_c,n >> vhat gives y_n << 0
    p.vhat[:, 2] = -1e6
    v = rng.normal(size=p.n_v)
    assert np.all(sap.impulses(p, v) == 0)
    np.testing.assert_allclose(sap.gradient(p, v), p.A @ (v - p.v_star))


def test_one_stiction_contact_hessian():
    m = mdl.SystemModel([mdl.Particle("p", 1.0, (mdl.Sphere(0.1),))], [mdl.HalfSpace((0, 0, 1), 0)])
    p = scheme.assemble_contact_problem(m, scheme.symplectic_euler(1e-3), np.array([0, 0, 0.09]),
                                        np.zeros(3))
    v = np.zeros(3)
    assert cone.project_batch(y_of(p, v), p.Rt, p.Rn, p.mu)[1][0] == cone.Region.STICTION
    Jd = p.jacobian.dense()
    np.testing.assert_allclose(sap.hessian(p, v), p.A + Jd.T @ np.diag(1 / p.R[0]) @ Jd)


def test_gradient_and_hessian_match_finite_differences():
    rng = np.random.default_rng(2)
    checked = 0
    while checked < 20:
        p = random_problem(rng, n_trees=3)
        v = rng.normal(size=p.n_v)
        h = 1e-6
        dv = rng.normal(size=p.n_v)
        regions = [cone.project_batch(y_of(p, v + s * h * dv), p.Rt, p.Rn, p.mu)[1]
                   for s in (-1, 0, 1)]
        if not all(np.array_equal(regions[1], r) for r in regions):
            continue
        checked += 1
        g = sap.gradient(p, v)
        fd = oracle.fd_gradient(lambda x: sap.primal_cost(p, x), v, 1e-5)
        assert np.linalg.norm(fd - g) <= 1e-5 * (np.linalg.norm(g) + 1)
        H = sap.hessian(p, v)
        fdH = oracle.fd_jacobian(lambda x: sap.gradient(p, x), v, 1e-7)
        assert np.linalg.norm(fdH - H) <= 1e-5 * np.linalg.norm(H)


def test_sparse_and_dense_hessians_agree():
    rng = np.random.default_rng(3)
    p = random_problem(rng, n_trees=8)
    v = rng.normal(size=p.n_v)
    np.testing.assert_allclose(sap.hessian(p, v, sparse=True).to_dense(), sap.hessian(p, v),
                               rtol=1e-13, atol=1e-13)


def test_hessian_pattern_follows_patches():
    # trees 0-1 and 1-2 share patches, 0-2 do not
    rng = np.random.default_rng(4)
    p = random_problem(rng, sizes=[6, 6, 6], edges=[(0, 1), (1, 2)], world=[0])
    H = sap.hessian(p, rng.normal(size=18), sparse=True)
    assert set(H.pattern()) == {(0, 1), (1, 2)}


def test_exact_line_search_on_quadratic():
    p = free_problem([[1.0]], [2.0])
    assert sap.line_search_exact(p, np.zeros(1), np.ones(1)) == pytest.approx(2.0, rel=1e-14)
    A = np.array([[3.0, 1.0], [1.0, 2.0]])
    p = free_problem(A, [1.0, -2.0])
    v = np.array([5.0, 5.0])
    dv = sap.newton_direction(p, v)
    assert sap.line_search_exact(p, v, dv) == pytest.approx(1.0, rel=1e-14)


@pytest.mark.parametrize("seed", range(15))
def test_exact_line_search_matches_golden_section(seed):
    rng = np.random.default_rng(seed)
    p = random_problem(rng)
    v = rng.normal(size=p.n_v)
    dv = sap.newton_direction(p, v)
    alpha = sap.line_search_exact(p, v, dv)
    ref = oracle.golden_section(lambda a: sap.primal_cost(p, v + a * dv), 0.0, 10.0, tol=1e-13)
    dl = lambda a: sap.gradient(p, v + a * dv) @ dv
    assert abs(alpha - ref) <= 1e-8 * max(1.0, ref) or abs(dl(alpha)) <= 1e-10 * abs(dl(0.0))


def test_exact_line_search_rejects_ascent():
    p = free_problem([[1.0]], [2.0])
    with pytest.raises(LineSearchError):
        sap.line_search_exact(p, np.zeros(1), -np.ones(1))


@pytest.mark.parametrize("seed", range(5))
def test_cost_decrease_matches_cost_difference(seed):
    rng = np.random.default_rng(seed)
    p = random_problem(rng, n_trees=6)
    v, dv = rng.normal(size=p.n_v), rng.normal(size=p.n_v)
    lf = sap._LineFunctions(p, v, dv)
    for a in (1e-3, 0.1, 1.0, 3.0):
        ref = sap.primal_cost(p, v + a * dv) - sap.primal_cost(p, v)
        assert lf.decrease(a) == pytest.approx(ref, rel=1e-9, abs=1e-12)


def test_armijo_on_quadratic():
    p = free_problem([[1.0]], [1.0])
    opts = sap.SolverOptions(line_search="armijo")
    v, dv = np.zeros(1), np.ones(1)
    alpha = sap.line_search_armijo(p, v, dv, opts)
    assert alpha in (1.25, 1.0)
    assert sap.primal_cost(p, v + alpha * dv) < sap.primal_cost(p, v) - opts.c * alpha


def test_armijo_scaled_direction_shrinks_step():
    # l(alpha) = (s alpha - 1)^2 / 2 passes the test iff s alpha < 2 - 2c
    p = free_problem([[1.0]], [1.0])
    opts = sap.SolverOptions(line_search="armijo")
    a100 = sap.line_search_armijo(p, np.zeros(1), 100 * np.ones(1), opts)
    limit = (2 - 2 * opts.c) / 100
    assert opts.rho * limit <= a100 < limit
    assert sap.line_search_armijo(p, np.zeros(1), np.ones(1), opts) / a100 >= 100 * opts.rho / 2


def test_armijo_small_c_accepts_alpha_max_when_cost_drops():
    p = free_problem([[1.0]], [1.0])
    opts = sap.SolverOptions(line_search="armijo", c=1e-12)
    assert sap.line_search_armijo(p, np.zeros(1), np.ones(1), opts) == 1.25


def test_armijo_gives_up_after_max_shrinks():
    p = free_problem([[1.0]], [1.0])
    opts = sap.SolverOptions(line_search="armijo", max_shrinks=3, alpha_max=1e6)
    with pytest.raises(LineSearchError):
        sap.line_search_armijo(p, np.zeros(1), np.ones(1), opts)


@pytest.mark.parametrize("kw", [dict(line_search="newton"), dict(rho=1.0), dict(c=0.0),
                                dict(eps_r=-1.0), dict(linear_solver="lu")])
def test_invalid_solver_options(kw):
    with pytest.raises(InvalidInputError):
        sap.SolverOptions(**kw)


def test_solve_without_contacts_returns_free_motion():
    p = free_problem([[2.0]], [3.0])
    r = sap.solve(p, np.array([100.0]))
    assert r.iterations <= 1 and r.converged
    np.testing.assert_array_equal(r.v, p.v_star)


def test_solve_rejects_bad_initial_guess():
    p = random_problem(np.random.default_rng(5))
    with pytest.raises(InvalidInputError):
        sap.solve(p, np.full(p.n_v, np.nan))


@pytest.mark.parametrize("line_search", ["exact", "armijo"])
def test_solve_certificate(line_search):
    rng = np.random.default_rng(6)
    p = random_problem(rng, n_trees=6)
    r = sap.solve(p, options=sap.SolverOptions(line_search=line_search, eps_r=1e-10))
    assert r.converged and r.status == "converged"
    assert r.residual < r.threshold
    gamma = sap.impulses(p, r.v)
    np.testing.assert_array_equal(r.gamma, gamma)
    np.testing.assert_allclose(sap.momentum_residual(p, r.v, gamma), sap.gradient(p, r.v),
                               atol=1e-14 * (1 + np.max(np.abs(p.A @ r.v))))
    assert np.all(np.diff(r.cost_history) <= 1e-14 * abs(r.cost_history[0]))


def test_max_iterations_returns_best_unconverged():
    rng = np.random.default_rng(7)
    p = random_problem(rng, n_trees=6)
    r = sap.solve(p, rng.normal(size=p.n_v) * 10, sap.SolverOptions(max_iters=1, eps_r=0.0))
    assert not r.converged and r.status == "max_iterations"
    assert r.iterations == 1
    assert sap.primal_cost(p, r.v) == min(r.cost_history)


def test_record_iterates():
    rng = np.random.default_rng(8)
    p = random_problem(rng)
    r = sap.solve(p, options=sap.SolverOptions(record_iterates=True))
    assert len(r.iterates) == r.iterations + 1
    np.testing.assert_array_equal(r.iterates[-1], r.v)


def test_dual_cost_and_local_minimality():
    rng = np.random.default_rng(9)
    p = random_problem(rng, n_trees=1, sizes=[3], edges=[], world=[0], contacts_per_patch=(1, 1))
    assert sap.dual_cost(p, np.zeros((1, 3))) == 0.0
    r = sap.solve(p, options=sap.SolverOptions(eps_r=1e-12))
    g = sap.dual_slack(p, r.v, r.gamma)
    samples = oracle.sample_cone(p.mu[0], rng, 500)
    assert oracle.dual_cone_violation(g[0], p.mu[0], samples) <= 1e-10
    best = sap.dual_cost(p, r.gamma)
    for _ in range(200):
        trial = oracle.project_kkt(r.gamma[0] + rng.normal(size=3) * 1e-3, 1.0, 1.0, p.mu[0])
        assert sap.dual_cost(p, trial[None]) >= best - 1e-12


def test_primal_velocity_recovered_from_dual():
    rng = np.random.default_rng(10)
    p = random_problem(rng, n_trees=4)
    r = sap.solve(p, options=sap.SolverOptions(eps_r=1e-12))
    v = p.v_star + np.linalg.solve(p.A, p.jacobian.rmatvec(r.gamma))
    np.testing.assert_allclose(v, r.v, rtol=1e-8, atol=1e-10)


def test_stiction_under_half_load():
    m = mdl.SystemModel([mdl.Particle("p", 1.0, (mdl.Sphere(0.1),), force=(0.5 * 9.81, 0, 0))],
                        [mdl.HalfSpace((0, 0, 1), 0)])
    sch = scheme.symplectic_euler(1e-3)
    state = mdl.GeneralizedState(np.array([0, 0, 0.1]), np.zeros(3))
    for _ in range(300):
        state, r, p = scheme.step_with_problem(m, sch, state, sap.SolverOptions(eps_r=1e-12))
    gt, gn = np.hypot(*r.gamma[0, :2]), r.gamma[0, 2]
    assert gt == pytest.approx(0.5 * gn, abs=1e-10)
    slip = p.Rt[0] * gt
    assert slip <= 1.0 * 1e-3 * 9.81 * 1e-3


def test_clutter_step_converges_with_monotone_cost():
    from sapsim import scenario
    from dataclasses import replace
    sc = scenario.Scenario.load(scenario.shipped("clutter")).with_overrides(seed=3)
    sc = replace(sc, clutter=replace(sc.clutter, count=20))
    model, state = scenario.build(sc)
    sch = sc.theta_scheme()
    opts = sc.solver.build()
    for _ in range(15):
        state, r = scheme.step(model, sch, state, opts, sc.problem_options())
        assert r.converged and r.iterations <= 50
        assert np.all(np.diff(r.cost_history) <= 1e-14 * max(1.0, abs(r.cost_history[0])))
