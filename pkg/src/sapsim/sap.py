"""Semi-analytic primal solver for the convex contact problem.

Minimizes

    l_p(v) = 1/2 ||v - v*||_A^2 + sum_i 1/2 ||P_F(y_i(v))||_R^2

with Newton directions H dv = -grad, H = A + J^T G J, followed by either an
exact line search (safeguarded Newton on dl/dalpha) or Armijo backtracking.
Iteration stops once ||D grad|| < eps_a + eps_r max(||D p||, ||D j_c||) with
D = diag(M)^{-1/2}, p = M v and j_c = J^T gamma.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import cone, linalg
from .errors import InvalidInputError, LineSearchError

EXACT = "exact"
ARMIJO = "armijo"


@dataclass(frozen=True)
class SolverOptions:
    eps_r: float = 1e-6
    eps_a: float = 1e-16
    line_search: str = EXACT
    rho: float = 0.8
    c: float = 1e-4
    alpha_max: float = 1.25
    alpha_max_exact: float = 1.5
    max_iters: int = 100
    max_shrinks: int = 200
    linear_solver: str = "auto"
    record_iterates: bool = False

    def __post_init__(self):
        if self.line_search not in (EXACT, ARMIJO):
            raise InvalidInputError(f"unknown line search {self.line_search!r}")
        if not (0 < self.rho < 1 and 0 < self.c < 1):
            raise InvalidInputError("need 0 < rho < 1 and 0 < c < 1")
        if not (self.eps_r >= 0 and self.eps_a >= 0):
            raise InvalidInputError("tolerances must be non-negative")
        if self.linear_solver not in ("auto", "sparse", "dense"):
            raise InvalidInputError(f"unknown linear solver {self.linear_solver!r}")


@dataclass
class SolveResult:
    v: np.ndarray
    gamma: np.ndarray
    iterations: int
    line_search_evals: int
    converged: bool
    residual: float
    threshold: float
    cost_history: list = field(default_factory=list)
    regions: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    alphas: list = field(default_factory=list)
    status: str = "converged"
    iterates: list = field(default_factory=list)


@dataclass
class _Eval:
    v: np.ndarray
    vc: np.ndarray
    gamma: np.ndarray
    region: np.ndarray
    cost: float
    grad: np.ndarray
    jc: np.ndarray


def _evaluate(problem, v):
    vc = problem.contact_velocities(v)
    y = problem.y(vc)
    gamma, region = cone.project_batch(y, problem.Rt, problem.Rn, problem.mu)
    e = v - problem.v_star
    Ae = problem.A @ e
    cost = 0.5 * e @ Ae + float(np.sum(cone.cost_batch(y, problem.Rt, problem.Rn, problem.mu)))
    jc = problem.jacobian.rmatvec(gamma)
    return _Eval(v, vc, gamma, region, cost, Ae - jc, jc)


def primal_cost(problem, v):
    return _evaluate(problem, np.asarray(v, dtype=float)).cost


def gradient(problem, v):
    """grad l_p = A (v - v*) - J^T gamma(v)."""
    return _evaluate(problem, np.asarray(v, dtype=float)).grad


def impulses(problem, v):
    """gamma = P_F(y(v)) as an (n_c, 3) array."""
    return _evaluate(problem, np.asarray(v, dtype=float)).gamma


def g_blocks(problem, v):
    y = problem.y(problem.contact_velocities(np.asarray(v, dtype=float)))
    return cone.g_blocks_batch(y, problem.Rt, problem.Rn, problem.mu)


def hessian(problem, v, sparse=False):
    """H = A + J^T G J, dense or as a BlockSparseSym."""
    G = g_blocks(problem, v)
    if sparse:
        return linalg.assemble_H(problem.A_blocks, problem.jacobian, G)
    H = problem.A.copy()
    if problem.n_c:
        Jd = problem.jacobian.dense()
        GJ = G @ Jd.reshape(problem.n_c, 3, -1)
        H += Jd.T @ GJ.reshape(3 * problem.n_c, -1)
    return H


def newton_direction(problem, v, grad=None, method="auto"):
    v = np.asarray(v, dtype=float)
    if grad is None:
        grad = gradient(problem, v)
    if method == "auto":
        method = "dense" if problem.n_v < linalg.DENSE_CROSSOVER else "sparse"
    H = hessian(problem, v, sparse=(method == "sparse"))
    return -linalg.factorize(H, method).solve(grad)


class _LineFunctions:
    """l(alpha), dl/dalpha and d2l/dalpha2 along v + alpha dv, at O(n_v + n_c)
    cost per evaluation after precomputing dp = A dv and dv_c = J dv."""

    def __init__(self, problem, v, dv, vc=None):
        self.p = problem
        self.dvc = problem.contact_velocities(dv)
        self.vc0 = problem.contact_velocities(v) if vc is None else vc
        e = v - problem.v_star
        dp = problem.A @ dv
        self.e0 = float(e @ problem.A @ e)
        self.a0 = float(dp @ e)
        self.b = float(dv @ dp)
        self.evals = 0
        self.c0 = None

    def _y(self, alpha):
        return self.p.y(self.vc0 + alpha * self.dvc)

    def cost(self, alpha):
        self.evals += 1
        reg = np.sum(cone.cost_batch(self._y(alpha), self.p.Rt, self.p.Rn, self.p.mu))
        return 0.5 * (self.e0 + 2 * alpha * self.a0 + alpha * alpha * self.b) + float(reg)

    def decrease(self, alpha):
        """l(alpha) - l(0) without forming either cost. The quadratic part is
        exact; regularizer terms of contacts that stay in stiction or sliding
        are differenced through the exact change in y."""
        self.evals += 1
        p = self.p
        if self.c0 is None:
            self.y0 = self._y(0.0)
            self.c0 = cone.cost_batch(self.y0, p.Rt, p.Rn, p.mu)
            self.r0 = cone.project_batch(self.y0, p.Rt, p.Rn, p.mu)[1]
        ya = self._y(alpha)
        ca = cone.cost_batch(ya, p.Rt, p.Rn, p.mu)
        ra = cone.project_batch(ya, p.Rt, p.Rn, p.mu)[1]
        dc = ca - self.c0
        dy = -alpha * self.dvc / p.R
        R = p.R
        st = (ra == self.r0) & (ra == cone.Region.STICTION)
        dc[st] = 0.5 * np.sum(R[st] * dy[st] * (ya[st] + self.y0[st]), axis=1)
        sl = (ra == self.r0) & (ra == cone.Region.SLIDING)
        if np.any(sl):
            y0, y1, d = self.y0[sl], ya[sl], dy[sl]
            r0, r1 = np.hypot(y0[:, 0], y0[:, 1]), np.hypot(y1[:, 0], y1[:, 1])
            denom = r0 + r1
            dr = np.divide(np.sum(d[:, :2] * (y0[:, :2] + y1[:, :2]), axis=1), denom,
                           out=np.zeros_like(denom), where=denom > 0)
            mu_hat = p.mu[sl] * p.Rt[sl] / p.Rn[sl]
            k = p.Rn[sl] / (2.0 * (1.0 + mu_hat * p.mu[sl]))
            s0, s1 = y0[:, 2] + mu_hat * r0, y1[:, 2] + mu_hat * r1
            dc[sl] = k * (d[:, 2] + mu_hat * dr) * (s0 + s1)
        return alpha * self.a0 + 0.5 * alpha * alpha * self.b + float(np.sum(dc))

    def d1(self, alpha):
        self.evals += 1
        gamma, _ = cone.project_batch(self._y(alpha), self.p.Rt, self.p.Rn, self.p.mu)
        work = self.dvc * gamma
        # magnitude of the summed terms, for a round-off floor on |dl/dalpha|
        self.scale = abs(self.a0) + abs(alpha * self.b) + float(np.sum(np.abs(work)))
        return self.a0 + alpha * self.b - float(np.sum(work))

    def d2(self, alpha):
        G = cone.g_blocks_batch(self._y(alpha), self.p.Rt, self.p.Rn, self.p.mu)
        return self.b + float(np.einsum("ki,kij,kj->", self.dvc, G, self.dvc))

    def resolution(self, alpha):
        """Smallest change of alpha that changes v_c(alpha) in floating point."""
        dmax = float(np.max(np.abs(self.dvc))) if self.dvc.size else 0.0
        vmax = float(np.max(np.abs(self.vc0))) if self.vc0.size else 0.0
        ratio = vmax / dmax if dmax > 0 else 0.0
        return 4.0 * np.finfo(float).eps * (abs(alpha) + ratio)


def _exact(lf, alpha_max=1.5, max_iter=100):
    f0 = lf.d1(0.0)
    if not f0 < 0:
        raise LineSearchError(f"not a descent direction (dl/dalpha(0) = {f0:.3e})")
    lo, hi = 0.0, alpha_max
    fhi = lf.d1(hi)
    while fhi < 0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e12:
            raise LineSearchError("line search bracket expansion failed")
        fhi = lf.d1(hi)
    if fhi == 0:
        return hi
    ftol = 1e-14 * (abs(f0) + abs(fhi))
    alpha = 1.0 if lo < 1.0 < hi else 0.5 * (lo + hi)
    dx_old = hi - lo
    for _ in range(max_iter):
        f = lf.d1(alpha)
        if abs(f) <= max(ftol, 8.0 * np.finfo(float).eps * lf.scale):
            return alpha
        if f < 0:
            lo = alpha
        else:
            hi = alpha
        if hi - lo < 1e-15 * max(1.0, hi):
            return 0.5 * (lo + hi)
        fp = lf.d2(alpha)
        newton = alpha - f / fp if fp > 0 else np.nan
        if abs(newton - alpha) <= lf.resolution(alpha):
            return alpha
        if not (lo < newton < hi) or abs(2 * f) > abs(dx_old * fp):
            newton = 0.5 * (lo + hi)
        dx_old = abs(newton - alpha)
        alpha = newton
    return alpha


def line_search_exact(problem, v, dv, options=None):
    """Step minimizing l_p along dv: the root of dl/dalpha, found with a
    bisection-safeguarded Newton iteration on an expanding bracket."""
    opts = options or SolverOptions()
    lf = _LineFunctions(problem, np.asarray(v, dtype=float), np.asarray(dv, dtype=float))
    return _exact(lf, opts.alpha_max_exact)


def _armijo(lf, opts):
    d0 = lf.d1(0.0)
    if not d0 < 0:
        raise LineSearchError(f"not a descent direction (dl/dalpha(0) = {d0:.3e})")
    alpha = opts.alpha_max
    for _ in range(opts.max_shrinks + 1):
        if lf.decrease(alpha) < opts.c * alpha * d0:
            return alpha
        alpha *= opts.rho
    raise LineSearchError(f"Armijo backtracking exceeded {opts.max_shrinks} shrinks")


def line_search_armijo(problem, v, dv, options=None):
    """First alpha = alpha_max rho^k with l(v + alpha dv) < l(v) + c alpha dl/dalpha(0)."""
    opts = options or SolverOptions(line_search=ARMIJO)
    lf = _LineFunctions(problem, np.asarray(v, dtype=float), np.asarray(dv, dtype=float))
    return _armijo(lf, opts)


def stopping_quantities(problem, ev, eps_a, eps_r):
    D = 1.0 / np.sqrt(problem.mass_diag)
    res = float(np.linalg.norm(D * ev.grad))
    p = problem.M @ ev.v
    thr = eps_a + eps_r * max(float(np.linalg.norm(D * p)), float(np.linalg.norm(D * ev.jc)))
    return res, thr


def _result(problem, ev, it, evals, converged, opts, history, alphas, status, iterates=None):
    res, thr = stopping_quantities(problem, ev, opts.eps_a, opts.eps_r)
    return SolveResult(ev.v.copy(), ev.gamma.copy(), it, evals, converged, res, thr,
                       history, np.asarray(ev.region, dtype=int), alphas, status,
                       iterates if iterates is not None else [])


def solve(problem, v_init=None, options=None):
    """Newton iterations with line search from ``v_init`` (default v*).

    Without contacts the minimizer is v* itself and is returned unchanged.
    On reaching ``max_iters`` the lowest-cost iterate is returned flagged as
    unconverged.
    """
    opts = options or SolverOptions()
    if problem.n_c == 0:
        ev = _evaluate(problem, problem.v_star.copy())
        return _result(problem, ev, 0, 0, True, opts, [ev.cost], [], "converged")
    v = problem.v_star.copy() if v_init is None else np.array(v_init, dtype=float)
    if v.shape != (problem.n_v,) or not np.all(np.isfinite(v)):
        raise InvalidInputError("initial guess must be a finite vector of length n_v")
    method = opts.linear_solver
    if method == "auto":
        method = "dense" if problem.n_v < linalg.DENSE_CROSSOVER else "sparse"

    ev = _evaluate(problem, v)
    best = ev
    history, alphas = [ev.cost], []
    iterates = [ev.v.copy()] if opts.record_iterates else None
    evals = 0
    status = "max_iterations"
    it = 0
    while True:
        res, thr = stopping_quantities(problem, ev, opts.eps_a, opts.eps_r)
        if res < thr:
            return _result(problem, ev, it, evals, True, opts, history, alphas, "converged",
                           iterates)
        if it >= opts.max_iters:
            break
        H = hessian(problem, ev.v, sparse=(method == "sparse"))
        dv = -linalg.factorize(H, method).solve(ev.grad)
        lf = _LineFunctions(problem, ev.v, dv, ev.vc)
        try:
            if opts.line_search == EXACT:
                alpha = _exact(lf, opts.alpha_max_exact)
            else:
                alpha = _armijo(lf, opts)
        except LineSearchError:
            status = "line_search_failed"
            evals += lf.evals
            break
        evals += lf.evals
        it += 1
        ev = _evaluate(problem, ev.v + alpha * dv)
        history.append(ev.cost)
        alphas.append(alpha)
        if iterates is not None:
            iterates.append(ev.v.copy())
        if ev.cost <= best.cost:
            best = ev
    return _result(problem, best, it, evals, False, opts, history, alphas, status, iterates)


def momentum_residual(problem, v, gamma):
    """A (v - v*) - J^T gamma; equals grad l_p when gamma = P_F(y(v))."""
    return problem.A @ (v - problem.v_star) - problem.jacobian.rmatvec(gamma)


def delassus(problem):
    Jd = problem.jacobian.dense()
    return Jd @ np.linalg.solve(problem.A, Jd.T)


def dual_cost(problem, gamma):
    """l_d = 1/2 gamma^T (W + R) gamma + r^T gamma with r = J v* - vhat."""
    g = np.ravel(gamma)
    if g.size == 0:
        return 0.0
    W = delassus(problem)
    r = problem.jacobian.matvec(problem.v_star) - problem.vhat.ravel()
    return float(0.5 * g @ (W @ g + problem.R.ravel() * g) + r @ g)


def dual_slack(problem, v, gamma):
    """g = J v - vhat + R gamma per contact, (n_c, 3)."""
    return problem.contact_velocities(v) - problem.vhat + problem.R * np.reshape(gamma, (-1, 3))
