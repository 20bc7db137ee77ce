"""Two-stage theta-method time stepping.

Mid-step quantities for a candidate next velocity v are

    v^theta    = theta v + (1 - theta) v0
    v^theta_vq = theta_vq v + (1 - theta_vq) v0
    q^theta    = q0 + theta dt N(q0) v^theta_vq

The free-motion velocities v* zero the momentum residual

    m(v) = M(q^theta(v)) (v - v0) - dt k(q^theta(v), v^theta(v)),

and A = M(q0) + dt^2 theta theta_vq K + dt theta D is the SPD approximation
of dm/dv used by the contact solve.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import cone, geometry
from . import model as mdl
from .errors import FreeMotionError, InvalidInputError, SolverDivergenceError

FREE_MOTION_TOL = 1e-12
FREE_MOTION_MAX_ITERS = 100


@dataclass(frozen=True)
class ThetaScheme:
    theta: float
    theta_vq: float
    delta_t: float

    def __post_init__(self):
        if not (0.0 <= self.theta <= 1.0 and 0.0 <= self.theta_vq <= 1.0):
            raise InvalidInputError("theta and theta_vq must lie in [0, 1]")
        if not (self.delta_t > 0 and np.isfinite(self.delta_t)):
            raise InvalidInputError(f"time step must be positive, got {self.delta_t}")

    @classmethod
    def preset(cls, name, delta_t):
        try:
            theta, theta_vq = PRESETS[name]
        except KeyError:
            raise InvalidInputError(f"unknown scheme {name!r}; choose from {sorted(PRESETS)}") from None
        return cls(theta, theta_vq, delta_t)

    def with_dt(self, delta_t):
        return ThetaScheme(self.theta, self.theta_vq, delta_t)


PRESETS = {
    "explicit_euler": (0.0, 0.0),
    "symplectic_euler": (0.0, 1.0),
    "implicit_euler": (1.0, 1.0),
    "midpoint": (0.5, 0.5),
}


def explicit_euler(delta_t):
    return ThetaScheme.preset("explicit_euler", delta_t)


def symplectic_euler(delta_t):
    return ThetaScheme.preset("symplectic_euler", delta_t)


def implicit_euler(delta_t):
    return ThetaScheme.preset("implicit_euler", delta_t)


def midpoint(delta_t):
    return ThetaScheme.preset("midpoint", delta_t)


@dataclass
class ContactProblem:
    """Data of one convex contact solve: min 1/2||v - v*||_A^2 + regularizer."""

    A_blocks: list
    v_star: np.ndarray
    jacobian: geometry.ContactJacobian
    contacts: geometry.ContactSet
    regs: list
    mass_blocks: list
    Rt: np.ndarray = field(init=False)
    Rn: np.ndarray = field(init=False)
    mu: np.ndarray = field(init=False)
    vhat: np.ndarray = field(init=False)
    A: np.ndarray = field(init=False)
    M: np.ndarray = field(init=False)
    mass_diag: np.ndarray = field(init=False)

    def __post_init__(self):
        self.Rt = np.array([r.Rt for r in self.regs], dtype=float)
        self.Rn = np.array([r.Rn for r in self.regs], dtype=float)
        self.mu = np.array([r.mu for r in self.regs], dtype=float)
        self.vhat = np.zeros((len(self.regs), 3))
        self.vhat[:, 2] = [r.vhat_n for r in self.regs]
        offs = self.jacobian.tree_offsets
        n = self.jacobian.n_v
        self.A = np.zeros((n, n))
        self.M = np.zeros((n, n))
        for t, (a, m) in enumerate(zip(self.A_blocks, self.mass_blocks)):
            self.A[offs[t]:offs[t + 1], offs[t]:offs[t + 1]] = a
            self.M[offs[t]:offs[t + 1], offs[t]:offs[t + 1]] = m
        self.mass_diag = np.diag(self.M).copy()

    @property
    def n_v(self):
        return self.jacobian.n_v

    @property
    def n_c(self):
        return self.jacobian.n_c

    @property
    def R(self):
        return np.column_stack([self.Rt, self.Rt, self.Rn])

    def contact_velocities(self, v):
        return self.jacobian.matvec(v).reshape(-1, 3)

    def y(self, vc):
        """Unprojected impulses y = -R^{-1}(v_c - vhat) for (n_c, 3) velocities."""
        return -(vc - self.vhat) / self.R


def midstep(model, scheme, q0, v0, v):
    """(q^theta, v^theta, v^theta_vq) for candidate velocity v."""
    vth = scheme.theta * v + (1.0 - scheme.theta) * v0
    vvq = scheme.theta_vq * v + (1.0 - scheme.theta_vq) * v0
    qth = q0 + scheme.theta * scheme.delta_t * (mdl.kinematic_map(model, q0) @ vvq)
    return mdl.normalize_positions(model, qth), vth, vvq


def momentum_residual(model, scheme, q0, v0, v):
    qth, vth, _ = midstep(model, scheme, q0, v0, v)
    return mdl.mass_matrix(model, qth) @ (v - v0) - scheme.delta_t * mdl.forces(model, qth, vth)


def assemble_A(model, scheme, q0):
    """Per-tree blocks of A = M(q0) + dt^2 theta theta_vq K + dt theta D."""
    K, D = mdl.stiffness_damping(model)
    dt, th = scheme.delta_t, scheme.theta
    diag = dt * dt * th * scheme.theta_vq * K + dt * th * D
    blocks = []
    for t, M in zip(model.trees, mdl.mass_blocks(model, q0)):
        blk = M.copy()
        blk[np.diag_indices(t.n_t)] += diag[t.v_slice]
        blocks.append(blk)
    return blocks


def _block_diag(model, blocks):
    out = np.zeros((model.n_v, model.n_v))
    for t, blk in zip(model.trees, blocks):
        out[t.v_slice, t.v_slice] = blk
    return out


def free_motion_velocities(model, scheme, q0, v0, tol=FREE_MOTION_TOL,
                           max_iters=FREE_MOTION_MAX_ITERS, A_blocks=None):
    """Solve m(v*) = 0 by damped Newton with A as the Jacobian approximation.

    Converged when ||m|| <= tol (||M v0|| + dt ||k0|| + 1). A step that
    increases the residual is halved (up to 30 times).
    """
    q0 = model.check_q(q0)
    v0 = model.check_v(v0)
    if A_blocks is None:
        A_blocks = assemble_A(model, scheme, q0)
    A = _block_diag(model, A_blocks)
    M0 = mdl.mass_matrix(model, q0)
    scale = np.linalg.norm(M0 @ v0) + scheme.delta_t * np.linalg.norm(mdl.forces(model, q0, v0)) + 1.0
    v = v0.copy()
    res = momentum_residual(model, scheme, q0, v0, v)
    rn = np.linalg.norm(res)
    for _ in range(max_iters):
        if rn <= tol * scale:
            return v
        dv = -np.linalg.solve(A, res)
        step = 1.0
        for _ in range(30):
            v_try = v + step * dv
            res_try = momentum_residual(model, scheme, q0, v0, v_try)
            rn_try = np.linalg.norm(res_try)
            if np.isfinite(rn_try) and rn_try < rn:
                break
            step *= 0.5
        else:
            break
        v, res, rn = v_try, res_try, rn_try
    if rn <= tol * scale:
        return v
    raise FreeMotionError(f"free-motion Newton did not converge (residual {rn:.3e})", residual=rn)


@dataclass(frozen=True)
class ProblemOptions:
    margin: float = geometry.DEFAULT_MARGIN
    beta: float = cone.DEFAULT_BETA
    sigma: float = cone.DEFAULT_SIGMA
    delassus_norm: str = "trace"
    near_rigid_dissipation: bool = False
    default_material: mdl.Material = geometry.DEFAULT_MATERIAL
    free_motion_tol: float = FREE_MOTION_TOL


def assemble_contact_problem(model, scheme, q0, v0, options=None):
    opts = options or ProblemOptions()
    q0 = model.check_q(q0)
    v0 = model.check_v(v0)
    contacts = geometry.detect_contacts(model, q0, opts.margin, opts.default_material)
    J = geometry.contact_jacobian(model, q0, contacts)
    A_blocks = assemble_A(model, scheme, q0)
    v_star = free_motion_velocities(model, scheme, q0, v0, opts.free_motion_tol, A_blocks=A_blocks)
    Mb = mdl.mass_blocks(model, q0)
    w = cone.delassus_diagonals(Mb, J, opts.delassus_norm)
    regs = [cone.regularization_params(scheme.delta_t, c, w[i], opts.beta, opts.sigma,
                                       opts.near_rigid_dissipation)
            for i, c in enumerate(contacts.contacts)]
    return ContactProblem(A_blocks, v_star, J, contacts, regs, Mb)


def advance_positions(model, scheme, q0, v0, v):
    """q = q0 + dt N(q^theta) v^theta_vq with q^theta evaluated once from v."""
    qth, _, vvq = midstep(model, scheme, q0, v0, v)
    q = q0 + scheme.delta_t * (mdl.kinematic_map(model, qth) @ vvq)
    return mdl.normalize_positions(model, q)


def step_with_problem(model, scheme, state, solver_options=None, problem_options=None):
    from . import sap

    q0 = model.check_q(state.q)
    v0 = model.check_v(state.v)
    problem = assemble_contact_problem(model, scheme, q0, v0, problem_options)
    result = sap.solve(problem, v0, solver_options)
    if not np.all(np.isfinite(result.v)):
        raise SolverDivergenceError("solver produced non-finite velocities", result)
    q = advance_positions(model, scheme, q0, v0, result.v)
    return mdl.GeneralizedState(q, result.v.copy(), state.time + scheme.delta_t), result, problem


def step(model, scheme, state, solver_options=None, problem_options=None):
    """One time step; returns (new state, SolveResult)."""
    new_state, result, _ = step_with_problem(model, scheme, state, solver_options, problem_options)
    return new_state, result
