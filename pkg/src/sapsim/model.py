"""Multibody models in generalized coordinates.

A model is a forest in which every tree carries a single body:

* ``Particle``: 3 position dofs, 3 velocity dofs, no rotation.
* ``FreeBody``: position plus scalar-first unit quaternion (7 positions);
  velocities are the COM velocity and the angular velocity, both expressed in
  the world frame (6 dofs).
* ``PrismaticBody``: one sliding dof along a fixed axis on a fixed base.
* ``RevoluteBody``: one hinge dof about a fixed axis on a fixed base.

Joint bodies may carry a linear spring-damper (the ``k1`` force term). Gravity
and constant external forces make up ``k2``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

WORLD = -1
QUAT_TOL = 1e-9


def _vec3(x, name="vector"):
    a = np.asarray(x, dtype=float).reshape(-1)
    if a.shape != (3,):
        raise InvalidInputError(f"{name} must have 3 components, got {a.shape}")
    return a


def _unit(x, name="axis"):
    a = _vec3(x, name)
    n = np.linalg.norm(a)
    if not np.isfinite(n) or n == 0.0:
        raise InvalidInputError(f"{name} must be a nonzero finite vector")
    return a / n


def skew(w):
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def quat_to_matrix(quat):
    """Rotation matrix of a scalar-first quaternion (normalized internally)."""
    w, x, y, z = np.asarray(quat, dtype=float) / np.linalg.norm(quat)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_multiply(a, b):
    a0, av = a[0], np.asarray(a[1:])
    b0, bv = b[0], np.asarray(b[1:])
    return np.concatenate([[a0 * b0 - av @ bv], a0 * bv + b0 * av + np.cross(av, bv)])


def quat_rate_matrix(quat):
    """4x3 matrix E with qdot = E @ omega for a world-frame angular velocity.

    Equivalent to qdot = 1/2 (0, omega) * q.
    """
    w = quat[0]
    u = np.asarray(quat[1:], dtype=float)
    return 0.5 * np.vstack([-u[None, :], w * np.eye(3) - skew(u)])


def rotation_about(axis, angle):
    k = skew(axis)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


@dataclass(frozen=True)
class Material:
    """Compliant contact material: stiffness k (N/m), dissipation time scale
    tau_d (s) and Coulomb friction coefficient mu."""

    stiffness: float
    dissipation: float = 0.0
    friction: float = 1.0


@dataclass(frozen=True)
class Sphere:
    radius: float
    offset: tuple = (0.0, 0.0, 0.0)
    material: Material | None = None


@dataclass(frozen=True)
class HalfSpace:
    """World-fixed half-space {x : normal . x <= offset} with an outward normal."""

    normal: tuple
    offset: float = 0.0
    material: Material | None = None

    def unit_normal(self):
        return _unit(self.normal, "half-space normal")


@dataclass(frozen=True)
class Particle:
    name: str
    mass: float
    spheres: tuple = ()
    force: tuple = (0.0, 0.0, 0.0)

    nq = 3
    nv = 3

    def pose(self, qb):
        return qb[:3], np.eye(3)

    def point_jacobian(self, qb, p):
        return np.eye(3)

    def mass_block(self, qb):
        return self.mass * np.eye(3)

    def external_force(self, qb, gravity):
        return self.mass * gravity + np.asarray(self.force, dtype=float)

    def rate_map(self, qb):
        return np.eye(3)

    def potential(self, qb, gravity):
        return -self.mass * (gravity @ qb[:3])


@dataclass(frozen=True)
class FreeBody:
    name: str
    mass: float
    inertia: tuple  # principal moments in the body frame
    spheres: tuple = ()
    force: tuple = (0.0, 0.0, 0.0)

    nq = 7
    nv = 6

    def pose(self, qb):
        return qb[:3], quat_to_matrix(qb[3:7])

    def point_jacobian(self, qb, p):
        r = np.asarray(p) - qb[:3]
        return np.hstack([np.eye(3), -skew(r)])

    def mass_block(self, qb):
        R = quat_to_matrix(qb[3:7])
        blk = np.zeros((6, 6))
        blk[:3, :3] = self.mass * np.eye(3)
        blk[3:, 3:] = R @ np.diag(self.inertia) @ R.T
        return blk

    def external_force(self, qb, gravity):
        f = np.zeros(6)
        f[:3] = self.mass * gravity + np.asarray(self.force, dtype=float)
        return f

    def rate_map(self, qb):
        quat = qb[3:7] / np.linalg.norm(qb[3:7])
        blk = np.zeros((7, 6))
        blk[:3, :3] = np.eye(3)
        blk[3:, 3:] = quat_rate_matrix(quat)
        return blk

    def potential(self, qb, gravity):
        return -self.mass * (gravity @ qb[:3])


@dataclass(frozen=True)
class PrismaticBody:
    name: str
    mass: float
    axis: tuple
    origin: tuple = (0.0, 0.0, 0.0)
    stiffness: float = 0.0
    damping: float = 0.0
    rest: float = 0.0
    spheres: tuple = ()
    force: tuple = (0.0, 0.0, 0.0)

    nq = 1
    nv = 1

    def _axis(self):
        return _unit(self.axis)

    def pose(self, qb):
        return np.asarray(self.origin, dtype=float) + qb[0] * self._axis(), np.eye(3)

    def point_jacobian(self, qb, p):
        return self._axis()[:, None]

    def mass_block(self, qb):
        return np.array([[self.mass]])

    def external_force(self, qb, gravity):
        f = self.mass * gravity + np.asarray(self.force, dtype=float)
        return np.array([self._axis() @ f])

    def rate_map(self, qb):
        return np.eye(1)

    def potential(self, qb, gravity):
        com, _ = self.pose(qb)
        return -self.mass * (gravity @ com)


@dataclass(frozen=True)
class RevoluteBody:
    """Rigid body hinged at ``pivot``; ``arm`` is the COM offset from the pivot
    at zero angle and ``inertia`` the moment about the COM along the axis."""

    name: str
    mass: float
    axis: tuple
    pivot: tuple = (0.0, 0.0, 0.0)
    arm: tuple = (1.0, 0.0, 0.0)
    inertia: float = 0.0
    stiffness: float = 0.0
    damping: float = 0.0
    rest: float = 0.0
    spheres: tuple = ()
    force: tuple = (0.0, 0.0, 0.0)

    nq = 1
    nv = 1

    def _axis(self):
        return _unit(self.axis)

    def pose(self, qb):
        R = rotation_about(self._axis(), qb[0])
        return np.asarray(self.pivot, dtype=float) + R @ np.asarray(self.arm, dtype=float), R

    def point_jacobian(self, qb, p):
        return np.cross(self._axis(), np.asarray(p) - np.asarray(self.pivot, dtype=float))[:, None]

    def mass_block(self, qb):
        a = self._axis()
        arm = np.asarray(self.arm, dtype=float)
        perp = arm - (arm @ a) * a
        return np.array([[self.inertia + self.mass * (perp @ perp)]])

    def external_force(self, qb, gravity):
        com, _ = self.pose(qb)
        f = self.mass * gravity + np.asarray(self.force, dtype=float)
        return np.array([self._axis() @ np.cross(com - np.asarray(self.pivot, dtype=float), f)])

    def rate_map(self, qb):
        return np.eye(1)

    def potential(self, qb, gravity):
        com, _ = self.pose(qb)
        return -self.mass * (gravity @ com)


JOINT_TYPES = (PrismaticBody, RevoluteBody)


@dataclass(frozen=True)
class Tree:
    id: int
    dof_offset: int
    n_t: int
    q_offset: int
    n_q: int
    body: object

    @property
    def v_slice(self):
        return slice(self.dof_offset, self.dof_offset + self.n_t)

    @property
    def q_slice(self):
        return slice(self.q_offset, self.q_offset + self.n_q)


@dataclass
class GeneralizedState:
    q: np.ndarray
    v: np.ndarray
    time: float = 0.0

    def copy(self):
        return GeneralizedState(self.q.copy(), self.v.copy(), self.time)


class SystemModel:
    """Immutable forest of single-body trees plus world half-spaces."""

    def __init__(self, bodies, half_spaces=(), gravity=(0.0, 0.0, -9.81)):
        self.bodies = tuple(bodies)
        self.half_spaces = tuple(half_spaces)
        self.gravity = _vec3(gravity, "gravity")
        trees = []
        dof = qo = 0
        for i, body in enumerate(self.bodies):
            if not body.mass > 0:
                raise InvalidInputError(f"body {body.name!r} must have positive mass")
            trees.append(Tree(i, dof, body.nv, qo, body.nq, body))
            dof += body.nv
            qo += body.nq
        self.trees = tuple(trees)
        self.n_v = dof
        self.n_q = qo

    @property
    def n_trees(self):
        return len(self.trees)

    def tree_sizes(self):
        return [t.n_t for t in self.trees]

    def check_q(self, q):
        q = np.asarray(q, dtype=float)
        if q.shape != (self.n_q,):
            raise InvalidInputError(f"q must have length {self.n_q}, got {q.shape}")
        if not np.all(np.isfinite(q)):
            raise InvalidInputError("q contains non-finite values")
        return q

    def check_v(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n_v,):
            raise InvalidInputError(f"v must have length {self.n_v}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("v contains non-finite values")
        return v

    def pose(self, q, tree_id):
        t = self.trees[tree_id]
        return t.body.pose(q[t.q_slice])

    def point_jacobian(self, q, tree_id, p):
        """3 x n_t Jacobian of the world velocity of the material point of
        ``tree_id`` located at ``p``."""
        t = self.trees[tree_id]
        return t.body.point_jacobian(q[t.q_slice], p)

    def quaternion_slices(self):
        return [slice(t.q_offset + 3, t.q_offset + 7) for t in self.trees
                if isinstance(t.body, FreeBody)]


def mass_blocks(model, q):
    q = model.check_q(q)
    return [t.body.mass_block(q[t.q_slice]) for t in model.trees]


def mass_matrix(model, q):
    """Block-diagonal (by tree) SPD mass matrix M(q)."""
    M = np.zeros((model.n_v, model.n_v))
    for t, blk in zip(model.trees, mass_blocks(model, q)):
        M[t.v_slice, t.v_slice] = blk
    return M


def spring_damper_forces(model, q, v):
    """k1: joint-level linear spring-dampers."""
    k1 = np.zeros(model.n_v)
    for t in model.trees:
        b = t.body
        if isinstance(b, JOINT_TYPES):
            i = t.dof_offset
            k1[i] = -b.stiffness * (q[t.q_offset] - b.rest) - b.damping * v[i]
    return k1


def external_forces(model, q):
    """k2: gravity and constant applied forces (velocity independent)."""
    k2 = np.zeros(model.n_v)
    for t in model.trees:
        k2[t.v_slice] = t.body.external_force(q[t.q_slice], model.gravity)
    return k2


def forces(model, q, v):
    """Generalized non-contact forces k(q, v) = k1 + k2."""
    q = model.check_q(q)
    v = model.check_v(v)
    return spring_damper_forces(model, q, v) + external_forces(model, q)


def stiffness_damping(model):
    """Diagonals of K = -dk1/dq N and D = -dk1/dv (constant for joint springs)."""
    K = np.zeros(model.n_v)
    D = np.zeros(model.n_v)
    for t in model.trees:
        if isinstance(t.body, JOINT_TYPES):
            K[t.dof_offset] = t.body.stiffness
            D[t.dof_offset] = t.body.damping
    return K, D


def kinematic_map(model, q):
    """N(q) with qdot = N(q) v."""
    q = model.check_q(q)
    N = np.zeros((model.n_q, model.n_v))
    for t in model.trees:
        N[t.q_slice, t.v_slice] = t.body.rate_map(q[t.q_slice])
    return N


def normalize_positions(model, q):
    q = np.array(q, dtype=float)
    for s in model.quaternion_slices():
        q[s] /= np.linalg.norm(q[s])
    return q


def potential_energy(model, q):
    """Gravity plus joint spring potential."""
    total = 0.0
    for t in model.trees:
        b = t.body
        qb = q[t.q_slice]
        total += b.potential(qb, model.gravity)
        if isinstance(b, JOINT_TYPES):
            total += 0.5 * b.stiffness * (qb[0] - b.rest) ** 2
    return total
