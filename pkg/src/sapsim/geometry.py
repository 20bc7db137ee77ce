"""Narrow-phase contact detection and the block-sparse contact Jacobian.

Supported pairs are sphere/half-space and sphere/sphere between distinct trees.
Contacts between the same two trees form a patch. Rows of every contact are
expressed in its contact frame, ordered [t1, t2, n], with n pointing from body
B towards body A so that a positive normal velocity means separation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateGeometryError
from .model import WORLD, Material

DEFAULT_MARGIN = 0.01
DEFAULT_MATERIAL = Material(stiffness=1e12, dissipation=0.0, friction=1.0)


@dataclass(frozen=True)
class ContactPair:
    phi0: float
    normal: np.ndarray
    point: np.ndarray
    tree_a: int
    tree_b: int
    geom_a: int
    geom_b: int
    material: Material
    patch_id: int = -1


@dataclass(frozen=True)
class Patch:
    id: int
    tree_a: int
    tree_b: int
    contacts: tuple

    @property
    def trees(self):
        return tuple(t for t in (self.tree_a, self.tree_b) if t != WORLD)


@dataclass
class ContactSet:
    contacts: list = field(default_factory=list)
    patches: list = field(default_factory=list)

    def __len__(self):
        return len(self.contacts)

    @property
    def phi0(self):
        return np.array([c.phi0 for c in self.contacts])


def contact_frame(normal):
    """Rows [t1; t2; n] of a right-handed orthonormal frame with z = n.

    t1 is built from the coordinate axis along which n has the smallest
    magnitude, which makes the choice deterministic.
    """
    n = np.asarray(normal, dtype=float)
    e = np.zeros(3)
    e[int(np.argmin(np.abs(n)))] = 1.0
    t1 = e - (e @ n) * n
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    return np.vstack([t1, t2, n])


def combine_materials(a, b):
    """Pair material: stiffness in series, compliance-weighted dissipation,
    harmonic-mean friction. A missing side defers to the other."""
    if a is None:
        return b
    if b is None or a == b:
        return a
    ka, kb = a.stiffness, b.stiffness
    if np.isinf(ka) and np.isinf(kb):
        k, tau = np.inf, 0.5 * (a.dissipation + b.dissipation)
    elif np.isinf(ka):
        k, tau = kb, b.dissipation
    elif np.isinf(kb):
        k, tau = ka, a.dissipation
    else:
        k = ka * kb / (ka + kb)
        tau = (a.dissipation * kb + b.dissipation * ka) / (ka + kb)
    s = a.friction + b.friction
    mu = 2.0 * a.friction * b.friction / s if s > 0 else 0.0
    return Material(k, tau, mu)


def sphere_centers(model, q):
    """World centers of all body spheres as (tree, local index, center, sphere)."""
    out = []
    for t in model.trees:
        com, R = t.body.pose(q[t.q_slice])
        for j, s in enumerate(t.body.spheres):
            out.append((t.id, j, com + R @ np.asarray(s.offset, dtype=float), s))
    return out


def detect_contacts(model, q0, margin=DEFAULT_MARGIN, default_material=DEFAULT_MATERIAL):
    """Contacts with phi0 <= margin, sorted by (tree_a, tree_b, geometry ids).

    Half-space contacts use tree_b = WORLD and geom_b = half-space index.
    """
    q0 = model.check_q(q0)
    spheres = sphere_centers(model, q0)
    found = []

    for ta, ja, c, s in spheres:
        for h, hs in enumerate(model.half_spaces):
            n = hs.unit_normal()
            phi = n @ c - hs.offset - s.radius
            if phi <= margin:
                p = c - (s.radius + 0.5 * phi) * n
                mat = combine_materials(s.material, hs.material) or default_material
                found.append((ta, WORLD, ja, h, phi, n, p, mat))

    if len(spheres) > 1:
        centers = np.array([x[2] for x in spheres])
        radii = np.array([x[3].radius for x in spheres])
        trees = np.array([x[0] for x in spheres])
        d = centers[:, None, :] - centers[None, :, :]
        dist = np.linalg.norm(d, axis=2)
        gap = dist - radii[:, None] - radii[None, :]
        ii, jj = np.nonzero((gap <= margin) & (trees[:, None] < trees[None, :]))
        for i, j in zip(ii, jj):
            ta, ja, ca, sa = spheres[i]
            tb, jb, cb, sb = spheres[j]
            r = dist[i, j]
            n = d[i, j] / r if r > 1e-14 * (sa.radius + sb.radius) else np.zeros(3)
            p = 0.5 * ((ca - sa.radius * n) + (cb + sb.radius * n))
            mat = combine_materials(sa.material, sb.material) or default_material
            found.append((ta, tb, ja, jb, gap[i, j], n, p, mat))

    found.sort(key=lambda f: (f[0], f[1], f[2], f[3]))
    contacts, patches = [], []
    key = None
    members = []
    for f in found:
        if (f[0], f[1]) != key:
            if key is not None:
                patches.append(Patch(len(patches), key[0], key[1], tuple(members)))
            key, members = (f[0], f[1]), []
        members.append(len(contacts))
        contacts.append(ContactPair(float(f[4]), f[5], f[6], f[0], f[1], f[2], f[3], f[7],
                                    patch_id=len(patches)))
    if key is not None:
        patches.append(Patch(len(patches), key[0], key[1], tuple(members)))
    return ContactSet(contacts, patches)


class ContactJacobian:
    """J(q0) stored as dense blocks J_pt of size 3 r_p x n_t per (patch, tree).

    Contacts are numbered patch by patch, so the rows of patch p are the
    contiguous range ``rows(p)``.
    """

    def __init__(self, tree_sizes, patches, blocks, frames):
        self.tree_sizes = list(tree_sizes)
        self.tree_offsets = np.concatenate([[0], np.cumsum(self.tree_sizes)]).astype(int)
        self.n_v = int(self.tree_offsets[-1])
        self.patches = list(patches)
        self.blocks = blocks
        self.frames = frames
        self.n_c = len(frames)
        self._csr = None

    def rows(self, patch):
        first = 3 * patch.contacts[0]
        return slice(first, first + 3 * len(patch.contacts))

    def tree_cols(self, tree):
        return slice(self.tree_offsets[tree], self.tree_offsets[tree + 1])

    def dense(self):
        out = np.zeros((3 * self.n_c, self.n_v))
        for p in self.patches:
            for t in p.trees:
                out[self.rows(p), self.tree_cols(t)] += self.blocks[p.id, t]
        return out

    def sparse(self):
        if self._csr is None:
            rows, cols, vals = [], [], []
            for p in self.patches:
                r0 = self.rows(p).start
                for t in p.trees:
                    blk = self.blocks[p.id, t]
                    rr, cc = np.meshgrid(np.arange(blk.shape[0]), np.arange(blk.shape[1]),
                                         indexing="ij")
                    rows.append((rr + r0).ravel())
                    cols.append((cc + self.tree_offsets[t]).ravel())
                    vals.append(blk.ravel())
            if rows:
                self._csr = sp.csr_matrix(
                    (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                    shape=(3 * self.n_c, self.n_v))
            else:
                self._csr = sp.csr_matrix((0, self.n_v))
        return self._csr

    def matvec(self, v):
        return self.sparse() @ v

    def rmatvec(self, gamma):
        return self.sparse().T @ np.ravel(gamma)


def contact_jacobian(model, q0, contacts):
    q0 = model.check_q(q0)
    frames = np.zeros((len(contacts), 3, 3))
    blocks = {}
    for p in contacts.patches:
        r = len(p.contacts)
        for t in p.trees:
            blocks[p.id, t] = np.zeros((3 * r, model.trees[t].n_t))
        for k, ci in enumerate(p.contacts):
            c = contacts.contacts[ci]
            nn = np.linalg.norm(c.normal)
            if not abs(nn - 1.0) < 1e-9:
                raise DegenerateGeometryError(
                    f"contact {ci} between trees {c.tree_a} and {c.tree_b} has no normal")
            C = contact_frame(c.normal)
            frames[ci] = C
            rows = slice(3 * k, 3 * k + 3)
            blocks[p.id, c.tree_a][rows] += C @ model.point_jacobian(q0, c.tree_a, c.point)
            if c.tree_b != WORLD:
                blocks[p.id, c.tree_b][rows] -= C @ model.point_jacobian(q0, c.tree_b, c.point)
    return ContactJacobian(model.tree_sizes(), contacts.patches, blocks, frames)
