"""Random problem generators shared by the test modules."""
from __future__ import annotations

import numpy as np

from sapsim import cone, geometry
from sapsim.model import WORLD, Material
from sapsim.scheme import ContactProblem


def random_spd(rng, n, cond=10.0):
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    eig = np.exp(rng.uniform(0.0, np.log(cond), n))
    return (Q * eig) @ Q.T


def random_edges(rng, n_trees, n_edges):
    edges = set()
    while len(edges) < min(n_edges, n_trees * (n_trees - 1) // 2):
        a, b = sorted(rng.choice(n_trees, 2, replace=False))
        edges.add((int(a), int(b)))
    return sorted(edges)


def random_problem(rng, n_trees=4, sizes=None, edges=None, world=None, contacts_per_patch=(1, 3),
                   log_R=(-3.0, 1.0), mu_range=(0.0, 2.0), vhat_scale=1.0):
    """ContactProblem with random SPD mass blocks and random Jacobian blocks.

    ``edges`` lists tree pairs sharing a patch; ``world`` lists trees with a
    patch against the world.
    """
    sizes = list(sizes) if sizes is not None else [int(s) for s in rng.integers(1, 5, n_trees)]
    n_trees = len(sizes)
    if edges is None:
        edges = random_edges(rng, n_trees, max(1, n_trees - 1))
    if world is None:
        world = [t for t in range(n_trees) if rng.uniform() < 0.5] or [0]
    pairs = sorted([(a, b) for a, b in edges] + [(t, WORLD) for t in world])

    mass_blocks = [random_spd(rng, s) for s in sizes]
    A_blocks = [m + np.diag(rng.uniform(0, 0.5, len(m))) for m in mass_blocks]
    contacts, patches, blocks = [], [], {}
    mat = Material(1e6, 0.0, 1.0)
    for a, b in pairs:
        r = int(rng.integers(contacts_per_patch[0], contacts_per_patch[1] + 1))
        ids = tuple(range(len(contacts), len(contacts) + r))
        pid = len(patches)
        for i in ids:
            contacts.append(geometry.ContactPair(0.0, np.array([0.0, 0.0, 1.0]), np.zeros(3), a, b,
                                                 0, 0, mat, pid))
        patch = geometry.Patch(pid, a, b, ids)
        patches.append(patch)
        for t in patch.trees:
            blocks[pid, t] = rng.normal(size=(3 * r, sizes[t]))
    n_c = len(contacts)
    frames = np.tile(np.eye(3), (n_c, 1, 1))
    J = geometry.ContactJacobian(sizes, patches, blocks, frames)
    regs = []
    for _ in range(n_c):
        Rt, Rn = 10.0 ** rng.uniform(*log_R, 2)
        regs.append(cone.Regularization(float(Rt), float(Rn), float(rng.normal(0, vhat_scale)),
                                        float(rng.uniform(*mu_range))))
    v_star = rng.normal(size=sum(sizes))
    return ContactProblem(A_blocks, v_star, J, geometry.ContactSet(contacts, patches), regs,
                          mass_blocks)


def interior_margin(y, Rt, Rn, mu):
    """Signed distance-like margin of y from the nearest region boundary,
    relative to ||y|| (positive means strictly inside its region)."""
    yr = np.hypot(y[..., 0], y[..., 1])
    yn = y[..., 2]
    mu_hat = mu * Rt / Rn
    scale = np.linalg.norm(y, axis=-1) + 1e-300
    stick = mu * yn - yr
    polar = yn + mu_hat * yr
    inside = (stick >= 0) & (yn >= 0)
    return np.where(inside, stick, np.where(polar >= 0, np.minimum(-stick, polar), -polar)) / scale
