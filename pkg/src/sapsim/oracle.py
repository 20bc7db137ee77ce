"""Brute-force references for testing.

Nothing here calls into ``cone``, ``sap`` or ``linalg``: each routine solves
its problem from scratch so it can be used to check those modules.
"""
from __future__ import annotations

import numpy as np

from .model import JOINT_TYPES, WORLD


def _as_rows(y):
    y = np.asarray(y, dtype=float)
    return np.atleast_2d(y), y.ndim == 1


def _soc_project(z, m):
    """Euclidean projection of rows of z onto {||z_t|| <= m z_n}."""
    r = np.hypot(z[:, 0], z[:, 1])
    zn = z[:, 2]
    out = np.zeros_like(z)
    inside = r <= m * zn
    out[inside] = z[inside]
    boundary = ~inside & (m * r > -zn)
    s = (m * r + zn) / (1.0 + m * m)
    safe_r = np.where(r > 0, r, 1.0)
    out[:, 0] = np.where(boundary, m * s * z[:, 0] / safe_r, out[:, 0])
    out[:, 1] = np.where(boundary, m * s * z[:, 1] / safe_r, out[:, 1])
    out[:, 2] = np.where(boundary, s, out[:, 2])
    return out


def project_numeric(y, Rt, Rn, mu, tol=1e-12, max_iter=100_000):
    """Minimize 1/2 ||g - y||_R^2 over the friction cone by projected gradient.

    The iteration runs in the scaled variable z = R^{1/2} g, where the metric
    is the identity and the cone becomes {||z_t|| <= mu sqrt(Rt/Rn) z_n}; the
    step size is 1/L with L = 1. Stops when the R-norm step falls below ``tol``.
    """
    Y, single = _as_rows(y)
    n = Y.shape[0]
    s = np.sqrt(np.column_stack([np.broadcast_to(Rt, (n,)), np.broadcast_to(Rt, (n,)),
                                 np.broadcast_to(Rn, (n,))]))
    m = np.broadcast_to(mu, (n,)) * np.sqrt(np.broadcast_to(Rt, (n,)) / np.broadcast_to(Rn, (n,)))
    zy = s * Y
    z = np.zeros_like(zy)
    step_size = 1.0  # 1/L, the scaled objective has unit Hessian
    for _ in range(max_iter):
        grad = z - zy
        z_new = _soc_project(z - step_size * grad, m)
        step = np.max(np.linalg.norm(z_new - z, axis=1))
        z = z_new
        if step < tol * (1.0 + np.max(np.linalg.norm(zy, axis=1))):
            break
    g = z / s
    return g[0] if single else g


def project_kkt(y, Rt, Rn, mu):
    """Projection by enumerating KKT candidates (interior, apex, boundary ray)
    of the reduced 2-D problem in (radial, normal) components."""
    Y, single = _as_rows(y)
    n = Y.shape[0]
    Rt = np.broadcast_to(Rt, (n,)).astype(float)
    Rn = np.broadcast_to(Rn, (n,)).astype(float)
    mu = np.broadcast_to(mu, (n,)).astype(float)
    yr = np.hypot(Y[:, 0], Y[:, 1])
    yn = Y[:, 2]

    def cost(rho, gn):
        return 0.5 * (Rt * (rho - yr) ** 2 + Rn * (gn - yn) ** 2)

    best_rho = np.zeros(n)
    best_n = np.zeros(n)
    best = cost(best_rho, best_n)

    sb = np.maximum(0.0, (Rt * mu * yr + Rn * yn) / (Rt * mu * mu + Rn))
    cb = cost(mu * sb, sb)
    take = cb < best
    best_rho[take], best_n[take], best[take] = (mu * sb)[take], sb[take], cb[take]

    feasible = (yr <= mu * yn) & (yn >= 0)
    best_rho[feasible], best_n[feasible] = yr[feasible], yn[feasible]

    g = np.zeros_like(Y)
    dirn = np.zeros((n, 2))
    nz = yr > 0
    dirn[nz] = Y[nz, :2] / yr[nz, None]
    g[:, :2] = best_rho[:, None] * dirn
    g[:, 2] = best_n
    return g[0] if single else g


def cone_distance(x, mu):
    """Euclidean distance of rows of x to {||x_t|| <= mu x_n}."""
    X, _ = _as_rows(x)
    mu = np.broadcast_to(mu, (X.shape[0],))
    return np.linalg.norm(X - _soc_project(X, mu), axis=1)


def sample_cone(mu, rng, n, scale=1.0):
    """n random points of the friction cone, including boundary points."""
    gn = rng.uniform(0.0, scale, n)
    frac = rng.uniform(0.0, 1.0, n)
    frac[: n // 4] = 1.0
    ang = rng.uniform(0.0, 2 * np.pi, n)
    r = frac * mu * gn
    return np.column_stack([r * np.cos(ang), r * np.sin(ang), gn])


def dual_cone_violation(g, mu, samples, scale=None):
    """max over sampled x in F of -<x, g> / (||x|| scale); <= 0 (up to
    round-off) iff g looks like a member of the dual cone F*. ``scale``
    defaults to ||g||; pass the magnitude of the terms forming g when g
    itself may vanish."""
    g = np.asarray(g, dtype=float)
    scale = np.linalg.norm(g) if scale is None else scale
    dots = samples @ g
    norms = np.linalg.norm(samples, axis=1) * max(scale, 1e-300)
    norms = np.where(norms > 0, norms, 1.0)
    return float(np.max(-dots / norms))


def fd_gradient(f, x, h=1e-6, richardson=False):
    """Central-difference gradient with step h_i = h (1 + |x_i|)."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        hi = h * (1.0 + abs(x[i]))
        e = np.zeros_like(x)
        e[i] = hi
        d1 = (f(x + e) - f(x - e)) / (2 * hi)
        if richardson:
            d2 = (f(x + e / 2) - f(x - e / 2)) / hi
            d1 = (4 * d2 - d1) / 3
        g[i] = d1
    return g


def fd_jacobian(g, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        hi = h * (1.0 + abs(x[i]))
        e = np.zeros_like(x)
        e[i] = hi
        cols.append((np.asarray(g(x + e)) - np.asarray(g(x - e))) / (2 * hi))
    return np.column_stack(cols)


def golden_section(f, a, b, tol=1e-10, max_iter=500):
    """Minimizer of a unimodal scalar function on [a, b]."""
    invphi = (np.sqrt(5) - 1) / 2
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) < tol * (1 + abs(a) + abs(b)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def energy(model, q, v):
    """Kinetic + joint-spring + gravitational energy, evaluated body by body."""
    total = 0.0
    g = model.gravity
    for t in model.trees:
        b = t.body
        qb, vb = q[t.q_slice], v[t.v_slice]
        total += 0.5 * vb @ b.mass_block(qb) @ vb
        com, _ = b.pose(qb)
        total -= b.mass * (g @ com)
        if isinstance(b, JOINT_TYPES):
            total += 0.5 * b.stiffness * (qb[0] - b.rest) ** 2
    return float(total)


def enumerate_pairs(model, q, margin):
    """Set of (tree_a, tree_b, geom_a, geom_b) within ``margin`` by a plain
    double loop over all geometry."""
    spheres = []
    for t in model.trees:
        com, R = t.body.pose(q[t.q_slice])
        for j, s in enumerate(t.body.spheres):
            spheres.append((t.id, j, com + R @ np.asarray(s.offset, dtype=float), s.radius))
    out = set()
    for ta, ja, c, r in spheres:
        for h, hs in enumerate(model.half_spaces):
            n = np.asarray(hs.normal, dtype=float)
            n = n / np.linalg.norm(n)
            if float(n @ c) - hs.offset - r <= margin:
                out.add((ta, WORLD, ja, h))
    for i in range(len(spheres)):
        for k in range(len(spheres)):
            ta, ja, ca, ra = spheres[i]
            tb, jb, cb, rb = spheres[k]
            if ta < tb and np.linalg.norm(ca - cb) - ra - rb <= margin:
                out.add((ta, tb, ja, jb))
    return out


def quat_exp_integrate(quat, omega, t):
    """Exact orientation after rotating at constant world-frame omega for time t."""
    w = np.asarray(omega, dtype=float)
    ang = np.linalg.norm(w) * t
    if ang == 0:
        return np.asarray(quat, dtype=float).copy()
    axis = w / np.linalg.norm(w)
    dq = np.concatenate([[np.cos(ang / 2)], np.sin(ang / 2) * axis])
    a0, av = dq[0], dq[1:]
    b0, bv = quat[0], np.asarray(quat[1:])
    return np.concatenate([[a0 * b0 - av @ bv], a0 * bv + b0 * av + np.cross(av, bv)])
