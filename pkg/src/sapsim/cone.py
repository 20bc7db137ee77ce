"""Friction-cone machinery for compliant contact.

Every contact carries a diagonal metric R = diag(Rt, Rt, Rn). Impulses are the
R-metric projection of y = -R^{-1} (v_c - vhat_c) onto the Coulomb cone
F = {||g_t|| <= mu g_n}. The projection has a closed form over three regions:

* stiction   ``y_r <= mu y_n``            -> gamma = y
* sliding    ``-mu_hat y_r <= y_n < y_r / mu`` -> gamma on the cone boundary
* no contact ``y_n < -mu_hat y_r``         -> gamma = 0

with mu_tilde = mu sqrt(Rt/Rn) and mu_hat = mu Rt/Rn. The cone boundary is
assigned to stiction and the polar-cone boundary to sliding.

The ``*_batch`` functions operate on (n, 3) arrays and are what the solver
uses; the single-contact functions wrap them.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import InvalidMaterialError, InvalidInputError

DEFAULT_BETA = 1.0
DEFAULT_SIGMA = 1e-3


class Region(IntEnum):
    STICTION = 0
    SLIDING = 1
    NO_CONTACT = 2


@dataclass(frozen=True)
class Regularization:
    Rt: float
    Rn: float
    vhat_n: float
    mu: float
    near_rigid: bool = False
    tau_d: float = 0.0

    @property
    def mu_tilde(self):
        return self.mu * np.sqrt(self.Rt / self.Rn)

    @property
    def mu_hat(self):
        return self.mu * self.Rt / self.Rn

    @property
    def R(self):
        return np.array([self.Rt, self.Rt, self.Rn])

    @property
    def vhat(self):
        return np.array([0.0, 0.0, self.vhat_n])


@dataclass(frozen=True)
class ProjectionResult:
    gamma: np.ndarray
    region: Region
    y_r: float
    t_hat: np.ndarray


def regularization_params(delta_t, contact, delassus_w, beta=DEFAULT_BETA, sigma=DEFAULT_SIGMA,
                          near_rigid_dissipation=False):
    """Regularization and stabilization velocity for one contact.

    Rn = max(beta^2/(4 pi^2) w, 1/(dt k (dt + tau_d))) and Rt = sigma w. When
    the first (near-rigid) argument wins and ``near_rigid_dissipation`` is
    set, tau_d is replaced by beta/pi dt before computing vhat_n.
    """
    mat = contact.material
    k, tau, mu = mat.stiffness, mat.dissipation, mat.friction
    if not (k > 0):
        raise InvalidMaterialError(f"contact stiffness must be positive, got {k}")
    if not (tau >= 0) or not (mu >= 0):
        raise InvalidMaterialError(f"invalid material (tau_d={tau}, mu={mu})")
    if not (delta_t > 0) or not (delassus_w > 0) or not np.isfinite(delassus_w):
        raise InvalidInputError("time step and Delassus estimate must be positive")
    if not (0 < beta <= 1) or not (sigma > 0):
        raise InvalidInputError(f"need 0 < beta <= 1 and sigma > 0 (beta={beta}, sigma={sigma})")
    rigid = beta ** 2 / (4 * np.pi ** 2) * delassus_w
    soft = 1.0 / (delta_t * k * (delta_t + tau))
    near_rigid = bool(rigid > soft)
    Rn = max(rigid, soft)
    if near_rigid and near_rigid_dissipation:
        tau = beta / np.pi * delta_t
    vhat_n = -contact.phi0 / (delta_t + tau)
    return Regularization(float(sigma * delassus_w), float(Rn), float(vhat_n), float(mu),
                          near_rigid, float(tau))


def delassus_diagonals(mass_blocks, jacobian, norm="trace"):
    """Per-contact effective inverse mass w_i from the tree-local estimate
    W_ii ~ sum_t J_it M_t^{-1} J_it^T.

    ``norm="trace"`` uses trace(W_ii)/3 (w = 1/m for a particle);
    ``norm="frobenius"`` uses ||W_ii||_F / 3.
    """
    w = np.zeros(jacobian.n_c)
    inv = {}
    for p in jacobian.patches:
        W = np.zeros((len(p.contacts), 3, 3))
        for t in p.trees:
            if t not in inv:
                inv[t] = np.linalg.inv(mass_blocks[t])
            Jb = jacobian.blocks[p.id, t].reshape(len(p.contacts), 3, -1)
            W += Jb @ inv[t] @ Jb.transpose(0, 2, 1)
        if norm == "trace":
            vals = np.trace(W, axis1=1, axis2=2) / 3.0
        elif norm == "frobenius":
            vals = np.linalg.norm(W, axis=(1, 2)) / 3.0
        else:
            raise InvalidInputError(f"unknown Delassus norm {norm!r}")
        w[list(p.contacts)] = vals
    return w


def delassus_diagonal_approx(mass_blocks, jacobian, contact_i, norm="trace"):
    return float(delassus_diagonals(mass_blocks, jacobian, norm)[contact_i])


def _parts(y, Rt, Rn, mu):
    y = np.atleast_2d(np.asarray(y, dtype=float))
    yt = y[:, :2]
    yn = y[:, 2]
    yr = np.hypot(yt[:, 0], yt[:, 1])
    mu_hat = mu * Rt / Rn
    stiction = (yr <= mu * yn) & (yn >= 0.0)
    sliding = ~stiction & (yn >= -mu_hat * yr)
    region = np.where(stiction, Region.STICTION, np.where(sliding, Region.SLIDING, Region.NO_CONTACT))
    that = np.zeros_like(yt)
    nz = yr > 0
    that[nz] = yt[nz] / yr[nz, None]
    return y, yt, yn, yr, mu_hat, region, that


def project_batch(y, Rt, Rn, mu):
    """Analytic R-metric projection of each row of ``y`` onto its cone."""
    y, yt, yn, yr, mu_hat, region, that = _parts(y, Rt, Rn, mu)
    mu_tilde2 = mu * mu * Rt / Rn
    gamma = np.zeros_like(y)
    st = region == Region.STICTION
    sl = region == Region.SLIDING
    gamma[st] = y[st]
    gn = (yn + mu_hat * yr) / (1.0 + mu_tilde2)
    gamma[:, 2] = np.where(sl, gn, gamma[:, 2])
    gamma[:, :2] = np.where(sl[:, None], (mu * gn)[:, None] * that, gamma[:, :2])
    return gamma, region


def cost_batch(y, Rt, Rn, mu):
    """Per-contact regularizer cost l_R(y) = 1/2 ||P_F(y)||_R^2."""
    y, yt, yn, yr, mu_hat, region, that = _parts(y, Rt, Rn, mu)
    mu_tilde2 = mu * mu * Rt / Rn
    st = 0.5 * (Rt * yr ** 2 + Rn * yn ** 2)
    sl = Rn / (2.0 * (1.0 + mu_tilde2)) * (yn + mu_hat * yr) ** 2
    return np.where(region == Region.STICTION, st, np.where(region == Region.SLIDING, sl, 0.0))


def gradient_batch(y, Rt, Rn, mu):
    y, yt, yn, yr, mu_hat, region, that = _parts(y, Rt, Rn, mu)
    mu_tilde2 = mu * mu * Rt / Rn
    R = np.column_stack([Rt * np.ones_like(yn), Rt * np.ones_like(yn), Rn * np.ones_like(yn)])
    g = np.zeros_like(y)
    st = region == Region.STICTION
    g[st] = (R * y)[st]
    sl = region == Region.SLIDING
    s = (mu_hat * yr + yn) / (1.0 + mu_tilde2)
    g_sl = np.column_stack([(s * mu * Rt)[:, None] * that, s * Rn])
    g[sl] = g_sl[sl]
    return g


def g_blocks_batch(y, Rt, Rn, mu):
    """(n, 3, 3) blocks G_i = -d gamma_i / d v_c,i, extended to region
    boundaries by the stiction (cone boundary) and sliding (polar boundary)
    expressions."""
    y, yt, yn, yr, mu_hat, region, that = _parts(y, Rt, Rn, mu)
    n = y.shape[0]
    Rt = np.broadcast_to(Rt, (n,)).astype(float)
    Rn = np.broadcast_to(Rn, (n,)).astype(float)
    mu = np.broadcast_to(mu, (n,)).astype(float)
    G = np.zeros((n, 3, 3))
    st = region == Region.STICTION
    G[st, 0, 0] = np.where(mu[st] > 0, 1.0 / Rt[st], 0.0)
    G[st, 1, 1] = G[st, 0, 0]
    G[st, 2, 2] = 1.0 / Rn[st]
    sl = np.nonzero(region == Region.SLIDING)[0]
    if sl.size:
        m, rt, rn, t = mu[sl], Rt[sl], Rn[sl], that[sl]
        yr_sl = yr[sl]
        s = m * rt / rn * yr_sl + yn[sl]
        scale = 1.0 / (rn * (1.0 + m * m * rt / rn))
        P = t[:, :, None] * t[:, None, :]
        Pperp = np.eye(2)[None] - P
        ratio = np.divide(m * s * rn, rt * yr_sl, out=np.zeros_like(s), where=yr_sl > 0)
        G[sl, :2, :2] = scale[:, None, None] * ((m * m)[:, None, None] * P
                                                 + ratio[:, None, None] * Pperp)
        G[sl, :2, 2] = (scale * m)[:, None] * t
        G[sl, 2, :2] = G[sl, :2, 2]
        G[sl, 2, 2] = scale
    return G


def project(y, reg, mu=None):
    mu = reg.mu if mu is None else mu
    gamma, region = project_batch(np.asarray(y, dtype=float)[None], reg.Rt, reg.Rn, mu)
    yt = np.asarray(y, dtype=float)[:2]
    yr = float(np.hypot(*yt))
    that = yt / yr if yr > 0 else np.zeros(2)
    return ProjectionResult(gamma[0], Region(int(region[0])), yr, that)


def regularizer_cost(y, reg, mu=None):
    mu = reg.mu if mu is None else mu
    return float(cost_batch(np.asarray(y, dtype=float)[None], reg.Rt, reg.Rn, mu)[0])


def regularizer_gradient_y(y, reg, mu=None):
    mu = reg.mu if mu is None else mu
    return gradient_batch(np.asarray(y, dtype=float)[None], reg.Rt, reg.Rn, mu)[0]


def g_block(y, reg, mu=None):
    mu = reg.mu if mu is None else mu
    return g_blocks_batch(np.asarray(y, dtype=float)[None], reg.Rt, reg.Rn, mu)[0]
