"""Block-sparse symmetric matrices over the tree graph and their Cholesky factor.

Nodes of the graph are trees; an edge joins two trees sharing a contact patch.
The factorization orders trees by minimum degree, groups chains of trees with
nested column structure into supernodes, and eliminates supernode by
supernode with dense kernels.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .errors import FactorizationError

DENSE_CROSSOVER = 450  # n_v below which "auto" uses the dense factorization (measured)


class BlockSparseSym:
    """Symmetric matrix stored as upper blocks (i, j), i <= j, of a tree partition."""

    def __init__(self, sizes):
        self.sizes = [int(s) for s in sizes]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)
        self.n = int(self.offsets[-1])
        self.blocks = {}

    @property
    def n_blocks(self):
        return len(self.sizes)

    def add(self, i, j, B):
        if i > j:
            i, j, B = j, i, B.T
        if (i, j) in self.blocks:
            self.blocks[i, j] = self.blocks[i, j] + B
        else:
            self.blocks[i, j] = np.array(B, dtype=float)

    def block(self, i, j):
        if i <= j:
            return self.blocks.get((i, j))
        b = self.blocks.get((j, i))
        return None if b is None else b.T

    def pattern(self):
        """Off-diagonal block pattern {(i, j) : i < j}."""
        return {k for k in self.blocks if k[0] != k[1]}

    def to_dense(self):
        out = np.zeros((self.n, self.n))
        o = self.offsets
        for (i, j), b in self.blocks.items():
            out[o[i]:o[i + 1], o[j]:o[j + 1]] = b
            if i != j:
                out[o[j]:o[j + 1], o[i]:o[i + 1]] = b.T
        return out

    def matvec(self, x):
        y = np.zeros(self.n)
        o = self.offsets
        for (i, j), b in self.blocks.items():
            y[o[i]:o[i + 1]] += b @ x[o[j]:o[j + 1]]
            if i != j:
                y[o[j]:o[j + 1]] += b.T @ x[o[i]:o[i + 1]]
        return y


def assemble_H(A_blocks, jacobian, G):
    """H = A + J^T G J with A block diagonal and G of shape (n_c, 3, 3)."""
    H = BlockSparseSym(jacobian.tree_sizes)
    for t, blk in enumerate(A_blocks):
        H.add(t, t, blk)
    for p in jacobian.patches:
        r = len(p.contacts)
        Gp = G[list(p.contacts)]
        trees = p.trees
        Jb = {t: jacobian.blocks[p.id, t].reshape(r, 3, -1) for t in trees}
        for ia, a in enumerate(trees):
            for b in trees[ia:]:
                GJ = Gp @ Jb[b]
                H.add(a, b, np.einsum("kia,kib->ab", Jb[a], GJ))
    return H


def elimination_order(n, edges):
    """Greedy minimum-degree order (ties broken by index).

    Returns (order, structure, fill) where structure[k] lists the neighbors of
    node k eliminated after it and ``fill`` the edges created on the way.
    """
    adj = {i: set() for i in range(n)}
    for a, b in edges:
        if a != b:
            adj[a].add(b)
            adj[b].add(a)
    remaining = set(range(n))
    order, structure, fill = [], {}, set()
    while remaining:
        k = min(remaining, key=lambda i: (len(adj[i]), i))
        nb = sorted(adj[k])
        for ia, a in enumerate(nb):
            for b in nb[ia + 1:]:
                if b not in adj[a]:
                    adj[a].add(b)
                    adj[b].add(a)
                    fill.add((min(a, b), max(a, b)))
        for a in nb:
            adj[a].discard(k)
        structure[k] = nb
        order.append(k)
        remaining.remove(k)
    pos = {k: i for i, k in enumerate(order)}
    structure = {k: sorted(v, key=pos.get) for k, v in structure.items()}
    return order, structure, fill


def supernodes(order, structure):
    """Merge consecutive nodes into fundamental supernodes: node k joins the
    supernode of its predecessor j when k is j's only elimination-tree child
    target, j is k's only child, and struct(j) = {k} + struct(k)."""
    parent = {k: (s[0] if s else None) for k, s in structure.items()}
    n_children = {k: 0 for k in order}
    for k, p in parent.items():
        if p is not None:
            n_children[p] += 1
    groups = []
    for k in order:
        if groups:
            j = groups[-1][-1]
            if (parent[j] == k and n_children[k] == 1
                    and structure[j][1:] == structure[k]):
                groups[-1].append(k)
                continue
        groups.append([k])
    return groups


class DenseCholesky:
    def __init__(self, H):
        H = H.to_dense() if isinstance(H, BlockSparseSym) else np.asarray(H, dtype=float)
        try:
            self._cf = sla.cho_factor(H, lower=True, check_finite=False)
        except sla.LinAlgError as exc:
            raise FactorizationError(str(exc)) from exc
        if not np.all(np.isfinite(self._cf[0])):
            raise FactorizationError("non-finite Cholesky factor")

    def solve(self, b):
        return sla.cho_solve(self._cf, b, check_finite=False)


class SupernodalCholesky:
    """Sparse Cholesky of a BlockSparseSym, H = L L^T."""

    def __init__(self, H):
        self.sizes = H.sizes
        self.offsets = H.offsets
        n = H.n_blocks
        self.order, self.structure, self.fill = elimination_order(n, H.pattern())
        self.groups = supernodes(self.order, self.structure)
        work = {k: b.copy() for k, b in H.blocks.items()}

        def get(i, j):
            if i <= j:
                b = work.get((i, j))
                return np.zeros((self.sizes[i], self.sizes[j])) if b is None else b
            b = work.get((j, i))
            return np.zeros((self.sizes[i], self.sizes[j])) if b is None else b.T

        def sub(i, j, B):
            if i > j:
                i, j, B = j, i, B.T
            if (i, j) in work:
                work[i, j] = work[i, j] - B
            else:
                work[i, j] = -B

        self.panels = []
        for S in self.groups:
            below = self.structure[S[-1]]
            s_idx = self._dofs(S)
            b_idx = self._dofs(below)
            H_SS = np.block([[get(i, j) for j in S] for i in S])
            try:
                L_SS = np.linalg.cholesky(H_SS)
            except np.linalg.LinAlgError as exc:
                raise FactorizationError(f"non-positive pivot in supernode {S}") from exc
            if below:
                H_BS = np.block([[get(i, j) for j in S] for i in below])
                L_BS = sla.solve_triangular(L_SS, H_BS.T, lower=True, check_finite=False).T
                U = L_BS @ L_BS.T
                bo = np.concatenate([[0], np.cumsum([self.sizes[b] for b in below])])
                for ia, a in enumerate(below):
                    for ib in range(ia, len(below)):
                        b = below[ib]
                        sub(a, b, U[bo[ia]:bo[ia + 1], bo[ib]:bo[ib + 1]])
            else:
                L_BS = np.zeros((0, len(s_idx)))
            self.panels.append((s_idx, b_idx, L_SS, L_BS))

    def _dofs(self, trees):
        if not trees:
            return np.zeros(0, dtype=int)
        return np.concatenate([np.arange(self.offsets[t], self.offsets[t + 1]) for t in trees])

    @property
    def fill_count(self):
        return len(self.fill)

    def solve(self, b):
        x = np.array(b, dtype=float)
        for s_idx, b_idx, L_SS, L_BS in self.panels:
            ys = sla.solve_triangular(L_SS, x[s_idx], lower=True, check_finite=False)
            x[s_idx] = ys
            if b_idx.size:
                x[b_idx] -= L_BS @ ys
        for s_idx, b_idx, L_SS, L_BS in reversed(self.panels):
            rhs = x[s_idx]
            if b_idx.size:
                rhs = rhs - L_BS.T @ x[b_idx]
            x[s_idx] = sla.solve_triangular(L_SS, rhs, lower=True, trans="T", check_finite=False)
        return x


def factorize(H, method="auto"):
    """Cholesky factor of H (BlockSparseSym or dense array).

    ``method`` is "sparse", "dense", or "auto" (dense below DENSE_CROSSOVER dofs).
    """
    if not isinstance(H, BlockSparseSym):
        return DenseCholesky(H)
    if method == "auto":
        method = "dense" if H.n < DENSE_CROSSOVER else "sparse"
    if method == "dense":
        return DenseCholesky(H)
    if method == "sparse":
        return SupernodalCholesky(H)
    raise ValueError(f"unknown factorization method {method!r}")


def solve(factor, b):
    return factor.solve(b)
