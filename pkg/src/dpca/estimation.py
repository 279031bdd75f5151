"""Clique-local moments and the decomposable maximum-likelihood concentration.

The global concentration ``K`` is never stored densely.  Every variable is
owned by the clique that introduces it (its residual block), and block ``k``
holds the rows ``R_k`` of ``K`` restricted to the columns ``C_k``.  Because
the clique order satisfies running intersection, every nonzero entry
``K[i, j]`` lies inside the clique of whichever of ``i`` and ``j`` was
introduced later, so this layout stores each entry (up to symmetry) exactly
once.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .graph import DecomposableGraph

__all__ = [
    "SingularLocalCovariance",
    "SparsityViolation",
    "LocalEstimate",
    "BlockSparseConcentration",
    "ConsistencyReport",
    "local_moments",
    "local_concentration",
    "local_estimates",
    "assemble_concentration",
    "ml_concentration",
    "marginal_consistency",
]


class SingularLocalCovariance(np.linalg.LinAlgError):
    """A clique (or separator) sample covariance cannot be inverted."""

    code = "SINGULAR_LOCAL_COVARIANCE"

    def __init__(self, message: str, clique: int | None = None, condition: float = np.inf):
        super().__init__(message)
        self.clique = clique
        self.condition = condition


class SparsityViolation(ValueError):
    code = "SPARSITY_VIOLATION"


def max_workers() -> int:
    """Thread cap taken from ``DPCA_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("DPCA_THREADS", "1")))
    except ValueError:
        return 1


def local_moments(data: np.ndarray, index: Sequence[int] | None = None) -> np.ndarray:
    """Uncentered sample covariance ``(1/n) sum x_i x_i^T`` over ``index``.

    ``data`` is ``(n, p)``; pass ``index=None`` when ``data`` already holds
    only the local columns.
    """
    x = np.asarray(data, dtype=float)
    if index is not None:
        x = x[:, np.asarray(index, dtype=np.intp)]
    s = x.T @ x / x.shape[0]
    return 0.5 * (s + s.T)


def local_concentration(cov: np.ndarray, clique: int | None = None) -> np.ndarray:
    """Invert a local covariance through its Cholesky factor.

    Raises:
        SingularLocalCovariance: the factorization fails or the factor's
            diagonal shows a condition number beyond ``1/(d * eps)``.
    """
    cov = np.asarray(cov, dtype=float)
    d = cov.shape[0]
    where = "" if clique is None else f" (clique {clique})"
    try:
        c, low = scipy.linalg.cho_factor(cov, lower=True)
    except np.linalg.LinAlgError:
        cond = float(np.linalg.cond(cov)) if d else np.inf
        raise SingularLocalCovariance(
            f"local covariance{where} is not positive definite, cond~{cond:.3g}", clique, cond
        ) from None
    diag = np.abs(np.diag(c))
    cond = float((diag.max() / diag.min()) ** 2) if diag.min() > 0 else np.inf
    if cond * d * np.finfo(float).eps > 1.0:
        raise SingularLocalCovariance(
            f"local covariance{where} is numerically singular, cond~{cond:.3g}", clique, cond
        )
    inv = scipy.linalg.cho_solve((c, low), np.eye(d))
    # one refinement step with an extended-precision residual
    resid = (np.eye(d, dtype=np.longdouble) - cov.astype(np.longdouble) @ inv.astype(np.longdouble)).astype(float)
    inv = inv + scipy.linalg.cho_solve((c, low), resid)
    return 0.5 * (inv + inv.T)


@dataclass
class LocalEstimate:
    """Sample covariance and concentration of one clique and its separator."""

    k: int
    cov: np.ndarray
    conc: np.ndarray
    sep_cov: np.ndarray | None = None
    sep_conc: np.ndarray | None = None


class BlockSparseConcentration:
    """Symmetric matrix with decomposable sparsity, stored by residual rows.

    ``blocks[k]`` has shape ``(|R_k|, |C_k|)``; rows follow the sorted
    residual ``R_k`` and columns the sorted clique ``C_k``.
    """

    def __init__(self, graph: DecomposableGraph, blocks: list[np.ndarray]):
        self.graph = graph
        self.blocks = blocks

    @classmethod
    def zeros(cls, graph: DecomposableGraph) -> "BlockSparseConcentration":
        return cls(graph, [np.zeros((len(r), len(c))) for r, c in zip(graph.residuals, graph.cliques)])

    @classmethod
    def from_dense(cls, graph: DecomposableGraph, K: np.ndarray, check: bool = True):
        K = np.asarray(K, dtype=float)
        if K.shape != (graph.p, graph.p):
            raise ValueError(f"expected a {graph.p}x{graph.p} matrix, got {K.shape}")
        if check:
            if not np.array_equal(K, K.T):
                raise ValueError("matrix is not exactly symmetric")
            outside = ~graph.pattern() & (K != 0)
            if outside.any():
                i, j = np.argwhere(outside)[0]
                raise SparsityViolation(f"K[{i},{j}] is nonzero but {i},{j} share no clique")
        blocks = [K[np.ix_(r, c)].copy() for r, c in zip(graph.residuals, graph.cliques)]
        return cls(graph, blocks)

    def copy(self) -> "BlockSparseConcentration":
        return BlockSparseConcentration(self.graph, [b.copy() for b in self.blocks])

    @property
    def p(self) -> int:
        return self.graph.p

    def submatrix(self, index: Sequence[int]) -> np.ndarray:
        """Dense ``K[index, index]``; entries outside the pattern are zero."""
        g = self.graph
        idx = np.asarray(index, dtype=np.intp)
        out = np.zeros((len(idx), len(idx)))
        own = g.owner[idx]
        for a in np.unique(own):
            rows = np.flatnonzero(own == a)
            cols = np.flatnonzero(own <= a)
            cpos = g.positions[a, idx[cols]]
            inside = cpos >= 0
            cols, cpos = cols[inside], cpos[inside]
            sub = self.blocks[a][np.ix_(g.residual_rank[idx[rows]], cpos)]
            out[np.ix_(rows, cols)] = sub
            out[np.ix_(cols, rows)] = sub.T
        return out

    def add(self, index: Sequence[int], mat: np.ndarray) -> None:
        """In-place ``K[index, index] += mat`` for a symmetric ``mat``.

        ``index`` must lie inside a single clique, otherwise the update
        would create fill outside the pattern.
        """
        g = self.graph
        idx = np.asarray(index, dtype=np.intp)
        own = g.owner[idx]
        for a in np.unique(own):
            rows = np.flatnonzero(own == a)
            cols = np.flatnonzero(own <= a)
            cpos = g.positions[a, idx[cols]]
            if (cpos < 0).any():
                raise SparsityViolation("update touches entries outside the clique pattern")
            self.blocks[a][np.ix_(g.residual_rank[idx[rows]], cpos)] += mat[np.ix_(rows, cols)]

    def clique_block(self, k: int) -> np.ndarray:
        return self.submatrix(self.graph.cliques[k])

    def to_dense(self) -> np.ndarray:
        return self.submatrix(np.arange(self.p))

    def max_abs(self) -> float:
        return max(float(np.abs(b).max()) for b in self.blocks)

    def block_energy(self, k: int) -> float:
        """Squared Frobenius mass of block ``k``, counting mirrored entries twice."""
        g = self.graph
        b = self.blocks[k]
        own = np.zeros(b.shape[1], dtype=bool)
        own[g.positions[k, list(g.residuals[k])]] = True
        return float(np.sum(b[:, own] ** 2)) + 2.0 * float(np.sum(b[:, ~own] ** 2))

    def frobenius_norm(self) -> float:
        total = 0.0
        for k in range(len(self.blocks)):
            total += self.block_energy(k)
        return float(np.sqrt(total))

    def matvec(self, u: np.ndarray) -> np.ndarray:
        g = self.graph
        out = np.zeros(self.p)
        for k, b in enumerate(self.blocks):
            r = list(g.residuals[k])
            c = list(g.cliques[k])
            out[r] += b @ u[c]
            off = np.isin(c, r, invert=True)
            cs = np.asarray(c)[off]
            out[cs] += b[:, off].T @ u[r]
        return out


def local_estimates(graph: DecomposableGraph, data: np.ndarray) -> list[LocalEstimate]:
    """Moments and inverses for every clique and separator.

    Cliques are independent, so they are processed on up to
    ``DPCA_THREADS`` threads.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != graph.p:
        raise ValueError(f"data must be (n, {graph.p}), got {data.shape}")

    def one(k: int) -> LocalEstimate:
        cov = local_moments(data, graph.cliques[k])
        est = LocalEstimate(k, cov, local_concentration(cov, k))
        if k:
            est.sep_cov = local_moments(data, graph.separators[k])
            est.sep_conc = local_concentration(est.sep_cov, k)
        return est

    workers = min(max_workers(), graph.n_cliques)
    if workers == 1:
        return [one(k) for k in range(graph.n_cliques)]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(one, range(graph.n_cliques)))


def clique_contribution(graph: DecomposableGraph, k: int, conc: np.ndarray) -> np.ndarray:
    """Rows ``R_k`` of the local concentration, as stored in block ``k``."""
    rpos = graph.positions[k, list(graph.residuals[k])]
    return conc[rpos, :].copy()


def separator_message(graph: DecomposableGraph, k: int, conc: np.ndarray, sep_conc: np.ndarray) -> np.ndarray:
    """``[K~^{C_k}]_{S_k,S_k} - K~^{S_k}``: clique ``k``'s share of its separator block."""
    spos = graph.positions[k, list(graph.separators[k])]
    return conc[np.ix_(spos, spos)] - sep_conc


def assemble_concentration(
    graph: DecomposableGraph, locals_: Sequence[LocalEstimate]
) -> BlockSparseConcentration:
    """Zero fill-in sum of clique concentrations minus separator concentrations.

    Each clique writes the rows it introduces; the separator part of every
    later clique arrives as an ``|S_k| x |S_k|`` correction, applied in
    clique order.
    """
    blocks = [clique_contribution(graph, est.k, est.conc) for est in locals_]
    K = BlockSparseConcentration(graph, blocks)
    for est in locals_[1:]:
        K.add(graph.separators[est.k], separator_message(graph, est.k, est.conc, est.sep_conc))
    return K


def ml_concentration(graph: DecomposableGraph, data: np.ndarray, center: bool = False):
    """Return ``(K, locals)`` for the decomposable ML fit of ``data``."""
    data = np.asarray(data, dtype=float)
    if center:
        data = data - data.mean(axis=0)
    locals_ = local_estimates(graph, data)
    return assemble_concentration(graph, locals_), locals_


@dataclass
class ConsistencyReport:
    differences: list[float]
    tol: float

    @property
    def passed(self) -> bool:
        return all(d <= self.tol for d in self.differences)

    @property
    def worst(self) -> float:
        return max(self.differences)


def refined_inverse(A: np.ndarray, steps: int = 2) -> np.ndarray:
    """Dense inverse with Newton-Schulz refinement; residuals in ``longdouble``."""
    X = np.linalg.inv(A).astype(np.longdouble)
    Al = A.astype(np.longdouble)
    eye = np.eye(A.shape[0], dtype=np.longdouble)
    for _ in range(steps):
        X = X + X @ (eye - Al @ X)
    X = X.astype(float)
    return 0.5 * (X + X.T)


def marginal_consistency(
    K: BlockSparseConcentration, locals_: Sequence[LocalEstimate], tol: float = 1e-8, relative: bool = True
) -> ConsistencyReport:
    """Compare clique blocks of ``K^{-1}`` with the local sample covariances.

    Uses a dense inverse; this is a verification tool, not part of the
    distributed pipeline.  The inverse is polished by iterative refinement
    with extended-precision residuals so that the check measures the
    assembled ``K`` rather than the conditioning of the check itself.
    """
    sigma = refined_inverse(K.to_dense())
    diffs = []
    for est in locals_:
        c = list(K.graph.cliques[est.k])
        d = float(np.abs(sigma[np.ix_(c, c)] - est.cov).max())
        if relative:
            d /= max(float(np.abs(est.cov).max()), np.finfo(float).tiny)
        diffs.append(d)
    return ConsistencyReport(diffs, tol)
