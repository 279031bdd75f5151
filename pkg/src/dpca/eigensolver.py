"""Smallest eigenpairs of a decomposable concentration matrix.

The global question ``t < eig_min(K)`` is answered by eliminating the
residual blocks ``R_K, ..., R_2`` one at a time.  Eliminating ``R_k`` costs
one local eigenvalue test and produces a separator-sized Schur complement
(the message) that is folded into the earlier cliques.  Bisection over
``t`` then brackets the smallest eigenvalue, and the same elimination run
at ``t = lambda`` followed by back-substitution recovers the eigenvector.

Higher components use a low-rank deflation ``K + U D U^T``.  The rank-``r``
term travels through the elimination as a factor ``W`` and a small core
``Dbar``; after each step the separator part of the enlarged core is folded
back into the sparse blocks so that the factor never grows beyond ``r``
columns and every message stays ``(|S_k| + r) x (|S_k| + r)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from .estimation import BlockSparseConcentration
from .graph import DecomposableGraph

__all__ = [
    "NotSymmetric",
    "BadBracket",
    "NoNullVector",
    "Bracket",
    "DeflationSet",
    "MessageMatrix",
    "FeasibilityVerdict",
    "BisectionResult",
    "EigenPair",
    "local_min_eig",
    "feasibility_sweep",
    "upper_bound",
    "deflation_weight",
    "bisect_min_eig",
    "eigvec",
    "shifted_solve",
    "spectrum",
    "max_iterations",
]

_EPS = np.finfo(float).eps
# Z in the factor compression is treated as singular beyond this condition number
_COMPRESS_COND = 1e10


class NotSymmetric(ValueError):
    code = "NOT_SYMMETRIC"


class BadBracket(ValueError):
    code = "BAD_BRACKET"


class NoNullVector(np.linalg.LinAlgError):
    code = "NO_NULL_VECTOR"


@dataclass(frozen=True)
class Bracket:
    lower: float
    upper: float
    tol: float

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if not self.lower <= self.upper:
            raise BadBracket(f"lower bound {self.lower} exceeds upper bound {self.upper}")


@dataclass(frozen=True)
class DeflationSet:
    """Previously found eigenvectors (columns) and their deflation weights."""

    vectors: np.ndarray
    weights: np.ndarray

    @classmethod
    def empty(cls, p: int) -> "DeflationSet":
        return cls(np.zeros((p, 0)), np.zeros(0))

    @property
    def rank(self) -> int:
        return self.vectors.shape[1]

    def extend(self, u: np.ndarray, weight: float) -> "DeflationSet":
        return DeflationSet(
            np.column_stack([self.vectors, u]), np.append(self.weights, weight)
        )

    def dense(self) -> np.ndarray:
        return (self.vectors * self.weights) @ self.vectors.T


@dataclass
class MessageMatrix:
    source: int
    dest: int
    payload: np.ndarray

    @property
    def dim(self) -> int:
        return self.payload.shape[0]


@dataclass
class FeasibilityVerdict:
    feasible: bool
    failing_clique: int | None
    messages: list[MessageMatrix] = field(default_factory=list)

    @property
    def message_dims(self) -> list[int]:
        return [m.dim for m in self.messages]


@dataclass
class BisectionResult:
    """Final bracket of a bisection run plus its per-iteration history."""

    lower: float
    upper: float
    iterations: int
    trials: list[float] = field(default_factory=list)
    verdicts: list[bool] = field(default_factory=list)
    message_dims: list[list[int]] = field(default_factory=list)
    start: tuple[float, float] = (0.0, 0.0)

    @property
    def value(self) -> float:
        return 0.5 * (self.lower + self.upper)

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def estimates(self) -> list[float]:
        """Bracket midpoint after each iteration."""
        lo, hi = self.start
        out = []
        for t, ok in zip(self.trials, self.verdicts):
            lo, hi = (t, hi) if ok else (lo, t)
            out.append(0.5 * (lo + hi))
        return out


@dataclass
class EigenPair:
    value: float
    vector: np.ndarray
    bracket_width: float
    iterations: int = 0


def max_iterations(lower: float, upper: float, tol: float) -> int:
    """Bisection steps needed to shrink ``[lower, upper]`` below ``tol``."""
    if upper - lower <= tol:
        return 0
    return math.ceil(math.log2((upper - lower) / tol))


def local_min_eig(A: np.ndarray) -> float:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise NotSymmetric(f"expected a square matrix, got shape {A.shape}")
    scale = max(float(np.abs(A).max(initial=0.0)), 1.0)
    if np.abs(A - A.T).max(initial=0.0) > 1e-12 * scale:
        raise NotSymmetric("matrix is not symmetric")
    if A.shape[0] == 0:
        return np.inf
    return float(scipy.linalg.eigvalsh(A, subset_by_index=[0, 0], check_finite=False)[0])


# -- elimination kernels ----------------------------------------------------
# These act on one clique's data and are shared with the simulated runtime,
# which must reproduce the centralized arithmetic exactly.


def _symm(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def reduced_block(blk: np.ndarray, cols: np.ndarray, W_rows: np.ndarray, Dbar: np.ndarray) -> np.ndarray:
    """``Kacc[R, R] + W_R Dbar W_R^T`` for the block's own rows."""
    A = blk[:, cols]
    if W_rows.shape[1]:
        A = _symm(A + (W_rows @ Dbar) @ W_rows.T)
    return A


def coupling(blk: np.ndarray, spos: np.ndarray, W_rows: np.ndarray, Dbar: np.ndarray) -> np.ndarray:
    """``[K_{S,R}; Dbar W_R^T]``, the left factor of the message."""
    return np.vstack([blk[:, spos].T, Dbar @ W_rows.T])


def eliminate(blk, rpos, spos, W_rows, Dbar, t):
    """Local test and message of one residual block.

    Returns the message ``B (A - tI)^{-1} B^T`` or ``None`` when
    ``t >= eig_min(A)``.
    """
    A = reduced_block(blk, rpos, W_rows, Dbar)
    if not t < local_min_eig(A):
        return None
    B = coupling(blk, spos, W_rows, Dbar)
    At = A - t * np.eye(A.shape[0])
    try:
        X = scipy.linalg.cho_solve(scipy.linalg.cho_factor(At, lower=True), B.T)
    except np.linalg.LinAlgError:
        X = scipy.linalg.solve(At, B.T, assume_a="sym")
    return _symm(B @ X)


def absorb(Q: BlockSparseConcentration, sep, W: np.ndarray, Dbar: np.ndarray, M: np.ndarray):
    """Fold a message into the separator block; return the new ``(W, Dbar)``.

    With deflation the enlarged core ``blkdiag(0, Dbar) - M`` couples the
    separator indicator columns with ``W``.  Writing it as
    ``[[X, Y], [Y^T, Z]]`` and completing the square gives a separator-only
    update ``X - Y Z^{-1} Y^T`` plus the rank-``r`` term
    ``(W + E_S Y Z^{-1}) Z (...)^T``.  If ``Z`` is numerically singular the
    indicator columns are kept in the factor instead.
    """
    W, Dbar, _ = absorb_gain(Q, sep, W, Dbar, M)
    return W, Dbar


def absorb_gain(Q: BlockSparseConcentration, sep, W: np.ndarray, Dbar: np.ndarray, M: np.ndarray):
    """:func:`absorb` that also returns the separator gain ``G = Y Z^{-1}``.

    ``G`` is ``None`` when the indicator columns were kept instead.
    """
    s = len(sep)
    r = W.shape[1]
    if r == 0:
        Q.add(sep, -M)
        return W, Dbar, None
    X = -M[:s, :s]
    Y = -M[:s, s:]
    Z = _symm(Dbar - M[s:, s:])
    if np.linalg.cond(Z) < _COMPRESS_COND:
        G = np.linalg.solve(Z, Y.T).T
        Q.add(sep, _symm(X - G @ Y.T))
        W = W.copy()
        W[list(sep)] += G
        return W, Z, G
    E = np.zeros((W.shape[0], s))
    E[list(sep), np.arange(s)] = 1.0
    core = -M
    core[s:, s:] += Dbar
    return np.hstack([E, W]), _symm(core), None


def carry_rhs(b_sep: np.ndarray, c: np.ndarray, y: np.ndarray, G: np.ndarray | None):
    """Move an eliminated right-hand side onto the separator.

    The right-hand side of the remaining system is kept as ``b + W c`` so that
    only separator rows of ``b`` ever change.  ``y = B A_RR^{-1} rhs_R`` is
    split into its separator and factor parts.  Returns the new separator
    rows of ``b`` and the new ``c`` for the factor returned by
    :func:`absorb_gain`.
    """
    s = len(b_sep)
    if c.size == 0:
        return b_sep - y[:s], c
    cw = c - y[s:]
    if G is not None:
        return b_sep - (y[:s] + G @ cw), cw
    return b_sep - y[:s], np.concatenate([np.zeros(s), cw])


def _start_factor(p: int, defl: DeflationSet | None):
    if defl is None or defl.rank == 0:
        return np.zeros((p, 0)), np.zeros((0, 0))
    return np.array(defl.vectors, dtype=float), np.diag(np.asarray(defl.weights, dtype=float))


def _step_indices(g: DecomposableGraph, k: int):
    rpos = g.positions[k, list(g.residuals[k])]
    spos = g.positions[k, list(g.separators[k])]
    return rpos, spos


# -- feasibility and bounds -------------------------------------------------


def feasibility_sweep(
    K: BlockSparseConcentration, t: float, defl: DeflationSet | None = None
) -> FeasibilityVerdict:
    """Decide ``t < eig_min(K + U D U^T)`` by clique-local tests.

    Stops at the first failing local test, so ``failing_clique`` is the
    first clique (in elimination order ``K..1``, 0-based) that rejects ``t``.
    """
    g = K.graph
    Q = K.copy()
    W, Dbar = _start_factor(g.p, defl)
    messages = []
    for k in range(g.n_cliques - 1, 0, -1):
        rpos, spos = _step_indices(g, k)
        M = eliminate(Q.blocks[k], rpos, spos, W[list(g.residuals[k])], Dbar, t)
        if M is None:
            return FeasibilityVerdict(False, k, messages)
        messages.append(MessageMatrix(k, g.parents[k], M))
        W, Dbar = absorb(Q, g.separators[k], W, Dbar, M)
    c1 = list(g.cliques[0])
    A = reduced_block(Q.blocks[0], np.arange(len(c1)), W[c1], Dbar)
    ok = t < local_min_eig(A)
    return FeasibilityVerdict(ok, None if ok else 0, messages)


def deflated_clique_block(K: BlockSparseConcentration, k: int, defl: DeflationSet | None) -> np.ndarray:
    c = list(K.graph.cliques[k])
    A = K.clique_block(k)
    if defl is not None and defl.rank:
        Uc = defl.vectors[c]
        A = _symm(A + (Uc * defl.weights) @ Uc.T)
    return A


def upper_bound(K: BlockSparseConcentration, defl: DeflationSet | None = None) -> float:
    """Smallest clique-block eigenvalue; never below ``eig_min`` of the whole."""
    return min(local_min_eig(deflated_clique_block(K, k, defl)) for k in range(K.graph.n_cliques))


def deflation_weight(K: BlockSparseConcentration) -> float:
    """Weight that lifts found eigenvalues above every remaining one.

    ``2 ||K||_F`` bounds the spectral spread ``lambda_p - lambda_1``, so the
    weight exceeds ``lambda_j - lambda_i`` for every pair.
    """
    return 2.0 * K.frobenius_norm() + 1.0


def bisect_min_eig(
    K: BlockSparseConcentration,
    bracket: Bracket,
    defl: DeflationSet | None = None,
    check_bracket: bool = True,
    sweep: Callable[..., FeasibilityVerdict] = feasibility_sweep,
) -> BisectionResult:
    """Bisection on the feasibility test until ``U - L <= tol``.

    Raises:
        BadBracket: ``lower`` is infeasible or ``upper`` is feasible.
    """
    lo, hi = float(bracket.lower), float(bracket.upper)
    if check_bracket:
        if not sweep(K, lo, defl).feasible:
            raise BadBracket(f"lower bound {lo} is not below the smallest eigenvalue")
        if sweep(K, hi, defl).feasible:
            raise BadBracket(f"upper bound {hi} is below the smallest eigenvalue")
    res = BisectionResult(lo, hi, 0, start=(lo, hi))
    while hi - lo > bracket.tol:
        t = (hi + lo) / 2
        verdict = sweep(K, t, defl)
        if verdict.feasible:
            lo = t
        else:
            hi = t
        res.trials.append(t)
        res.verdicts.append(verdict.feasible)
        res.message_dims.append(verdict.message_dims)
    res.lower, res.upper, res.iterations = lo, hi, len(res.trials)
    return res


# -- eigenvectors -----------------------------------------------------------


POLISH_STEPS = 2


def null_threshold(A: np.ndarray) -> float:
    scale = float(np.abs(A).max(initial=0.0))
    return 1e3 * _EPS * scale * A.shape[0]


def partial_dot(W: np.ndarray, u: np.ndarray, g: DecomposableGraph, upto: int) -> np.ndarray:
    """``W[H]^T u[H]`` over the residual blocks ``0..upto-1``, summed in order."""
    acc = np.zeros(W.shape[1])
    for a in range(upto):
        r = list(g.residuals[a])
        acc = acc + W[r].T @ u[r]
    return acc


def block_square(u_block: np.ndarray) -> float:
    return float(u_block @ u_block)


def blockwise_norm(u: np.ndarray, g: DecomposableGraph) -> float:
    """Euclidean norm accumulated block by block in clique order."""
    total = 0.0
    for r in g.residuals:
        total += block_square(u[list(r)])
    return math.sqrt(total)


def canonical_sign(u: np.ndarray) -> np.ndarray:
    """Flip ``u`` so that its first non-negligible entry is positive."""
    big = np.abs(u) > math.sqrt(_EPS) * np.abs(u).max(initial=0.0)
    if big.any() and u[np.argmax(big)] < 0:
        return -u
    return u


@dataclass
class _Level:
    """What back-substitution needs from one elimination step."""

    k_rs: np.ndarray
    W: np.ndarray
    Dbar: np.ndarray
    lu: tuple


def back_substitute(level: _Level, u_sep: np.ndarray, wdot: np.ndarray | None, r: list[int]) -> np.ndarray:
    """``u(R_k) = -Q_RR^{-1} (Q_{R,S} u(S) + W_R Dbar W_H^T u(H))``.

    ``wdot`` is ``W_H^T u(H)`` (see :func:`partial_dot`), unused without
    deflation.
    """
    rhs = level.k_rs @ u_sep
    if level.W.shape[1]:
        rhs = rhs + level.W[r] @ (level.Dbar @ wdot)
    return -scipy.linalg.lu_solve(level.lu, rhs)


def _null_sweep(K, lam, defl, scale, slack):
    g = K.graph
    Q = K.copy()
    W, Dbar = _start_factor(g.p, defl)
    levels: dict[int, _Level] = {}
    k = g.n_cliques - 1
    while k > 0:
        rpos, spos = _step_indices(g, k)
        r = list(g.residuals[k])
        blk = Q.blocks[k]
        A = reduced_block(blk, rpos, W[r], Dbar)
        At = A - lam * np.eye(len(r))
        evals, evecs = np.linalg.eigh(At)
        if np.abs(evals).min() <= scale * null_threshold(A) + slack:
            return k, A, evals, evecs, levels
        lu = scipy.linalg.lu_factor(At)
        B = coupling(blk, spos, W[r], Dbar)
        M = _symm(B @ scipy.linalg.lu_solve(lu, B.T))
        levels[k] = _Level(blk[:, spos].copy(), W, Dbar, lu)
        W, Dbar = absorb(Q, g.separators[k], W, Dbar, M)
        k -= 1
    c1 = list(g.cliques[0])
    A = reduced_block(Q.blocks[0], np.arange(len(c1)), W[c1], Dbar)
    evals, evecs = np.linalg.eigh(A - lam * np.eye(len(c1)))
    return 0, A, evals, evecs, levels


def _null_vector(K, lam, defl, tol):
    """Unnormalized null vector (terminal block part has unit norm) and its local eigenvalue."""
    g = K.graph
    ladder = [(1.0, 0.0), (100.0, 0.0)]
    if tol > 0:
        ladder.append((100.0, 2.0 * tol))
    for scale, slack in ladder:
        kt, A, evals, evecs, levels = _null_sweep(K, lam, defl, scale, slack)
        i = int(np.argmin(np.abs(evals)))
        mu = float(evals[i])
        u = np.zeros(g.p)
        u[list(g.residuals[kt])] = evecs[:, i]
        for k in range(kt + 1, g.n_cliques):
            r = list(g.residuals[k])
            lv = levels[k]
            wdot = partial_dot(lv.W, u, g, k) if lv.W.shape[1] else None
            u[r] = back_substitute(lv, u[list(g.separators[k])], wdot, r)
        if kt > 0:
            return u, mu
        if abs(mu) <= scale * null_threshold(A) + slack * blockwise_norm(u, g) ** 2:
            return u, mu
    raise NoNullVector(
        f"no singular block at lambda={lam!r}; smallest local |eigenvalue| {abs(mu):.3g}"
    )


def shifted_solve(
    K: BlockSparseConcentration, sigma: float, b: np.ndarray, defl: DeflationSet | None = None
) -> np.ndarray:
    """Solve ``(K + U D U^T - sigma I) x = b`` by clique elimination.

    Uses the same forward sweep as the feasibility test, carrying the
    right-hand side along with the messages, then back-substitutes.  For
    ``sigma`` below the smallest eigenvalue every pivot block is positive
    definite, so no pivot is close to singular.
    """
    g = K.graph
    Q = K.copy()
    W, Dbar = _start_factor(g.p, defl)
    b = np.array(b, dtype=float)
    c = np.zeros(W.shape[1])
    levels: dict[int, tuple[_Level, np.ndarray]] = {}
    for k in range(g.n_cliques - 1, 0, -1):
        rpos, spos = _step_indices(g, k)
        r, sep = list(g.residuals[k]), list(g.separators[k])
        blk = Q.blocks[k]
        A = reduced_block(blk, rpos, W[r], Dbar)
        lu = scipy.linalg.lu_factor(A - sigma * np.eye(len(r)))
        B = coupling(blk, spos, W[r], Dbar)
        z = scipy.linalg.lu_solve(lu, b[r] + W[r] @ c)
        M = _symm(B @ scipy.linalg.lu_solve(lu, B.T))
        levels[k] = (_Level(blk[:, spos].copy(), W, Dbar, lu), z)
        W, Dbar, G = absorb_gain(Q, sep, W, Dbar, M)
        b[sep], c = carry_rhs(b[sep], c, B @ z, G)
    c1 = list(g.cliques[0])
    A = reduced_block(Q.blocks[0], np.arange(len(c1)), W[c1], Dbar)
    x = np.zeros(g.p)
    x[c1] = np.linalg.solve(A - sigma * np.eye(len(c1)), b[c1] + W[c1] @ c)
    for k in range(1, g.n_cliques):
        r = list(g.residuals[k])
        lv, z = levels[k]
        wdot = partial_dot(lv.W, x, g, k) if lv.W.shape[1] else None
        x[r] = z + back_substitute(lv, x[list(g.separators[k])], wdot, r)
    return x


def polish_shift(lam: float, tol: float) -> float:
    """Shift just below the eigenvalue bracket used for inverse iteration."""
    return lam - tol - 1e-10 * max(1.0, abs(lam))


def eigvec(
    K: BlockSparseConcentration,
    lam: float,
    defl: DeflationSet | None = None,
    tol: float = 0.0,
    refine: bool = True,
) -> np.ndarray:
    """Null vector of ``K + U D U^T - lam I`` by elimination and back-substitution.

    ``lam`` must be the smallest eigenvalue of the (deflated) matrix to
    within ``tol``.  The terminal block (the first numerically singular
    residual block, else ``C_1``) provides a local null vector that is
    propagated to the later residual blocks; earlier blocks stay zero.

    A block counts as singular when its smallest absolute eigenvalue is at
    most ``tau = 1e3 * eps * max|A| * dim``.  Failing that, the sweep is
    retried with ``100 tau`` and then with ``100 tau`` plus the slack the
    eigenvalue error allows: ``2 tol`` for a residual block and, to first
    order, ``2 tol ||u||^2 / ||u(C_1)||^2`` for the final ``C_1`` block.

    With ``refine`` the vector is polished by ``POLISH_STEPS`` steps of
    inverse iteration at :func:`polish_shift`.  Pivots that are small but
    above the threshold amplify eigenvalue error in the elimination; at a
    shift below the bracket all pivots are positive definite instead.

    Raises:
        NoNullVector: no block is singular at any of these thresholds.
    """
    g = K.graph
    u, _ = _null_vector(K, lam, defl, tol)
    u = u / blockwise_norm(u, g)
    if refine:
        sigma = polish_shift(lam, tol)
        for _ in range(POLISH_STEPS):
            try:
                x = shifted_solve(K, sigma, u, defl)
            except np.linalg.LinAlgError:
                break
            if not np.all(np.isfinite(x)):
                break
            u = x / blockwise_norm(x, g)
    return canonical_sign(u)


def spectrum(
    K: BlockSparseConcentration,
    j_max: int,
    tol: float = 1e-8,
    lower: float = 0.0,
    weight: float | None = None,
) -> list[EigenPair]:
    """The ``j_max`` smallest eigenpairs, each found on the matrix deflated by its predecessors."""
    if not 1 <= j_max <= K.p:
        raise ValueError(f"j_max must be in [1, {K.p}], got {j_max}")
    if weight is None:
        weight = deflation_weight(K)
    defl = DeflationSet.empty(K.p)
    pairs = []
    for _ in range(j_max):
        res = bisect_min_eig(K, Bracket(lower, upper_bound(K, defl), tol), defl)
        u = eigvec(K, res.value, defl, tol=res.width)
        pairs.append(EigenPair(res.value, u, res.width, res.iterations))
        defl = defl.extend(u, weight)
    return pairs
