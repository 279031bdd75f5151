"""Synthetic decomposable models, presets and test instances.

All randomness goes through ``numpy.random.default_rng(seed)`` (PCG64).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .estimation import BlockSparseConcentration, assemble_concentration, local_estimates
from .graph import DecomposableGraph, build_graph, random_decomposable

__all__ = [
    "tracking_graph",
    "two_clique_graph",
    "network_graph",
    "shuffled_graph",
    "coarsened_graph",
    "random_concentration",
    "project_to_graph",
    "sample_gaussian",
    "AnomalyScenario",
    "anomaly_scenario",
]


def tracking_graph(block: int = 100, n_blocks: int = 3, coupling: int = 5) -> DecomposableGraph:
    """``n_blocks`` dense groups that all share the last ``coupling`` variables.

    The defaults give 305 variables in cliques of 105.
    """
    p = block * n_blocks + coupling
    shared = list(range(block * n_blocks, p))
    cliques = [list(range(b * block, (b + 1) * block)) + shared for b in range(n_blocks)]
    return build_graph(p, cliques)


def two_clique_graph() -> DecomposableGraph:
    """``a - c - b`` on three variables: cliques ``{0,1}`` and ``{1,2}``."""
    return build_graph(3, [[0, 1], [1, 2]])


def network_graph(sizes=(15, 14, 12), seps=(6, 4)) -> DecomposableGraph:
    """Chain of groups joined by shared link sets, e.g. west/central/east.

    ``sizes`` are fresh variables per clique and ``seps`` the number of
    variables each clique shares with the previous one.
    """
    cliques, start, prev = [], 0, []
    for i, s in enumerate(sizes):
        fresh = list(range(start, start + s))
        shared = prev[-seps[i - 1]:] if i else []
        cliques.append(shared + fresh)
        prev, start = fresh, start + s
    return build_graph(start, cliques)


def shuffled_graph(graph: DecomposableGraph, seed=None) -> DecomposableGraph:
    """Same clique sizes and structure with variables relabelled at random."""
    perm = np.random.default_rng(seed).permutation(graph.p)
    return build_graph(graph.p, [[int(perm[i]) for i in c] for c in graph.cliques])


def coarsened_graph(graph: DecomposableGraph, groups) -> DecomposableGraph:
    """Merge consecutive cliques; each group lists clique indices to union.

    The result contains every edge of ``graph``, so a model that is
    decomposable on ``graph`` is also decomposable on the coarser one.
    """
    cliques = [sorted(set().union(*(graph.cliques[k] for k in grp))) for grp in groups]
    return build_graph(graph.p, cliques)


def project_to_graph(graph: DecomposableGraph, sigma: np.ndarray) -> BlockSparseConcentration:
    """Concentration of the decomposable model sharing ``sigma``'s clique marginals."""
    from .estimation import LocalEstimate, local_concentration

    locals_ = []
    for k, c in enumerate(graph.cliques):
        cov = sigma[np.ix_(c, c)]
        est = LocalEstimate(k, cov, local_concentration(cov, k))
        if k:
            s = list(graph.separators[k])
            est.sep_cov = sigma[np.ix_(s, s)]
            est.sep_conc = local_concentration(est.sep_cov, k)
        locals_.append(est)
    return assemble_concentration(graph, locals_)


def random_concentration(graph: DecomposableGraph, seed=None, n: int | None = None) -> BlockSparseConcentration:
    """ML concentration of correlated Gaussian data on ``graph``.

    The data covariance is ``A A^T / p + 0.2 I`` for a random ``A``, so the
    result is positive definite with a spread-out spectrum.
    """
    rng = np.random.default_rng(seed)
    p = graph.p
    A = rng.standard_normal((p, p))
    chol = np.linalg.cholesky(A @ A.T / p + 0.2 * np.eye(p))
    if n is None:
        n = 3 * max(len(c) for c in graph.cliques) + 10
    x = rng.standard_normal((n, p)) @ chol.T
    return assemble_concentration(graph, local_estimates(graph, x))


def random_instance(p_max=80, k_max=8, sep_max=5, seed=None):
    """Random graph plus random ML concentration, as used by the property tests."""
    rng = np.random.default_rng(seed)
    K = int(rng.integers(1, k_max + 1))
    p = int(rng.integers(max(K + 1, 2), p_max + 1))
    graph = random_decomposable(p, K, int(rng.integers(1, sep_max + 1)), seed=int(rng.integers(2**32)))
    return graph, random_concentration(graph, seed=int(rng.integers(2**32)))


def sample_gaussian(cov: np.ndarray, n: int, seed=None) -> np.ndarray:
    rng = np.random.default_rng(seed)
    chol = np.linalg.cholesky(cov)
    return rng.standard_normal((n, cov.shape[0])) @ chol.T


@dataclass
class AnomalyScenario:
    """Ground-truth decomposable model, samples and injected anomalies."""

    graph: DecomposableGraph
    concentration: np.ndarray
    samples: np.ndarray
    injections: list[int]
    amplitude: float
    directions: np.ndarray = field(repr=False)


def anomaly_scenario(
    graph: DecomposableGraph | None = None,
    n: int = 1000,
    n_anomalies: int = 5,
    j: int = 4,
    amplitude: float = 10.0,
    seed=None,
) -> AnomalyScenario:
    """Low-rank-plus-noise traffic on a decomposable graph.

    Each of the ``j`` factors loads on the variables of one clique (cycling
    through the cliques), giving ``Sigma = F F^T + I``; this is replaced by
    the decomposable model with the same clique marginals.  ``n_anomalies``
    samples then get a spike of ``amplitude`` noise standard deviations
    along a random direction orthogonal to the model's top ``j``
    eigenvectors, where the noise level is the RMS of the remaining
    eigenvalues.
    """
    rng = np.random.default_rng(seed)
    if graph is None:
        graph = network_graph()
    p = graph.p
    F = np.zeros((p, j))
    scales = np.linspace(3.0, 1.5, j)
    for a in range(j):
        c = list(graph.cliques[a % graph.n_cliques])
        F[c, a] = scales[a] * rng.standard_normal(len(c))
    K = project_to_graph(graph, F @ F.T + np.eye(p)).to_dense()
    sigma = np.linalg.inv(K)
    sigma = 0.5 * (sigma + sigma.T)
    x = sample_gaussian(sigma, n, seed=rng.integers(2**32))

    evals, evecs = np.linalg.eigh(sigma)
    top = evecs[:, -j:]
    noise = float(np.sqrt(evals[:-j].mean()))
    times = sorted(rng.choice(np.arange(n), size=n_anomalies, replace=False).tolist())
    dirs = rng.standard_normal((n_anomalies, p))
    dirs -= (dirs @ top) @ top.T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    x[times] += amplitude * noise * dirs
    return AnomalyScenario(graph, K, x, times, amplitude * noise, dirs)
