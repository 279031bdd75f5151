"""Principal subspace models, residual-norm anomaly scores and eigenvalue tracking.

The leading principal components of the covariance are the eigenvectors
of ``K`` with the *smallest* eigenvalues, so a j-component model is just
``spectrum(K, j)`` on the decomposable ML concentration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .eigensolver import BadBracket, Bracket, bisect_min_eig, spectrum, upper_bound
from .estimation import BlockSparseConcentration, ml_concentration
from .graph import DecomposableGraph
from .runtime import DimensionMismatch

__all__ = [
    "SubspaceModel",
    "TrackPoint",
    "TrackingTrace",
    "fit_model",
    "residual_norms",
    "detect",
    "dense_pca_residuals",
    "track",
    "window_starts",
]


@dataclass
class SubspaceModel:
    graph: DecomposableGraph
    j: int
    values: np.ndarray  # smallest eigenvalues of K, ascending
    vectors: np.ndarray  # p x j, orthonormal columns
    concentration: BlockSparseConcentration = field(repr=False)
    n: int = 0
    window: int | None = None
    center: np.ndarray | None = field(default=None, repr=False)

    @property
    def variances(self) -> np.ndarray:
        """Principal variances ``1 / lambda``, largest first."""
        return 1.0 / self.values


def fit_model(
    data: np.ndarray,
    graph: DecomposableGraph,
    j: int,
    tol: float = 1e-10,
    center: bool = False,
    window: int | None = None,
) -> SubspaceModel:
    """Fit the decomposable ML model and extract its first ``j`` components."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != graph.p:
        raise DimensionMismatch(f"data has shape {data.shape}, graph expects {graph.p} columns")
    if not 1 <= j <= graph.p:
        raise ValueError(f"j must be in [1, {graph.p}], got {j}")
    mean = data.mean(axis=0) if center else None
    K, _ = ml_concentration(graph, data if mean is None else data - mean)
    pairs = spectrum(K, j, tol=tol)
    return SubspaceModel(
        graph,
        j,
        np.array([pr.value for pr in pairs]),
        np.column_stack([pr.vector for pr in pairs]),
        K,
        n=data.shape[0],
        window=window,
        center=mean,
    )


def _project_out(x: np.ndarray, V: np.ndarray) -> np.ndarray:
    return np.linalg.norm(x - (x @ V) @ V.T, axis=1)


def residual_norms(model: SubspaceModel, samples: np.ndarray) -> np.ndarray:
    """``||(I - V V^T) x_i||`` for every row ``x_i`` of ``samples``."""
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    if x.shape[1] != model.graph.p:
        raise DimensionMismatch(f"samples have {x.shape[1]} columns, model expects {model.graph.p}")
    if model.center is not None:
        x = x - model.center
    return _project_out(x, model.vectors)


def dense_pca_residuals(data: np.ndarray, j: int, center: bool = False) -> np.ndarray:
    """Residual norms under ordinary PCA of the unconstrained sample covariance."""
    x = np.asarray(data, dtype=float)
    if center:
        x = x - x.mean(axis=0)
    _, V = np.linalg.eigh(x.T @ x / x.shape[0])
    return _project_out(x, V[:, -j:])


def detect(
    series: Sequence[float],
    threshold: float | None = None,
    quantile: float | None = None,
    reference: Sequence[float] | None = None,
) -> list[int]:
    """Indices whose residual norm strictly exceeds the threshold.

    With no explicit ``threshold`` the empirical ``quantile`` (default
    0.995) of ``reference`` is used; ``reference`` defaults to the series
    itself.
    """
    s = np.asarray(series, dtype=float)
    if threshold is None:
        q = 0.995 if quantile is None else quantile
        if not 0.0 < q < 1.0:
            raise ValueError(f"quantile must be in (0, 1), got {q}")
        ref = s if reference is None else np.asarray(reference, dtype=float)
        threshold = float(np.quantile(ref, q))
    elif not threshold > 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    return np.flatnonzero(s > threshold).tolist()


# -- tracking ---------------------------------------------------------------


@dataclass
class TrackPoint:
    start: int
    stop: int
    value: float
    width: float
    iterations: int
    warm: bool
    messages_bytes: int
    message_dims: list[list[int]] = field(default_factory=list, repr=False)
    estimates: list[float] = field(default_factory=list, repr=False)


@dataclass
class TrackingTrace:
    points: list[TrackPoint]
    window: int
    overlap: int
    tol: float

    def __len__(self):
        return len(self.points)

    @property
    def values(self) -> np.ndarray:
        return np.array([pt.value for pt in self.points])

    @property
    def iterations(self) -> list[int]:
        return [pt.iterations for pt in self.points]


def window_starts(length: int, window: int, overlap: int) -> list[int]:
    if window < 1 or length < window:
        raise ValueError(f"need 1 <= window <= stream length, got window={window}, length={length}")
    if not 0 <= overlap < window:
        raise ValueError(f"overlap must be in [0, window), got {overlap}")
    step = window - overlap
    return list(range(0, (length - window) // step * step + 1, step))


def track(
    stream: np.ndarray,
    graph: DecomposableGraph,
    window: int,
    overlap: int,
    tol: float = 1e-3,
    warm_margin: float = 0.1,
    center: bool = False,
) -> TrackingTrace:
    """Smallest eigenvalue of each window's ML concentration.

    The first window is bracketed by ``[0, upper_bound(K)]``.  Later windows
    try ``[prev - warm_margin, prev + warm_margin]`` and fall back to the cold
    bracket when it does not contain the eigenvalue.  Each window is refit
    from scratch.
    """
    stream = np.asarray(stream, dtype=float)
    if stream.ndim != 2 or stream.shape[1] != graph.p:
        raise DimensionMismatch(f"stream has shape {stream.shape}, graph expects {graph.p} columns")
    points: list[TrackPoint] = []
    prev = None
    for w, start in enumerate(window_starts(stream.shape[0], window, overlap)):
        K, _ = ml_concentration(graph, stream[start : start + window], center=center)
        res, warm = None, False
        if prev is not None and warm_margin > 0:
            try:
                res = bisect_min_eig(K, Bracket(prev - warm_margin, prev + warm_margin, tol))
                warm = True
            except BadBracket:
                res = None
        if res is None:
            res = bisect_min_eig(K, Bracket(0.0, upper_bound(K), tol), check_bracket=False)
        nbytes = 8 * sum(d * d for dims in res.message_dims for d in dims)
        points.append(
            TrackPoint(
                start, start + window, res.value, res.width, res.iterations, warm,
                nbytes, res.message_dims, res.estimates(),
            )
        )
        prev = res.value
    return TrackingTrace(points, window, overlap, tol)
