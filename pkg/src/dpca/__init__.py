"""Distributed PCA for decomposable Gaussian graphical models."""

from .graph import DecomposableGraph, GraphError, build_graph, derive_sets, load_graph, random_decomposable, save_graph
from .estimation import BlockSparseConcentration, SingularLocalCovariance, marginal_consistency, ml_concentration
from .eigensolver import (
    BadBracket,
    Bracket,
    DeflationSet,
    bisect_min_eig,
    eigvec,
    feasibility_sweep,
    spectrum,
    upper_bound,
)
from .runtime import message_stats, run_protocol, spawn_cliques
from .anomaly import detect, fit_model, residual_norms, track

__version__ = "0.1.0"
