from pathlib import Path

import numpy as np
import pytest

from dpca.estimation import BlockSparseConcentration
from dpca.graph import build_graph

FIXTURES = Path(__file__).parent / "fixtures"


def angle(u, v):
    """Angle between two lines (sign-insensitive)."""
    c = abs(float(u @ v)) / (np.linalg.norm(u) * np.linalg.norm(v))
    return float(np.arccos(min(1.0, c)))


def dense_min_eig(K, defl=None):
    A = K.to_dense()
    if defl is not None and defl.rank:
        A = A + defl.dense()
    return float(np.linalg.eigvalsh(A)[0])


@pytest.fixture
def two_clique():
    return build_graph(3, [[0, 1], [1, 2]])


@pytest.fixture
def tridiagonal(two_clique):
    K = np.array([[2.0, 1.0, 0.0], [1.0, 2.0, 1.0], [0.0, 1.0, 2.0]])
    return BlockSparseConcentration.from_dense(two_clique, K)


@pytest.fixture
def identity3(two_clique):
    return BlockSparseConcentration.from_dense(two_clique, np.eye(3))
