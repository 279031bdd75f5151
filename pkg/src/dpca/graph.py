"""Decomposable graphs as ordered clique sequences.

A graph is given by its cliques ``C_1, ..., C_K`` listed in a perfect
elimination order.  From that order we derive, for every step ``k``:

* the history ``H_k = C_1 | ... | C_k``,
* the separator ``S_k = H_{k-1} & C_k`` (``k >= 2``),
* the residual ``R_k = H_k - H_{k-1} = C_k - S_k`` (``k >= 2``).

Clique positions are 0-based throughout the package, so ``cliques[0]`` is
``C_1``.  For convenience ``residuals[0]`` is ``C_1`` itself and
``separators[0]`` is empty; with that convention the residuals partition
``range(p)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "GraphError",
    "UncoveredNode",
    "NotPerfectOrder",
    "RedundantClique",
    "InfeasibleShape",
    "CliqueSequence",
    "DecomposableGraph",
    "build_graph",
    "derive_sets",
    "random_decomposable",
    "load_graph",
    "save_graph",
]


class GraphError(ValueError):
    """Base class for invalid graph descriptions."""

    code = "GRAPH"


class UncoveredNode(GraphError):
    code = "UNCOVERED_NODE"


class NotPerfectOrder(GraphError):
    code = "NOT_PERFECT_ORDER"

    def __init__(self, k: int, message: str):
        super().__init__(message)
        self.k = k


class RedundantClique(GraphError):
    code = "REDUNDANT_CLIQUE"


class InfeasibleShape(GraphError):
    code = "INFEASIBLE_SHAPE"


@dataclass(frozen=True)
class CliqueSequence:
    histories: tuple[tuple[int, ...], ...]
    separators: tuple[tuple[int, ...], ...]
    residuals: tuple[tuple[int, ...], ...]


@dataclass(frozen=True, eq=False)
class DecomposableGraph:
    """Validated clique sequence over the variables ``0..p-1``.

    Construct through :func:`build_graph`; the constructor itself does not
    validate.  Instances are immutable and cache their derived index sets.
    """

    p: int
    cliques: tuple[tuple[int, ...], ...]

    def __eq__(self, other):
        if not isinstance(other, DecomposableGraph):
            return NotImplemented
        return self.p == other.p and self.cliques == other.cliques

    def __hash__(self):
        return hash((self.p, self.cliques))

    @property
    def n_cliques(self) -> int:
        return len(self.cliques)

    @cached_property
    def sets(self) -> CliqueSequence:
        return derive_sets(self)

    @property
    def separators(self) -> tuple[tuple[int, ...], ...]:
        return self.sets.separators

    @property
    def residuals(self) -> tuple[tuple[int, ...], ...]:
        return self.sets.residuals

    @property
    def histories(self) -> tuple[tuple[int, ...], ...]:
        return self.sets.histories

    @cached_property
    def owner(self) -> np.ndarray:
        """Clique position that introduces each variable (length ``p``)."""
        own = np.empty(self.p, dtype=np.intp)
        for k, r in enumerate(self.residuals):
            own[list(r)] = k
        return own

    @cached_property
    def parents(self) -> tuple[int, ...]:
        """Receiving clique for the message of each step.

        ``parents[k]`` is the latest ``j < k`` whose clique contains
        ``S_k``; ``parents[0]`` is ``-1``.
        """
        out = [-1]
        for k in range(1, self.n_cliques):
            sep = set(self.separators[k])
            out.append(max(j for j in range(k) if sep <= set(self.cliques[j])))
        return tuple(out)

    @cached_property
    def positions(self) -> np.ndarray:
        """``positions[k, i]`` is the column of variable ``i`` inside ``C_k``, or -1."""
        pos = np.full((self.n_cliques, self.p), -1, dtype=np.intp)
        for k, c in enumerate(self.cliques):
            pos[k, list(c)] = np.arange(len(c))
        return pos

    @cached_property
    def residual_rank(self) -> np.ndarray:
        """Row of each variable inside its owner's residual block."""
        rank = np.empty(self.p, dtype=np.intp)
        for r in self.residuals:
            rank[list(r)] = np.arange(len(r))
        return rank

    def max_separator(self) -> int:
        return max((len(s) for s in self.separators), default=0)

    def shares_clique(self, i: int, j: int) -> bool:
        return any(i in c and j in c for c in map(set, self.cliques))

    def pattern(self) -> np.ndarray:
        """Boolean ``p x p`` mask of entries allowed to be nonzero."""
        mask = np.zeros((self.p, self.p), dtype=bool)
        for c in self.cliques:
            mask[np.ix_(c, c)] = True
        return mask

    def to_dict(self) -> dict:
        return {"p": self.p, "cliques": [list(c) for c in self.cliques]}

    @classmethod
    def from_dict(cls, desc: dict) -> "DecomposableGraph":
        try:
            p = desc["p"]
            cliques = desc["cliques"]
        except (KeyError, TypeError) as exc:
            raise GraphError(f"graph description needs 'p' and 'cliques': {exc}") from None
        return build_graph(p, cliques)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "DecomposableGraph":
        return cls.from_dict(json.loads(text))


def build_graph(p: int, cliques: Iterable[Iterable[int]]) -> DecomposableGraph:
    """Validate a clique sequence and return the graph.

    Raises:
        GraphError: bad indices or empty cliques.
        UncoveredNode: some variable belongs to no clique.
        RedundantClique: one clique is contained in another.
        NotPerfectOrder: the running intersection property fails at some
            step, or a separator is empty (disconnected graph).
    """
    if int(p) != p or p < 1:
        raise GraphError(f"p must be a positive integer, got {p!r}")
    p = int(p)
    canon = []
    for k, c in enumerate(cliques):
        c = sorted({int(i) for i in c})
        if not c:
            raise GraphError(f"clique {k} is empty")
        if c[0] < 0 or c[-1] >= p:
            raise GraphError(f"clique {k} has indices outside [0, {p})")
        canon.append(tuple(c))
    if not canon:
        raise GraphError("at least one clique is required")

    covered = set().union(*canon)
    if len(covered) != p:
        missing = sorted(set(range(p)) - covered)
        raise UncoveredNode(f"variables {missing[:10]} are in no clique")

    as_sets = [set(c) for c in canon]
    for a in range(len(canon)):
        for b in range(len(canon)):
            if a != b and as_sets[a] <= as_sets[b]:
                raise RedundantClique(f"clique {a} is contained in clique {b}")

    history = set(as_sets[0])
    for k in range(1, len(canon)):
        sep = history & as_sets[k]
        if not sep:
            raise NotPerfectOrder(k, f"clique {k} shares no variable with the cliques before it")
        if not any(sep <= as_sets[j] for j in range(k)):
            raise NotPerfectOrder(
                k, f"separator of clique {k} is not contained in any earlier clique"
            )
        history |= as_sets[k]

    return DecomposableGraph(p, tuple(canon))


def derive_sets(graph: DecomposableGraph) -> CliqueSequence:
    histories, separators, residuals = [], [], []
    seen: set[int] = set()
    for k, c in enumerate(graph.cliques):
        cs = set(c)
        sep = tuple(sorted(seen & cs)) if k else ()
        res = tuple(sorted(cs - seen))
        seen |= cs
        histories.append(tuple(sorted(seen)))
        separators.append(sep)
        residuals.append(res)
    return CliqueSequence(tuple(histories), tuple(separators), tuple(residuals))


def random_decomposable(
    p: int, n_cliques: int, max_sep: int, seed: int | None = None
) -> DecomposableGraph:
    """Draw a random connected decomposable graph.

    Each new clique attaches to a uniformly chosen earlier clique ``C_j``
    through a separator of ``1..min(max_sep, |C_j| - 1)`` of its variables
    and brings at least one fresh variable.  Variable labels are shuffled
    at the end so cliques are not contiguous ranges.
    """
    if n_cliques < 1 or max_sep < 1:
        raise InfeasibleShape("need n_cliques >= 1 and max_sep >= 1")
    if n_cliques == 1:
        if p < 1:
            raise InfeasibleShape("p must be positive")
    elif p < n_cliques + 1:
        raise InfeasibleShape(f"p={p} too small for {n_cliques} cliques (need p >= K+1)")
    rng = np.random.default_rng(seed)

    if n_cliques == 1:
        return build_graph(p, [range(p)])

    # fresh-variable counts: clique 0 gets >= 2, the others >= 1
    extra = p - (n_cliques + 1)
    split = rng.multinomial(extra, np.full(n_cliques, 1.0 / n_cliques))
    fresh = split + 1
    fresh[0] += 1

    cliques: list[list[int]] = [list(range(fresh[0]))]
    nxt = int(fresh[0])
    for k in range(1, n_cliques):
        j = int(rng.integers(k))
        parent = cliques[j]
        s = int(rng.integers(1, min(max_sep, len(parent) - 1) + 1))
        sep = rng.choice(parent, size=s, replace=False).tolist()
        cliques.append(sep + list(range(nxt, nxt + int(fresh[k]))))
        nxt += int(fresh[k])

    relabel = rng.permutation(p)
    return build_graph(p, [[int(relabel[i]) for i in c] for c in cliques])


def load_graph(path: str | Path) -> DecomposableGraph:
    return DecomposableGraph.from_json(Path(path).read_text())


def save_graph(graph: DecomposableGraph, path: str | Path) -> None:
    Path(path).write_text(graph.to_json() + "\n")


def chain_graph(p: int, sizes: Sequence[int], overlap: int) -> DecomposableGraph:
    """Consecutive cliques of the given sizes sharing ``overlap`` variables."""
    cliques, start = [], 0
    for s in sizes:
        cliques.append(range(start, start + s))
        start += s - overlap
    return build_graph(p, cliques)
