"""In-process simulation of the clique network.

Every clique becomes a :class:`CliqueNode` that holds only the columns of
the data it observes.  Nodes talk through a :class:`Mailbox`; every payload
is recorded in a :class:`MessageLog` together with the size bound
``|S_k| + j - 1`` that applies to it.  Any attempt by a node to touch a
variable outside its clique is counted by the :class:`LocalityMonitor` and
aborts the run.

The numerical kernels are the ones used by :mod:`dpca.eigensolver` and
:mod:`dpca.estimation`, executed in the same order, so protocol results are
bit-identical to the centralized functions.
"""

from __future__ import annotations

import math
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import eigensolver as es
from .estimation import (
    BlockSparseConcentration,
    LocalEstimate,
    clique_contribution,
    local_concentration,
    local_moments,
    separator_message,
)
from .graph import DecomposableGraph

__all__ = [
    "DimensionMismatch",
    "LocalityViolation",
    "LogEntry",
    "MessageLog",
    "Mailbox",
    "LocalityMonitor",
    "CliqueNode",
    "Network",
    "ProtocolResult",
    "spawn_cliques",
    "run_protocol",
    "message_stats",
]


class DimensionMismatch(ValueError):
    code = "DIMENSION_MISMATCH"


class LocalityViolation(RuntimeError):
    code = "LOCALITY_VIOLATION"


@dataclass(frozen=True)
class LogEntry:
    seq: int
    source: int
    dest: int
    shape: tuple[int, ...]
    phase: str
    bound: int | None = None

    @property
    def dim(self) -> int:
        return self.shape[0] if self.shape else 1

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1

    @property
    def within_bound(self) -> bool:
        return self.bound is None or self.dim <= self.bound


class MessageLog:
    """Append-only record of every delivered payload."""

    def __init__(self):
        self.entries: list[LogEntry] = []

    def append(self, source, dest, shape, phase, bound=None) -> None:
        self.entries.append(LogEntry(len(self.entries), source, dest, tuple(shape), phase, bound))

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def phase(self, name: str) -> list[LogEntry]:
        return [e for e in self.entries if e.phase == name]


class Mailbox:
    """Per-node FIFO inboxes.

    Payloads are passed by exact copy; a socket transport would replace
    ``send``/``receive`` only.
    """

    def __init__(self, log: MessageLog):
        self.log = log
        self._boxes: dict[int, deque] = defaultdict(deque)

    def send(self, source: int, dest: int, payload, phase: str, bound: int | None = None) -> None:
        arr = np.array(payload, dtype=float, copy=True)
        self.log.append(source, dest, arr.shape, phase, bound)
        self._boxes[dest].append((source, arr))

    def receive(self, dest: int, source: int | None = None):
        box = self._boxes[dest]
        for i, (src, arr) in enumerate(box):
            if source is None or src == source:
                del box[i]
                return arr
        raise LookupError(f"node {dest} has no message from {source}")


class LocalityMonitor:
    def __init__(self):
        self.checks = 0
        self.violations = 0

    def check(self, node: "CliqueNode", index) -> None:
        self.checks += 1
        if not set(int(i) for i in index) <= node.members:
            self.violations += 1
            raise LocalityViolation(f"node {node.k} accessed variables outside its clique")


class CliqueNode:
    """One clique: its local samples and guarded access to shared state."""

    def __init__(self, k: int, clique: tuple[int, ...], samples: np.ndarray, monitor: LocalityMonitor):
        self.k = k
        self.clique = clique
        self.members = frozenset(clique)
        self.samples = samples
        self.monitor = monitor

    def rows(self, arr: np.ndarray, index) -> np.ndarray:
        self.monitor.check(self, index)
        return arr[list(index)]

    def set_rows(self, arr: np.ndarray, index, values) -> None:
        self.monitor.check(self, index)
        arr[list(index)] = values

    def block(self, Q: BlockSparseConcentration) -> np.ndarray:
        # block k holds rows R_k and columns C_k, all inside the clique
        return Q.blocks[self.k]

    def clique_view(self, Q: BlockSparseConcentration) -> np.ndarray:
        self.monitor.check(self, self.clique)
        return Q.submatrix(self.clique)

    def add_separator(self, Q: BlockSparseConcentration, sep, mat: np.ndarray) -> None:
        self.monitor.check(self, sep)
        Q.add(sep, mat)

    def local_estimate(self, graph: DecomposableGraph) -> LocalEstimate:
        cov = local_moments(self.samples)
        est = LocalEstimate(self.k, cov, local_concentration(cov, self.k))
        if self.k:
            spos = graph.positions[self.k, list(graph.separators[self.k])]
            est.sep_cov = local_moments(self.samples[:, spos])
            est.sep_conc = local_concentration(est.sep_cov, self.k)
        return est


@dataclass
class Network:
    graph: DecomposableGraph
    nodes: list[CliqueNode]
    monitor: LocalityMonitor = field(default_factory=LocalityMonitor)
    concentration: BlockSparseConcentration | None = None


@dataclass
class ProtocolResult:
    value: Any
    log: MessageLog


def spawn_cliques(graph: DecomposableGraph, data: np.ndarray | None = None) -> Network:
    """One node per clique, each holding its own columns of ``data``."""
    if data is not None:
        data = np.asarray(data, dtype=float)
        if data.ndim != 2 or data.shape[1] != graph.p:
            raise DimensionMismatch(f"data has shape {data.shape}, graph expects {graph.p} columns")
    monitor = LocalityMonitor()
    nodes = []
    for k, c in enumerate(graph.cliques):
        local = None if data is None else data[:, np.asarray(c, dtype=np.intp)]
        nodes.append(CliqueNode(k, c, local, monitor))
    return Network(graph, nodes, monitor)


# -- protocols --------------------------------------------------------------


def _assemble(net: Network, box: Mailbox) -> BlockSparseConcentration:
    g = net.graph
    if any(node.samples is None for node in net.nodes):
        raise DimensionMismatch("network was spawned without data")
    estimates = [node.local_estimate(g) for node in net.nodes]
    K = BlockSparseConcentration(g, [clique_contribution(g, e.k, e.conc) for e in estimates])
    for e in estimates[1:]:
        parent = g.parents[e.k]
        box.send(e.k, parent, separator_message(g, e.k, e.conc, e.sep_conc), "assemble", len(g.separators[e.k]))
        net.nodes[parent].add_separator(K, g.separators[e.k], box.receive(parent, e.k))
    net.concentration = K
    return K


def _factor(g, defl):
    return es._start_factor(g.p, defl)


def _rank(defl) -> int:
    return 0 if defl is None else defl.rank


def _sweep(net: Network, box: Mailbox, K, t, defl, phase="sweep") -> es.FeasibilityVerdict:
    g = net.graph
    Q = K.copy()
    W, Dbar = _factor(g, defl)
    r0 = _rank(defl)
    messages = []
    for k in range(g.n_cliques - 1, 0, -1):
        node = net.nodes[k]
        rpos, spos = es._step_indices(g, k)
        M = es.eliminate(node.block(Q), rpos, spos, node.rows(W, g.residuals[k]), Dbar, t)
        if M is None:
            return es.FeasibilityVerdict(False, k, messages)
        parent = g.parents[k]
        box.send(k, parent, M, phase, len(g.separators[k]) + r0)
        M = box.receive(parent, k)
        messages.append(es.MessageMatrix(k, parent, M))
        net.nodes[parent].monitor.check(net.nodes[parent], g.separators[k])
        W, Dbar = es.absorb(Q, g.separators[k], W, Dbar, M)
    root = net.nodes[0]
    A = es.reduced_block(root.block(Q), np.arange(len(root.clique)), root.rows(W, root.clique), Dbar)
    ok = t < es.local_min_eig(A)
    return es.FeasibilityVerdict(ok, None if ok else 0, messages)


def _upper_bound(net: Network, box: Mailbox, K, defl) -> float:
    vals = []
    for node in net.nodes:
        A = node.clique_view(K)
        if defl is not None and defl.rank:
            Uc = node.rows(defl.vectors, node.clique)
            A = es._symm(A + (Uc * defl.weights) @ Uc.T)
        v = es.local_min_eig(A)
        if node.k:
            box.send(node.k, 0, [v], "bound", 1)
            v = float(box.receive(0, node.k)[0])
        vals.append(v)
    return min(vals)


def _deflation_weight(net: Network, box: Mailbox, K) -> float:
    total = 0.0
    for node in net.nodes:
        e = K.block_energy(node.k)
        if node.k:
            box.send(node.k, 0, [e], "norm", 1)
            e = float(box.receive(0, node.k)[0])
        total += e
    return 2.0 * float(np.sqrt(total)) + 1.0


def _bisect(net, box, K, bracket, defl, check_bracket=True):
    def sweep(K_, t, defl_):
        return _sweep(net, box, K_, t, defl_)

    return es.bisect_min_eig(K, bracket, defl, check_bracket=check_bracket, sweep=sweep)


def _null_sweep(net, box, K, lam, defl, scale, slack):
    g = net.graph
    Q = K.copy()
    W, Dbar = _factor(g, defl)
    r0 = _rank(defl)
    levels = {}
    k = g.n_cliques - 1
    while k > 0:
        node = net.nodes[k]
        rpos, spos = es._step_indices(g, k)
        r = g.residuals[k]
        blk = node.block(Q)
        W_R = node.rows(W, r)
        A = es.reduced_block(blk, rpos, W_R, Dbar)
        At = A - lam * np.eye(len(r))
        evals, evecs = np.linalg.eigh(At)
        if np.abs(evals).min() <= scale * es.null_threshold(A) + slack:
            return k, A, evals, evecs, levels
        lu = es.scipy.linalg.lu_factor(At)
        B = es.coupling(blk, spos, W_R, Dbar)
        M = es._symm(B @ es.scipy.linalg.lu_solve(lu, B.T))
        levels[k] = es._Level(blk[:, spos].copy(), W, Dbar, lu)
        parent = g.parents[k]
        box.send(k, parent, M, "eigvec-down", len(g.separators[k]) + r0)
        M = box.receive(parent, k)
        net.nodes[parent].monitor.check(net.nodes[parent], g.separators[k])
        W, Dbar = es.absorb(Q, g.separators[k], W, Dbar, M)
        k -= 1
    root = net.nodes[0]
    A = es.reduced_block(root.block(Q), np.arange(len(root.clique)), root.rows(W, root.clique), Dbar)
    evals, evecs = np.linalg.eigh(A - lam * np.eye(len(root.clique)))
    return 0, A, evals, evecs, levels


def _norm(net, box, u) -> float:
    g = net.graph
    total = 0.0
    for node in net.nodes:
        sq = es.block_square(node.rows(u, g.residuals[node.k]))
        if node.k:
            box.send(node.k, 0, [sq], "norm", 1)
            sq = float(box.receive(0, node.k)[0])
        total += sq
    return math.sqrt(total)


def _gather(net, box, k, u, W, r0, phase):
    """Separator values from the parent and ``W[H]^T u[H]`` from earlier cliques."""
    g = net.graph
    sep = g.separators[k]
    parent = g.parents[k]
    box.send(parent, k, net.nodes[parent].rows(u, sep), phase, len(sep) + r0)
    u_sep = box.receive(k, parent)
    wdot = None
    if W.shape[1]:
        wdot = np.zeros(W.shape[1])
        for a in range(k):
            part = net.nodes[a].rows(W, g.residuals[a]).T @ net.nodes[a].rows(u, g.residuals[a])
            box.send(a, k, part, "reduce", len(sep) + r0)
            wdot = wdot + box.receive(k, a)
    return u_sep, wdot


def _null_vector(net, box, K, lam, defl, tol):
    g = net.graph
    r0 = _rank(defl)
    ladder = [(1.0, 0.0), (100.0, 0.0)]
    if tol > 0:
        ladder.append((100.0, 2.0 * tol))
    for scale, slack in ladder:
        kt, A, evals, evecs, levels = _null_sweep(net, box, K, lam, defl, scale, slack)
        i = int(np.argmin(np.abs(evals)))
        mu = float(evals[i])
        u = np.zeros(g.p)
        net.nodes[kt].set_rows(u, g.residuals[kt], evecs[:, i])
        for k in range(kt + 1, g.n_cliques):
            lv = levels[k]
            u_sep, wdot = _gather(net, box, k, u, lv.W, r0, "eigvec-up")
            net.nodes[k].set_rows(u, g.residuals[k], es.back_substitute(lv, u_sep, wdot, list(g.residuals[k])))
        if kt > 0:
            return u, mu
        if abs(mu) <= scale * es.null_threshold(A) + slack * _norm(net, box, u) ** 2:
            return u, mu
    raise es.NoNullVector(f"no singular block at lambda={lam!r}; smallest local |eigenvalue| {abs(mu):.3g}")


def _shifted_solve(net, box, K, sigma, b, defl):
    g = net.graph
    Q = K.copy()
    W, Dbar = _factor(g, defl)
    r0 = _rank(defl)
    b = np.array(b, dtype=float)
    c = np.zeros(W.shape[1])
    levels = {}
    for k in range(g.n_cliques - 1, 0, -1):
        node = net.nodes[k]
        rpos, spos = es._step_indices(g, k)
        r, sep = g.residuals[k], g.separators[k]
        blk = node.block(Q)
        W_R = node.rows(W, r)
        A = es.reduced_block(blk, rpos, W_R, Dbar)
        lu = es.scipy.linalg.lu_factor(A - sigma * np.eye(len(r)))
        B = es.coupling(blk, spos, W_R, Dbar)
        z = es.scipy.linalg.lu_solve(lu, node.rows(b, r) + W_R @ c)
        M = es._symm(B @ es.scipy.linalg.lu_solve(lu, B.T))
        levels[k] = (es._Level(blk[:, spos].copy(), W, Dbar, lu), z)
        parent = g.parents[k]
        box.send(k, parent, M, "solve-down", len(sep) + r0)
        box.send(k, parent, B @ z, "solve-down", len(sep) + r0)
        M = box.receive(parent, k)
        y = box.receive(parent, k)
        pnode = net.nodes[parent]
        pnode.monitor.check(pnode, sep)
        W, Dbar, G = es.absorb_gain(Q, sep, W, Dbar, M)
        b_sep, c = es.carry_rhs(pnode.rows(b, sep), c, y, G)
        pnode.set_rows(b, sep, b_sep)
    root = net.nodes[0]
    c1 = root.clique
    A = es.reduced_block(root.block(Q), np.arange(len(c1)), root.rows(W, c1), Dbar)
    x = np.zeros(g.p)
    rhs = root.rows(b, c1) + root.rows(W, c1) @ c
    root.set_rows(x, c1, np.linalg.solve(A - sigma * np.eye(len(c1)), rhs))
    for k in range(1, g.n_cliques):
        x_sep, wdot = _gather(net, box, k, x, levels[k][0].W, r0, "solve-up")
        lv, z = levels[k]
        r = list(g.residuals[k])
        net.nodes[k].set_rows(x, r, z + es.back_substitute(lv, x_sep, wdot, r))
    return x


def _eigvec(net, box, K, lam, defl, tol, refine=True):
    u, _ = _null_vector(net, box, K, lam, defl, tol)
    u = u / _norm(net, box, u)
    if refine:
        sigma = es.polish_shift(lam, tol)
        for _ in range(es.POLISH_STEPS):
            try:
                x = _shifted_solve(net, box, K, sigma, u, defl)
            except np.linalg.LinAlgError:
                break
            if not np.all(np.isfinite(x)):
                break
            u = x / _norm(net, box, x)
    return es.canonical_sign(u)


def _spectrum(net, box, K, j_max, tol, lower=0.0):
    if not 1 <= j_max <= K.p:
        raise ValueError(f"j_max must be in [1, {K.p}], got {j_max}")
    weight = _deflation_weight(net, box, K)
    defl = es.DeflationSet.empty(K.p)
    pairs = []
    for _ in range(j_max):
        res = _bisect(net, box, K, es.Bracket(lower, _upper_bound(net, box, K, defl), tol), defl)
        u = _eigvec(net, box, K, res.value, defl, res.width)
        pairs.append(es.EigenPair(res.value, u, res.width, res.iterations))
        defl = defl.extend(u, weight)
    return pairs


def run_protocol(net: Network, request: str, **params) -> ProtocolResult:
    """Execute one request over the network.

    Requests:
        ``"assemble"``: decomposable ML concentration from the nodes' data.
        ``"min_eig"``: bisection bracket (``tol``, optional ``lower`` and
            ``upper``; defaults ``0`` and the clique bound).
        ``"eigvec"``: eigenvector for ``lam`` (optional ``tol``, ``defl``).
        ``"spectrum"``: the ``j`` smallest eigenpairs at tolerance ``tol``.

    The concentration used by the eigen requests is the one produced by a
    previous ``assemble`` unless ``K`` is passed explicitly.
    """
    log = MessageLog()
    box = Mailbox(log)
    if request == "assemble":
        return ProtocolResult(_assemble(net, box), log)

    K = params.get("K")
    if K is None:
        K = net.concentration
    if K is None:
        K = _assemble(net, box)
    if request == "min_eig":
        tol = params.get("tol", 1e-8)
        defl = params.get("defl")
        lower = params.get("lower", 0.0)
        upper = params.get("upper")
        if upper is None:
            upper = _upper_bound(net, box, K, defl)
        check = params.get("check_bracket", True)
        return ProtocolResult(_bisect(net, box, K, es.Bracket(lower, upper, tol), defl, check), log)
    if request == "eigvec":
        return ProtocolResult(
            _eigvec(net, box, K, params["lam"], params.get("defl"), params.get("tol", 0.0)), log
        )
    if request == "spectrum":
        return ProtocolResult(
            _spectrum(net, box, K, params.get("j", 1), params.get("tol", 1e-8), params.get("lower", 0.0)),
            log,
        )
    raise ValueError(f"unknown request {request!r}")


@dataclass
class MessageStats:
    count: int
    max_dim: int
    total_entries: int
    total_bytes: int
    centralized_dim: int
    within_bound: bool
    by_phase: dict[str, int]


def message_stats(log: MessageLog, p: int | None = None) -> MessageStats:
    """Summarize a log; ``p`` is the message dimension of a centralized protocol."""
    entries = list(log)
    by_phase: dict[str, int] = defaultdict(int)
    for e in entries:
        by_phase[e.phase] += 1
    total = sum(e.size for e in entries)
    return MessageStats(
        count=len(entries),
        max_dim=max((e.dim for e in entries), default=0),
        total_entries=total,
        total_bytes=8 * total,
        centralized_dim=p or 0,
        within_bound=all(e.within_bound for e in entries),
        by_phase=dict(by_phase),
    )
