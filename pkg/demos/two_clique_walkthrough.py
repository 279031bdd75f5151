"""Smallest eigenpair of a three-variable chain, step by step.

Two cliques {0, 1} and {1, 2} share variable 1.  The second clique sends a
1x1 message to the first during every feasibility sweep.
"""

import numpy as np

from dpca import Bracket, bisect_min_eig, build_graph, eigvec, feasibility_sweep, run_protocol, spawn_cliques
from dpca.estimation import BlockSparseConcentration

g = build_graph(3, [[0, 1], [1, 2]])
print("residuals", g.residuals, "separators", g.separators, "parents", g.parents)

K = BlockSparseConcentration.from_dense(g, np.array([[2.0, 1, 0], [1, 2, 1], [0, 1, 2]]))
for t in (0.5, 0.58, 0.59, 0.6):
    v = feasibility_sweep(K, t)
    print(f"t={t}: feasible={v.feasible} failing_clique={v.failing_clique}")

res = bisect_min_eig(K, Bracket(0.0, 1.0, 1e-10))
print(f"lambda in [{res.lower:.12f}, {res.upper:.12f}] after {res.iterations} sweeps (2 - sqrt 2 = {2 - np.sqrt(2):.12f})")
print("eigenvector", eigvec(K, res.value, tol=res.width))

# the same request over the message-passing runtime
out = run_protocol(spawn_cliques(g), "spectrum", K=K, j=3, tol=1e-10)
for pair in out.value:
    print(f"lambda={pair.value:.10f} u={np.round(pair.vector, 6)}")
print("messages", len(out.log), "largest", max(e.dim for e in out.log))
