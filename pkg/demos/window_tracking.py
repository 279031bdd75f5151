"""Track the smallest concentration eigenvalue over sliding windows.

Three 105-variable cliques chained by 5 shared variables.  Each window is
refit and bisection starts from the previous estimate +/- 0.1.
"""

import numpy as np

from dpca import track
from dpca.estimation import ml_concentration
from dpca.synthetic import tracking_graph

g = tracking_graph()
x = np.random.default_rng(0).standard_normal((5500, g.p))
trace = track(x, g, window=500, overlap=400, tol=1e-3)
for pt in trace.points[:5] + trace.points[-2:]:
    K, _ = ml_concentration(g, x[pt.start : pt.stop])
    dense = np.linalg.eigvalsh(K.to_dense())[0]
    print(f"start={pt.start:5d} lambda={pt.value:.5f} dense={dense:.5f} iters={pt.iterations} warm={pt.warm} bytes={pt.messages_bytes}")
print(f"{len(trace)} windows, iterations {sorted(set(trace.iterations))}")
