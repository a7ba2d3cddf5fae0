"""Compare the compiled and pure-Python kernels on mesh-sized inputs.

Run from the repository root::

    python3 benchmarks/bench_kernels.py [--repeat 3]

Both backends are timed on the same inputs and their outputs are checked
for exact agreement before any timing is reported.
"""
import argparse
import time

import numpy as np

from rino import _kernels_py, kernels
from rino.mesh import edge_graph, gen_synthetic, normalize_unit_area
from rino.mesh.core import KNN_QUANTUM

try:
    from rino import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _best(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--subdiv", type=int, default=4, help="icosphere level of the test mesh")
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not available; nothing to compare")
        return 1

    mesh = normalize_unit_area(gen_synthetic("sphere", {"subdiv": args.subdiv}))
    g = edge_graph(mesh).tocsr()
    g.sort_indices()
    sources = np.arange(0, mesh.n_vertices, max(1, mesh.n_vertices // 16))
    pts = mesh.vertices
    quantum = KNN_QUANTUM * np.mean(np.sum((pts - pts.mean(0)) ** 2, axis=1))

    cases = [
        (f"dijkstra ({len(sources)} sources, n={mesh.n_vertices})",
         lambda impl: kernels.dijkstra_many(g.indptr, g.indices, g.data, sources, impl=impl)),
        (f"knn k=16 (n={mesh.n_vertices})", lambda impl: kernels.knn_bruteforce(pts, 16, impl=impl, quantum=quantum)),
    ]
    print(f"{'kernel':<36}{'python [s]':>12}{'compiled [s]':>14}{'speedup':>10}")
    for name, run in cases:
        tp, op = _best(lambda: run(_kernels_py), args.repeat)
        tc, oc = _best(lambda: run(_ckernels), args.repeat)
        if not np.array_equal(op, oc):
            raise SystemExit(f"{name}: backends disagree")
        print(f"{name:<36}{tp:>12.4f}{tc:>14.4f}{tp / tc:>9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
