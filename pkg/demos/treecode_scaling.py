"""Summing N-body velocities: quadratic walls and how the tree avoids them.

Every particle drags every other particle, so the naive velocity sum costs
N^2 kernel evaluations.  A quadtree with multipole far-field expansions
brings this to N log N at a fixed, small accuracy cost.  This script times
both on growing clouds and checks the tree against the exact sum where the
exact sum is still affordable.

Run with:  python3 demos/treecode_scaling.py
"""

import time

import numpy as np

from vortexlab import velocity_at_points

DIRECT_CAP = 20_000     # the O(N^2) path gets slow quickly on one core

rng = np.random.default_rng(7)
print(f"{'N':>8} {'direct [s]':>11} {'tree [s]':>9} {'speedup':>8} "
      f"{'max rel err':>12}")
for n in (5_000, 20_000, 80_000):
    pts = rng.standard_normal((n, 2))
    w = np.full(n, 1.0 / n)
    delta = 2.0 * float(np.ptp(pts)) * n ** -0.5

    t0 = time.perf_counter()
    vt = velocity_at_points((pts, w), pts, delta, method="treecode")
    tree_s = time.perf_counter() - t0

    if n <= DIRECT_CAP:
        t0 = time.perf_counter()
        vd = velocity_at_points((pts, w), pts, delta)
        direct_s = time.perf_counter() - t0
        scale = np.max(np.hypot(vd[:, 0], vd[:, 1]))
        err = np.max(np.hypot(*(vt - vd).T)) / scale
        print(f"{n:8d} {direct_s:11.3f} {tree_s:9.3f} "
              f"{direct_s / tree_s:8.1f} {err:12.2e}")
    else:
        print(f"{n:8d} {'(skipped)':>11} {tree_s:9.3f} {'':>8} {'':>12}")

print("\nDirect doubles its cost 4x per doubling of N; the tree does not.")
