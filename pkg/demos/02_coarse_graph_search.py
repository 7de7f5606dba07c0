"""Searching for the best coarse tube.

Scores candidate tubes (varying subunits per turn, seam offset, and seam
weight) against a finer tube by diffusion distance, the procedure that
picks the coarsest scale of the multiscale models.
"""

from gpcn.gdd import coarse_search
from gpcn.graphs import make_tube

fine = make_tube(12, 13, 3)
rows = coarse_search(
    fine,
    n_rings=6,
    k_range=(3, 5, 9, 13),
    p_range=(0, 1),
    seam_weights=(1.0, 2.0),
)

print(f"candidates against {fine.name}:\n")
print(f"{'k':>3} {'p':>3} {'seam':>5} {'distance':>10}")
for k, p, w, dist in rows:
    print(f"{k:>3} {p:>3} {w:>5.1f} {dist:>10.4f}")

best = min(rows, key=lambda r: r[3])
print(f"\nnearest candidate: k={best[0]}, offset={best[1]}, seam weight {best[2]:g}")
