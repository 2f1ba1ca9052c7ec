"""NumPy implementations of the hot inner kernels.

Same contracts as the compiled extension ``_speedups``; used when the
extension is unavailable or when STCUTFEM_PURE_PYTHON is set.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

BACKEND = "pure"


def local_matrices(weights, phi, psi):
    """Accumulate weighted outer products over quadrature points.

    out[e, a, b] = sum_q weights[e, q] * phi[e, q, a] * psi[e, q, b]

    Parameters
    ----------
    weights : (E, Q) array
    phi : (E, Q, Na) array
    psi : (E, Q, Nb) array
    """
    return np.einsum("eq,eqa,eqb->eab", weights, phi, psi, optimize=True)


def _dist_to_candidates(points, seg_a, seg_b, cand):
    """Exact point-to-segment distances for per-point candidate sets."""
    a = seg_a[cand]  # (n, k, 2)
    d = seg_b[cand] - a
    dd = (d * d).sum(axis=2)
    dd[dd < 1e-300] = 1e-300
    ap = points[:, None, :] - a
    t = np.clip((ap * d).sum(axis=2) / dd, 0.0, 1.0)
    diff = ap - t[:, :, None] * d
    return np.sqrt((diff * diff).sum(axis=2))


def min_dist_to_segments(points, seg_a, seg_b):
    """Minimum Euclidean distance from each point to a set of segments.

    Candidate segments are pruned with a KD-tree on segment midpoints:
    the distance to any segment is at least the midpoint distance minus
    half the longest segment, which bounds how many neighbors can matter.
    """
    points = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
    seg_a = np.ascontiguousarray(seg_a, dtype=float)
    seg_b = np.ascontiguousarray(seg_b, dtype=float)
    m = len(seg_a)
    mids = 0.5 * (seg_a + seg_b)
    half_len_max = 0.5 * np.sqrt(((seg_b - seg_a) ** 2).sum(axis=1)).max()

    tree = cKDTree(mids)
    best = np.full(len(points), np.inf)
    active = np.arange(len(points))
    k = min(16, m)
    while True:
        sub = points[active]
        mid_d, idx = tree.query(sub, k=k)
        if k == 1:
            mid_d = mid_d[:, None]
            idx = idx[:, None]
        best[active] = _dist_to_candidates(sub, seg_a, seg_b, idx).min(axis=1)
        if k >= m:
            break
        # A skipped segment can only win if its midpoint lies within
        # best + half_len_max, i.e. closer than the k-th queried midpoint.
        unsure = mid_d[:, -1] - half_len_max < best[active]
        if not np.any(unsure):
            break
        active = active[unsure]
        k = min(4 * k, m)
    return best
