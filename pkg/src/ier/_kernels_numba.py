"""Numba-jitted twins of the hot kernels in _kernels_numpy.

Loop order matches the numpy reductions closely enough that the two
backends agree to float64 round-off; tests pin the agreement at 1e-10.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def class_sim_maps(grid, vecs):
    h, w, c = grid.shape
    k = vecs.shape[0]
    out = np.zeros((k, h, w))
    vnorm = np.empty(k)
    for n in range(k):
        s = 0.0
        for j in range(c):
            s += vecs[n, j] * vecs[n, j]
        vnorm[n] = np.sqrt(s)
    for y in range(h):
        for x in range(w):
            g = 0.0
            for j in range(c):
                g += grid[y, x, j] * grid[y, x, j]
            g = np.sqrt(g)
            for n in range(k):
                denom = vnorm[n] * g
                if denom > 0.0:
                    d = 0.0
                    for j in range(c):
                        d += grid[y, x, j] * vecs[n, j]
                    out[n, y, x] = d / denom
    return out


@numba.njit(cache=True)
def kmeans_assign(points, centroids):
    n, c = points.shape
    k = centroids.shape[0]
    labels = np.empty(n, dtype=np.int64)
    inertia = 0.0
    for i in range(n):
        best = 0
        best_d = np.inf
        for j in range(k):
            d = 0.0
            for m in range(c):
                diff = points[i, m] - centroids[j, m]
                d += diff * diff
            if d < best_d:
                best_d = d
                best = j
        labels[i] = best
        inertia += best_d
    return labels, inertia
