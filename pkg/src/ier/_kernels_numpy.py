"""Pure-numpy reference implementations of the hot kernels."""

import numpy as np


def class_sim_maps(grid, vecs):
    """Cosine similarity of every grid cell against every vector.

    grid: (H, W, C), vecs: (K, C) -> (K, H, W)
    """
    gnorm = np.sqrt(np.einsum("hwc,hwc->hw", grid, grid))
    vnorm = np.sqrt(np.einsum("kc,kc->k", vecs, vecs))
    dots = np.einsum("hwc,kc->khw", grid, vecs)
    denom = vnorm[:, None, None] * gnorm[None, :, :]
    out = np.zeros_like(dots)
    np.divide(dots, denom, out=out, where=denom > 0.0)
    return out


def kmeans_assign(points, centroids):
    """Nearest-centroid labels and total squared-distance inertia."""
    d2 = (
        np.sum(points**2, axis=1)[:, None]
        - 2.0 * points @ centroids.T
        + np.sum(centroids**2, axis=1)[None, :]
    )
    labels = np.argmin(d2, axis=1)
    inertia = float(np.sum(np.maximum(d2[np.arange(len(points)), labels], 0.0)))
    return labels.astype(np.int64), inertia
