"""Mathematical kernel: similarities, pooling, losses, normalization, k-means.

Everything here is a pure function of its arguments; all randomness is
routed through an explicit seed.
"""

import numpy as np

from . import backend
from .errors import DomainError

BCE_CLAMP = 1e-7
KL_CLAMP = 1e-12


def cosine_sim(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DomainError("cosine similarity of a zero-norm vector")
    return float(np.dot(a, b) / (na * nb))


def localization_map(grid, audio):
    """Per-cell cosine similarity between a feature grid and one vector."""
    grid = np.asarray(grid, dtype=np.float64)
    audio = np.asarray(audio, dtype=np.float64)
    if grid.ndim != 3 or grid.shape[2] != audio.shape[0]:
        raise DomainError(
            f"channel mismatch: grid {grid.shape} vs audio {audio.shape}"
        )
    return backend.class_sim_maps(grid, audio[None, :])[0]


def class_localization_maps(grid, vecs):
    """Stack of localization maps, one per row of ``vecs``: (K, H, W)."""
    grid = np.asarray(grid, dtype=np.float64)
    vecs = np.asarray(vecs, dtype=np.float64)
    if grid.shape[2] != vecs.shape[1]:
        raise DomainError("channel mismatch between grid and vectors")
    return backend.class_sim_maps(grid, vecs)


def global_max_pool(sim_map):
    sim_map = np.asarray(sim_map, dtype=np.float64)
    if sim_map.size == 0:
        raise DomainError("max pool of an empty map")
    return float(sim_map.max())


def global_avg_pool(sim_map):
    sim_map = np.asarray(sim_map, dtype=np.float64)
    if sim_map.size == 0:
        raise DomainError("average pool of an empty map")
    return float(sim_map.mean())


def softmax(scores):
    scores = np.asarray(scores, dtype=np.float64)
    shifted = scores - scores.max()
    e = np.exp(shifted)
    return e / e.sum()


def kl_divergence(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DomainError("KL divergence of distributions of different length")
    q = np.maximum(q, KL_CLAMP)
    terms = np.where(p > 0.0, p * np.log(np.maximum(p, KL_CLAMP) / q), 0.0)
    return float(terms.sum())


def bce(prediction, target):
    if target not in (0, 1, 0.0, 1.0):
        raise DomainError(f"bce target must be 0 or 1, got {target}")
    p = min(max(float(prediction), BCE_CLAMP), 1.0 - BCE_CLAMP)
    t = float(target)
    return -(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))


def remap_similarity(s):
    if not -1.0 - 1e-12 <= s <= 1.0 + 1e-12:
        raise DomainError(f"similarity {s} outside [-1, 1]")
    return (float(s) + 1.0) / 2.0


def l2_normalize(v):
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise DomainError("cannot normalize a zero vector")
    return v / n


# ---------------------------------------------------------------------------
# Gradient helpers.  The training modules assemble their backward passes from
# these; each returns the input-gradient for the given output-gradient.

def bce_remap_grad(cos_value, target):
    """d/ds of bce(remap(s), target) at cosine score ``s``.

    Zero in the clamped region, matching the (piecewise constant) loss.
    """
    p = (cos_value + 1.0) / 2.0
    if p <= BCE_CLAMP or p >= 1.0 - BCE_CLAMP:
        return 0.0
    return 0.5 * (p - target) / (p * (1.0 - p))


def l2norm_backward(raw, unit, d_unit):
    """Backprop through unit = raw / ||raw||."""
    n = np.linalg.norm(raw)
    return (d_unit - unit * np.dot(unit, d_unit)) / n


def unit_cos_grad(unit_vec, other, cos_value):
    """d cos(u, w) / du for ||u|| = 1 and arbitrary w."""
    nw = np.linalg.norm(other)
    return other / nw - cos_value * unit_vec


def softmax_backward(probs, d_probs):
    """Backprop through y = softmax(s): returns d_scores."""
    return probs * (d_probs - np.dot(probs, d_probs))


# ---------------------------------------------------------------------------
# k-means


class ClusterResult:
    def __init__(self, centroids, assignments, inertia):
        self.centroids = centroids
        self.assignments = assignments
        self.inertia = inertia


def _kmeans_pp_init(points, k, rng):
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centroids[j] = points[rng.integers(n)]
            continue
        idx = int(np.searchsorted(np.cumsum(d2 / total), rng.random()))
        idx = min(idx, n - 1)
        centroids[j] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centroids[j]) ** 2, axis=1))
    return centroids


def kmeans(points, k, seed, max_iter=100):
    """Lloyd iterations with k-means++ seeding, deterministic per seed."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if k < 1 or n < k:
        raise DomainError(f"kmeans needs N >= K >= 1, got N={n}, K={k}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(points, k, rng)
    labels = np.full(n, -1, dtype=np.int64)
    inertia = np.inf
    for _ in range(max_iter):
        new_labels, inertia = backend.kmeans_assign(points, centroids)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            members = points[labels == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
            else:
                # re-seed a dead centroid to the point farthest from its own
                per_point = np.sum((points - centroids[labels]) ** 2, axis=1)
                centroids[j] = points[int(np.argmax(per_point))]
    return ClusterResult(centroids, labels, float(inertia))
