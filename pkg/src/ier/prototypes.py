"""Prototype banks, pseudo-labels and the single-source prototype loss."""

import warnings
from dataclasses import dataclass

import numpy as np

from .encoders import audio_embedding_backward, encode_audio, encode_visual, zero_grads
from .errors import DomainError
from .numerics import (
    bce,
    bce_remap_grad,
    kmeans,
    l2_normalize,
    remap_similarity,
)


@dataclass
class PrototypeBank:
    modality: str
    vectors: np.ndarray  # (K, C), unit rows

    @property
    def k(self):
        return self.vectors.shape[0]


def object_feature(f_v, f_a):
    """The grid cell with max cosine to the paired audio embedding."""
    sims = np.einsum("hwc,c->hw", f_v, f_a)
    iy, ix = np.unravel_index(np.argmax(sims), sims.shape)
    return f_v[iy, ix]


def build_prototypes(params, dataset, k, seed):
    """Cluster visual object features; derive both banks and assignments.

    Returns (visual bank, audio bank, assignments, encoded audio features).
    """
    if len(dataset) < k:
        raise DomainError(f"need at least K={k} samples, got {len(dataset)}")
    vis_feats = []
    aud_feats = []
    for pair in dataset:
        f_v = encode_visual(params, pair.visual)
        f_a, _ = encode_audio(params, pair.audio)
        vis_feats.append(object_feature(f_v, f_a))
        aud_feats.append(f_a)
    vis_feats = np.stack(vis_feats)
    aud_feats = np.stack(aud_feats)
    result = kmeans(vis_feats, k, seed=seed)
    assignments = result.assignments
    p_v = np.stack([l2_normalize(c) for c in result.centroids])
    p_a = np.empty_like(p_v)
    for j in range(k):
        members = aud_feats[assignments == j]
        if len(members):
            p_a[j] = l2_normalize(members.mean(axis=0))
        else:
            warnings.warn(f"cluster {j} is empty; audio prototype re-seeded")
            p_a[j] = p_v[j]
    return (PrototypeBank("visual", p_v), PrototypeBank("audio", p_a),
            assignments, aud_feats)


def recompute_prototypes(params, dataset, assignments, previous_v, previous_a):
    """Recompute both banks from fresh features under frozen assignments."""
    k = previous_a.k
    vis_sum = np.zeros_like(previous_v.vectors)
    aud_sum = np.zeros_like(previous_a.vectors)
    counts = np.zeros(k, dtype=np.int64)
    for pair, j in zip(dataset, assignments):
        f_v = encode_visual(params, pair.visual)
        f_a, _ = encode_audio(params, pair.audio)
        vis_sum[j] += object_feature(f_v, f_a)
        aud_sum[j] += f_a
        counts[j] += 1
    p_v = previous_v.vectors.copy()
    p_a = previous_a.vectors.copy()
    for j in range(k):
        if counts[j]:
            p_v[j] = l2_normalize(vis_sum[j] / counts[j])
            p_a[j] = l2_normalize(aud_sum[j] / counts[j])
        else:
            warnings.warn(f"cluster {j} is empty; keeping previous prototypes")
    return PrototypeBank("visual", p_v), PrototypeBank("audio", p_a)


def single_source_loss(p_a, f_a, y):
    """Mean per-class BCE of remapped prototype similarities, one-hot target."""
    vectors = p_a.vectors if isinstance(p_a, PrototypeBank) else p_a
    sims = vectors @ f_a  # prototypes and f_a are unit norm
    return float(np.mean([
        bce(remap_similarity(float(s)), float(t)) for s, t in zip(sims, y)
    ]))


def single_source_loss_grad(params, p_a, a_latent, y):
    """Loss plus gradients w.r.t. the audio-head parameters."""
    vectors = p_a.vectors if isinstance(p_a, PrototypeBank) else p_a
    a_latent = np.asarray(a_latent, dtype=np.float64)
    f_m = params.w_mid @ a_latent + params.b_mid
    u = params.w_aud @ f_m + params.b_aud
    unorm = np.linalg.norm(u)
    f_a = u / unorm
    sims = vectors @ f_a
    k = len(sims)
    loss = 0.0
    dfa = np.zeros_like(f_a)
    for n in range(k):
        s = float(sims[n])
        t = float(y[n])
        loss += bce(remap_similarity(s), t)
        ds = bce_remap_grad(s, t) / k
        dfa += ds * (vectors[n] - s * f_a)
    grads = zero_grads()
    audio_embedding_backward(params, a_latent, f_m, unorm, f_a, dfa, grads)
    return loss / k, grads
