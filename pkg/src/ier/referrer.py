"""Cross-modal referring: class-aware AV maps, filters, cross distillation.

The silent-object filter multiplies the audio-conditioned similarity maps
with the class visual maps; the off-screen filter weights per-class audio
similarities by binarized visual mask mass.  Binarized masks act as
constants for gradients (the threshold couples items within a batch).
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .encoders import audio_embedding_backward, zero_grads
from .errors import DomainError
from .identifier import distinguishing_step, expand_features
from .numerics import (
    class_localization_maps,
    kl_divergence,
    softmax,
    softmax_backward,
)

SCORE_FLOOR = 1e-12
DEFAULT_THRESHOLD_MODE = 5
DEFAULT_BATCH = 32


def class_visual_maps(f_v, p_v):
    vectors = p_v.vectors if hasattr(p_v, "vectors") else p_v
    return class_localization_maps(f_v, vectors)


def class_av_maps(f_v, expanded, l_v):
    """L^av_k = l(f_v, F^a_k) * L^v_k, elementwise."""
    audio_maps = class_localization_maps(f_v, expanded)
    if audio_maps.shape != l_v.shape:
        raise DomainError("audio and visual map stacks differ in shape")
    return audio_maps * l_v


def visual_guided_distribution(l_av):
    gaps = l_av.reshape(l_av.shape[0], -1).mean(axis=1)
    return softmax(gaps)


def batch_mean_threshold(batch_maps):
    """Mean over every cell of every class map of every batch item."""
    if not len(batch_maps):
        raise DomainError("empty batch for threshold computation")
    return float(np.mean([np.mean(m) for m in batch_maps]))


def compute_threshold(batch_maps, mode=DEFAULT_THRESHOLD_MODE, ratio=0.5,
                      constant=0.5):
    """Threshold per the five alternatives; mode 4 returns None (no mask)."""
    if mode == 1:
        return constant
    if mode == 2:
        return ratio * float(np.max([np.max(m) for m in batch_maps]))
    if mode == 3:
        return None  # per-item, resolved in mask_weights
    if mode == 4:
        return None
    if mode == 5:
        return batch_mean_threshold(batch_maps)
    raise DomainError(f"threshold mode must be 1..5, got {mode}")


def mask_weights(l_v, epsilon, mode=DEFAULT_THRESHOLD_MODE, ratio=0.5):
    """Per-class visual mass used by the off-screen filter, shape (K,)."""
    if mode == 4:
        return l_v.reshape(l_v.shape[0], -1).mean(axis=1)
    if mode == 3:
        epsilon = ratio * float(l_v.max())
    masks = (l_v > epsilon).astype(np.float64)
    return masks.reshape(masks.shape[0], -1).mean(axis=1)


def binary_masks(l_v, epsilon):
    return (l_v > epsilon).astype(np.float64)


def audio_guided_distribution(p_a, expanded, weights):
    """Eq. 4/5 chain: mask-weighted similarities, normalized, then softmax."""
    vectors = p_a.vectors if hasattr(p_a, "vectors") else p_a
    norms = np.linalg.norm(expanded, axis=1)
    sims = np.einsum("kc,kc->k", vectors, expanded) / np.maximum(norms, 1e-300)
    scores = weights * sims
    total = scores.sum()
    if np.sum(np.abs(scores)) < SCORE_FLOOR:
        warnings.warn("degenerate mask-weighted scores; falling back to raw "
                      "audio similarities")
        return softmax(sims)
    return softmax(scores / total)


def cross_distillation_loss(p_va, p_av):
    return 0.5 * kl_divergence(p_va, p_av) + 0.5 * kl_divergence(p_av, p_va)


# ---------------------------------------------------------------------------
# stage-2 forward / backward


@dataclass
class SceneOutput:
    av_maps: np.ndarray   # (K, H, W)
    l_v: np.ndarray       # (K, H, W)
    p_va: np.ndarray
    p_av: np.ndarray
    expanded: np.ndarray  # (K, C)


def forward_scene(params, step_params, p_v, p_a, scene, weights=None,
                  epsilon=None, threshold_mode=DEFAULT_THRESHOLD_MODE,
                  silent_filter=True, offscreen_filter=True):
    """Full inference pass for one scene.

    ``weights`` (per-class mask mass) may be precomputed from a batch; if
    absent it is derived from ``epsilon`` or, failing that, from the scene's
    own visual maps.
    """
    from .encoders import encode_audio, encode_visual

    f_v = encode_visual(params, scene.visual)
    f_a, f_m = encode_audio(params, scene.audio)
    delta = distinguishing_step(step_params, f_m)
    expanded = expand_features(f_a, delta)
    vectors_v = p_v.vectors if hasattr(p_v, "vectors") else p_v
    l_v = class_localization_maps(f_v, vectors_v)
    audio_maps = class_localization_maps(f_v, expanded)
    av = audio_maps * l_v if silent_filter else audio_maps
    p_va = visual_guided_distribution(av)
    if offscreen_filter:
        if weights is None:
            if epsilon is None:
                epsilon = compute_threshold([l_v], mode=threshold_mode)
            weights = mask_weights(l_v, epsilon, mode=threshold_mode)
        p_av = audio_guided_distribution(p_a, expanded, weights)
    else:
        vectors_a = p_a.vectors if hasattr(p_a, "vectors") else p_a
        norms = np.linalg.norm(expanded, axis=1)
        sims = np.einsum("kc,kc->k", vectors_a, expanded) / np.maximum(
            norms, 1e-300)
        p_av = softmax(sims)
    return SceneOutput(av_maps=av, l_v=l_v, p_va=p_va, p_av=p_av,
                       expanded=expanded)


def stage2_loss_grad(params, step_params, p_v, p_a, scene, weights,
                     silent_filter=True, offscreen_filter=True):
    """Cross-distillation loss and gradients w.r.t. the projections.

    Trainable: visual affine and the audio head's second affine.  The
    mid-level affine, step parameters, prototypes and mask weights are
    treated as constants.
    """
    x_grid = np.asarray(scene.visual, dtype=np.float64)
    a_latent = np.asarray(scene.audio, dtype=np.float64)
    vectors_v = p_v.vectors if hasattr(p_v, "vectors") else p_v
    vectors_a = p_a.vectors if hasattr(p_a, "vectors") else p_a
    h, w = x_grid.shape[:2]
    k = vectors_v.shape[0]

    # forward
    z = np.einsum("oc,hwc->hwo", params.w_vis, x_grid) + params.b_vis
    znorm = np.linalg.norm(z, axis=2)
    dead = znorm == 0.0
    if dead.any():
        z[dead] = 1.0 / np.sqrt(z.shape[2])
        znorm = np.linalg.norm(z, axis=2)
    v = z / znorm[:, :, None]
    f_m = params.w_mid @ a_latent + params.b_mid
    u = params.w_aud @ f_m + params.b_aud
    unorm = np.linalg.norm(u)
    f_a = u / unorm
    delta = distinguishing_step(step_params, f_m)
    feats = expand_features(f_a, delta)
    fnorm = np.linalg.norm(feats, axis=1)
    funit = feats / fnorm[:, None]

    l_v = np.einsum("hwc,kc->khw", v, vectors_v)
    a_maps = np.einsum("hwc,kc->khw", v, funit)
    av = a_maps * l_v if silent_filter else a_maps
    gaps = av.reshape(k, -1).mean(axis=1)
    p_va = softmax(gaps)

    pa_sims = np.einsum("kc,kc->k", vectors_a, funit)
    if offscreen_filter:
        scores = weights * pa_sims
        total = scores.sum()
        degenerate = np.sum(np.abs(scores)) < SCORE_FLOOR
        shat = pa_sims if degenerate else scores / total
    else:
        degenerate = True  # same gradient path as the raw-similarity fallback
        shat = pa_sims
    p_av = softmax(shat)

    loss = cross_distillation_loss(p_va, p_av)

    # backward
    log_ratio = np.log(np.maximum(p_va, 1e-300) / np.maximum(p_av, 1e-300))
    d_pva = 0.5 * (log_ratio + 1.0) - 0.5 * p_av / np.maximum(p_va, 1e-300)
    d_pav = -0.5 * p_va / np.maximum(p_av, 1e-300) + 0.5 * (-log_ratio + 1.0)

    d_gaps = softmax_backward(p_va, d_pva)
    d_av = np.broadcast_to((d_gaps / (h * w))[:, None, None], av.shape)
    if silent_filter:
        d_amaps = d_av * l_v
        d_lv = d_av * a_maps
    else:
        d_amaps = np.array(d_av)
        d_lv = np.zeros_like(l_v)

    d_shat = softmax_backward(p_av, d_pav)
    if degenerate:
        d_pa_sims = d_shat
    else:
        d_scores = (d_shat - np.dot(d_shat, shat)) / total
        d_pa_sims = weights * d_scores

    # audio side: F_k appears in a_maps (via funit), and in pa_sims
    # d funit for pa_sims
    d_funit = d_pa_sims[:, None] * vectors_a
    # d funit from a_maps: a_maps[k,y,x] = v[y,x] . funit[k]
    d_funit += np.einsum("khw,hwc->kc", d_amaps, v)
    # through the normalization funit = feats / |feats|
    d_feats = (d_funit - funit * np.einsum("kc,kc->k", funit, d_funit)[:, None])
    d_feats /= fnorm[:, None]
    dfa = d_feats.sum(axis=0)  # F_k = f_a + const

    # visual side: v appears in a_maps and l_v
    d_v = np.einsum("khw,kc->hwc", d_amaps, funit)
    d_v += np.einsum("khw,kc->hwc", d_lv, vectors_v)
    # project out the unit-norm direction per cell, then the affine
    d_z = (d_v - v * np.einsum("hwc,hwc->hw", v, d_v)[:, :, None])
    d_z /= znorm[:, :, None]
    d_z[dead] = 0.0  # replaced cells are constants

    grads = zero_grads()
    grads["w_vis"] = np.einsum("hwo,hwc->oc", d_z, x_grid)
    grads["b_vis"] = d_z.sum(axis=(0, 1))
    audio_embedding_backward(params, a_latent, f_m, unorm, f_a, dfa, grads,
                             through_mid=False)
    return loss, grads


def train_stage2(params, step_params, p_v, p_a, dataset, epochs, seed,
                 lr=1e-4, batch=DEFAULT_BATCH,
                 threshold_mode=DEFAULT_THRESHOLD_MODE,
                 silent_filter=True, offscreen_filter=True):
    """Adam on the projections, minimizing the cross-distillation loss.

    The mask threshold is recomputed per batch from current parameters;
    prototypes and step parameters stay frozen.
    """
    from .encoders import encode_visual

    params = params.copy()
    trainable = {k: getattr(params, k)
                 for k in ("w_vis", "b_vis", "w_aud", "b_aud")}
    opt = Adam_for(trainable, lr)
    rng = np.random.default_rng(seed)
    n = len(dataset)
    vectors_v = p_v.vectors if hasattr(p_v, "vectors") else p_v
    history = []
    for _epoch in range(epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            batch_lv = [
                class_localization_maps(
                    encode_visual(params, dataset[i].visual), vectors_v)
                for i in idx
            ]
            epsilon = compute_threshold(batch_lv, mode=threshold_mode)
            for pos, i in enumerate(idx):
                weights = mask_weights(batch_lv[pos], epsilon,
                                       mode=threshold_mode)
                loss, grads = stage2_loss_grad(
                    params, step_params, p_v, p_a, dataset[i], weights,
                    silent_filter=silent_filter,
                    offscreen_filter=offscreen_filter)
                step_grads = {k: grads[k] for k in trainable}
                opt.step(trainable, step_grads)
                epoch_loss += loss
        history.append(epoch_loss / n)
    return params, history


def Adam_for(arrays, lr):
    from .encoders import Adam

    return Adam.for_arrays(arrays, lr=lr)


def infer_batch(params, step_params, p_v, p_a, scenes,
                threshold_mode=DEFAULT_THRESHOLD_MODE, batch=DEFAULT_BATCH,
                silent_filter=True, offscreen_filter=True):
    """Deterministic forward pass over scenes, thresholded per batch."""
    from .encoders import encode_visual

    vectors_v = p_v.vectors if hasattr(p_v, "vectors") else p_v
    outputs = []
    for start in range(0, len(scenes), batch):
        chunk = scenes[start : start + batch]
        batch_lv = [
            class_localization_maps(
                encode_visual(params, s.visual), vectors_v)
            for s in chunk
        ]
        epsilon = compute_threshold(batch_lv, mode=threshold_mode)
        for pos, scene in enumerate(chunk):
            weights = mask_weights(batch_lv[pos], epsilon, mode=threshold_mode)
            outputs.append(forward_scene(
                params, step_params, p_v, p_a, scene, weights=weights,
                threshold_mode=threshold_mode, silent_filter=silent_filter,
                offscreen_filter=offscreen_filter))
    return outputs
