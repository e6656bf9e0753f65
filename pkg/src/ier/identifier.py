"""Audio-instance identification: per-class steps, mixed loss, curriculum."""

from dataclasses import dataclass

import numpy as np

from .encoders import Adam, encode_audio
from .errors import ConfigurationError, DomainError
from .numerics import bce, bce_remap_grad, remap_similarity
from .prototypes import recompute_prototypes, single_source_loss_grad
from .world import mix_audio_latents


@dataclass
class StepParams:
    weights: np.ndarray  # (K, C, C_m)
    biases: np.ndarray   # (K, C)

    @property
    def k(self):
        return self.weights.shape[0]

    def copy(self):
        return StepParams(self.weights.copy(), self.biases.copy())


@dataclass
class CurriculumState:
    epoch: int
    mix_probability: float
    mixture_order: int


def init_step_params(k, c, c_m, scale=0.0):
    if scale == 0.0:
        return StepParams(np.zeros((k, c, c_m)), np.zeros((k, c)))
    rng = np.random.default_rng(0)
    return StepParams(rng.standard_normal((k, c, c_m)) * scale,
                      np.zeros((k, c)))


def distinguishing_step(step_params, f_m):
    """Row n = W_n @ f_m + b_n, shape (K, C)."""
    f_m = np.asarray(f_m, dtype=np.float64)
    if step_params.weights.shape[2] != f_m.shape[0]:
        raise DomainError("mid-level feature dimension mismatch")
    return np.einsum("kcm,m->kc", step_params.weights, f_m) + step_params.biases


def expand_features(f_a, delta):
    """F_k = f_a + delta_k, no re-normalization."""
    return np.asarray(f_a, dtype=np.float64)[None, :] + delta


def mixed_loss(p_a, f_a, delta, y):
    vectors = p_a.vectors if hasattr(p_a, "vectors") else p_a
    feats = expand_features(f_a, delta)
    norms = np.linalg.norm(feats, axis=1)
    if np.any(norms == 0.0):
        raise DomainError("expanded audio feature collapsed to zero")
    sims = np.einsum("kc,kc->k", vectors, feats) / norms
    k = len(sims)
    return float(sum(
        bce(remap_similarity(float(s)), float(t)) for s, t in zip(sims, y)
    ) / k)


def mixed_loss_grad(p_a, f_a, f_m, step_params, y):
    """Loss plus gradients w.r.t. the step weights and biases."""
    vectors = p_a.vectors if hasattr(p_a, "vectors") else p_a
    f_m = np.asarray(f_m, dtype=np.float64)
    delta = distinguishing_step(step_params, f_m)
    feats = expand_features(f_a, delta)
    norms = np.linalg.norm(feats, axis=1)
    if np.any(norms == 0.0):
        raise DomainError("expanded audio feature collapsed to zero")
    unit = feats / norms[:, None]
    sims = np.einsum("kc,kc->k", vectors, unit)
    k = len(sims)
    loss = 0.0
    d_feats = np.empty_like(feats)
    for n in range(k):
        s = float(sims[n])
        t = float(y[n])
        loss += bce(remap_similarity(s), t)
        ds = bce_remap_grad(s, t) / k
        d_feats[n] = ds * (vectors[n] - s * unit[n]) / norms[n]
    grads = {
        "weights": np.einsum("kc,m->kcm", d_feats, f_m),
        "biases": d_feats,
    }
    return loss / k, grads


def curriculum_schedule(epoch, total_epochs):
    """Mix probability 0.5 -> 0.9 linearly; order 2/3/4 over thirds."""
    if total_epochs < 1:
        raise DomainError("total_epochs must be >= 1")
    if total_epochs == 1:
        p = 0.5
    else:
        p = 0.5 + 0.4 * epoch / (total_epochs - 1)
    frac = epoch / max(total_epochs - 1, 1)
    if total_epochs == 1 or frac < 1.0 / 3.0:
        m = 2
    elif frac < 2.0 / 3.0:
        m = 3
    else:
        m = 4
    return CurriculumState(epoch=epoch, mix_probability=p, mixture_order=m)


def make_mixture(dataset, assignments, order, rng, k=None, volume_lo=0.1):
    """Mix ``order`` single sources of pairwise distinct pseudo-classes.

    Returns (mixed latent, multi-hot pseudo-label of length ``k``).
    """
    if k is None:
        k = int(np.max(assignments)) + 1
    classes = np.unique(assignments)
    if len(classes) < order:
        raise ConfigurationError(
            f"need {order} distinct pseudo-classes, have {len(classes)}"
        )
    chosen = []
    used = set()
    n = len(dataset)
    while len(chosen) < order:
        i = int(rng.integers(n))
        if int(assignments[i]) in used:
            continue
        used.add(int(assignments[i]))
        chosen.append(i)
    entries = []
    y = np.zeros(k)
    for i in chosen:
        vol = float(np.exp(rng.uniform(np.log(volume_lo), 0.0)))
        entries.append((dataset[i].audio, vol))
        y[int(assignments[i])] = 1.0
    mixed = mix_audio_latents(entries, 0.0)
    return mixed, y


def one_hot(idx, k):
    y = np.zeros(k)
    y[idx] = 1.0
    return y


def train_identifier(params, step_params, dataset, assignments, p_v, p_a,
                     epochs, seed, lr=1e-4, train_audio=False):
    """Curriculum training of the distinguishing-steps.

    Per item: with the scheduled probability draw a mixture and step on the
    mixed loss, otherwise a single source and (when ``train_audio``) step the
    audio head on the single-source loss.  Prototypes are recomputed from
    fresh features at the start of each epoch under frozen assignments.
    """
    step_params = step_params.copy()
    params = params.copy()
    rng = np.random.default_rng(seed)
    n = len(dataset)
    k = p_a.k
    step_arrays = {"weights": step_params.weights, "biases": step_params.biases}
    step_opt = Adam.for_arrays(step_arrays, lr=lr)
    audio_opt = Adam.for_arrays(params.as_dict(), lr=lr) if train_audio else None
    history = []
    for epoch in range(epochs):
        if train_audio or epoch == 0:
            # with a frozen audio head the features (and hence the banks)
            # cannot change, so the per-epoch refresh is skipped after once
            p_v, p_a = recompute_prototypes(params, dataset, assignments,
                                            p_v, p_a)
        state = curriculum_schedule(epoch, epochs)
        order_idx = rng.permutation(n)
        epoch_loss = 0.0
        for i in order_idx:
            if rng.random() < state.mix_probability:
                mixed, y = make_mixture(dataset, assignments,
                                        state.mixture_order, rng, k=k)
                f_a, f_m = encode_audio(params, mixed)
                loss, grads = mixed_loss_grad(p_a, f_a, f_m, step_params, y)
                step_opt.step(step_arrays, grads)
            else:
                y = one_hot(int(assignments[i]), k)
                loss, grads = single_source_loss_grad(
                    params, p_a, dataset[i].audio, y)
                if train_audio:
                    audio_opt.step(params.as_dict(), grads)
            epoch_loss += loss
        history.append((epoch_loss / n, state.mix_probability,
                        state.mixture_order))
    return step_params, params, p_v, p_a, history


def class_scores(p_a, f_a, delta):
    """Remapped per-class similarities of the expanded features, in [0, 1]."""
    vectors = p_a.vectors if hasattr(p_a, "vectors") else p_a
    feats = expand_features(f_a, delta)
    norms = np.linalg.norm(feats, axis=1)
    sims = np.einsum("kc,kc->k", vectors, feats) / np.maximum(norms, 1e-12)
    return (sims + 1.0) / 2.0
