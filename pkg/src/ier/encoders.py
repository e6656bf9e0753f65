"""Reference affine encoders, the correspondence loss and its gradients.

The visual encoder is a single per-cell affine map followed by L2
normalization; the audio encoder is two affine stages, the first emitting
the mid-level feature and the second (after L2 normalization) the shared
embedding.  Gradients are hand-derived and checked against central finite
differences.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError
from .numerics import (
    bce,
    bce_remap_grad,
    remap_similarity,
)

TRAINABLE_KEYS = ("w_vis", "b_vis", "w_mid", "b_mid", "w_aud", "b_aud")


@dataclass
class EncoderParams:
    w_vis: np.ndarray  # (C, C_in)
    b_vis: np.ndarray  # (C,)
    w_mid: np.ndarray  # (C_m, A_in)
    b_mid: np.ndarray  # (C_m,)
    w_aud: np.ndarray  # (C, C_m)
    b_aud: np.ndarray  # (C,)

    def copy(self):
        return EncoderParams(**{k: getattr(self, k).copy()
                                for k in TRAINABLE_KEYS})

    def as_dict(self):
        return {k: getattr(self, k) for k in TRAINABLE_KEYS}


def init_params(c_in, a_in, c, c_m, seed):
    rng = np.random.default_rng(seed)
    scale_v = 1.0 / np.sqrt(c_in)
    scale_m = 1.0 / np.sqrt(a_in)
    scale_a = 1.0 / np.sqrt(c_m)
    return EncoderParams(
        w_vis=rng.standard_normal((c, c_in)) * scale_v,
        b_vis=np.zeros(c),
        w_mid=rng.standard_normal((c_m, a_in)) * scale_m,
        b_mid=np.zeros(c_m),
        w_aud=rng.standard_normal((c, c_m)) * scale_a,
        b_aud=np.zeros(c),
    )


def encode_visual(params, grid):
    """Per-cell affine then per-cell L2 norm; returns (H, W, C) unit cells."""
    grid = np.asarray(grid, dtype=np.float64)
    z = np.einsum("oc,hwc->hwo", params.w_vis, grid) + params.b_vis
    norms = np.linalg.norm(z, axis=2)
    dead = norms == 0.0
    if dead.any():
        warnings.warn("zero-norm visual cell replaced by uniform unit vector")
        c = z.shape[2]
        z[dead] = 1.0 / np.sqrt(c)
        norms = np.linalg.norm(z, axis=2)
    return z / norms[:, :, None]


def encode_audio(params, latent):
    """Returns (f_a unit embedding, f_m mid-level feature)."""
    latent = np.asarray(latent, dtype=np.float64)
    f_m = params.w_mid @ latent + params.b_mid
    u = params.w_aud @ f_m + params.b_aud
    n = np.linalg.norm(u)
    if n == 0.0:
        raise DomainError("audio embedding collapsed to the zero vector")
    return u / n, f_m


def correspondence_loss(f_a, f_v, delta):
    """bce(remap(GMP(localization map)), delta) on already-encoded features."""
    sims = np.einsum("hwc,c->hw", f_v, f_a)
    return bce(remap_similarity(float(sims.max())), delta)


def zero_grads():
    return {k: None for k in TRAINABLE_KEYS}


def _accumulate(grads, key, value):
    if grads[key] is None:
        grads[key] = value
    else:
        grads[key] += value


def correspondence_loss_grad(params, x_grid, a_latent, delta):
    """Loss of Eq-style GMP correspondence plus gradients w.r.t. all params."""
    x_grid = np.asarray(x_grid, dtype=np.float64)
    a_latent = np.asarray(a_latent, dtype=np.float64)
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
    sims = np.einsum("hwc,c->hw", v, f_a)
    iy, ix = np.unravel_index(np.argmax(sims), sims.shape)
    s = float(sims[iy, ix])
    loss = bce(remap_similarity(s), delta)
    # backward (through the argmax cell only)
    ds = bce_remap_grad(s, delta)
    v_star = v[iy, ix]
    dv = ds * (f_a - s * v_star)
    dfa = ds * (v_star - s * f_a)
    dz = (dv - v_star * np.dot(v_star, dv)) / znorm[iy, ix]
    if dead[iy, ix]:
        dz = np.zeros_like(dz)  # replaced cell is a constant
    du = (dfa - f_a * np.dot(f_a, dfa)) / unorm
    dfm = params.w_aud.T @ du
    grads = zero_grads()
    _accumulate(grads, "w_vis", np.outer(dz, x_grid[iy, ix]))
    _accumulate(grads, "b_vis", dz)
    _accumulate(grads, "w_aud", np.outer(du, f_m))
    _accumulate(grads, "b_aud", du)
    _accumulate(grads, "w_mid", np.outer(dfm, a_latent))
    _accumulate(grads, "b_mid", dfm)
    return loss, grads


def audio_embedding_backward(params, a_latent, f_m, u_norm, f_a, dfa, grads,
                             through_mid=True):
    """Backprop dfa through the audio head into grads (in place)."""
    du = (dfa - f_a * np.dot(f_a, dfa)) / u_norm
    _accumulate(grads, "w_aud", np.outer(du, f_m))
    _accumulate(grads, "b_aud", du)
    if through_mid:
        dfm = params.w_aud.T @ du
        _accumulate(grads, "w_mid", np.outer(dfm, a_latent))
        _accumulate(grads, "b_mid", dfm)


class Adam:
    """Per-array Adam with the usual bias correction."""

    def __init__(self, shapes, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}

    @classmethod
    def for_arrays(cls, arrays, lr=1e-4):
        return cls({k: a.shape for k, a in arrays.items()}, lr=lr)

    def step(self, arrays, grads):
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            if g is None:
                continue
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            mhat = self.m[k] / b1t
            vhat = self.v[k] / b2t
            arrays[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def train_stage1(params, dataset, epochs, batch, seed, lr=1e-4):
    """Contrastive correspondence training on single-source pairs.

    Each pair contributes one positive term and one negative term with a
    uniformly drawn mismatched visual grid; Adam steps once per pair.
    """
    if not dataset:
        raise ConfigurationError("stage-1 training needs a nonempty dataset")
    if batch < 2:
        raise ConfigurationError("batch size < 2 leaves no negative sample")
    params = params.copy()
    arrays = params.as_dict()
    opt = Adam.for_arrays(arrays, lr=lr)
    rng = np.random.default_rng(seed)
    n = len(dataset)
    history = []
    for _epoch in range(epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for i in order:
            j = int(rng.integers(n - 1))
            if j >= i:
                j += 1
            pos_loss, pos_g = correspondence_loss_grad(
                params, dataset[i].visual, dataset[i].audio, 1.0)
            neg_loss, neg_g = correspondence_loss_grad(
                params, dataset[j].visual, dataset[i].audio, 0.0)
            grads = zero_grads()
            for key in TRAINABLE_KEYS:
                for g in (pos_g, neg_g):
                    if g[key] is not None:
                        _accumulate(grads, key, g[key])
            opt.step(arrays, grads)
            epoch_loss += pos_loss + neg_loss
        history.append(epoch_loss / (2 * n))
    return params, history


def flatten_params(arrays):
    keys = sorted(arrays)
    vec = np.concatenate([arrays[k].ravel() for k in keys])
    return vec, keys


def unflatten_params(vec, keys, shapes):
    out = {}
    pos = 0
    for k in keys:
        size = int(np.prod(shapes[k]))
        out[k] = vec[pos : pos + size].reshape(shapes[k])
        pos += size
    return out


def grad_check(loss_fn, arrays, tolerance=1e-3, h=1e-4, n_coords=60, seed=0):
    """Central finite differences against the analytic gradient.

    ``loss_fn(arrays)`` must return ``(loss, grads)`` with grads keyed like
    ``arrays``.  A random subset of coordinates is probed; the report holds
    the max relative error over that subset.
    """
    _, grads = loss_fn(arrays)
    shapes = {k: a.shape for k, a in arrays.items()}
    vec, keys = flatten_params(arrays)
    gvec = np.concatenate([
        (grads[k] if grads[k] is not None else np.zeros(shapes[k])).ravel()
        for k in keys
    ])
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(vec), size=min(n_coords, len(vec)), replace=False)
    max_rel = 0.0
    worst = None
    for i in idx:
        for sign in (+1.0, -1.0):
            pert = vec.copy()
            pert[i] += sign * h
            loss_p, _ = loss_fn(unflatten_params(pert, keys, shapes))
            if sign > 0:
                lp = loss_p
            else:
                lm = loss_p
        numeric = (lp - lm) / (2.0 * h)
        denom = max(abs(numeric), abs(gvec[i]), 1e-8)
        rel = abs(numeric - gvec[i]) / denom
        if rel > max_rel:
            max_rel = rel
            worst = int(i)
    return {
        "max_rel_error": max_rel,
        "worst_coordinate": worst,
        "n_checked": len(idx),
        "passed": max_rel < tolerance,
    }
