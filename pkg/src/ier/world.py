"""Synthetic latent-feature world with exact ground truth.

Scenes live on an H x W grid of C_in-dim visual latents; audio is a
volume-weighted sum of per-class audio latents plus Gaussian noise,
re-normalized.  Single-source scenes hold one sounding object; the
unconstrained construction places four objects (two sounding, two silent)
and mixes in one off-screen sounding class.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError
from .numerics import l2_normalize

DEFAULT_GRID = 14
BOX_MIN = 3
BOX_MAX = 6
MAX_TABLE_TRIES = 10_000
MAX_BOX_TRIES = 1_000


@dataclass
class ClassTable:
    visual: np.ndarray  # (K_true, C_in), unit rows
    audio: np.ndarray   # (K_true, A_in), unit rows

    @property
    def n_classes(self):
        return self.visual.shape[0]


@dataclass
class SceneObject:
    class_id: int
    box: tuple  # (y0, x0, y1, x1) inclusive grid-cell bounds
    sounding: bool
    volume: float


@dataclass
class ScenePair:
    visual: np.ndarray        # (H, W, C_in)
    audio: np.ndarray         # (A_in,), unit norm
    labels: np.ndarray        # multi-hot over K_true, sounding on-screen
    objects: list = field(default_factory=list)
    offscreen: list = field(default_factory=list)  # [(class_id, volume)]

    def boxes_for(self, class_id):
        return [o.box for o in self.objects if o.class_id == class_id]


def make_class_table(k_true, c_in, a_in, seed, max_cos=0.2):
    """Rejection-sample unit latents with pairwise cosine <= max_cos."""
    rng = np.random.default_rng(seed)

    def draw_bank(dim):
        rows = []
        tries = 0
        while len(rows) < k_true:
            v = l2_normalize(rng.standard_normal(dim))
            if all(np.dot(v, r) <= max_cos for r in rows):
                rows.append(v)
            else:
                tries += 1
                if tries > MAX_TABLE_TRIES:
                    raise ConfigurationError(
                        f"cannot place {k_true} latents with pairwise cosine "
                        f"<= {max_cos} in {dim} dims"
                    )
        return np.stack(rows)

    return ClassTable(visual=draw_bank(c_in), audio=draw_bank(a_in))


def mix_audio_latents(entries, sigma, rng=None):
    """Unit-normalized volume-weighted sum plus N(0, sigma^2) noise."""
    if not entries:
        raise DomainError("cannot mix an empty list of audio latents")
    total = np.zeros_like(np.asarray(entries[0][0], dtype=np.float64))
    for latent, volume in entries:
        total = total + volume * np.asarray(latent, dtype=np.float64)
    if sigma > 0.0:
        if rng is None:
            rng = np.random.default_rng(0)
        total = total + sigma * rng.standard_normal(total.shape)
    if np.linalg.norm(total) == 0.0:
        raise DomainError("audio mixture summed to zero")
    return l2_normalize(total)


def _random_box(rng, grid_h, grid_w):
    bh = int(rng.integers(BOX_MIN, BOX_MAX + 1))
    bw = int(rng.integers(BOX_MIN, BOX_MAX + 1))
    y0 = int(rng.integers(0, grid_h - bh + 1))
    x0 = int(rng.integers(0, grid_w - bw + 1))
    return (y0, x0, y0 + bh - 1, x0 + bw - 1)


def _overlaps(a, b):
    return not (a[2] < b[0] or b[2] < a[0] or a[3] < b[1] or b[3] < a[1])


def _paint(rng, table, objects, grid_h, grid_w, sigma):
    c_in = table.visual.shape[1]
    grid = sigma * rng.standard_normal((grid_h, grid_w, c_in))
    for obj in objects:
        y0, x0, y1, x1 = obj.box
        cell = table.visual[obj.class_id]
        noise = sigma * rng.standard_normal((y1 - y0 + 1, x1 - x0 + 1, c_in))
        grid[y0 : y1 + 1, x0 : x1 + 1] = cell[None, None, :] + noise
    return grid


def synthesize_single_source(table, seed, sigma=0.1, grid_h=DEFAULT_GRID,
                             grid_w=DEFAULT_GRID):
    rng = np.random.default_rng(seed)
    cls = int(rng.integers(table.n_classes))
    obj = SceneObject(class_id=cls, box=_random_box(rng, grid_h, grid_w),
                      sounding=True, volume=1.0)
    grid = _paint(rng, table, [obj], grid_h, grid_w, sigma)
    audio = mix_audio_latents([(table.audio[cls], 1.0)], sigma, rng)
    labels = np.zeros(table.n_classes)
    labels[cls] = 1.0
    return ScenePair(visual=grid, audio=audio, labels=labels, objects=[obj])


def synthesize_unconstrained(table, seed, sigma=0.1, volume_ratio_max=10.0,
                             grid_h=DEFAULT_GRID, grid_w=DEFAULT_GRID):
    """Four on-screen objects (two sounding, two silent) + one off-screen mix."""
    if table.n_classes < 5:
        raise ConfigurationError(
            "unconstrained scenes need at least 5 classes "
            f"(got {table.n_classes})"
        )
    rng = np.random.default_rng(seed)
    on_screen = rng.choice(table.n_classes, size=4, replace=False)
    sounding_ids = on_screen[:2]
    rest = [c for c in range(table.n_classes) if c not in on_screen]
    off_id = int(rng.choice(rest))

    boxes = []
    for _ in range(4):
        for attempt in range(MAX_BOX_TRIES + 1):
            if attempt == MAX_BOX_TRIES:
                raise ConfigurationError("cannot place non-overlapping boxes")
            box = _random_box(rng, grid_h, grid_w)
            if not any(_overlaps(box, b) for b in boxes):
                boxes.append(box)
                break

    def log_uniform_volume():
        lo = np.log(1.0 / volume_ratio_max)
        return float(np.exp(rng.uniform(lo, 0.0)))

    objects = []
    entries = []
    for i, cls in enumerate(on_screen):
        sounding = i < 2
        vol = log_uniform_volume() if sounding else 0.0
        objects.append(SceneObject(class_id=int(cls), box=boxes[i],
                                   sounding=sounding, volume=vol))
        if sounding:
            entries.append((table.audio[cls], vol))
    off_vol = log_uniform_volume()
    entries.append((table.audio[off_id], off_vol))

    grid = _paint(rng, table, objects, grid_h, grid_w, sigma)
    audio = mix_audio_latents(entries, sigma, rng)
    labels = np.zeros(table.n_classes)
    labels[sounding_ids] = 1.0
    return ScenePair(visual=grid, audio=audio, labels=labels, objects=objects,
                     offscreen=[(off_id, off_vol)])
