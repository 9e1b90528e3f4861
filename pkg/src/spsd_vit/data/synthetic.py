"""Synthetic domain-shift image generator.

Every image carries three kinds of signal:

* an *invariant* feature that determines the label: ``label + 1`` bright
  blobs scattered on a dark central disc;
* a *domain style*: background tint, a procedural value-noise texture
  whose character is fixed per domain by ``texture_seed``, gaussian
  blur, and an exposure gain;
* a *spurious cue*: a small square in the top-left corner drawn in a
  class-keyed colour.  With probability ``cue_prob`` the cue colour
  matches the true label, otherwise it is uniform over the *other*
  classes — at ``cue_prob = 1/num_classes`` the cue is exactly
  independent of the label.

Generation is a pure function of ``(specs, seed)``: every per-sample
random draw comes from ``SeedSequence([seed, domain_id, index])``.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..errors import ConfigError
from .dataset import DomainDataset

CUE_PALETTE = np.array(
    [
        [0.90, 0.10, 0.10],  # red
        [0.10, 0.80, 0.15],  # green
        [0.15, 0.25, 0.90],  # blue
        [0.95, 0.85, 0.10],  # yellow
        [0.85, 0.15, 0.80],  # magenta
        [0.10, 0.80, 0.80],  # cyan
        [0.95, 0.55, 0.10],  # orange
        [0.95, 0.95, 0.95],  # white
    ]
)

BLOB_COLOR = np.array([0.98, 0.93, 0.72])
CUE_OFFSET = 1  # top-left corner, rows/cols [1, 6)
CUE_SIZE = 5
# cue opacity: full palette colour would dominate learning so quickly that
# the shape signal never gets picked up; a blend keeps the hue readable
# while leaving the count feature competitive
CUE_BLEND = 0.65
BLOB_RADIUS = (2.2, 2.9)
BLOB_MIN_DIST = 5.5


@dataclass(frozen=True)
class SyntheticDomainSpec:
    """Style and cue parameters of one synthetic domain."""

    domain_id: int
    tint: tuple = (0.5, 0.5, 0.5)
    texture_seed: int = 0
    texture_strength: float = 0.12
    blur_sigma: float = 0.6
    exposure: float = 1.0
    cue_prob: float = 0.9
    name: str = ""

    def __post_init__(self):
        if self.domain_id < 0:
            raise ConfigError(f"domain_id must be non-negative, got {self.domain_id}")
        if len(self.tint) != 3 or not all(0.0 <= t <= 1.0 for t in self.tint):
            raise ConfigError(f"tint must be three values in [0, 1], got {self.tint}")
        if not 0.0 <= self.cue_prob <= 1.0:
            raise ConfigError(f"cue_prob must lie in [0, 1], got {self.cue_prob}")
        if self.blur_sigma < 0:
            raise ConfigError(f"blur_sigma must be non-negative, got {self.blur_sigma}")
        if self.exposure <= 0:
            raise ConfigError(f"exposure must be positive, got {self.exposure}")
        if not self.name:
            object.__setattr__(self, "name", f"domain{self.domain_id}")


def _texture_basis(spec):
    """Per-domain texture character: grid resolution and channel mix."""
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([int(spec.texture_seed), 7]))
    )
    grid = 3 + int(spec.texture_seed) % 4
    mix = rng.normal(size=3)
    mix /= np.abs(mix).max()
    return grid, mix


def _upsample(field, size):
    # nearest-grid bilinear blow-up of a coarse noise field
    g = field.shape[0]
    ys = np.linspace(0, g - 1, size)
    xs = np.linspace(0, g - 1, size)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, g - 1)
    x1 = np.minimum(x0 + 1, g - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = field[np.ix_(y0, x0)] * (1 - wx) + field[np.ix_(y0, x1)] * wx
    bot = field[np.ix_(y1, x0)] * (1 - wx) + field[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def _render_sample(rng, label, spec, size, grid, mix, num_classes):
    tint = np.asarray(spec.tint)

    # domain background: tint + textured value noise
    field = _upsample(rng.uniform(-1.0, 1.0, size=(grid, grid)), size)
    img = np.clip(tint + spec.texture_strength * field[:, :, None] * mix, 0.0, 1.0)

    # dark central disc (the stage for the invariant feature)
    yy, xx = np.mgrid[0:size, 0:size]
    center = (size - 1) / 2.0
    dist = np.sqrt((yy - center) ** 2 + (xx - center) ** 2)
    disc_r = 0.42 * size
    alpha = np.clip(disc_r - dist, 0.0, 1.0)[:, :, None]
    disc_base = 0.16 + 0.12 * tint
    img = img * (1 - alpha) + (0.25 * img + 0.75 * disc_base) * alpha

    # label + 1 bright blobs, rejection-placed to stay apart
    n_blobs = int(label) + 1
    centers = []
    for _ in range(n_blobs):
        for _attempt in range(30):
            ang = rng.uniform(0, 2 * np.pi)
            rad = disc_r * 0.78 * np.sqrt(rng.uniform())
            cy, cx = center + rad * np.sin(ang), center + rad * np.cos(ang)
            if all((cy - oy) ** 2 + (cx - ox) ** 2 > BLOB_MIN_DIST ** 2
                   for oy, ox in centers):
                break
        centers.append((cy, cx))
    for cy, cx in centers:
        r_blob = rng.uniform(*BLOB_RADIUS)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (0.55 * r_blob ** 2))
        img = img + blob[:, :, None] * (BLOB_COLOR - img) * 0.95

    # spurious corner cue
    agree = rng.random() < spec.cue_prob
    if agree:
        cue_class = int(label)
    else:
        other = int(rng.integers(num_classes - 1))
        cue_class = other + (other >= int(label))
    sl = slice(CUE_OFFSET, CUE_OFFSET + CUE_SIZE)
    img[sl, sl] = (1 - CUE_BLEND) * img[sl, sl] + CUE_BLEND * CUE_PALETTE[cue_class]

    # domain post-processing: blur, exposure, sensor noise
    if spec.blur_sigma > 0:
        img = ndimage.gaussian_filter(img, sigma=(spec.blur_sigma, spec.blur_sigma, 0))
    img = img * spec.exposure
    img = img + rng.normal(0.0, 0.01, size=img.shape)
    return np.clip(img, 0.0, 1.0), cue_class


def generate_synthetic(specs, per_domain, num_classes, image_size=32, seed=0,
                       return_cues=False):
    """Render ``per_domain`` images for every domain spec.

    Labels cycle ``0, 1, ..., num_classes - 1`` so classes are balanced
    up to rounding.  Byte-identical output for identical arguments.
    """
    specs = list(specs)
    if not specs:
        raise ConfigError("at least one domain spec is required")
    ids = [s.domain_id for s in specs]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"duplicate domain_ids in specs: {sorted(ids)}")
    if num_classes < 2:
        raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
    if num_classes > len(CUE_PALETTE):
        raise ConfigError(
            f"the cue palette supports at most {len(CUE_PALETTE)} classes, "
            f"got {num_classes}"
        )
    if 0 < per_domain < num_classes:
        raise ConfigError(
            f"per_domain must be 0 or >= num_classes ({num_classes}), got {per_domain}"
        )
    if image_size < 16:
        raise ConfigError(f"image_size must be >= 16, got {image_size}")

    images, labels, domain_ids, cues = [], [], [], []
    for spec in specs:
        grid, mix = _texture_basis(spec)
        for k in range(per_domain):
            label = k % num_classes
            rng = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence([seed, spec.domain_id, k]))
            )
            img, cue = _render_sample(
                rng, label, spec, image_size, grid, mix, num_classes
            )
            images.append(img.astype(np.float32))
            labels.append(label)
            domain_ids.append(spec.domain_id)
            cues.append(cue)

    shape = (len(images), image_size, image_size, 3)
    dataset = DomainDataset(
        images=np.array(images, dtype=np.float32).reshape(shape),
        labels=np.array(labels, dtype=np.int64),
        domain_ids=np.array(domain_ids, dtype=np.int64),
        num_classes=num_classes,
    )
    if return_cues:
        return dataset, np.array(cues, dtype=np.int64)
    return dataset
