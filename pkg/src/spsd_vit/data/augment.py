"""Training-time augmentation pipeline.

Per sample, in fixed order: random resized crop, horizontal flip,
colour jitter (brightness, contrast, saturation, hue), random
grayscale, then channel normalization.  Any stage whose strength or
probability is zero is skipped *exactly* — with every knob zeroed and
an identity crop, the output equals the normalized input bit for bit.

Evaluation uses :func:`normalize_only`.
"""

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..imageops import crop_resize, hsv_to_rgb, rgb_to_hsv, to_grayscale


@dataclass(frozen=True)
class AugmentConfig:
    out_size: int = 32
    crop_scale: tuple = (0.7, 1.0)
    crop_ratio: tuple = (3.0 / 4.0, 4.0 / 3.0)
    flip_prob: float = 0.5
    brightness: float = 0.3
    contrast: float = 0.3
    saturation: float = 0.3
    hue: float = 0.05
    grayscale_prob: float = 0.1
    mean: tuple = None  # per-channel; None -> fill from training data
    std: tuple = None

    def __post_init__(self):
        if self.out_size < 1:
            raise ConfigError(f"out_size must be positive, got {self.out_size}")
        lo, hi = self.crop_scale
        if not 0 < lo <= hi <= 1:
            raise ConfigError(f"crop_scale must satisfy 0 < lo <= hi <= 1, got {self.crop_scale}")
        rlo, rhi = self.crop_ratio
        if not 0 < rlo <= rhi:
            raise ConfigError(f"crop_ratio must be positive and ordered, got {self.crop_ratio}")
        for field_name in ("flip_prob", "grayscale_prob"):
            v = getattr(self, field_name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{field_name} must lie in [0, 1], got {v}")
        for field_name in ("brightness", "contrast", "saturation"):
            if getattr(self, field_name) < 0:
                raise ConfigError(f"{field_name} must be non-negative")
        if not 0.0 <= self.hue <= 0.5:
            raise ConfigError(f"hue must lie in [0, 0.5], got {self.hue}")
        if (self.mean is None) != (self.std is None):
            raise ConfigError("mean and std must be provided together")
        if self.std is not None and any(s <= 0 for s in self.std):
            raise ConfigError(f"std components must be positive, got {self.std}")

    def with_stats(self, mean, std):
        from dataclasses import replace

        return replace(self, mean=tuple(float(m) for m in mean),
                       std=tuple(float(s) for s in std))

    @property
    def is_identity_geometry(self):
        return self.crop_scale == (1.0, 1.0) and self.crop_ratio == (1.0, 1.0)


def channel_stats(images):
    """Per-channel (mean, std) over a stack of images."""
    mean = images.reshape(-1, 3).mean(axis=0)
    std = images.reshape(-1, 3).std(axis=0)
    return tuple(float(m) for m in mean), tuple(float(max(s, 1e-6)) for s in std)


def normalize_only(images, config):
    """Channel normalization as applied at evaluation time."""
    mean = np.asarray(config.mean if config.mean is not None else (0.0, 0.0, 0.0),
                      dtype=images.dtype)
    std = np.asarray(config.std if config.std is not None else (1.0, 1.0, 1.0),
                     dtype=images.dtype)
    return (images - mean) / std


def _sample_crop(rng, height, width, config):
    """torchvision-style random resized crop box: try areas/ratios, fall
    back to a centred box."""
    area = height * width
    lo, hi = config.crop_scale
    rlo, rhi = config.crop_ratio
    if config.is_identity_geometry:
        return 0, 0, height, width
    for _ in range(10):
        target = area * rng.uniform(lo, hi)
        ratio = math.exp(rng.uniform(math.log(rlo), math.log(rhi)))
        w = int(round(math.sqrt(target * ratio)))
        h = int(round(math.sqrt(target / ratio)))
        if 0 < w <= width and 0 < h <= height:
            top = int(rng.integers(0, height - h + 1))
            left = int(rng.integers(0, width - w + 1))
            return top, left, h, w
    side = min(height, width)
    return (height - side) // 2, (width - side) // 2, side, side


def augment(image, rng, config):
    """Augment a single (H, W, 3) image; consumes draws from ``rng``."""
    H, W = image.shape[:2]
    out = config.out_size

    top, left, h, w = _sample_crop(rng, H, W, config)
    if (top, left, h, w) == (0, 0, H, W) and out == H == W:
        img = image.copy()
    else:
        img = crop_resize(image, top, left, h, w, out, out)

    if config.flip_prob > 0 and rng.random() < config.flip_prob:
        img = img[:, ::-1]

    if config.brightness > 0:
        img = img * rng.uniform(max(0.0, 1 - config.brightness), 1 + config.brightness)
    if config.contrast > 0:
        factor = rng.uniform(max(0.0, 1 - config.contrast), 1 + config.contrast)
        anchor = to_grayscale(img).mean()
        img = (img - anchor) * factor + anchor
    if config.saturation > 0:
        factor = rng.uniform(max(0.0, 1 - config.saturation), 1 + config.saturation)
        gray = to_grayscale(img)
        img = gray + (img - gray) * factor
    if config.hue > 0:
        shift = rng.uniform(-config.hue, config.hue)
        hsv = rgb_to_hsv(np.clip(img, 0.0, 1.0))
        hsv[..., 0] = (hsv[..., 0] + shift) % 1.0
        img = hsv_to_rgb(hsv)

    if config.grayscale_prob > 0 and rng.random() < config.grayscale_prob:
        img = to_grayscale(img)

    img = np.clip(img, 0.0, 1.0)
    return normalize_only(np.ascontiguousarray(img, dtype=image.dtype), config)


def augment_batch(images, rng, config):
    """Augment a batch; per-sample draws are consumed in batch order."""
    return np.stack([augment(img, rng, config) for img in images])
