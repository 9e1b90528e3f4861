"""Small vectorised image primitives shared by the data pipeline and the
attention-heatmap renderer.  Images are float arrays, channel-last,
values nominally in [0, 1]."""

import numpy as np
from matplotlib import colors as _mcolors

LUMA = np.array([0.299, 0.587, 0.114])


def bilinear_sample(image, ys, xs):
    """Sample ``image`` (H, W[, C]) at fractional coordinates with edge clamp.

    ``ys``/``xs`` are broadcastable float arrays of row/column positions in
    pixel units; the result has their shape (plus the channel axis).
    """
    H, W = image.shape[:2]
    ys = np.clip(ys, 0.0, H - 1.0)
    xs = np.clip(xs, 0.0, W - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    wy = ys - y0
    wx = xs - x0
    if image.ndim == 3:
        wy = wy[..., None]
        wx = wx[..., None]
    top = image[y0, x0] * (1 - wx) + image[y0, x1] * wx
    bot = image[y1, x0] * (1 - wx) + image[y1, x1] * wx
    return top * (1 - wy) + bot * wy


def _grid(out_h, out_w, src_h, src_w, top=0.0, left=0.0):
    # half-pixel-centre convention, matching common resize implementations
    ys = (np.arange(out_h) + 0.5) * (src_h / out_h) - 0.5 + top
    xs = (np.arange(out_w) + 0.5) * (src_w / out_w) - 0.5 + left
    return ys[:, None], xs[None, :]


def bilinear_resize(image, out_h, out_w):
    """Resize (H, W[, C]) to (out_h, out_w[, C])."""
    H, W = image.shape[:2]
    if (H, W) == (out_h, out_w):
        return image.copy()
    ys, xs = _grid(out_h, out_w, H, W)
    return bilinear_sample(image, ys, xs)


def crop_resize(image, top, left, height, width, out_h, out_w):
    """Crop a (possibly fractional) box and resize it to (out_h, out_w).

    An identity box over the whole image with matching output size
    returns the input exactly (no resampling arithmetic).
    """
    H, W = image.shape[:2]
    if (top, left, height, width) == (0, 0, H, W) and (out_h, out_w) == (H, W):
        return image.copy()
    ys, xs = _grid(out_h, out_w, height, width, top=float(top), left=float(left))
    return bilinear_sample(image, ys, xs)


def to_grayscale(image):
    """ITU-R BT.601 luma, replicated over the three channels."""
    luma = image @ LUMA.astype(image.dtype)
    return np.repeat(luma[..., None], 3, axis=-1)


def rgb_to_hsv(image):
    return _mcolors.rgb_to_hsv(image)


def hsv_to_rgb(image):
    return _mcolors.hsv_to_rgb(image)


def minmax_normalize(x):
    """Affinely map to [0, 1]; a constant array maps to all zeros."""
    lo = float(x.min())
    hi = float(x.max())
    if hi - lo <= 0:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)
