"""Accuracy, calibration, and attention diagnostics.

Calibration metrics use equal-width confidence bins over [0, 1].  A
confidence of exactly 1.0 falls in the top bin; empty bins contribute
zero.  :class:`CalibrationReport` stores per-bin statistics from which
the scalar metrics are exactly recomputable.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .imageops import bilinear_resize, minmax_normalize


def top1_accuracy(logits, labels):
    """Fraction of rows whose arg-max matches the label.

    Ties resolve to the lowest class index (numpy argmax order).
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ShapeError(
            f"logits {logits.shape} and labels {labels.shape} do not align"
        )
    if logits.shape[0] == 0:
        raise ValueError("top1_accuracy of zero samples is undefined")
    return float((logits.argmax(axis=1) == labels).mean())


def _bin_index(confidences, num_bins):
    idx = np.floor(confidences * num_bins).astype(np.intp)
    return np.minimum(idx, num_bins - 1)  # confidence 1.0 -> top bin


@dataclass(frozen=True)
class BinStats:
    count: int
    mean_confidence: float
    mean_accuracy: float


def _bin_stats(confidences, correct, num_bins):
    idx = _bin_index(confidences, num_bins)
    stats = []
    for b in range(num_bins):
        mask = idx == b
        n = int(mask.sum())
        if n == 0:
            stats.append(BinStats(0, 0.0, 0.0))
        else:
            stats.append(
                BinStats(n, float(confidences[mask].mean()), float(correct[mask].mean()))
            )
    return stats


def _expected_error(stats, total):
    err = 0.0
    for s in stats:
        if s.count:
            err += (s.count / total) * abs(s.mean_accuracy - s.mean_confidence)
    return err


def _check_probs(values, name):
    if values.size and (values.min() < 0.0 or values.max() > 1.0):
        raise ValueError(
            f"{name} must lie in [0, 1], got range [{values.min()}, {values.max()}]"
        )


def ece(confidences, correct, num_bins=15):
    """Expected calibration error of top-1 confidences."""
    confidences = np.asarray(confidences, dtype=np.float64)
    correct = np.asarray(correct, dtype=np.float64)
    if confidences.ndim != 1 or confidences.shape != correct.shape:
        raise ShapeError("confidences and correct must be equal-length 1-D arrays")
    if confidences.size == 0:
        raise ValueError("ece of zero samples is undefined")
    if num_bins < 1:
        raise ValueError(f"num_bins must be >= 1, got {num_bins}")
    _check_probs(confidences, "confidences")
    return _expected_error(_bin_stats(confidences, correct, num_bins), confidences.size)


def sce(probs, labels, num_bins=15):
    """Static calibration error: class-conditional binning, averaged over classes."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    _validate_prob_matrix(probs, labels)
    if num_bins < 1:
        raise ValueError(f"num_bins must be >= 1, got {num_bins}")
    n, C = probs.shape
    total = 0.0
    for c in range(C):
        stats = _bin_stats(probs[:, c], (labels == c).astype(np.float64), num_bins)
        total += _expected_error(stats, n)
    return total / C


def _validate_prob_matrix(probs, labels):
    if probs.ndim != 2 or probs.shape[0] != labels.shape[0]:
        raise ShapeError(f"probs {probs.shape} and labels {labels.shape} do not align")
    if probs.shape[0] == 0:
        raise ValueError("calibration of zero samples is undefined")
    _check_probs(probs, "probabilities")
    rowsum = probs.sum(axis=1)
    if np.abs(rowsum - 1.0).max() > 1e-5:
        raise ValueError("probability rows must sum to 1 (tolerance 1e-5)")


@dataclass(frozen=True)
class CalibrationReport:
    """Scalar calibration metrics plus the bin statistics behind them.

    ``ece_from_bins`` / ``sce_from_bins`` recompute the scalars from the
    stored per-bin statistics alone.
    """

    num_bins: int
    num_samples: int
    ece: float
    sce: float
    ece_bins: tuple = field(default_factory=tuple)
    sce_bins: tuple = field(default_factory=tuple)  # one tuple of BinStats per class

    def ece_from_bins(self):
        return _expected_error(self.ece_bins, self.num_samples)

    def sce_from_bins(self):
        total = sum(_expected_error(stats, self.num_samples) for stats in self.sce_bins)
        return total / len(self.sce_bins)

    def to_json_dict(self):
        return {
            "num_bins": self.num_bins,
            "num_samples": self.num_samples,
            "ece": self.ece,
            "sce": self.sce,
            "ece_bins": [vars(b) for b in self.ece_bins],
            "sce_bins": [[vars(b) for b in cls_bins] for cls_bins in self.sce_bins],
        }

    @staticmethod
    def from_json_dict(d):
        return CalibrationReport(
            num_bins=d["num_bins"],
            num_samples=d["num_samples"],
            ece=d["ece"],
            sce=d["sce"],
            ece_bins=tuple(BinStats(**b) for b in d["ece_bins"]),
            sce_bins=tuple(
                tuple(BinStats(**b) for b in cls_bins) for cls_bins in d["sce_bins"]
            ),
        )


def calibration_report(probs, labels, num_bins=15):
    """Build a :class:`CalibrationReport` from a probability matrix."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    _validate_prob_matrix(probs, labels)
    if num_bins < 1:
        raise ValueError(f"num_bins must be >= 1, got {num_bins}")
    n, C = probs.shape
    pred = probs.argmax(axis=1)
    conf = probs[np.arange(n), pred]
    correct = (pred == labels).astype(np.float64)
    ece_bins = tuple(_bin_stats(conf, correct, num_bins))
    sce_bins = tuple(
        tuple(_bin_stats(probs[:, c], (labels == c).astype(np.float64), num_bins))
        for c in range(C)
    )
    report = CalibrationReport(
        num_bins=num_bins,
        num_samples=n,
        ece=_expected_error(ece_bins, n),
        sce=sum(_expected_error(b, n) for b in sce_bins) / C,
        ece_bins=ece_bins,
        sce_bins=sce_bins,
    )
    return report


def softmax_probs(logits):
    """Row-wise softmax in float64 (presentation/metrics use only)."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def blockwise_accuracy(model, images, labels, batch_size=256):
    """Top-1 accuracy of every classifier route, keyed by block index.

    The entry for the final block equals :func:`top1_accuracy` of the
    full network exactly — it is the same read-out.
    """
    J = model.config.num_blocks
    n = images.shape[0]
    if n == 0:
        raise ValueError("blockwise_accuracy of zero samples is undefined")
    correct = {j: 0 for j in range(1, J + 1)}
    for start in range(0, n, batch_size):
        batch = images[start:start + batch_size]
        want = labels[start:start + batch_size]
        bundle = model.forward_with_cache(batch, routes=range(1, J + 1))
        for j in range(1, J + 1):
            pred = bundle.routes[j].argmax(axis=1)
            correct[j] += int((pred == want).sum())
    return {j: correct[j] / n for j in correct}


def heatmap_from_attention(attn, grid_size, out_h, out_w):
    """Project class-token attention onto the image plane.

    ``attn`` is (heads, tokens, tokens) or (tokens, tokens) post-softmax
    attention of one image.  Head-averaged attention from the class
    token to the patch tokens is reshaped to the patch grid, bilinearly
    upsampled, and min-max normalized (a constant map comes back all
    zeros).
    """
    attn = np.asarray(attn, dtype=np.float64)
    if attn.ndim == 3:
        attn = attn.mean(axis=0)
    if attn.ndim != 2 or attn.shape[0] != attn.shape[1]:
        raise ShapeError(f"attention must be square (tokens, tokens), got {attn.shape}")
    if attn.shape[0] != grid_size * grid_size + 1:
        raise ShapeError(
            f"attention over {attn.shape[0]} tokens does not match a "
            f"{grid_size}x{grid_size} patch grid plus class token"
        )
    cls_to_patches = attn[0, 1:].reshape(grid_size, grid_size)
    return minmax_normalize(bilinear_resize(cls_to_patches, out_h, out_w))


def attention_rollout(attention_by_block):
    """Cumulative attention flow across blocks (head-averaged, with the
    identity mixed in and rows renormalized at every block)."""
    rolled = None
    for j in sorted(attention_by_block):
        a = np.asarray(attention_by_block[j], dtype=np.float64).mean(axis=1)  # (B, m, m)
        a = a + np.eye(a.shape[-1])
        a = a / a.sum(axis=-1, keepdims=True)
        rolled = a if rolled is None else np.matmul(a, rolled)
    return rolled


def attention_heatmap(model, image, method="last"):
    """Heatmap of one (H, W, 3) image under ``model``.

    ``method="last"`` uses the final block's attention;
    ``method="rollout"`` propagates attention through all blocks.
    """
    if method not in ("last", "rollout"):
        raise ValueError(f"method must be 'last' or 'rollout', got {method!r}")
    cfg = model.config
    bundle = model.forward_with_cache(image[None])
    if method == "last":
        attn = bundle.attention[cfg.num_blocks][0]
        return heatmap_from_attention(
            attn, cfg.grid_size, cfg.image_size, cfg.image_size
        )
    rolled = attention_rollout(bundle.attention)[0]
    cls_to_patches = rolled[0, 1:].reshape(cfg.grid_size, cfg.grid_size)
    return minmax_normalize(
        bilinear_resize(cls_to_patches, cfg.image_size, cfg.image_size)
    )
