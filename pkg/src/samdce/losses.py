"""Cross-entropy, soft Dice, and the dual-resolution combined objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.2
    lambda2: float = 0.8

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")
        if self.lambda1 == 0 and self.lambda2 == 0:
            raise ValueError("loss weights cannot both be zero")


def _check_labels(logits, labels):
    labels = np.asarray(labels)
    k = logits.shape[1]
    if labels.shape != (logits.shape[0],) + logits.shape[2:]:
        raise ValueError(f"labels {labels.shape} do not match logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in 0..{k - 1}, found range {labels.min()}..{labels.max()}")
    return labels


def one_hot(labels, num_channels):
    """(B, H, W) ints -> (B, K, H, W) float one-hot."""
    labels = np.asarray(labels)
    out = (labels[:, None] == np.arange(num_channels).reshape(1, -1, *([1] * (labels.ndim - 1))))
    return out.astype(np.float64)


def cross_entropy(logits, labels):
    """Mean over pixels of -log softmax(logits)[label] (softmax over axis 1)."""
    labels = _check_labels(logits, labels)
    logp = T.log_softmax(logits, axis=1)
    picked = T.mul(logp, one_hot(labels, logits.shape[1]))
    return T.scale(T.tsum(picked), -1.0 / labels.size)


def dice_loss(logits, labels, eps=1e-5):
    """1 - mean over channels of (2 sum p*g + eps) / (sum p + sum g + eps).

    Sums run over batch and pixels; every channel, background included,
    enters the mean.
    """
    if eps <= 0:
        raise ValueError("dice eps must be positive")
    labels = _check_labels(logits, labels)
    k = logits.shape[1]
    probs = T.softmax(logits, axis=1)
    g = one_hot(labels, k)
    axes = (0,) + tuple(range(2, logits.ndim))
    inter = T.tsum(T.mul(probs, g), axes)
    denom = T.tsum(probs, axes) + (g.sum(axis=axes) + eps)
    dice = T.div(T.scale(inter, 2.0) + eps, denom)
    return T.scale(T.tsum(dice), -1.0 / k) + 1.0


def downsample_labels(labels, factor):
    """Block-majority downsampling of (B, H, W) label maps; ties go to the lower label."""
    labels = np.asarray(labels)
    if factor == 1:
        return labels.copy()
    b, h, w = labels.shape
    if h % factor or w % factor:
        raise ValueError(f"label map {h}x{w} is not divisible by {factor}")
    blocks = labels.reshape(b, h // factor, factor, w // factor, factor).transpose(0, 1, 3, 2, 4)
    blocks = blocks.reshape(b, h // factor, w // factor, factor * factor)
    k = int(labels.max()) + 1 if labels.size else 1
    counts = (blocks[..., None] == np.arange(k)).sum(axis=-2)
    return counts.argmax(axis=-1).astype(labels.dtype)


def segmentation_loss(logits, labels, weights, dice_eps=1e-5):
    """lambda1 * CE + lambda2 * Dice at one resolution."""
    ce = cross_entropy(logits, labels)
    if weights.lambda2 == 0:
        return T.scale(ce, weights.lambda1)
    dl = dice_loss(logits, labels, dice_eps)
    if weights.lambda1 == 0:
        return T.scale(dl, weights.lambda2)
    return T.scale(ce, weights.lambda1) + T.scale(dl, weights.lambda2)


def combined_loss(outputs, labels, weights, dice_eps=1e-5):
    """Sum over resolutions of lambda1*CE + lambda2*Dice.

    ``outputs`` maps a resolution tag ("l", "h") to logits (B, K, h, w).
    Full-size ``labels`` are block-majority downsampled to each logit grid.
    """
    labels = np.asarray(labels)
    total = None
    for tag in sorted(outputs):
        logits = outputs[tag]
        factor = labels.shape[-1] // logits.shape[-1]
        target = labels if factor == 1 else downsample_labels(labels, factor)
        term = segmentation_loss(logits, target, weights, dice_eps)
        total = term if total is None else total + term
    return total
