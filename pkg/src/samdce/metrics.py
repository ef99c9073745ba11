"""Hard-label evaluation metrics: Dice, HD95, and class-token similarity."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import binary_erosion
from scipy.spatial.distance import cdist

UNDEFINED = math.nan
_EIGHT = np.ones((3, 3), dtype=bool)


def is_undefined(value):
    return value is None or (isinstance(value, float) and math.isnan(value))


def dice_score(pred_labels, gt_labels, c):
    """2|P and G| / (|P| + |G|) for class ``c``; NaN when both masks are empty."""
    p = np.asarray(pred_labels) == c
    g = np.asarray(gt_labels) == c
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return UNDEFINED
    return 2.0 * int(np.logical_and(p, g).sum()) / total


def boundary(mask):
    """Foreground pixels with at least one 8-neighbour outside the mask (image edge counts as outside)."""
    mask = np.asarray(mask, dtype=bool)
    return mask & ~binary_erosion(mask, structure=_EIGHT, border_value=0)


def linear_quantile(values, q):
    """Quantile with linear interpolation between order statistics."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    pos = q * (v.size - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, v.size - 1)
    return float(v[lo] + (v[hi] - v[lo]) * (pos - lo))


def hd95(pred_mask, gt_mask, spacing=1.0):
    """95th percentile of symmetric boundary-to-boundary nearest distances.

    Both masks empty gives 0.0; exactly one empty gives NaN. ``spacing`` is a
    scalar or a (row, col) pair of physical pixel sizes.
    """
    bp = np.argwhere(boundary(pred_mask))
    bg = np.argwhere(boundary(gt_mask))
    if len(bp) == 0 and len(bg) == 0:
        return 0.0
    if len(bp) == 0 or len(bg) == 0:
        return UNDEFINED
    sp = np.broadcast_to(np.asarray(spacing, dtype=np.float64), (2,))
    d = cdist(bp * sp, bg * sp)
    dists = np.concatenate([d.min(axis=1), d.min(axis=0)])
    return linear_quantile(dists, 0.95)


def mean_pairwise_cosine_similarity(tokens):
    """Mean of cos(t_i, t_j) over unordered pairs of rows.

    Accepts (C, D) or a batch (B, C, D), averaged over the batch. Any zero
    row makes the value undefined (NaN).
    """
    t = np.asarray(tokens, dtype=np.float64)
    if t.ndim == 2:
        t = t[None]
    if t.shape[1] < 2:
        raise ValueError("need at least two class tokens")
    norms = np.linalg.norm(t, axis=-1, keepdims=True)
    if np.any(norms == 0):
        return UNDEFINED
    unit = t / norms
    sims = unit @ np.swapaxes(unit, -1, -2)
    iu = np.triu_indices(t.shape[1], k=1)
    return float(np.mean(sims[:, iu[0], iu[1]]))


def nanmean(values):
    vals = [v for v in values if not is_undefined(v)]
    return float(np.mean(vals)) if vals else UNDEFINED


@dataclass
class MetricsReport:
    """Per-class Dice/HD95 (index 0 = background) plus foreground means.

    The CSV form carries the columns ``class,dice,hd95`` with one row per
    class and a closing ``mean`` row; token similarity is not part of it.
    """

    dice: list
    hd95: list
    token_similarity: float = UNDEFINED
    extra: dict = field(default_factory=dict)

    @property
    def num_classes(self):
        return len(self.dice) - 1

    @property
    def mean_dice(self):
        return nanmean(self.dice[1:])

    @property
    def mean_hd95(self):
        return nanmean(self.hd95[1:])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["class", "dice", "hd95"])
            for c, (d, h) in enumerate(zip(self.dice, self.hd95)):
                writer.writerow([c, _fmt(d), _fmt(h)])
            writer.writerow(["mean", _fmt(self.mean_dice), _fmt(self.mean_hd95)])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != ["class", "dice", "hd95"]:
            raise ValueError(f"{path}: not a metrics report")
        body = [r for r in rows[1:] if r[0] != "mean"]
        return cls([float(r[1]) for r in body], [float(r[2]) for r in body])


def _fmt(value):
    return "nan" if is_undefined(value) else repr(float(value))


def summarize(pred_maps, gt_maps, num_classes, spacing=1.0):
    """Aggregate per-image metrics into a MetricsReport.

    Each class score is the mean over images where it is defined.
    """
    per_dice = [[] for _ in range(num_classes + 1)]
    per_hd = [[] for _ in range(num_classes + 1)]
    for pred, gt in zip(pred_maps, gt_maps):
        for c in range(num_classes + 1):
            per_dice[c].append(dice_score(pred, gt, c))
            per_hd[c].append(hd95(pred == c, gt == c, spacing))
    return MetricsReport([nanmean(v) for v in per_dice], [nanmean(v) for v in per_hd])
