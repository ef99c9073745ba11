"""Four-way ML-DCE component ablation and its CSV/SVG reports."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .train import analyze_token_similarity, evaluate, train

# (row label, enable_mcc, enable_icc, build ML-DCE at all)
CONFIGURATIONS = (
    ("None", False, False, False),
    ("MCC", True, False, True),
    ("ICC", False, True, True),
    ("MCC+ICC", True, True, True),
)

# Mean Dice reported for the full-scale setting (pretrained backbone, abdominal CT).
# Kept for documentation; not expected at toy scale.
REFERENCE_DICE = {"None": 63.65, "MCC": 68.61, "ICC": 70.24, "MCC+ICC": 80.54}


@dataclass
class AblationCell:
    label: str
    seed: int
    mean_dice: float
    token_similarity: float
    loss_curve: list
    seconds: float


@dataclass
class AblationResult:
    cells: list = field(default_factory=list)

    def labels(self):
        return [c[0] for c in CONFIGURATIONS if any(cell.label == c[0] for cell in self.cells)]

    def for_label(self, label):
        return [c for c in self.cells if c.label == label]

    def median_dice(self, label):
        return float(np.median([c.mean_dice for c in self.for_label(label)]))

    def median_similarity(self, label):
        return float(np.median([c.token_similarity for c in self.for_label(label)]))

    def rows(self):
        out = []
        for label in self.labels():
            cells = self.for_label(label)
            out.append(
                {
                    "config": label,
                    "mcc": int(label in ("MCC", "MCC+ICC")),
                    "icc": int(label in ("ICC", "MCC+ICC")),
                    "median_mean_dice": self.median_dice(label),
                    "median_token_similarity": self.median_similarity(label),
                    "seeds": " ".join(str(c.seed) for c in cells),
                    "per_seed_dice": " ".join(f"{c.mean_dice:.6f}" for c in cells),
                    "reference_dice": REFERENCE_DICE[label],
                }
            )
        return out


def configuration(base, label):
    for name, mcc, icc, use in CONFIGURATIONS:
        if name == label:
            return base.replace(enable_mcc=mcc, enable_icc=icc), use
    raise KeyError(label)


def run_ablation(base, train_samples, test_samples, seeds=(0, 1, 2), labels=None, progress=None):
    """Train and evaluate every configuration for every seed.

    All configurations of one seed share data, seed, and every other
    hyperparameter; the shared sub-networks start from identical weights.
    Dice is reported on the 0..100 scale.
    """
    result = AblationResult()
    for seed in seeds:
        for label in labels or [c[0] for c in CONFIGURATIONS]:
            cfg, use_mldce = configuration(base.replace(seed=seed), label)
            start = time.perf_counter()
            state = train(cfg, train_samples, use_mldce=use_mldce)
            report = evaluate(state.model, test_samples, with_hd95=False)
            sim = report.token_similarity if cfg.num_classes >= 2 else math.nan
            cell = AblationCell(
                label, seed, 100.0 * report.mean_dice, sim, list(state.history.loss), time.perf_counter() - start
            )
            result.cells.append(cell)
            if progress:
                progress(cell)
    return result


def similarity_by_configuration(states, samples):
    """{label: mean pairwise cosine similarity of fused tokens} for trained states."""
    return {label: analyze_token_similarity(state, samples) for label, state in states.items()}


def write_csv(result, path):
    rows = result.rows()
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_svg(result, path):
    """Loss curves per configuration (left) and token-similarity bars (right)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax_loss, ax_sim) = plt.subplots(1, 2, figsize=(10, 4))
    for label in result.labels():
        curves = np.array([c.loss_curve for c in result.for_label(label)])
        ax_loss.plot(np.arange(1, curves.shape[1] + 1), np.median(curves, axis=0), label=label)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("training loss (median over seeds)")
    ax_loss.legend()
    labels = result.labels()
    ax_sim.bar(labels, [result.median_similarity(lb) for lb in labels], color="#5b8bd0")
    ax_sim.set_ylabel("mean pairwise cosine similarity")
    ax_sim.set_title("fused class tokens")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
