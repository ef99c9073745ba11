"""Prompt-free SAM-style segmentation with decoupled class embeddings, on a numpy autodiff core."""

from .config import RunConfig, load_config
from .data import SynthConfig, generate_dataset, generate_sample, read_dataset, split, write_dataset
from .metrics import MetricsReport, dice_score, hd95, mean_pairwise_cosine_similarity
from .model import SAMDCE, build_model
from .train import evaluate, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
