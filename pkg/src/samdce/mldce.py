"""Multi-level decoupled class embedding: MCC, ICC and residual fusion.

Foreground class queries attend over the decoder's mask tokens (MCC) and
over the encoder's image embeddings (ICC). Their outputs are added, scaled by
learnable scalars, to the foreground mask tokens; the background token is
split off beforehand and re-attached untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .blocks import FeedForward, Module, MultiHeadAttention
from .tensor import Parameter, ShapeError


@dataclass
class MLDCEConfig:
    num_classes: int = 4
    d_model: int = 64
    enable_mcc: bool = True
    enable_icc: bool = True
    mcc_heads: int = 1
    icc_heads: int = 4
    d_ff: int = 128
    share_queries: bool = False
    alpha_init: float = 0.0
    beta_init: float = 0.0


def expand_queries(q0, batch):
    if batch < 1:
        raise ValueError("batch must be positive")
    return T.broadcast_to(q0, (batch,) + q0.shape[1:])


def _query_bank(num_classes, d_model, rng):
    return Parameter(rng.normal(0.0, 1.0 / math.sqrt(d_model), size=(1, num_classes, d_model)))


class MCC(Module):
    """Class queries attend over all C+1 mask tokens, then an MLP.

    Single-head by default with no output projection: the aggregation is
    exactly softmax(Q Wq (K Wk)^T / sqrt(d_k)) V Wv.
    """

    def __init__(self, config: MLDCEConfig, rng, queries=None):
        self.queries = queries if queries is not None else _query_bank(config.num_classes, config.d_model, rng)
        self.attn = MultiHeadAttention(config.d_model, config.mcc_heads, rng, out_proj=config.mcc_heads > 1)
        self.mlp = FeedForward(config.d_model, config.d_ff, rng)

    def aggregate(self, q, t_mask):
        return self.attn.forward(q, t_mask)

    def __call__(self, q, t_mask):
        if q.shape[0] != t_mask.shape[0] or t_mask.shape[1] != q.shape[1] + 1:
            raise ShapeError(f"MCC expects (B, C, D) queries and (B, C+1, D) tokens, got {q.shape}, {t_mask.shape}")
        agg, _ = self.aggregate(q, t_mask)
        return self.mlp(agg)


class ICC(Module):
    """Class queries attend over encoder embeddings (multi-head, projected), then an MLP."""

    def __init__(self, config: MLDCEConfig, rng, queries=None):
        self.queries = queries if queries is not None else _query_bank(config.num_classes, config.d_model, rng)
        self.attn = MultiHeadAttention(config.d_model, config.icc_heads, rng)
        self.mlp = FeedForward(config.d_model, config.d_ff, rng)

    def __call__(self, q, image):
        if q.shape[0] != image.shape[0]:
            raise ShapeError(f"ICC batch mismatch: queries {q.shape}, image {image.shape}")
        return self.mlp(self.attn(q, image))


def mcc(module, q, t_mask):
    return module(q, t_mask)


def icc(module, q, image):
    return module(q, image)


def fuse(t_mask, t_mcc=None, t_icc=None, alpha=None, beta=None):
    """Concat(t_bg, T_fg + alpha*T_MCC + beta*T_ICC) along the token axis.

    A branch passed as ``None`` contributes nothing.
    """
    b, c1, d = t_mask.shape
    bg = t_mask[:, :1, :]
    fg = t_mask[:, 1:, :]
    for branch, weight in ((t_mcc, alpha), (t_icc, beta)):
        if branch is None:
            continue
        if branch.shape != (b, c1 - 1, d):
            raise ShapeError(f"branch output {branch.shape} does not match foreground tokens {(b, c1 - 1, d)}")
        fg = fg + weight * branch
    return T.concat([bg, fg], axis=1)


class MLDCE(Module):
    def __init__(self, config: MLDCEConfig, rng):
        self.config = config
        shared = _query_bank(config.num_classes, config.d_model, rng) if config.share_queries else None
        self.mcc = MCC(config, rng, shared) if config.enable_mcc else None
        self.icc = ICC(config, rng, shared) if config.enable_icc else None
        self.alpha = Parameter(np.array(config.alpha_init)) if config.enable_mcc else None
        self.beta = Parameter(np.array(config.beta_init)) if config.enable_icc else None

    def __call__(self, t_mask, image):
        """Returns (T_new, T_MCC or None, T_ICC or None)."""
        batch = t_mask.shape[0]
        t_mcc = t_icc = None
        if self.mcc is not None:
            t_mcc = self.mcc(expand_queries(self.mcc.queries, batch), t_mask)
        if self.icc is not None:
            t_icc = self.icc(expand_queries(self.icc.queries, batch), image)
        return fuse(t_mask, t_mcc, t_icc, self.alpha, self.beta), t_mcc, t_icc
