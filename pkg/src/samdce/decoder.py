"""SAM-style two-way transformer decoder and per-token mask head."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .blocks import FeedForward, LayerNorm, Linear, Module, MultiHeadAttention
from .tensor import Parameter, ShapeError


@dataclass
class DecoderConfig:
    num_classes: int = 4
    d_model: int = 64
    depth: int = 2
    heads: int = 4
    d_ff: int = 128
    upscale: int = 4
    hyper_dim: int = 16


def init_mask_tokens(num_classes, d_model, rng):
    """Token bank (1, C+1, D); index 0 is the background token."""
    if num_classes < 1:
        raise ValueError("need at least one foreground class")
    return Parameter(rng.normal(0.0, 1.0 / math.sqrt(d_model), size=(1, num_classes + 1, d_model)))


class TwoWayBlock(Module):
    """Token self-attn, token->image attn, token FFN, image->token attn.

    Pre-norm residual form; positional encodings enter the keys of the
    token->image attention only.
    """

    def __init__(self, d_model, heads, d_ff, rng):
        self.norm_self = LayerNorm(d_model)
        self.self_attn = MultiHeadAttention(d_model, heads, rng)
        self.norm_t2i = LayerNorm(d_model)
        self.norm_img = LayerNorm(d_model)
        self.t2i = MultiHeadAttention(d_model, heads, rng)
        self.norm_ffn = LayerNorm(d_model)
        self.ffn = FeedForward(d_model, d_ff, rng)
        self.norm_i2t_img = LayerNorm(d_model)
        self.norm_i2t_tok = LayerNorm(d_model)
        self.i2t = MultiHeadAttention(d_model, heads, rng)

    def attention_layers(self):
        return [self.self_attn, self.t2i, self.i2t]

    def __call__(self, tokens, image, pos):
        h = self.norm_self(tokens)
        tokens = tokens + self.self_attn(h, h)
        img = self.norm_img(image)
        tokens = tokens + self.t2i(self.norm_t2i(tokens), img, keys=img + pos)
        tokens = tokens + self.ffn(self.norm_ffn(tokens))
        image = image + self.i2t(self.norm_i2t_img(image), self.norm_i2t_tok(tokens))
        return tokens, image


class TwoWayDecoder(Module):
    def __init__(self, config: DecoderConfig, rng):
        self.config = config
        self.mask_tokens = init_mask_tokens(config.num_classes, config.d_model, rng)
        self.blocks = [TwoWayBlock(config.d_model, config.heads, config.d_ff, rng) for _ in range(config.depth)]

    def attention_layers(self):
        return [a for blk in self.blocks for a in blk.attention_layers()]

    def initial_tokens(self, batch):
        c1, d = self.mask_tokens.shape[1:]
        return T.broadcast_to(self.mask_tokens, (batch, c1, d))

    def __call__(self, tokens, image, pos):
        return two_way_decode(self.blocks, tokens, image, pos)


def two_way_decode(blocks, tokens, image, pos):
    """Run the two-way blocks; returns (T_Mask, S_refined)."""
    if tokens.shape[0] != image.shape[0] or tokens.shape[-1] != image.shape[-1]:
        raise ShapeError(f"tokens {tokens.shape} and image {image.shape} disagree on batch or width")
    for blk in blocks:
        tokens, image = blk(tokens, image, pos)
    return tokens, image


def bilinear_matrix(n_in, factor):
    """(n_in*factor, n_in) matrix for half-pixel bilinear upsampling, edges clamped."""
    n_out = n_in * factor
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        src = (i + 0.5) / factor - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        lo = int(math.floor(src))
        hi = min(lo + 1, n_in - 1)
        t = src - lo
        m[i, lo] += 1.0 - t
        m[i, hi] += t
    return m


def upsample(x, factor):
    """Bilinear upsampling of the last two axes by an integer factor."""
    if factor == 1:
        return x
    mh = T.Tensor(bilinear_matrix(x.shape[-2], factor))
    mw = T.Tensor(bilinear_matrix(x.shape[-1], factor).T)
    return T.matmul(T.matmul(mh, x), mw)


class MaskHead(Module):
    """Per-token hypernetwork MLPs dotted with projected image embeddings.

    The image projection and bilinear upsampling are both linear, so the
    dot product is taken on the patch grid and the logit maps are upsampled
    afterwards; this equals dotting with upsampled embeddings.
    """

    def __init__(self, config: DecoderConfig, rng):
        self.config = config
        c1, d, dh = config.num_classes + 1, config.d_model, config.hyper_dim
        self.hyper_w1 = Parameter(rng.normal(0.0, 1.0 / math.sqrt(d), size=(c1, d, d)))
        self.hyper_b1 = Parameter(np.zeros((c1, 1, d)))
        self.hyper_w2 = Parameter(rng.normal(0.0, 1.0 / math.sqrt(d), size=(c1, d, dh)))
        self.hyper_b2 = Parameter(np.zeros((c1, 1, dh)))
        self.image_proj = Linear(d, dh, rng)

    def token_mlp(self, tokens):
        """(B, C+1, D) -> (B, C+1, D'), a separate 2-layer MLP per token slot."""
        x = T.reshape(tokens, (tokens.shape[0], tokens.shape[1], 1, tokens.shape[2]))
        x = T.gelu(T.matmul(x, self.hyper_w1) + self.hyper_b1)
        x = T.matmul(x, self.hyper_w2) + self.hyper_b2
        return T.reshape(x, (tokens.shape[0], tokens.shape[1], x.shape[-1]))

    def grid_logits(self, tokens, image):
        b, n, _ = image.shape
        g = math.isqrt(n)
        if g * g != n:
            raise ShapeError(f"{n} image embeddings do not form a square grid")
        if tokens.shape[1] != self.config.num_classes + 1:
            raise ShapeError(f"expected {self.config.num_classes + 1} tokens, got {tokens.shape[1]}")
        hyper = self.token_mlp(tokens)
        emb = self.image_proj(image)
        logits = T.matmul(hyper, T.swapaxes(emb, -1, -2))
        return T.reshape(logits, (b, tokens.shape[1], g, g))

    def __call__(self, tokens, image, image_size):
        """Returns (low-res logits at grid*upscale, full-resolution logits)."""
        grid = self.grid_logits(tokens, image)
        low = upsample(grid, self.config.upscale)
        side = low.shape[-1]
        if image_size % side:
            raise ShapeError(f"image size {image_size} is not a multiple of the mask grid {side}")
        return low, upsample(low, image_size // side)


def predict_masks(head, t_new, s_refined, image_size):
    return head(t_new, s_refined, image_size)[1]
