"""Small ViT-style patch encoder producing image embeddings (B, N, D)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .blocks import FeedForward, LayerNorm, Linear, Module, MultiHeadAttention
from .tensor import Parameter


@dataclass
class EncoderConfig:
    image_size: int = 64
    patch_size: int = 8
    d_model: int = 64
    depth: int = 2
    heads: int = 4
    channels: int = 1
    d_ff: int = 128

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValueError(f"image_size {self.image_size} is not divisible by patch_size {self.patch_size}")

    @property
    def grid(self):
        return self.image_size // self.patch_size

    @property
    def num_patches(self):
        return self.grid ** 2


def patchify(image, p):
    """(B, ch, H, W) -> (B, N, ch*p*p), patches in reading order.

    Each patch vector is laid out channel-major, then rows, then columns.
    """
    image = np.asarray(image)
    b, ch, h, w = image.shape
    if h % p or w % p:
        raise ValueError(f"image {h}x{w} is not divisible into {p}x{p} patches")
    x = image.reshape(b, ch, h // p, p, w // p, p)
    x = x.transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(b, (h // p) * (w // p), ch * p * p)


def unpatchify(patches, p, channels, height, width):
    patches = np.asarray(patches)
    b = patches.shape[0]
    x = patches.reshape(b, height // p, width // p, channels, p, p)
    x = x.transpose(0, 3, 1, 4, 2, 5)
    return x.reshape(b, channels, height, width)


class EncoderBlock(Module):
    def __init__(self, d_model, heads, d_ff, rng):
        self.norm1 = LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, heads, rng)
        self.norm2 = LayerNorm(d_model)
        self.ffn = FeedForward(d_model, d_ff, rng)

    def __call__(self, x):
        h = self.norm1(x)
        x = x + self.attn(h, h)
        return x + self.ffn(self.norm2(x))


class Encoder(Module):
    def __init__(self, config: EncoderConfig, rng):
        self.config = config
        d = config.d_model
        self.patch_embed = Linear(config.channels * config.patch_size ** 2, d, rng)
        self.pos = Parameter(rng.normal(0.0, 0.02, size=(config.num_patches, d)))
        self.blocks = [EncoderBlock(d, config.heads, config.d_ff, rng) for _ in range(config.depth)]

    def attention_layers(self):
        return [blk.attn for blk in self.blocks]

    def __call__(self, image):
        cfg = self.config
        image = np.asarray(image, dtype=np.float64)
        if image.shape[1:] != (cfg.channels, cfg.image_size, cfg.image_size):
            raise ValueError(
                f"expected images (B, {cfg.channels}, {cfg.image_size}, {cfg.image_size}), got {image.shape}"
            )
        x = self.patch_embed(T.Tensor(patchify(image, cfg.patch_size))) + self.pos
        for blk in self.blocks:
            x = blk(x)
        return x


def encode(encoder, image):
    return encoder(image)
