"""Finite-difference gradient checks for every building block and the full pipeline.

Each check builds a tiny randomly initialised instance on 2-sample 16x16
inputs, contracts its output with a fixed random tensor (or uses the
training loss directly), and compares analytic against central-difference
gradients for every parameter coordinate.
"""

from __future__ import annotations

import time

import numpy as np

from . import tensor as T
from .blocks import FeedForward, LayerNorm, Linear, MultiHeadAttention
from .config import RunConfig
from .data import SynthConfig, generate_dataset, stack
from .decoder import DecoderConfig, MaskHead, TwoWayDecoder
from .encoder import Encoder, EncoderConfig
from .losses import LossWeights, combined_loss
from .mldce import MLDCE, MLDCEConfig
from .model import SAMDCE
from .tensor import Parameter, Tensor

D, HEADS, D_FF, SIZE, PATCH = 8, 2, 16, 16, 4
GRID = (SIZE // PATCH) ** 2


def _contract(rng, out_shape):
    w = rng.normal(size=out_shape)
    return lambda y: T.tsum(T.mul(y, w))


def _perturb(module, rng, scale=0.5):
    """Move zero-initialised pieces (LoRA up, biases, alpha/beta) off zero."""
    for name, p in module.named_parameters():
        if "adapter.up" in name or name.endswith(("alpha", "beta", "bias", "shift", "hyper_b1", "hyper_b2")):
            p.data = rng.normal(0.0, scale, size=p.shape)


def check_attention(rng):
    attn = MultiHeadAttention(D, HEADS, rng)
    q, ctx = Parameter(rng.normal(size=(2, 3, D))), Parameter(rng.normal(size=(2, GRID, D)))
    f = _contract(rng, (2, 3, D))
    return (lambda: f(attn(q, ctx))), [q, ctx] + list(attn.parameters().values())


def check_lora(rng):
    lin = Linear(D, D, rng)
    lin.attach_lora(2, rng, freeze_base=False)
    _perturb(lin, rng)
    x = Parameter(rng.normal(size=(2, GRID, D)))
    f = _contract(rng, (2, GRID, D))
    return (lambda: f(lin(x))), [x] + list(lin.parameters().values())


def check_feedforward(rng):
    ff = FeedForward(D, D_FF, rng)
    _perturb(ff, rng)
    x = Parameter(rng.normal(size=(2, 5, D)))
    f = _contract(rng, (2, 5, D))
    return (lambda: f(ff(x))), [x] + list(ff.parameters().values())


def check_layernorm(rng):
    ln = LayerNorm(D)
    _perturb(ln, rng)
    ln.gain.data = rng.normal(size=D)
    x = Parameter(rng.normal(size=(2, 5, D)))
    f = _contract(rng, (2, 5, D))
    return (lambda: f(ln(x))), [x] + list(ln.parameters().values())


def check_encoder(rng):
    enc = Encoder(EncoderConfig(image_size=SIZE, patch_size=PATCH, d_model=D, depth=1, heads=HEADS, d_ff=D_FF), rng)
    _perturb(enc, rng)
    img = rng.uniform(size=(2, 1, SIZE, SIZE))
    f = _contract(rng, (2, GRID, D))
    return (lambda: f(enc(img))), list(enc.parameters().values())


def _decoder_config(c=3):
    return DecoderConfig(num_classes=c, d_model=D, depth=1, heads=HEADS, d_ff=D_FF, upscale=2, hyper_dim=4)


def check_decoder(rng):
    dec = TwoWayDecoder(_decoder_config(), rng)
    _perturb(dec, rng)
    s, pos = Parameter(rng.normal(size=(2, GRID, D))), Tensor(rng.normal(size=(GRID, D)))
    f1, f2 = _contract(rng, (2, 4, D)), _contract(rng, (2, GRID, D))

    def loss():
        t, img = dec(dec.initial_tokens(2), s, pos)
        return f1(t) + f2(img)

    return loss, [s] + list(dec.parameters().values())


def check_mask_head(rng):
    head = MaskHead(_decoder_config(), rng)
    _perturb(head, rng)
    tokens, img = Parameter(rng.normal(size=(2, 4, D))), Parameter(rng.normal(size=(2, GRID, D)))
    f = _contract(rng, (2, 4, SIZE, SIZE))
    return (lambda: f(head(tokens, img, SIZE)[1])), [tokens, img] + list(head.parameters().values())


def check_mldce(rng):
    mod = MLDCE(MLDCEConfig(num_classes=3, d_model=D, d_ff=D_FF, icc_heads=HEADS), rng)
    _perturb(mod, rng)
    t_mask, s = Parameter(rng.normal(size=(2, 4, D))), Parameter(rng.normal(size=(2, GRID, D)))
    f = _contract(rng, (2, 4, D))
    return (lambda: f(mod(t_mask, s)[0])), [t_mask, s] + list(mod.parameters().values())


def check_loss(rng):
    high, low = Parameter(rng.normal(size=(2, 4, SIZE, SIZE))), Parameter(rng.normal(size=(2, 4, 8, 8)))
    labels = rng.integers(0, 4, size=(2, SIZE, SIZE))
    return (lambda: combined_loss({"h": high, "l": low}, labels, LossWeights())), [high, low]


def pipeline_config(**overrides):
    base = dict(
        image_size=SIZE, patch_size=PATCH, d_model=D, encoder_depth=1, encoder_heads=HEADS, d_ff=D_FF,
        decoder_depth=1, decoder_heads=HEADS, upscale=2, hyper_dim=4, icc_heads=HEADS, num_classes=3,
        lora_rank=2, finetune="lora",
    )
    return RunConfig(**{**base, **overrides})


def check_pipeline(rng):
    """Encoder -> decoder -> ML-DCE -> head -> combined loss, gradients w.r.t. every parameter.

    Adapters are attached with the bases left trainable so the base weights
    are checked too.
    """
    cfg = pipeline_config(finetune="full")
    model = SAMDCE(cfg)
    model.apply_lora(cfg.lora_rank, rng)
    for p in model.parameters().values():
        p.frozen = False
    _perturb(model, rng)
    samples = generate_dataset(SynthConfig(image_size=SIZE, num_classes=3, master_seed=int(rng.integers(1 << 31))), 2)
    images, labels = stack(samples)
    weights = LossWeights()

    def loss():
        out = model(images)
        return combined_loss({"h": out.logits, "l": out.low_logits}, labels, weights)

    return loss, list(model.parameters().values())


MODULE_CHECKS = {
    "attention": check_attention,
    "lora": check_lora,
    "ffn": check_feedforward,
    "layernorm": check_layernorm,
    "encoder": check_encoder,
    "decoder": check_decoder,
    "mask_head": check_mask_head,
    "mldce": check_mldce,
    "loss": check_loss,
    "pipeline": check_pipeline,
}


def run_check(name, seed=0, eps=1e-5, max_coords=None):
    """(max relative error, seconds) for one named check."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    f, params = MODULE_CHECKS[name](rng)
    err = T.finite_difference_check(f, params, eps=eps, max_coords=max_coords, rng=rng)
    return err, time.perf_counter() - start
