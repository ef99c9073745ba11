"""Full encoder -> two-way decoder -> ML-DCE -> mask head pipeline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import Module
from .config import RunConfig
from .decoder import MaskHead, TwoWayDecoder
from .encoder import Encoder
from .mldce import MLDCE


@dataclass
class ModelOutput:
    low_logits: object
    logits: object
    t_mask: object
    t_new: object
    t_mcc: object
    t_icc: object
    image_embeddings: object


class SAMDCE(Module):
    """Prompt-free segmenter: class tokens in, one logit map per token out.

    Each sub-network draws its initial weights from its own child seed, so
    enabling or disabling ML-DCE branches never perturbs the rest of the
    model. With ``use_mldce=False`` the decoder tokens go straight to the
    mask head (the plain baseline).
    """

    def __init__(self, config: RunConfig, use_mldce=True):
        self.config = config
        seeds = np.random.SeedSequence(config.seed).spawn(5)
        rng_enc, rng_dec, rng_head, rng_dce, rng_lora = (np.random.default_rng(s) for s in seeds)
        self.encoder = Encoder(config.encoder_config(), rng_enc)
        self.decoder = TwoWayDecoder(config.decoder_config(), rng_dec)
        self.head = MaskHead(config.decoder_config(), rng_head)
        self.mldce = MLDCE(config.mldce_config(), rng_dce) if use_mldce else None
        if config.finetune == "lora":
            self.apply_lora(config.lora_rank, rng_lora, config.lora_scaling or None)

    def attention_layers(self):
        return self.encoder.attention_layers() + self.decoder.attention_layers()

    def apply_lora(self, rank, rng, scaling=None):
        """Adapt every encoder/decoder attention projection; base weights freeze."""
        adapters = []
        for attn in self.attention_layers():
            for lin in attn.projections():
                adapters.append(lin.attach_lora(rank, rng, scaling))
        return adapters

    def trainable_parameters(self):
        return {name: p for name, p in self.named_parameters() if not p.frozen}

    def __call__(self, images):
        images = np.asarray(images, dtype=np.float64)
        s = self.encoder(images)
        tokens = self.decoder.initial_tokens(images.shape[0])
        t_mask, s_refined = self.decoder(tokens, s, self.encoder.pos)
        t_mcc = t_icc = None
        if self.mldce is not None:
            t_new, t_mcc, t_icc = self.mldce(t_mask, s)
        else:
            t_new = t_mask
        low, high = self.head(t_new, s_refined, self.config.image_size)
        return ModelOutput(low, high, t_mask, t_new, t_mcc, t_icc, s)


def build_model(config: RunConfig, use_mldce=True):
    return SAMDCE(config, use_mldce)
