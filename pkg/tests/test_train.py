import math

import numpy as np
import pytest

from samdce import tensor as T
from samdce.config import RunConfig
from samdce.data import SynthConfig, generate_dataset, stack
from samdce.model import SAMDCE
from samdce.train import (
    CheckpointError,
    TrainingDiverged,
    analyze_token_similarity,
    checkpoint_bytes,
    checkpoint_from_bytes,
    evaluate,
    init_state,
    load_checkpoint,
    save_checkpoint,
    train,
)

TINY = dict(
    image_size=16, patch_size=4, d_model=8, encoder_depth=1, encoder_heads=2, d_ff=16,
    decoder_depth=1, decoder_heads=2, upscale=2, hyper_dim=4, icc_heads=2, lora_rank=2,
    num_classes=3, batch_size=4,
)


def tiny(**kw):
    return RunConfig(**{**TINY, **kw})


@pytest.fixture(scope="module")
def data():
    return generate_dataset(SynthConfig(image_size=16, num_classes=3), 12)


def param_bytes(model):
    return {n: p.data.tobytes() for n, p in model.named_parameters()}


class TestModel:
    @pytest.mark.parametrize("c", [1, 4, 8])
    def test_shapes(self, c):
        model = SAMDCE(tiny(num_classes=c))
        out = model(np.zeros((2, 1, 16, 16)))
        assert out.t_mask.shape == (2, c + 1, 8)
        assert out.t_mcc.shape == out.t_icc.shape == (2, c, 8)
        assert out.t_new.shape == (2, c + 1, 8)
        assert out.logits.shape == (2, c + 1, 16, 16)
        assert out.low_logits.shape == (2, c + 1, 8, 8)

    def test_default_size_logit_shape(self):
        model = SAMDCE(RunConfig(num_classes=8))
        assert model(np.zeros((1, 1, 64, 64))).logits.shape == (1, 9, 64, 64)

    def test_shared_subnetworks_start_identical_across_configurations(self):
        full, base = SAMDCE(tiny()), SAMDCE(tiny(enable_mcc=False, enable_icc=False), use_mldce=False)
        pb = param_bytes(base)
        for name, raw in param_bytes(full).items():
            if not name.startswith("mldce"):
                assert pb[name] == raw

    def test_lora_freezes_attention_bases_only(self):
        model = SAMDCE(tiny())
        frozen = [n for n, p in model.named_parameters() if p.frozen]
        assert frozen and all(".w_" in n and (n.endswith(".weight") or n.endswith(".bias")) for n in frozen)
        assert not any(n.startswith(("mldce", "head")) for n in frozen)

    def test_full_finetune_has_no_adapters(self):
        model = SAMDCE(tiny(finetune="full"))
        assert not any(p.frozen for p in model.parameters().values())
        assert not any("adapter" in n for n, _ in model.named_parameters())


class TestTraining:
    def test_zero_epochs_equals_initialization(self, data):
        state = train(tiny(epochs=0), data)
        assert param_bytes(state.model) == param_bytes(SAMDCE(tiny()))
        assert state.history.loss == []

    def test_same_seed_same_curve(self, data):
        a = train(tiny(epochs=2), data).history.loss
        b = train(tiny(epochs=2), data).history.loss
        assert a == b and len(a) == 2

    def test_different_seed_differs(self, data):
        assert train(tiny(epochs=1), data).history.loss != train(tiny(epochs=1, seed=1), data).history.loss

    def test_resume_equivalence(self, data, tmp_path):
        full = train(tiny(epochs=4), data)
        half = train(tiny(epochs=2), data)
        save_checkpoint(half, tmp_path / "c.ckpt")
        resumed = train(tiny(epochs=4), data, state=load_checkpoint(tmp_path / "c.ckpt"))
        assert resumed.history.loss == full.history.loss
        assert param_bytes(resumed.model) == param_bytes(full.model)

    def test_save_load_save_identical(self, data, tmp_path):
        state = train(tiny(epochs=1), data)
        raw = checkpoint_bytes(state)
        again = checkpoint_bytes(checkpoint_from_bytes(raw))
        assert raw == again

    def test_lora_only_training_keeps_bases(self, data):
        init = SAMDCE(tiny())
        state = train(tiny(epochs=1), data)
        before = {n: p.data.tobytes() for n, p in init.named_parameters() if p.frozen}
        after = {n: p.data.tobytes() for n, p in state.model.named_parameters() if p.frozen}
        assert before == after and before
        trained = {n: p.data.tobytes() for n, p in state.model.named_parameters() if "adapter.up" in n}
        assert any(v != np.zeros_like(init.encoder.blocks[0].attn.w_q.adapter.up.data).tobytes() for v in trained.values())

    def test_resume_rejects_changed_hyperparameters(self, data):
        state = train(tiny(epochs=1), data)
        with pytest.raises(ValueError, match="learning_rate"):
            train(tiny(epochs=2, learning_rate=1e-3), data, state=state)

    def test_class_count_mismatch(self, data):
        with pytest.raises(ValueError, match="classes"):
            train(tiny(num_classes=4, epochs=1), data)

    def test_divergence_is_reported(self, data):
        state = init_state(tiny(epochs=1))
        state.model.head.image_proj.bias.data[:] = np.nan
        with pytest.raises(TrainingDiverged):
            train(state.config, data, state=state)

    def test_learning_smoke(self):
        # 200 samples, 64x64, four classes, 30 epochs at the default model size
        cfg = RunConfig(num_classes=4, epochs=30)
        samples = generate_dataset(SynthConfig(image_size=64, num_classes=4, master_seed=11), 200)
        curve = train(cfg, samples).history.loss
        assert curve[-1] < curve[0]


class TestCheckpointErrors:
    def test_corrupted_payload(self, data):
        raw = bytearray(checkpoint_bytes(train(tiny(epochs=0), data)))
        raw[-40] ^= 0xFF
        with pytest.raises(CheckpointError, match="checksum"):
            checkpoint_from_bytes(bytes(raw))

    def test_version_mismatch(self, data):
        raw = bytearray(checkpoint_bytes(train(tiny(epochs=0), data)))
        raw[4] = 9
        with pytest.raises(CheckpointError, match="version 9"):
            checkpoint_from_bytes(bytes(raw))

    def test_not_a_checkpoint(self):
        with pytest.raises(CheckpointError):
            checkpoint_from_bytes(b"hello world, not a checkpoint")


class _Oracle:
    """Stands in for a model: emits one-hot logits of the stored labels."""

    def __init__(self, config, samples, constant=None):
        self.config = config
        self.lookup = {s.image.tobytes(): s.labels for s in samples}
        self.constant = constant

    def __call__(self, images):
        from types import SimpleNamespace

        c1 = self.config.num_classes + 1
        labels = np.stack([self.lookup[img.astype(np.float32).tobytes()] for img in images]).astype(int)
        if self.constant is not None:
            labels = np.full_like(labels, self.constant)
        logits = (labels[:, None] == np.arange(c1)[None, :, None, None]).astype(float)
        tokens = np.tile(np.eye(c1, 4)[None], (len(images), 1, 1))
        return SimpleNamespace(logits=T.Tensor(logits), t_new=T.Tensor(tokens))


class TestEvaluate:
    def test_oracle_model(self, data):
        report = evaluate(_Oracle(tiny(), data), data)
        assert report.mean_dice == 1.0 and report.mean_hd95 == 0.0
        assert report.token_similarity == 0.0

    def test_constant_background(self, data):
        report = evaluate(_Oracle(tiny(), data, constant=0), data)
        for c in range(1, 4):
            present = [s for s in data if (s.labels == c).any()]
            if present:
                assert report.dice[c] == 0.0

    def test_real_model_deterministic(self, data):
        model = SAMDCE(tiny())
        a, b = evaluate(model, data), evaluate(model, data)
        assert a.dice == b.dice and a.hd95 == b.hd95 and a.token_similarity == b.token_similarity
        assert -1.0 <= analyze_token_similarity(model, data) <= 1.0

    def test_identical_token_bank_gives_unit_similarity(self, data):
        model = SAMDCE(tiny(decoder_depth=0, enable_mcc=False, enable_icc=False), use_mldce=False)
        model.decoder.mask_tokens.data[:] = model.decoder.mask_tokens.data[:, :1]
        assert abs(analyze_token_similarity(model, data) - 1.0) < 1e-12
