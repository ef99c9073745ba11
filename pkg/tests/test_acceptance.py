"""End-to-end acceptance checks, one test per criterion.

Each test prints a ``criterion N: PASS/FAIL`` line; the summary is repeated
at the end of the pytest run. The ablation grid (criteria 5 and 6) trains
twelve models and takes roughly twenty-five minutes on one core.
"""

import math
import time

import numpy as np
import pytest

from samdce import tensor as T
from samdce.ablation import run_ablation
from samdce.config import RunConfig
from samdce.data import SynthConfig, generate_dataset, parse_dataset, write_dataset
from samdce.gradcheck import MODULE_CHECKS, run_check
from samdce.metrics import dice_score, hd95, mean_pairwise_cosine_similarity
from samdce.model import SAMDCE
from samdce.train import checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, train

from test_losses_metrics import brute_hd95


def test_1_gradients_match_finite_differences(criterion):
    start = time.perf_counter()
    errors = {name: run_check(name, eps=1e-5)[0] for name in MODULE_CHECKS}
    seconds = time.perf_counter() - start
    worst = max(errors.values())
    ok = worst < 1e-4 and seconds < 120
    criterion(1, ok, f"max rel err {worst:.2e} over {len(errors)} checks (pipeline {errors['pipeline']:.2e}), {seconds:.0f}s")
    assert worst < 1e-4, errors
    assert seconds < 120


def test_2_identity_at_zero(criterion):
    cfg = RunConfig(num_classes=4)
    baseline = SAMDCE(cfg, use_mldce=False)
    full = SAMDCE(cfg)
    disabled = SAMDCE(cfg.replace(enable_mcc=False, enable_icc=False))
    assert full.mldce.alpha.item() == 0.0 and full.mldce.beta.item() == 0.0
    rng = np.random.default_rng(2024)
    mismatches = 0
    with T.no_grad():
        for _ in range(100):
            images = rng.uniform(size=(2, 1, 64, 64))
            ref = baseline(images).logits.data.tobytes()
            mismatches += full(images).logits.data.tobytes() != ref
            mismatches += disabled(images).logits.data.tobytes() != ref
    criterion(2, mismatches == 0, f"{mismatches} bitwise mismatches over 100 inputs x 2 variants")
    assert mismatches == 0


@pytest.mark.parametrize("c", [1, 4, 8])
def test_3_shape_laws(c, criterion):
    model = SAMDCE(RunConfig(num_classes=c))
    b, d = 2, model.config.d_model
    with T.no_grad():
        out = model(np.random.default_rng(c).uniform(size=(b, 1, 64, 64)))
    shapes = {
        "t_mask": (out.t_mask.shape, (b, c + 1, d)),
        "t_mcc": (out.t_mcc.shape, (b, c, d)),
        "t_icc": (out.t_icc.shape, (b, c, d)),
        "t_new": (out.t_new.shape, (b, c + 1, d)),
        "logits": (out.logits.shape, (b, c + 1, 64, 64)),
    }
    # channel 0 is driven by the background token, which fusion leaves untouched
    bg_untouched = out.t_new.data[:, 0].tobytes() == out.t_mask.data[:, 0].tobytes()
    ok = all(got == want for got, want in shapes.values()) and bg_untouched
    criterion(3, ok, f"C={c}: " + ", ".join(f"{k}{got}" for k, (got, _) in shapes.items()))
    assert ok


def test_4_metric_oracles(criterion):
    rng = np.random.default_rng(4)
    hd_bad = dice_bad = 0
    for _ in range(200):
        a = rng.random((16, 16)) < rng.uniform(0.05, 0.7)
        b = rng.random((16, 16)) < rng.uniform(0.05, 0.7)
        expected, got = brute_hd95(a, b), hd95(a, b)
        hd_bad += not ((math.isnan(expected) and math.isnan(got)) or expected == got)
        inter = sum(int(a[i, j] and b[i, j]) for i in range(16) for j in range(16))
        size = sum(int(v) for v in a.ravel()) + sum(int(v) for v in b.ravel())
        expected_dice, got_dice = (2 * inter / size if size else math.nan), dice_score(a, b, True)
        dice_bad += not ((math.isnan(expected_dice) and math.isnan(got_dice)) or expected_dice == got_dice)
    row = rng.normal(size=16)
    same = mean_pairwise_cosine_similarity(np.stack([row, row, row]))
    ortho = mean_pairwise_cosine_similarity(np.eye(16)[:4] * rng.uniform(0.5, 3, size=(4, 1)))
    cos_ok = abs(same - 1.0) <= 1e-12 and abs(ortho) <= 1e-12
    ok = hd_bad == 0 and dice_bad == 0 and cos_ok
    criterion(4, ok, f"hd95 mismatches {hd_bad}/200, dice mismatches {dice_bad}/200, cos(identical)={same!r}, cos(orthogonal)={ortho!r}")
    assert ok


ABLATION_SEEDS = (0, 1, 2)


@pytest.fixture(scope="module")
def ablation():
    data = generate_dataset(SynthConfig(num_classes=4), 400)
    cfg = RunConfig(num_classes=4, image_size=64, epochs=30)
    start = time.perf_counter()
    result = run_ablation(cfg, data[:300], data[300:], ABLATION_SEEDS)
    return result, time.perf_counter() - start


def test_5_ablation_trend(ablation, criterion):
    result, seconds = ablation
    none, full = result.median_dice("None"), result.median_dice("MCC+ICC")
    per_seed = {lb: [round(c.mean_dice, 2) for c in result.for_label(lb)] for lb in result.labels()}
    ok = full - none >= 2.0 and seconds < 30 * 60
    criterion(
        5, ok,
        f"median mean Dice I={none:.2f} IV={full:.2f} (diff {full - none:+.2f}, need >= +2.00); "
        f"per seed {per_seed}; grid {seconds / 60:.1f} min",
    )
    assert seconds < 30 * 60
    assert full - none >= 2.0


def test_6_token_similarity_trend(ablation, criterion):
    result, _ = ablation
    none, full = result.median_similarity("None"), result.median_similarity("MCC+ICC")
    ok = full <= none
    criterion(6, ok, f"median fused-token cosine similarity I={none:.4f} IV={full:.4f}")
    assert ok


SMALL = dict(
    image_size=16, patch_size=4, d_model=16, encoder_depth=1, encoder_heads=2, d_ff=32,
    decoder_depth=1, decoder_heads=2, upscale=2, hyper_dim=8, icc_heads=2, num_classes=4,
)


def test_7_determinism_and_persistence(tmp_path, criterion):
    data = generate_dataset(SynthConfig(image_size=16, num_classes=4), 24)
    cfg = RunConfig(**SMALL, epochs=6)
    a, b = train(cfg, data), train(cfg, data)
    same_curve = a.history.loss == b.history.loss

    half = train(cfg.replace(epochs=3), data)
    save_checkpoint(half, tmp_path / "half.ckpt")
    resumed = load_checkpoint(tmp_path / "half.ckpt")
    resumed = train(cfg, data, state=resumed)
    resume_ok = resumed.history.loss == a.history.loss and checkpoint_bytes(resumed) == checkpoint_bytes(a)
    reload_ok = checkpoint_bytes(checkpoint_from_bytes(checkpoint_bytes(a))) == checkpoint_bytes(a)

    samples = generate_dataset(SynthConfig(image_size=32, num_classes=8), 10)
    write_dataset(samples, tmp_path / "d.segb")
    raw = (tmp_path / "d.segb").read_bytes()
    back = parse_dataset(raw)
    write_dataset(back, tmp_path / "e.segb")
    segb_ok = back == samples and (tmp_path / "e.segb").read_bytes() == raw

    ok = same_curve and resume_ok and reload_ok and segb_ok
    criterion(7, ok, f"same-seed curves {same_curve}, 3+3 resume == 6 {resume_ok}, save/load {reload_ok}, SEGB {segb_ok}")
    assert ok


def test_8_lora_zero_init(criterion):
    cfg = RunConfig(**SMALL, finetune="full")
    plain = SAMDCE(cfg)
    adapted = SAMDCE(cfg)
    adapted.apply_lora(4, np.random.default_rng(9))
    images = np.random.default_rng(8).uniform(size=(3, 1, 16, 16))
    with T.no_grad():
        unchanged = plain(images).logits.data.tobytes() == adapted(images).logits.data.tobytes()

    data = generate_dataset(SynthConfig(image_size=16, num_classes=4), 16)
    lora_cfg = RunConfig(**SMALL, finetune="lora", epochs=3)
    before = {n: p.data.tobytes() for n, p in SAMDCE(lora_cfg).named_parameters() if p.frozen}
    state = train(lora_cfg, data)
    after = {n: p.data.tobytes() for n, p in state.model.named_parameters() if p.frozen}
    adapters_moved = any(np.any(p.data != 0) for n, p in state.model.named_parameters() if n.endswith("adapter.up"))
    frozen_ok = bool(before) and before == after and adapters_moved
    ok = unchanged and frozen_ok
    criterion(8, ok, f"fresh adapters change nothing {unchanged}; {len(before)} frozen tensors unchanged after LoRA training {frozen_ok}")
    assert ok
