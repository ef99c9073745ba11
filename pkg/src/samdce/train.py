"""Training loop, evaluation, and checkpoint persistence."""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import RunConfig
from .data import stack
from .losses import LossWeights, combined_loss
from .metrics import MetricsReport, dice_score, mean_pairwise_cosine_similarity, nanmean, summarize
from .model import SAMDCE
from .optim import AdamW

CKPT_MAGIC = b"DCEK"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch, step, value):
        super().__init__(f"loss became {value} at epoch {epoch}, step {step}")
        self.epoch, self.step = epoch, step


@dataclass
class History:
    loss: list = field(default_factory=list)
    val_dice: list = field(default_factory=list)


@dataclass
class TrainState:
    """Everything needed to continue training bit-for-bit."""

    config: RunConfig
    model: SAMDCE
    optimizer: AdamW
    rng: np.random.Generator
    epoch: int = 0
    use_mldce: bool = True
    history: History = field(default_factory=History)


def init_state(config, use_mldce=True):
    model = SAMDCE(config, use_mldce)
    opt = AdamW(config.learning_rate, (config.beta1, config.beta2), config.adam_eps, config.weight_decay)
    rng = np.random.default_rng([config.seed, 0x5EED])
    return TrainState(config, model, opt, rng, 0, use_mldce)


def _check_classes(config, samples):
    for s in samples:
        if s.num_classes != config.num_classes:
            raise ValueError(
                f"sample {s.sample_id} has {s.num_classes} classes, model expects {config.num_classes}"
            )


def batch_loss(model, config, images, labels):
    out = model(images)
    outputs = {"h": out.logits}
    if config.dual_resolution:
        outputs["l"] = out.low_logits
    return combined_loss(outputs, labels, LossWeights(config.lambda1, config.lambda2), config.dice_eps)


def train_epoch(state, samples):
    """One shuffled pass; returns the mean batch loss."""
    cfg, model = state.config, state.model
    params = model.trainable_parameters()
    names, plist = list(params), list(params.values())
    order = state.rng.permutation(len(samples))
    losses = []
    for step, start in enumerate(range(0, len(order), cfg.batch_size)):
        images, labels = stack([samples[i] for i in order[start : start + cfg.batch_size]])
        loss = batch_loss(model, cfg, images, labels)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDiverged(state.epoch + 1, step, value)
        grads = T.grad(loss, plist)
        state.optimizer.step(params, dict(zip(names, grads)))
        losses.append(value)
    state.epoch += 1
    return float(np.mean(losses)) if losses else math.nan


def train(config, samples, val_samples=None, use_mldce=True, state=None, progress=None):
    """Train until ``config.epochs`` epochs are done; returns the TrainState.

    Passing a ``state`` (e.g. from ``load_checkpoint``) continues that run;
    ``config`` may then differ from the stored one only in ``epochs``.
    """
    _check_classes(config, samples)
    if state is None:
        state = init_state(config, use_mldce)
    elif config != state.config:
        changed = sorted(k for k, v in config.to_dict().items() if k != "epochs" and v != getattr(state.config, k))
        if changed:
            raise ValueError(f"cannot resume with a different configuration: {', '.join(changed)}")
        state.config = config
    while state.epoch < config.epochs:
        loss = train_epoch(state, samples)
        state.history.loss.append(loss)
        if val_samples:
            state.history.val_dice.append(evaluate(state.model, val_samples, with_hd95=False).mean_dice)
        if progress:
            progress(state)
    return state


def forward_eval(model, samples, batch_size=16):
    """(predicted label maps, fused foreground tokens) without recording a graph."""
    preds, tokens = [], []
    with T.no_grad():
        for start in range(0, len(samples), batch_size):
            images, _ = stack(samples[start : start + batch_size])
            out = model(images)
            preds.append(out.logits.data.argmax(axis=1))
            tokens.append(out.t_new.data[:, 1:])
    return np.concatenate(preds), np.concatenate(tokens)


def token_similarity(tokens):
    """Mean over samples of the pairwise cosine similarity of fused class tokens."""
    return float(np.mean([mean_pairwise_cosine_similarity(t) for t in tokens]))


def evaluate(model, samples, with_hd95=True, spacing=1.0):
    """Per-class Dice and HD95 on hard argmax predictions."""
    if isinstance(model, TrainState):
        model = model.model
    _check_classes(model.config, samples)
    preds, tokens = forward_eval(model, samples)
    gts = [s.labels for s in samples]
    c = model.config.num_classes
    if with_hd95:
        report = summarize(preds, gts, c, spacing)
    else:
        report = MetricsReport(
            [nanmean([dice_score(p, g, k) for p, g in zip(preds, gts)]) for k in range(c + 1)],
            [math.nan] * (c + 1),
        )
    if c >= 2:
        report.token_similarity = token_similarity(tokens)
    return report


def analyze_token_similarity(model, samples):
    """Mean pairwise cosine similarity of the fused foreground tokens over ``samples``."""
    if isinstance(model, TrainState):
        model = model.model
    return token_similarity(forward_eval(model, samples)[1])


# ------------------------------------------------------------------ checkpoints


def _rng_state_json(rng):
    return rng.bit_generator.state


def checkpoint_bytes(state):
    arrays = {}
    for name, p in state.model.named_parameters():
        arrays[f"param/{name}"] = p.data
    for name, m in state.optimizer.m.items():
        arrays[f"adam_m/{name}"] = m
    for name, v in state.optimizer.v.items():
        arrays[f"adam_v/{name}"] = v
    index, payload, offset = [], [], 0
    for key in sorted(arrays):
        raw = np.ascontiguousarray(arrays[key], dtype="<f8").tobytes()
        index.append({"name": key, "shape": list(np.shape(arrays[key])), "offset": offset})
        payload.append(raw)
        offset += len(raw)
    header = {
        "config": state.config.to_dict(),
        "use_mldce": state.use_mldce,
        "epoch": state.epoch,
        "adam_t": state.optimizer.t,
        "rng": _rng_state_json(state.rng),
        "history": {"loss": state.history.loss, "val_dice": state.history.val_dice},
        "tensors": index,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = CKPT_MAGIC + struct.pack("<HI", CKPT_VERSION, len(head)) + head + b"".join(payload)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(state, path):
    data = checkpoint_bytes(state)
    with open(path, "wb") as fh:
        fh.write(data)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())


def checkpoint_from_bytes(buf):
    if len(buf) < 14 or buf[:4] != CKPT_MAGIC:
        raise CheckpointError("not a checkpoint file")
    version, head_len = struct.unpack_from("<HI", buf, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"checkpoint version {version} is not supported (expected {CKPT_VERSION})")
    (crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(buf[:-4]) != crc:
        raise CheckpointError("checkpoint payload is corrupted (checksum mismatch)")
    header = json.loads(buf[10 : 10 + head_len])
    data_start = 10 + head_len
    arrays = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(buf, dtype="<f8", count=count, offset=data_start + entry["offset"])
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)

    config = RunConfig.from_dict(header["config"])
    state = init_state(config, header["use_mldce"])
    params = dict(state.model.named_parameters())
    stored = {k[len("param/") :] for k in arrays if k.startswith("param/")}
    if stored != set(params):
        missing, extra = sorted(set(params) - stored), sorted(stored - set(params))
        raise CheckpointError(f"parameter mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
    for name, p in params.items():
        p.data = arrays[f"param/{name}"]
    moments = ({}, {})
    for key, arr in arrays.items():
        kind, _, name = key.partition("/")
        if kind in ("adam_m", "adam_v"):
            moments[kind == "adam_v"][name] = arr
    state.optimizer.load_moments(moments[0], moments[1], header["adam_t"])
    state.epoch = header["epoch"]
    state.rng.bit_generator.state = header["rng"]
    state.history = History(list(header["history"]["loss"]), list(header["history"]["val_dice"]))
    return state
