"""Linear, LoRA, layer-norm, attention and feed-forward building blocks."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Parameter, ShapeError


class Module:
    """Parameter container; parameters are discovered from attributes."""

    def _walk(self, prefix):
        for key, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value._walk(f"{prefix}{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item._walk(f"{prefix}{key}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{prefix}{key}.{i}", item

    def named_parameters(self, prefix=""):
        """Yield (dotted name, Parameter); a shared parameter appears once."""
        seen = set()
        for name, p in self._walk(prefix):
            if id(p) in seen:
                continue
            seen.add(id(p))
            p.name = name
            yield name, p

    def parameters(self):
        return dict(self.named_parameters())

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()


def _normal(rng, shape, std):
    return rng.normal(0.0, std, size=shape)


class LoRAAdapter(Module):
    """Low-rank update ``scaling * (x @ down) @ up``; ``up`` starts at zero."""

    def __init__(self, d_in, d_out, rank, rng, scaling=None):
        if not (1 <= rank < min(d_in, d_out)):
            raise ValueError(f"LoRA rank must satisfy 1 <= r < min({d_in}, {d_out}), got {rank}")
        self.rank = rank
        self.scaling = 1.0 / rank if scaling is None else float(scaling)
        self.down = Parameter(_normal(rng, (d_in, rank), 1.0 / math.sqrt(d_in)))
        self.up = Parameter(np.zeros((rank, d_out)))


class Linear(Module):
    """Affine map ``x @ weight + bias`` with weight stored as (d_in, d_out)."""

    def __init__(self, d_in, d_out, rng, bias=True, std=None):
        self.d_in, self.d_out = d_in, d_out
        std = 1.0 / math.sqrt(d_in) if std is None else std
        self.weight = Parameter(_normal(rng, (d_in, d_out), std))
        self.bias = Parameter(np.zeros(d_out)) if bias else None
        self.adapter = None

    def attach_lora(self, rank, rng, scaling=None, freeze_base=True):
        self.adapter = LoRAAdapter(self.d_in, self.d_out, rank, rng, scaling)
        if freeze_base:
            self.weight.frozen = True
            if self.bias is not None:
                self.bias.frozen = True
        return self.adapter

    def base(self, x):
        return T.linear(x, self.weight, self.bias)

    def __call__(self, x):
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"Linear expects last dim {self.d_in}, got shape {x.shape}")
        if self.adapter is not None:
            return lora_linear(self, self.adapter, x)
        return self.base(x)


def lora_linear(base, adapter, x):
    """base(x) + scaling * (x @ down) @ up, evaluated with the merged weight.

    ``x @ (W + s * down @ up)`` is the same linear map; with ``up`` all zero
    the merged weight equals ``W`` exactly, so the output is bitwise base(x).
    """
    if adapter.down.shape[0] != base.d_in or adapter.up.shape[1] != base.d_out:
        raise ShapeError("LoRA adapter dimensions do not match the base layer")
    delta = T.scale(T.matmul(adapter.down, adapter.up), adapter.scaling)
    return T.linear(x, base.weight + delta, base.bias)


class LayerNorm(Module):
    def __init__(self, d, eps=1e-5):
        if eps <= 0:
            raise ValueError("LayerNorm epsilon must be positive")
        self.eps = eps
        self.gain = Parameter(np.ones(d))
        self.shift = Parameter(np.zeros(d))

    def __call__(self, x):
        return T.layer_norm(x, self.gain, self.shift, self.eps)


def scaled_dot_product_attention(q, k, v):
    """Softmax attention over already-projected inputs.

    Shapes are (..., n_q, d_k), (..., n_k, d_k), (..., n_k, d_v). Returns the
    attended values and the attention weights (..., n_q, n_k).
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2] or k.shape[-2] < 1:
        raise ShapeError(f"attention shapes q={q.shape} k={k.shape} v={v.shape} are inconsistent")
    if q.shape[:-2] != k.shape[:-2] or k.shape[:-2] != v.shape[:-2]:
        raise ShapeError(f"attention batch dims differ: q={q.shape} k={k.shape} v={v.shape}")
    logits = T.scale(T.matmul(q, T.swapaxes(k, -1, -2)), 1.0 / math.sqrt(q.shape[-1]))
    weights = T.softmax_lastdim(logits)
    return T.matmul(weights, v), weights


class MultiHeadAttention(Module):
    """Multi-head attention with d_k = d_v = d_model / heads.

    Per-head projections are stored side by side in one (d_model, heads*d_k)
    matrix; head ``i`` owns columns ``i*d_k:(i+1)*d_k``.
    """

    def __init__(self, d_model, heads, rng, out_proj=True):
        if heads < 1 or d_model % heads:
            raise ValueError(f"d_model={d_model} is not divisible into {heads} heads")
        self.d_model, self.heads = d_model, heads
        self.d_head = d_model // heads
        self.w_q = Linear(d_model, d_model, rng)
        self.w_k = Linear(d_model, d_model, rng)
        self.w_v = Linear(d_model, d_model, rng)
        self.w_o = Linear(d_model, d_model, rng) if out_proj else None

    def projections(self):
        return [lin for lin in (self.w_q, self.w_k, self.w_v, self.w_o) if lin is not None]

    def _split(self, x):
        b, n, _ = x.shape
        return T.transpose(T.reshape(x, (b, n, self.heads, self.d_head)), (0, 2, 1, 3))

    def forward(self, queries, context, keys=None):
        """Attend from ``queries`` over ``context``.

        ``keys`` overrides the tensor fed to the key projection (e.g. context
        plus positional encoding); values always come from ``context``.
        Returns ``(output, weights)`` with weights shaped (B, heads, n_q, n_k).
        """
        keys = context if keys is None else keys
        for name, x in (("queries", queries), ("context", context), ("keys", keys)):
            if x.ndim != 3 or x.shape[-1] != self.d_model:
                raise ShapeError(f"{name} must be (B, n, {self.d_model}), got {x.shape}")
        if queries.shape[0] != context.shape[0] or keys.shape[:2] != context.shape[:2]:
            raise ShapeError(f"batch/length mismatch: q={queries.shape} k={keys.shape} v={context.shape}")
        q = self._split(self.w_q(queries))
        k = self._split(self.w_k(keys))
        v = self._split(self.w_v(context))
        out, weights = scaled_dot_product_attention(q, k, v)
        b, _, n_q, _ = out.shape
        out = T.reshape(T.transpose(out, (0, 2, 1, 3)), (b, n_q, self.d_model))
        if self.w_o is not None:
            out = self.w_o(out)
        return out, weights

    def __call__(self, queries, context, keys=None):
        return self.forward(queries, context, keys)[0]


def multi_head_cross_attention(attn, queries, context):
    return attn(queries, context)


def multi_head_self_attention(attn, tokens):
    return attn(tokens, tokens)


class FeedForward(Module):
    """Position-wise Linear-GELU-Linear."""

    def __init__(self, d_model, d_ff, rng):
        self.linear1 = Linear(d_model, d_ff, rng)
        self.linear2 = Linear(d_ff, d_model, rng)

    def __call__(self, x):
        return self.linear2(T.gelu(self.linear1(x)))
