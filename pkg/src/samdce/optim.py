"""AdamW with decoupled weight decay."""

from __future__ import annotations

import numpy as np


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.name = name


class AdamW:
    """Adam moments with bias correction; decay is applied to the weights directly.

    Frozen parameters receive neither the Adam update nor the decay. Moments
    live in one flat buffer over the trainable parameters; ``m`` and ``v``
    expose them per parameter name.
    """

    def __init__(self, lr=5e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._names = None
        self._slices = {}
        self._m = self._v = None
        self._pending = ({}, {})

    def _layout(self, params):
        names = [n for n, p in params.items() if not p.frozen]
        if names == self._names:
            return names
        old_m, old_v = self.m, self.v
        self._names, self._slices, off = names, {}, 0
        for n in names:
            size = params[n].data.size
            self._slices[n] = (off, off + size, params[n].shape)
            off += size
        self._m, self._v = np.zeros(off), np.zeros(off)
        for n, (a, b, _) in self._slices.items():
            if n in old_m:
                self._m[a:b] = old_m[n].ravel()
                self._v[a:b] = old_v[n].ravel()
        return names

    def _view(self, buf, pending):
        if buf is None:
            return dict(pending)
        return {n: buf[a:b].reshape(shape) for n, (a, b, shape) in self._slices.items()}

    @property
    def m(self):
        return self._view(self._m, self._pending[0])

    @property
    def v(self):
        return self._view(self._v, self._pending[1])

    def load_moments(self, m, v, t):
        """Restore per-name moments (e.g. from a checkpoint)."""
        self.t = t
        self._names, self._m, self._v = None, None, None
        self._pending = (dict(m), dict(v))

    def step(self, params, grads):
        """Update ``params`` (name -> Parameter) in place from ``grads`` (name -> array)."""
        names = self._layout(params)
        missing = [n for n in names if n not in grads]
        if missing:
            raise KeyError(f"missing gradient for {missing[0]!r}")
        g = np.concatenate([np.ravel(grads[n]) for n in names])
        if not np.isfinite(g).all():
            raise NonFiniteGradient(next(n for n in names if not np.isfinite(grads[n]).all()))
        self._pending = ({}, {})
        w = np.concatenate([params[n].data.ravel() for n in names])
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        m, v = self._m, self._v
        m *= self.beta1
        m += (1.0 - self.beta1) * g
        v *= self.beta2
        g2 = (1.0 - self.beta2) * g
        g2 *= g
        v += g2
        w *= 1.0 - self.lr * self.weight_decay
        denom = v / c2
        np.sqrt(denom, out=denom)
        denom += self.eps
        step = m / c1
        step *= self.lr
        step /= denom
        w -= step
        for n in names:
            a, b, shape = self._slices[n]
            params[n].data = w[a:b].reshape(shape)


def adamw_step(params, grads, optimizer):
    optimizer.step(params, grads)
    return params, optimizer
