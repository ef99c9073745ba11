# %% [markdown]
# A short walk through the autodiff core: build a graph, pull gradients back,
# and confirm them with central differences.

# %%
import numpy as np

from samdce import tensor as T
from samdce.blocks import MultiHeadAttention
from samdce.tensor import Parameter, Tensor

rng = np.random.default_rng(0)

# %%
# A tiny least-squares problem. The gradient of |Xw - y|^2 is 2 X^T (Xw - y).
X = rng.normal(size=(6, 3))
y = rng.normal(size=(6, 1))
w = Parameter(rng.normal(size=(3, 1)))

residual = T.matmul(Tensor(X), w) - y
loss = T.tsum(T.mul(residual, residual))
(g,) = T.grad(loss, [w])
print("autodiff:  ", g.ravel())
print("closed form:", (2 * X.T @ (X @ w.data - y)).ravel())

# %%
# Attention weights are rows of a softmax, so each row sums to one.
attn = MultiHeadAttention(8, 2, rng)
queries = Tensor(rng.normal(size=(1, 3, 8)))
context = Tensor(rng.normal(size=(1, 5, 8)))
out, weights = attn.forward(queries, context)
print("output shape", out.shape, "weights shape", weights.shape)
print("row sums", weights.data.sum(axis=-1).round(12))

# %%
# Finite-difference check on the attention block's parameters.
target = rng.normal(size=(1, 3, 8))
err = T.finite_difference_check(
    lambda: T.tsum(T.mul(attn(queries, context), target)), list(attn.parameters().values())
)
print(f"max relative error {err:.2e}")
