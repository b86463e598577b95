"""
A tiny reverse-mode autodiff engine
===================================

Every loss in the package is written against :mod:`mire.ndgrad`, a small
tensor type over float64 numpy arrays. This script builds a function by hand,
runs backward, and compares against central differences.
"""

import numpy as np

from mire import ndgrad as nd

# %%
# Build ``f(W) = mean(logsumexp(relu(x W), axis=1))`` and differentiate it.
rng = np.random.default_rng(0)
x = nd.Tensor(rng.standard_normal((5, 3)))
W = nd.Tensor(rng.standard_normal((3, 4)), requires_grad=True)


def f(w):
    return nd.mean(nd.logsumexp(nd.relu(nd.matmul(x, w)), axis=1))


loss = f(W)
nd.backward(loss)
print("loss", loss.item())
print("dL/dW\n", W.grad)

# %%
# ``grad_check`` perturbs every coordinate by +-h and reports the worst
# relative disagreement with the analytic gradient.
print("max relative error", nd.grad_check(f, W))

# %%
# Normalising rows onto the unit sphere is a primitive too. The squared norm
# of a normalised vector is constant, so its gradient vanishes.
v = nd.Tensor([[3.0, 4.0]], requires_grad=True)
u = nd.l2_normalize(v)
nd.backward(nd.tsum(u * u))
print("normalize([3, 4]) =", u.data, " grad of |u|^2:", v.grad)

# %%
# The stabilised log-sum-exp does not overflow.
print("logsumexp([1000, 1000]) =", nd.logsumexp(nd.Tensor([1000.0, 1000.0])).item())
