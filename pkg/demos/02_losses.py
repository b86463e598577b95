"""
Metric losses and the entropy bonus
===================================

The training objective is a metric-learning loss (multi-similarity by
default) minus ``alpha`` times a kernel estimate of the embedding entropy.
The entropy term rewards spreading embeddings over the sphere.
"""

import math

import numpy as np

from mire import ndgrad as nd
from mire.losses import MireConfig, entropy_estimate, mire_loss, ms_loss

# %%
# Closed forms of the entropy estimate on two-point batches.
same = nd.Tensor([[0.6, 0.8]] * 4)
orth = nd.Tensor([[1.0, 0.0], [0.0, 1.0]])
anti = nd.Tensor([[1.0, 0.0], [-1.0, 0.0]])
print("identical batch, delta=5:", entropy_estimate(same, 5.0).item())
print("orthogonal pair, delta=1:", entropy_estimate(orth, 1.0).item(),
      " -log((e+1)/2) =", -math.log((math.e + 1) / 2))
print("antipodal pair,  delta=1:", entropy_estimate(anti, 1.0).item(),
      " -log cosh 1 =", -math.log(math.cosh(1.0)))

# %%
# A clustered batch against a spread-out one. Tight clusters give a small
# metric loss but also a low entropy.
rng = np.random.default_rng(1)
labels = np.repeat([0, 1, 2], 4)
centres = rng.standard_normal((3, 8))


def batch(spread):
    z = centres[labels] + spread * rng.standard_normal((12, 8))
    return nd.Tensor(z / np.linalg.norm(z, axis=1, keepdims=True))


for spread in (0.05, 0.5, 2.0):
    emb = batch(spread)
    print(f"spread {spread:4}: ms {ms_loss(emb, labels).item():.4f}  "
          f"entropy {entropy_estimate(emb).item():+.4f}  "
          f"mire {mire_loss(emb, labels, MireConfig(alpha=0.1)).item():.4f}")

# %%
# The same bonus can sit on top of other metric losses.
emb = batch(0.5)
for dml in ("ms", "triplet", "npairs"):
    print(dml, mire_loss(emb, labels, MireConfig(dml=dml)).item())
