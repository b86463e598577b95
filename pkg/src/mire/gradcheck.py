"""Finite-difference check of the three training losses on small random problems.

Each case is a tiny extractor (6 inputs, 8 features, head 8 -> 4), a batch of
12 samples from three classes and an episodic memory holding stored features
for two of them. The losses are differentiated with respect to every network
parameter.
"""

from dataclasses import dataclass

import numpy as np

from . import ndgrad as nd
from .losses import MireConfig, mire_loss, mire_pp_loss, ms_loss
from .memory import EpisodicMemory, stack_entries
from .model import ExtractorConfig, init_parameters

LOSSES = ("ms", "mire", "mire++")


@dataclass
class Case:
    seed: int
    extractor: object
    x: np.ndarray
    y: np.ndarray
    memory: EpisodicMemory
    config: MireConfig


def make_case(seed, batch=12, input_dim=6, feature_dim=8, head_out=4):
    rng = np.random.default_rng([seed, 7])
    mcfg = ExtractorConfig(input_dim=input_dim, hidden=(8,), feature_dim=feature_dim,
                           head_hidden=feature_dim, head_out=head_out, seed=seed)
    ext = init_parameters(mcfg, seed)
    y = np.arange(batch) % 3
    x = rng.standard_normal((batch, input_dim)) + 1.5 * y[:, None]
    memory = EpisodicMemory(10)
    mx = rng.standard_normal((10, input_dim))
    my = np.repeat([0, 1], 5)
    # stored features: current ones plus noise, so correlations are neither 0 nor 1
    mz = ext.features_array(mx) + 0.3 * rng.standard_normal((10, feature_dim))
    mz /= np.linalg.norm(mz, axis=1, keepdims=True)
    memory.update(mx, my, mz, 0, rng)
    cfg = MireConfig(alpha=float(rng.uniform(0.01, 1.0)), beta=float(rng.uniform(0.01, 1.0)))
    return Case(seed, ext, x, y, memory, cfg)


def loss_fn(case, which):
    ext, cfg = case.extractor, case.config

    def f(_params):
        emb = ext.embeddings(case.x)
        if which == "ms":
            return ms_loss(emb, case.y, cfg.ms)
        if which == "mire":
            return mire_loss(emb, case.y, cfg)
        pairs = []
        for c in case.memory.classes:
            sx, _, sz = stack_entries(case.memory.slots[c])
            pairs.append((ext.features(sx), sz))
        return mire_pp_loss(emb, case.y, cfg, pairs)

    return f


def check_case(seed, h=1e-5):
    """``{loss name: max relative error}`` for one random case."""
    case = make_case(seed)
    return {which: nd.grad_check(loss_fn(case, which), case.extractor.parameters, h)
            for which in LOSSES}


def check_many(seeds, h=1e-5):
    return [{"seed": s, **check_case(s, h)} for s in seeds]
