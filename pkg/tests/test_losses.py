import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mire import ndgrad as nd
from mire.losses import (MireConfig, MsConfig, cc_penalty, cc_per_class, entropy_estimate,
                         mire_loss, mire_pp_loss, ms_loss, n_pairs_loss, triplet_loss)
from mire.ndgrad import Tensor


def unit_rows(a):
    a = np.asarray(a, dtype=float)
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def on_circle(degrees):
    r = np.radians(degrees)
    return np.stack([np.cos(r), np.sin(r)], axis=1)


def random_batch(seed, n=8, dim=4, classes=3):
    rng = np.random.default_rng(seed)
    return unit_rows(rng.standard_normal((n, dim))), rng.integers(0, classes, n)


# -- scripted oracles: plain loops over the written formulas ------------------

def ms_oracle(z, y, a=2.0, b=50.0, lam=0.5, eps=0.1):
    n = len(y)
    S = [[sum(z[i][k] * z[j][k] for k in range(len(z[i]))) for j in range(n)] for i in range(n)]
    total = 0.0
    for i in range(n):
        negs = [S[i][j] for j in range(n) if y[j] != y[i]]
        poss = [S[i][j] for j in range(n) if j != i and y[j] == y[i]]
        max_neg = max(negs) if negs else -math.inf
        min_pos = min(poss) if poss else math.inf
        P = [s for s in poss if s < max_neg + eps]
        N = [s for s in negs if s > min_pos - eps]
        if P:
            total += math.log(1 + sum(math.exp(-a * (s - lam)) for s in P)) / a
        if N:
            total += math.log(1 + sum(math.exp(b * (s - lam)) for s in N)) / b
    return total / n


def entropy_oracle(z, delta):
    n = len(z)
    out = 0.0
    for i in range(n):
        inner = sum(math.exp(delta * float(np.dot(z[i], z[j]))) for j in range(n)) / n
        out -= math.log(inner)
    return out / n


def triplet_oracle(z, y, margin):
    n, vals = len(y), []
    for a in range(n):
        for p in range(n):
            if p == a or y[p] != y[a]:
                continue
            for q in range(n):
                if y[q] == y[a]:
                    continue
                dp = float(np.sum((z[a] - z[p]) ** 2))
                dn = float(np.sum((z[a] - z[q]) ** 2))
                vals.append(max(0.0, dp - dn + margin))
    return sum(vals) / len(vals) if vals else 0.0


def npairs_oracle(z, y):
    n, vals = len(y), []
    for a in range(n):
        negs = [q for q in range(n) if y[q] != y[a]]
        if not negs:
            continue
        for p in range(n):
            if p == a or y[p] != y[a]:
                continue
            sap = float(np.dot(z[a], z[p]))
            vals.append(math.log(1 + sum(math.exp(float(np.dot(z[a], z[q])) - sap) for q in negs)))
    return sum(vals) / len(vals) if vals else 0.0


# -- MS loss ---------------------------------------------------------------

def test_ms_single_class_is_zero():
    z, _ = random_batch(0)
    assert ms_loss(Tensor(z), np.zeros(8, dtype=int)).item() == 0.0


def test_ms_perfectly_separated_pairs_mine_nothing():
    z = np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]])
    assert ms_loss(Tensor(z), np.array([0, 0, 1, 1])).item() == 0.0


def test_ms_three_points_on_circle():
    z = on_circle([0.0, 30.0, 180.0])
    y = [0, 0, 1]
    assert abs(ms_loss(Tensor(z), np.array(y)).item() - ms_oracle(z, y)) < 1e-10


@pytest.mark.parametrize("seed", range(10))
def test_ms_random_batches_match_oracle(seed):
    z, y = random_batch(seed)
    got = ms_loss(Tensor(z), y).item()
    assert abs(got - ms_oracle(z, y.tolist())) < 1e-10
    assert got >= 0.0


def test_ms_nonzero_case_is_exercised():
    # hard positive at 100 degrees and a hard negative at 60 degrees
    z = on_circle([0.0, 100.0, 60.0])
    y = [0, 0, 1]
    expect = ms_oracle(z, y)
    assert expect > 0
    assert abs(ms_loss(Tensor(z), np.array(y)).item() - expect) < 1e-10


def test_ms_rejects_non_unit_rows():
    with pytest.raises(ValueError):
        ms_loss(Tensor([[2.0, 0.0], [0.0, 1.0]]), np.array([0, 1]))


# -- entropy estimate --------------------------------------------------------

def test_entropy_identical_rows():
    z = np.tile([[0.6, 0.8]], (4, 1))
    assert entropy_estimate(Tensor(z), 5.0).item() == pytest.approx(-5.0, abs=1e-12)


def test_entropy_orthogonal_and_antipodal():
    orth = entropy_estimate(Tensor(np.eye(2)), 1.0).item()
    anti = entropy_estimate(Tensor([[1.0, 0.0], [-1.0, 0.0]]), 1.0).item()
    assert orth == pytest.approx(-math.log((math.e + 1) / 2), abs=1e-12)
    assert anti == pytest.approx(-math.log(math.cosh(1.0)), abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_entropy_matches_oracle(seed):
    z, _ = random_batch(seed, n=6)
    assert entropy_estimate(Tensor(z), 5.0).item() == pytest.approx(entropy_oracle(z, 5.0), abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 9))
def test_entropy_permutation_invariant_and_finite(seed, n):
    z, _ = random_batch(seed, n=n)
    perm = np.random.default_rng(seed + 1).permutation(n)
    a = entropy_estimate(Tensor(z), 5.0).item()
    b = entropy_estimate(Tensor(z[perm]), 5.0).item()
    assert np.isfinite(a) and abs(a - b) < 1e-12
    # -delta * max S <= H <= -delta * min S, since the inner mean lies between the extremes
    S = z @ z.T
    assert -5.0 * S.max() - 1e-12 <= a <= -5.0 * S.min() + 1e-12


# -- MIRe and MIRe++ ---------------------------------------------------------

def test_mire_alpha_zero_is_ms():
    z, y = random_batch(3)
    cfg = MireConfig(alpha=0.0)
    assert mire_loss(Tensor(z), y, cfg).item() == ms_loss(Tensor(z), y, cfg.ms).item()


def test_mire_identical_single_class_batch():
    z = np.tile([[0.0, 1.0]], (3, 1))
    cfg = MireConfig(alpha=0.02, delta=5.0)
    assert mire_loss(Tensor(z), np.zeros(3, dtype=int), cfg).item() == pytest.approx(0.1, abs=1e-12)


def test_mire_pp_reduces_to_mire():
    z, y = random_batch(4)
    cur = Tensor(unit_rows(np.random.default_rng(0).standard_normal((5, 3))))
    base = mire_loss(Tensor(z), y, MireConfig()).item()
    assert mire_pp_loss(Tensor(z), y, MireConfig(beta=0.0), [(cur, cur.data)]).item() == base
    assert mire_pp_loss(Tensor(z), y, MireConfig(), []).item() == base


def test_mire_pp_self_correlation_subtracts_beta_e_per_class():
    z, y = random_batch(5)
    rng = np.random.default_rng(1)
    pairs = []
    for _ in range(3):
        f = unit_rows(rng.standard_normal((6, 4)))
        pairs.append((Tensor(f), f.copy()))
    cfg = MireConfig(beta=0.01)
    expect = mire_loss(Tensor(z), y, cfg).item() - 0.01 * 4 * 3
    assert mire_pp_loss(Tensor(z), y, cfg, pairs).item() == pytest.approx(expect, abs=1e-12)


def test_cc_sign_flip_and_degenerate_dims():
    rng = np.random.default_rng(2)
    f = rng.standard_normal((7, 3))
    f[:, 2] = 0.4                                  # constant dimension
    rho = cc_per_class(Tensor(f), -f).data
    assert np.allclose(rho[:2], -1.0) and rho[2] == 0.0
    assert cc_per_class(Tensor(f[:1]), f[:1]) is None


def test_cc_independent_series_near_zero():
    rng = np.random.default_rng(3)
    rho = cc_per_class(Tensor(rng.standard_normal((1000, 5))), rng.standard_normal((1000, 5))).data
    assert np.all(np.abs(rho) < 0.1)


def test_cc_matches_numpy_pearson():
    rng = np.random.default_rng(4)
    a, b = rng.standard_normal((9, 4)), rng.standard_normal((9, 4))
    rho = cc_per_class(Tensor(a), b).data
    ref = [np.corrcoef(a[:, i], b[:, i])[0, 1] for i in range(4)]
    assert np.allclose(rho, ref, atol=1e-12)


def test_cc_penalty_normalize_flag():
    rng = np.random.default_rng(5)
    a, b = rng.standard_normal((6, 4)), rng.standard_normal((6, 4))
    rho = cc_per_class(Tensor(a), b).data
    assert cc_penalty([(Tensor(a), b)]).item() == pytest.approx(rho.sum())
    assert cc_penalty([(Tensor(a), b)], normalize=True).item() == pytest.approx(rho.mean())
    assert cc_penalty([(Tensor(a[:1]), b[:1])]) is None


def test_mire_pp_monotone_in_rho():
    # d loss / d rho = -beta for every dimension and class
    z, y = random_batch(6)
    rng = np.random.default_rng(6)
    a, b = rng.standard_normal((6, 4)), rng.standard_normal((6, 4))
    cur = Tensor(a, requires_grad=True)
    cfg = MireConfig(beta=0.3)
    loss_fn = lambda t: mire_pp_loss(Tensor(z), y, cfg, [(t, b)])
    rho = cc_per_class(cur, b)
    # moving current features towards stored ones raises rho and must lower the loss
    step = 1e-3 * (b - b.mean(0)) / np.linalg.norm(b - b.mean(0), axis=0)
    before, after = loss_fn(Tensor(a)).item(), loss_fn(Tensor(a + step)).item()
    rho_after = cc_per_class(Tensor(a + step), b).data
    assert np.all(rho_after >= rho.data)
    assert after <= before


# -- other metric losses -----------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_triplet_and_npairs_match_oracles(seed):
    z, y = random_batch(seed, n=7)
    assert triplet_loss(Tensor(z), y, 0.2).item() == pytest.approx(triplet_oracle(z, y, 0.2), abs=1e-10)
    assert n_pairs_loss(Tensor(z), y).item() == pytest.approx(npairs_oracle(z, y), abs=1e-10)


def test_triplet_npairs_edge_cases():
    z, _ = random_batch(0, n=4)
    one = np.zeros(4, dtype=int)
    assert triplet_loss(Tensor(z), one).item() == 0.0
    assert n_pairs_loss(Tensor(z), one).item() == 0.0
    sep = np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
    assert triplet_loss(Tensor(sep), np.array([0, 0, 1]), 0.2).item() == 0.0


@pytest.mark.parametrize("dml", ["triplet", "npairs"])
def test_entropy_composes_with_other_losses(dml):
    z, y = random_batch(1)
    cfg = MireConfig(dml=dml, alpha=0.1)
    base = {"triplet": triplet_oracle(z, y, cfg.margin), "npairs": npairs_oracle(z, y)}[dml]
    expect = base - 0.1 * entropy_oracle(z, cfg.delta)
    assert mire_loss(Tensor(z), y, cfg).item() == pytest.approx(expect, abs=1e-10)


@pytest.mark.parametrize("name", ["ms", "mire", "triplet", "npairs"])
def test_loss_gradients_on_raw_inputs(name):
    worst = 0.0
    for seed in range(10):
        z, y = random_batch(seed)
        raw = Tensor(z + 0.1 * np.random.default_rng(seed).standard_normal(z.shape), requires_grad=True)
        f = {
            "ms": lambda t: ms_loss(nd.l2_normalize(t), y),
            "mire": lambda t: mire_loss(nd.l2_normalize(t), y, MireConfig(alpha=0.5)),
            "triplet": lambda t: triplet_loss(nd.l2_normalize(t), y),
            "npairs": lambda t: n_pairs_loss(nd.l2_normalize(t), y),
        }[name]
        worst = max(worst, nd.grad_check(f, raw))
    assert worst < 1e-4
