import time
from dataclasses import replace

import numpy as np
import pytest

from mire import ndgrad as nd
from mire import trainer as tr
from mire.experiments import benchmark_data
from mire.losses import MireConfig, ms_loss
from mire.stream import StreamConfig
from mire.trainer import (CheckpointError, TrainConfig, TrainingDiverged, augment, checkpoint_bytes,
                          checkpoint_from_bytes, checkpoint_load, checkpoint_save, init_state,
                          run, step)


@pytest.fixture(scope="module")
def bench():
    return benchmark_data(StreamConfig())


def first_batches(bench, k):
    return list(bench.stream)[:k]


# -- independent oracle: the same loop written straight through in torch ------

torch = pytest.importorskip("torch")


def _t(a):
    return torch.tensor(np.asarray(a), dtype=torch.float64)


def _mlp(h, layers):
    for i, (w, b) in enumerate(layers):
        h = h @ w + b
        if i < len(layers) - 1:
            h = torch.relu(h)
    return h


def _unit(h):
    return h / h.norm(dim=1, keepdim=True)


def _ms(z, y, a=2.0, b=50.0, lam=0.5, eps=0.1):
    S = z @ z.T
    same = y[:, None] == y[None, :]
    pos = same & ~np.eye(len(y), dtype=bool)
    neg = ~same
    Sd = S.detach().numpy()
    hn = np.where(neg, Sd, -np.inf).max(1, keepdims=True)
    ep = np.where(pos, Sd, np.inf).min(1, keepdims=True)
    P = _t((pos & (Sd < hn + eps)).astype(float))
    N = _t((neg & (Sd > ep - eps)).astype(float))
    lp = torch.log1p((torch.exp(-a * (S - lam)) * P).sum(1)) / a
    ln = torch.log1p((torch.exp(b * (S - lam)) * N).sum(1)) / b
    return (lp + ln).mean()


def _entropy(z, delta):
    S = z @ z.T
    return -(torch.logsumexp(delta * S, dim=1) - np.log(len(z))).mean()


def _cc(f, z):
    fc = f - f.mean(0)
    zc = _t(z - z.mean(0))
    return (fc * zc).sum(0) / (fc.pow(2).sum(0).sqrt() * zc.pow(2).sum(0).sqrt())


def oracle_losses(cfg, batches):
    """Loss trace of ``batches`` under ``cfg`` recomputed without the library."""
    rng = np.random.default_rng([cfg.seed, 3])
    from mire.model import init_parameters
    params = [_t(p).requires_grad_() for p in init_parameters(cfg.model, cfg.model.seed).parameter_arrays()]
    n_trunk = 2 * (len(cfg.model.hidden) + 1)
    mem_x, mem_y, mem_z = [], [], []
    trace = []
    for x, y in batches:
        trunk = list(zip(params[:n_trunk:2], params[1:n_trunk:2]))
        head = list(zip(params[n_trunk::2], params[n_trunk + 1::2]))
        # memory stays below every quota for these few steps, so replay returns all
        # of it, listed class by class in insertion order
        if len(mem_y) > cfg.replay_batch:
            raise AssertionError("oracle only covers the all-of-memory replay regime")
        order = np.argsort(mem_y, kind="stable")
        bx = np.concatenate([x] + ([np.array(mem_x)[order]] if mem_x else []))
        by = np.concatenate([y] + ([np.array(mem_y)[order]] if mem_y else []))
        aug = bx + cfg.noise_std * rng.standard_normal(bx.shape)
        raw = _mlp(_t(np.concatenate([bx, aug])), trunk)
        emb = _unit(_mlp(raw, head))
        n = len(by)
        loss = 0
        for part in (emb[:n], emb[n:]):
            loss = loss + _ms(part, by) - cfg.mire.alpha * _entropy(part, cfg.mire.delta)
        my = np.array(mem_y)
        for c in sorted(set(mem_y)):
            idx = np.flatnonzero(my == c)
            if len(idx) > cfg.cc_subset:
                idx = idx[rng.choice(len(idx), size=cfg.cc_subset, replace=False)]
            if len(idx) < 2:
                continue
            f = _unit(_mlp(_t(np.array(mem_x)[idx]), trunk))
            loss = loss - cfg.mire.beta * _cc(f, np.array(mem_z)[idx]).sum()
        trace.append(loss.item())
        loss.backward()
        with torch.no_grad():
            for p in params:
                p -= cfg.lr * p.grad
                p.grad = None
        feats = _unit(_mlp(_t(x), trunk)).detach().numpy()
        mem_x.extend(x)
        mem_y.extend(int(v) for v in y)
        mem_z.extend(feats)
    return trace


@pytest.mark.parametrize("method", ["mire++", "mire", "ms-ncm"])
def test_three_steps_match_independent_reimplementation(bench, method):
    cfg = TrainConfig(method=method)
    if method == "ms-ncm":
        cfg = replace(cfg, mire=replace(cfg.mire, alpha=0.0, beta=0.0))
    elif method == "mire":
        cfg = replace(cfg, mire=replace(cfg.mire, beta=0.0))
    batches = first_batches(bench, 3)
    state = init_state(cfg)
    got = [step(state, x, y) for x, y in batches]
    expect = oracle_losses(cfg, batches)
    assert np.allclose(got, expect, atol=1e-9, rtol=0)


# -- step semantics ----------------------------------------------------------

def test_finetune_is_plain_ms_on_the_minibatch(bench):
    state = init_state(TrainConfig(method="finetune"))
    (x, y), (x2, y2) = first_batches(bench, 2)
    step(state, x, y)
    expect = ms_loss(state.extractor.embeddings(x2), y2).item()
    assert step(state, x2, y2) == expect


def test_cc_only_for_mire_pp(bench, monkeypatch):
    calls = []
    real = tr.cc_penalty
    monkeypatch.setattr(tr, "cc_penalty", lambda *a, **k: calls.append(1) or real(*a, **k))
    for method in ("ms-ncm", "mire"):
        state = init_state(TrainConfig(method=method))
        for x, y in first_batches(bench, 3):
            step(state, x, y)
    assert calls == []
    state = init_state(TrainConfig(method="mire++"))
    for x, y in first_batches(bench, 3):
        step(state, x, y)
    assert calls


def test_memory_holds_post_step_features(bench):
    state = init_state(TrainConfig())
    x, y = first_batches(bench, 1)[0]
    step(state, x, y)
    stored = np.stack([e.z for e in state.memory.entries()])
    xs = np.stack([e.x for e in state.memory.entries()])
    assert np.allclose(stored, state.extractor.features_array(xs), atol=1e-14)


def test_non_finite_loss_aborts_with_diagnostics(bench, monkeypatch):
    monkeypatch.setattr(tr, "_loss_terms", lambda *a: nd.Tensor(np.nan))
    state = init_state(TrainConfig())
    x, y = first_batches(bench, 1)[0]
    with pytest.raises(TrainingDiverged) as info:
        step(state, x, y)
    assert info.value.iteration == 0 and "param_norms" in info.value.diagnostics


def test_augment_noise_statistics():
    rng = np.random.default_rng(0)
    x = np.zeros((100_000, 3))
    d = augment(x, 0.1, rng) - x
    assert np.all(np.abs(d.std(axis=0) - 0.1) < 0.002)
    assert np.array_equal(augment(x[:5] + 1.0, 0.0, rng), x[:5] + 1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(method="sgd")
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(replay_batch=-1)


def test_memory_smaller_than_class_count_rejected(bench):
    with pytest.raises(ValueError):
        run(bench.stream, TrainConfig(memory_size=5), bench.eval_sets)


def test_config_dict_round_trip():
    cfg = TrainConfig(method="mire", mire=MireConfig(alpha=0.1), gamma=0.9)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


# -- whole runs -------------------------------------------------------------

@pytest.fixture(scope="module")
def default_run(bench):
    t0 = time.perf_counter()
    rec = run(bench.stream, TrainConfig(), bench.eval_sets)
    return rec, time.perf_counter() - t0


def test_default_run_is_fast_and_finite(default_run):
    rec, seconds = default_run
    assert seconds < 60
    assert np.all(np.isfinite(rec.losses)) and len(rec.losses) == 160
    assert len(rec.snapshots) == 5
    assert np.all(np.isnan(rec.accuracy[np.triu_indices(5, 1)]))


def test_same_seed_same_record(bench, default_run):
    rec, _ = default_run
    again = run(bench.stream, TrainConfig(), bench.eval_sets)
    assert again.losses == rec.losses
    assert np.array_equal(again.accuracy, rec.accuracy, equal_nan=True)
    assert checkpoint_bytes(again.state) == checkpoint_bytes(rec.state)


def test_mire_pp_without_weights_follows_ms_ncm(bench):
    zero = MireConfig(alpha=0.0, beta=0.0)
    a = run(bench.stream, TrainConfig(method="mire++", mire=zero), bench.eval_sets)
    b = run(bench.stream, TrainConfig(method="ms-ncm", mire=zero), bench.eval_sets)
    assert a.losses == b.losses
    assert all(np.array_equal(p, q) for p, q in
               zip(a.state.extractor.parameter_arrays(), b.state.extractor.parameter_arrays()))


def test_all_off_ablation_cell_is_ms_ncm(bench):
    cfg = tr.ablation_config(TrainConfig(), False, False, False)
    a = run(bench.stream, cfg, bench.eval_sets)
    b = run(bench.stream, TrainConfig(method="ms-ncm"), bench.eval_sets)
    assert a.losses == b.losses
    assert np.array_equal(a.accuracy, b.accuracy, equal_nan=True)
    c = run(bench.stream, tr.ablation_config(TrainConfig(), True, True, True), bench.eval_sets)
    d = run(bench.stream, TrainConfig(method="mire++"), bench.eval_sets)
    assert np.array_equal(c.accuracy, d.accuracy, equal_nan=True)


# -- checkpoints ---------------------------------------------------------------

def test_checkpoint_round_trip_bytes(default_run, tmp_path):
    rec, _ = default_run
    path = tmp_path / "a.ckpt"
    checkpoint_save(rec.state, path)
    again = checkpoint_load(path)
    assert checkpoint_bytes(again) == path.read_bytes()


def test_resumed_run_matches_uninterrupted(bench):
    batches = first_batches(bench, 12)
    cfg = TrainConfig()
    full = init_state(cfg)
    full_trace = [step(full, x, y) for x, y in batches]
    half = init_state(cfg)
    trace = [step(half, x, y) for x, y in batches[:6]]
    resumed = checkpoint_from_bytes(checkpoint_bytes(half))
    trace += [step(resumed, x, y) for x, y in batches[6:]]
    assert trace == full_trace
    assert checkpoint_bytes(resumed) == checkpoint_bytes(full)


def test_checkpoint_corruption_rejected(default_run):
    raw = checkpoint_bytes(default_run[0].state)
    with pytest.raises(CheckpointError):
        checkpoint_from_bytes(raw[:-8])
    with pytest.raises(CheckpointError):
        checkpoint_from_bytes(raw[:30])
    with pytest.raises(CheckpointError):
        checkpoint_from_bytes(b"NOTACKPT" + raw[8:])
    with pytest.raises(CheckpointError):
        checkpoint_from_bytes(raw[:8] + (2).to_bytes(4, "little") + raw[12:])
    with pytest.raises(CheckpointError):
        checkpoint_from_bytes(raw + b"\0")
