"""Online training loop with replay, entropy rebalancing and the correlation penalty.

One call to :func:`step` consumes one stream minibatch:

1. sample a replay batch uniformly from memory and join it to the minibatch,
2. loss = L(batch) + L(augment(batch)), L being the metric loss minus the
   weighted entropy estimate,
3. for ``mire++``, subtract ``beta`` times the correlation between current and
   stored features of a random subset of every class in memory,
4. one plain SGD step,
5. offer the minibatch (with post-step features) to memory and fold it into
   the class prototypes.
"""

import json
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import ndgrad as nd
from .classifier import build_means, evaluate
from .losses import MireConfig, MsConfig, cc_penalty, ms_loss, mire_loss
from .memory import EpisodicMemory, MemoryEntry, stack_entries
from .model import ExtractorConfig, init_parameters
from .prototypes import PrototypeTable

METHODS = ("finetune", "ms-ncm", "mire", "mire++")


class TrainingDiverged(RuntimeError):
    def __init__(self, message, iteration, diagnostics):
        super().__init__(message)
        self.iteration = iteration
        self.diagnostics = diagnostics


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    method: str = "mire++"
    replay_batch: int = 32
    lr: float = 0.2
    mire: MireConfig = field(default_factory=MireConfig)
    noise_std: float = 0.1
    cc_subset: int = 10
    memory_size: int = 100
    gamma: float = 0.99
    seed: int = 0
    model: ExtractorConfig = field(default_factory=ExtractorConfig)
    # ablation switches; None means "what the method implies"
    entropy: bool = None
    cc: bool = None
    inference: str = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.replay_batch < 0 or self.cc_subset < 0 or self.noise_std < 0:
            raise ValueError("replay_batch, cc_subset and noise_std must be non-negative")
        if self.inference not in (None, "ncm", "corrected"):
            raise ValueError(f"unknown inference mode {self.inference!r}")

    @property
    def uses_entropy(self):
        default = self.method in ("mire", "mire++")
        return (default if self.entropy is None else self.entropy) and self.mire.alpha > 0

    @property
    def uses_cc(self):
        default = self.method == "mire++"
        return (default if self.cc is None else self.cc) and self.mire.beta > 0

    @property
    def inference_mode(self):
        if self.inference is not None:
            return self.inference
        return "corrected" if self.method == "mire++" else "ncm"

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        mire = dict(d.pop("mire", {}))
        ms = MsConfig(**mire.pop("ms", {}))
        model = dict(d.pop("model", {}))
        if "hidden" in model:
            model["hidden"] = tuple(model["hidden"])
        return cls(mire=MireConfig(ms=ms, **mire), model=ExtractorConfig(**model), **d)


def ablation_config(base, rebalancing, drift_correction, cc_penalty_on):
    """A config switching the three ablation components on and off independently."""
    return replace(base, method="mire++", entropy=rebalancing, cc=cc_penalty_on,
                   inference="corrected" if drift_correction else "ncm")


@dataclass
class TrainerState:
    config: TrainConfig
    extractor: object
    memory: EpisodicMemory
    prototypes: PrototypeTable
    rng: np.random.Generator
    t: int = 0


def init_state(cfg):
    return TrainerState(
        config=cfg,
        extractor=init_parameters(cfg.model, cfg.model.seed),
        memory=EpisodicMemory(cfg.memory_size),
        prototypes=PrototypeTable(cfg.gamma),
        rng=np.random.default_rng([cfg.seed, 3]),
    )


def augment(x, noise_std, rng):
    """Additive isotropic Gaussian noise; labels are untouched by construction."""
    x = np.asarray(x, dtype=np.float64)
    if noise_std == 0:
        return x.copy()
    return x + noise_std * rng.standard_normal(x.shape)


def _loss_terms(state, x, y):
    cfg = state.config
    ext, rng = state.extractor, state.rng
    if cfg.method == "finetune":
        return ms_loss(ext.embeddings(x), y, cfg.mire.ms)

    replay = state.memory.retrieve(cfg.replay_batch, rng)
    if replay:
        rx, ry, _ = stack_entries(replay)
        x = np.concatenate([x, rx])
        y = np.concatenate([y, ry])
    mcfg = cfg.mire if cfg.uses_entropy else replace(cfg.mire, alpha=0.0)
    n = len(y)
    _, emb = ext.forward(np.concatenate([x, augment(x, cfg.noise_std, rng)]))
    loss = mire_loss(emb[:n], y, mcfg) + mire_loss(emb[n:], y, mcfg)

    if cfg.uses_cc:
        pairs = []
        for c in state.memory.classes:
            subset = state.memory.class_subset(c, cfg.cc_subset, rng)
            if len(subset) < 2:
                continue
            sx, _, sz = stack_entries(subset)
            pairs.append((ext.features(sx), sz))
        penalty = cc_penalty(pairs, cfg.mire.cc_normalize)
        if penalty is not None:
            loss = loss - penalty * cfg.mire.beta
    return loss


def step(state, x, y):
    """One online iteration on the stream minibatch ``(x, y)``; returns the loss value."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("empty minibatch")
    cfg, ext = state.config, state.extractor
    loss = _loss_terms(state, x, y)
    value = float(loss.data)
    if not np.isfinite(value):
        raise TrainingDiverged(f"non-finite loss at iteration {state.t}", state.t, {
            "loss": value,
            "param_norms": [float(np.linalg.norm(p.data)) for p in ext.parameters],
            "memory_size": len(state.memory),
        })
    ext.zero_grad()
    if loss.requires_grad:
        nd.backward(loss)
        for p in ext.parameters:
            p.data = p.data - cfg.lr * p.grad
    feats = ext.features_array(x)
    state.memory.update(x, y, feats, state.t, state.rng)
    state.prototypes.update(y, feats)
    state.t += 1
    return value


@dataclass
class Snapshot:
    task: int
    iteration: int
    params: list
    means: dict          # inference mode -> ClassMeans
    accuracies: list     # accuracy on tasks 0..task


@dataclass
class RunRecord:
    config: TrainConfig
    losses: list
    accuracy: np.ndarray     # (T, T), row j = after task j, NaN above the diagonal
    snapshots: list
    state: TrainerState = None

    @property
    def final_mode(self):
        return self.config.inference_mode


def _task_accuracies(means, eval_sets, extractor, task_classes, upto):
    accs = []
    for classes in task_classes[:upto + 1]:
        _, acc = evaluate(means, eval_sets, extractor, classes)
        accs.append(acc)
    return accs


def run(stream, cfg, eval_sets, state=None):
    """Single pass over ``stream`` with snapshots at the evaluator's task ends.

    ``eval_sets`` maps class id to held-out inputs. The trainer itself only
    ever sees minibatches; the boundary list is read here, on the evaluator
    side, after each step.
    """
    state = init_state(cfg) if state is None else state
    if stream.input_dim != cfg.model.input_dim:
        raise ValueError(f"stream has {stream.input_dim} features, model expects "
                         f"{cfg.model.input_dim}")
    if cfg.memory_size < sum(len(t) for t in stream.task_classes()):
        raise ValueError("memory must hold at least one sample per class")
    task_classes = stream.task_classes()
    ends = {b: k for k, b in enumerate(stream.task_ends())}
    T = len(task_classes)
    acc = np.full((T, T), np.nan)
    losses, snapshots = [], []
    for i, (x, y) in enumerate(stream):
        losses.append(step(state, x, y))
        if i in ends:
            k = ends[i]
            means = {"ncm": build_means(state.memory, state.extractor, "ncm")}
            means["corrected"] = build_means(state.memory, state.extractor, "corrected",
                                             state.prototypes)
            accs = _task_accuracies(means[cfg.inference_mode], eval_sets, state.extractor,
                                    task_classes, k)
            acc[k, :k + 1] = accs
            snapshots.append(Snapshot(k, state.t, state.extractor.parameter_arrays(), means, accs))
    return RunRecord(cfg, losses, acc, snapshots, state)


# -- checkpoints -------------------------------------------------------------
#
# Layout (all integers little-endian):
#   8 bytes   magic b"MIRECKPT"
#   4 bytes   uint32 format version
#   8 bytes   uint64 header length H
#   H bytes   UTF-8 JSON header (sorted keys): config, counters, rng state,
#             memory bookkeeping and an ordered manifest of array shapes
#   rest      the manifest's arrays as float64 little-endian, C order, back to back

MAGIC = b"MIRECKPT"
VERSION = 1


def _state_payload(state):
    arrays, manifest = [], []

    def put(name, a):
        a = np.ascontiguousarray(a, dtype="<f8")
        arrays.append(a)
        manifest.append({"name": name, "shape": list(a.shape)})

    for i, p in enumerate(state.extractor.parameters):
        put(f"param{i}", p.data)
    mem = {}
    for c in sorted(state.memory.slots):
        entries = state.memory.slots[c]
        mem[str(c)] = [e.insert_iteration for e in entries]
        if entries:
            x, z = state.memory.class_arrays(c)
            put(f"mem{c}.x", x)
            put(f"mem{c}.z", z)
    for c in state.prototypes.classes:
        put(f"proto{c}", state.prototypes[c])
    header = {
        "config": state.config.to_dict(),
        "t": state.t,
        "rng": state.rng.bit_generator.state,
        "memory": {"capacity": state.memory.capacity,
                   "seen": {str(c): n for c, n in sorted(state.memory.seen.items())},
                   "iterations": mem},
        "prototypes": {"gamma": state.prototypes.gamma, "classes": state.prototypes.classes},
        "manifest": manifest,
    }
    return header, arrays


def checkpoint_bytes(state):
    header, arrays = _state_payload(state)
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(blob)), blob]
    parts.extend(a.tobytes() for a in arrays)
    return b"".join(parts)


def checkpoint_save(state, path):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(state))


def checkpoint_from_bytes(raw):
    if len(raw) < 20 or raw[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if len(raw) < 20 + hlen:
        raise CheckpointError("checkpoint truncated inside header")
    try:
        header = json.loads(raw[20:20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    arrays, offset = {}, 20 + hlen
    for item in header["manifest"]:
        count = int(np.prod(item["shape"], dtype=np.int64))
        end = offset + 8 * count
        if end > len(raw):
            raise CheckpointError("checkpoint truncated inside array payload")
        arrays[item["name"]] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(item["shape"]).copy()
        offset = end
    if offset != len(raw):
        raise CheckpointError("trailing bytes after checkpoint payload")

    cfg = TrainConfig.from_dict(header["config"])
    state = init_state(cfg)
    n_params = len(state.extractor.parameters)
    state.extractor.load_arrays([arrays[f"param{i}"] for i in range(n_params)])
    mem = state.memory
    mem.capacity = header["memory"]["capacity"]
    mem.seen = {int(c): n for c, n in header["memory"]["seen"].items()}
    mem.slots = {}
    for c, iters in header["memory"]["iterations"].items():
        c = int(c)
        mem.slots[c] = []
        if iters:
            xs, zs = arrays[f"mem{c}.x"], arrays[f"mem{c}.z"]
            for xi, zi, it in zip(xs, zs, iters):
                xi.setflags(write=False)
                zi.setflags(write=False)
                mem.slots[c].append(MemoryEntry(xi, c, zi, int(it)))
    state.prototypes = PrototypeTable(header["prototypes"]["gamma"])
    for c in header["prototypes"]["classes"]:
        state.prototypes.protos[int(c)] = arrays[f"proto{c}"]
    state.rng.bit_generator.state = header["rng"]
    state.t = header["t"]
    return state


def checkpoint_load(path):
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())
