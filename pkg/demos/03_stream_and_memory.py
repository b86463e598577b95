"""
Split streams and a class-balanced memory
=========================================

The learner sees size-10 minibatches with no task ids. Memory splits its
capacity evenly over the classes seen so far and fills each share with a
reservoir, keeping the feature each sample had when it went in.
"""

import numpy as np

from mire.memory import EpisodicMemory
from mire.stream import StreamConfig, generate_synthetic, holdout, make_stream

cfg = StreamConfig(num_classes=6, classes_per_task=2, samples_per_class=50, input_dim=4)
data = generate_synthetic(cfg)
train, evals = holdout(data, 0.2, seed=cfg.seed)
stream = make_stream(train, cfg.batch_size, cfg.seed)
print("tasks:", stream.task_classes(), " batches:", len(list(stream)))
print("held out per class:", {c: len(v) for c, v in evals.items()})

# %%
# Quotas as new classes arrive: 20 slots over 3 classes gives 7, 7, 6.
rng = np.random.default_rng(0)
mem = EpisodicMemory(20)
for t, (x, y) in enumerate(stream):
    z = rng.standard_normal((len(y), 3))
    mem.update(x, y, z / np.linalg.norm(z, axis=1, keepdims=True), t, rng)
    if t in stream.task_ends():
        print(f"after batch {t:3d}:", {c: len(mem.slots[c]) for c in mem.classes})

# %%
# Reservoir inclusion is uniform along the stream: every item of a 1000-long
# single-class stream is kept with probability 50/1000.
hits = np.zeros(1000)
x = np.arange(1000.0)[:, None]
y = np.zeros(1000, dtype=int)
z = np.tile([1.0, 0.0], (1000, 1))
for _ in range(300):
    m = EpisodicMemory(50)
    m.update(x, y, z, 0, rng)
    hits[[int(e.x[0]) for e in m.slots[0]]] += 1
freq = hits / 300
print("inclusion frequency by stream decile:", np.round(freq.reshape(10, 100).mean(1), 4))
