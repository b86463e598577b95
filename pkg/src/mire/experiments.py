"""Experiment cells shared by the command line and the acceptance suite.

A cell is one (configuration, seed) pair. The seed fixes the data, the model
initialisation and every stochastic choice of the trainer, so cells with the
same seed but different methods see exactly the same stream.
"""

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .metrics import (average_accuracy, average_forgetting, class_mean_error,
                      forward_transfer_gaps)
from .stream import StreamConfig, generate_synthetic, holdout, make_stream, read_csv_dataset
from .trainer import TrainConfig, TrainingDiverged, ablation_config, init_state, run, step

WORKERS_ENV = "MIRE_WORKERS"

# (MI rebalancing, prototypes & drift correction, CC penalty)
ABLATION_CELLS = (
    (False, False, False),
    (False, True, True),
    (True, False, False),
    (True, True, False),
    (True, True, True),
)


@dataclass
class BenchmarkData:
    stream: object
    eval_sets: dict
    task_classes: list
    train: object


@dataclass(frozen=True)
class CsvSource:
    """A labelled CSV file used in place of the synthetic generator.

    Stands in for :class:`StreamConfig` wherever a cell needs its data; the
    seed only drives the holdout split and the within-task shuffle.
    """
    path: str
    input_dim: int
    classes_per_task: int = 2
    batch_size: int = 10
    skip_header: bool = False
    seed: int = 0

    def read(self):
        return read_csv_dataset(self.path, self.classes_per_task, self.input_dim, self.skip_header)


def benchmark_data(stream_cfg, holdout_fraction=0.2):
    if isinstance(stream_cfg, CsvSource):
        data = stream_cfg.read()
    else:
        data = generate_synthetic(stream_cfg)
    train, eval_sets = holdout(data, holdout_fraction, seed=stream_cfg.seed)
    stream = make_stream(train, stream_cfg.batch_size, stream_cfg.seed)
    return BenchmarkData(stream, eval_sets, stream.task_classes(), train)


def seeded(train_cfg, stream_cfg, seed):
    """Copies of both configs re-seeded for one cell."""
    model = replace(train_cfg.model, seed=seed, input_dim=stream_cfg.input_dim)
    return replace(train_cfg, seed=seed, model=model), replace(stream_cfg, seed=seed)


@dataclass
class CellResult:
    method: str
    seed: int
    acc: float
    fgt: float
    record: object


def run_cell(train_cfg, stream_cfg, seed, label=None):
    tcfg, scfg = seeded(train_cfg, stream_cfg, seed)
    bench = benchmark_data(scfg)
    rec = run(bench.stream, tcfg, bench.eval_sets)
    fgt = average_forgetting(rec.accuracy) if rec.accuracy.shape[0] > 1 else float("nan")
    return CellResult(label or tcfg.method, seed, average_accuracy(rec.accuracy), fgt, rec)


@dataclass
class CellFailure:
    method: str
    seed: int
    error: str


def _run_cell_args(args, keep_going=False):
    if not keep_going:
        return run_cell(*args)
    try:
        return run_cell(*args)
    except (TrainingDiverged, ValueError) as exc:
        _, _, seed, label = args
        return CellFailure(label, seed, f"{type(exc).__name__}: {exc}")


def _keep_going(args):
    return _run_cell_args(args, keep_going=True)


def worker_count():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_cells(jobs, workers=None, keep_going=False):
    """Run ``(train_cfg, stream_cfg, seed, label)`` jobs, in parallel processes if asked.

    With ``keep_going`` a cell that diverges or is misconfigured comes back as
    a :class:`CellFailure` instead of aborting the rest.
    """
    workers = worker_count() if workers is None else workers
    fn = _keep_going if keep_going else _run_cell_args
    if workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def method_jobs(methods, seeds, train_cfg=TrainConfig(), stream_cfg=StreamConfig()):
    return [(replace(train_cfg, method=m), stream_cfg, s, m) for m in methods for s in seeds]


def ablation_label(cell):
    return "".join("x" if on else "-" for on in cell)


def ablation_jobs(seeds, train_cfg=TrainConfig(), stream_cfg=StreamConfig()):
    return [(ablation_config(train_cfg, *cell), stream_cfg, s, ablation_label(cell))
            for cell in ABLATION_CELLS for s in seeds]


def train_first_task(train_cfg, bench, epochs=5):
    """Extractor after ``epochs`` passes over the first task's minibatches only."""
    state = init_state(train_cfg)
    first = bench.stream.task_ends()[0]
    batches = list(bench.stream)[:first + 1]
    for _ in range(epochs):
        for x, y in batches:
            step(state, x, y)
    return state.extractor


def forward_transfer_cell(train_cfg, stream_cfg, seed, epochs=5):
    tcfg, scfg = seeded(train_cfg, stream_cfg, seed)
    bench = benchmark_data(scfg)
    ext = train_first_task(tcfg, bench, epochs)
    return forward_transfer_gaps(ext, bench.eval_sets, bench.task_classes)


def mean_error_cell(train_cfg, stream_cfg, seed):
    tcfg, scfg = seeded(train_cfg, stream_cfg, seed)
    bench = benchmark_data(scfg)
    rec = run(bench.stream, tcfg, bench.eval_sets)
    return class_mean_error(rec.snapshots, bench.eval_sets, tcfg.model), rec


def ten_task_stream():
    """Ten single-class tasks with memory for ten samples per class."""
    return StreamConfig(num_classes=10, classes_per_task=1)


def summarize_cells(cells):
    by_method = {}
    for cell in cells:
        by_method.setdefault(cell.method, {"acc": [], "fgt": []})
        by_method[cell.method]["acc"].append(cell.acc)
        by_method[cell.method]["fgt"].append(cell.fgt)
    return {m: {k: np.array(v) for k, v in d.items()} for m, d in by_method.items()}
