"""Federated continual training: local SGD rounds, FedAvg and the evaluation schedule.

All clients move through the T tasks in lockstep. Within a task, each round
runs M local steps per client followed (for federated strategies) by
sample-weighted FedAvg. After a task every client is evaluated on its test
tasks 1..t; after the last task, on the shared hold-out set.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Literal, Mapping, Sequence

import numpy as np

from ._random import keyed_rng, stable_permutation
from .data import Dataset, SyntheticSpec, generate_synthetic
from .learner import (
    Batch,
    DivergenceError,
    ModelSpec,
    ParamVector,
    forward,
    head_mask,
    init_model,
    loss_and_grad,
    sgd_step,
)
from .metrics import EvalResult, evaluate, mean_over_seen
from .partition import (
    Benchmark,
    ClientTimeline,
    NovelDiseaseSchedule,
    PartitionPlan,
    build_localized_benchmark,
    build_pandemic_benchmark,
)
from .strategies import (
    ReplayBuffer,
    StrategyConfig,
    SwadState,
    crt_schedule,
    mixup_batch,
    sample_batch_class_balanced,
    sample_batch_er,
    sample_batch_group_balanced,
    sample_batch_uniform,
    swad_finalize,
    swad_update,
)

log = logging.getLogger(__name__)

__all__ = [
    "ClientState",
    "EvalMatrix",
    "ExperimentResult",
    "FederationConfig",
    "RoundRecord",
    "fedavg",
    "init_clients",
    "run_experiment",
    "run_round",
    "run_task",
    "train",
]


@dataclass(frozen=True)
class FederationConfig:
    rounds_per_task: int = 20
    local_steps: int = 5
    batch_size: int = 10
    weighting: Literal["samples", "uniform"] = "samples"
    workers: int = 1

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ValueError("invalid federation config: " + "; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if self.rounds_per_task < 1:
            out.append("rounds_per_task must be >= 1")
        if self.local_steps < 0:
            out.append("local_steps must be >= 0")
        if self.batch_size < 1:
            out.append("batch_size must be >= 1")
        if self.weighting not in ("samples", "uniform"):
            out.append(f"weighting must be 'samples' or 'uniform', got {self.weighting!r}")
        if self.workers < 1:
            out.append("workers must be >= 1")
        return out

    @classmethod
    def from_mapping(cls, cfg: Mapping[str, Any]) -> FederationConfig:
        unknown = set(cfg) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown federation keys: {sorted(unknown)}")
        return cls(**cfg)


@dataclass
class RoundRecord:
    task: int
    round: int
    phase: int
    pre_loss: dict[int, float]
    post_loss: dict[int, float]
    checksums: dict[int, str]

    @property
    def consensus(self) -> bool:
        return len(set(self.checksums.values())) == 1


class EvalMatrix:
    """Per-client lower-triangular table of evaluation results plus hold-out results."""

    def __init__(self, n_clients: int, n_tasks: int, novel_label: int | None = None):
        self.n_clients = n_clients
        self.n_tasks = n_tasks
        self.novel_label = novel_label
        self.entries: dict[tuple[int, int, int], EvalResult] = {}
        self.holdout: dict[int, EvalResult] = {}

    def set(self, client: int, trained: int, evaluated: int, result: EvalResult) -> None:
        if not 0 <= evaluated <= trained < self.n_tasks:
            raise IndexError(f"entry ({trained}, {evaluated}) is outside the lower triangle")
        key = (client, trained, evaluated)
        if key in self.entries:
            raise ValueError(f"entry {key} already populated")
        self.entries[key] = result

    def get(self, client: int, trained: int, evaluated: int) -> EvalResult:
        return self.entries[(client, trained, evaluated)]

    def value(self, result: EvalResult, metric: str) -> float:
        return result.as_dict(self.novel_label)[metric]

    def matrix(self, client: int, metric: str = "ltr") -> np.ndarray:
        out = np.full((self.n_tasks, self.n_tasks), np.nan)
        for (c, t, j), r in self.entries.items():
            if c == client:
                out[t, j] = self.value(r, metric)
        return out

    def row(self, client: int, trained: int, metric: str = "ltr") -> list[float]:
        return [self.value(self.get(client, trained, j), metric) for j in range(trained + 1)]

    def seen_mean(self, client: int, trained: int, metric: str = "ltr") -> float:
        row = [v for v in self.row(client, trained, metric) if not math.isnan(v)]
        return mean_over_seen(row) if row else float("nan")

    def mean_across_clients(self, trained: int, metric: str = "ltr") -> float:
        vals = [self.seen_mean(c, trained, metric) for c in range(self.n_clients)]
        vals = [v for v in vals if not math.isnan(v)]
        return float(np.mean(vals)) if vals else float("nan")

    def holdout_mean(self, metric: str = "ltr") -> float:
        vals = [self.value(r, metric) for r in self.holdout.values()]
        vals = [v for v in vals if not math.isnan(v)]
        return float(np.mean(vals)) if vals else float("nan")

    def is_complete(self) -> bool:
        want = {(c, t, j) for c in range(self.n_clients) for t in range(self.n_tasks) for j in range(t + 1)}
        return set(self.entries) == want


@dataclass
class ClientState:
    client_id: int
    timeline: ClientTimeline
    params: ParamVector
    buffer: ReplayBuffer | None = None
    swad: SwadState | None = None

    def eval_params(self) -> ParamVector:
        if self.swad is not None and self.swad.history:
            return swad_finalize(self.swad)
        return self.params


def fedavg(params: Sequence[ParamVector], weights: Sequence[float] | None = None) -> ParamVector:
    """Coordinate-wise weighted mean, weights normalised to sum to one.

    Sums are exactly rounded (``math.fsum``), so the result does not depend
    on client order. Identical inputs (including a single client) are
    returned unchanged.
    """
    if not params:
        raise ValueError("no parameter vectors to average")
    shapes = params[0].shapes
    bad = [i for i, p in enumerate(params) if p.shapes != shapes]
    if bad:
        raise ValueError(f"layout mismatch for client(s) {bad}: expected {shapes}")
    w = np.ones(len(params)) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (len(params),):
        raise ValueError(f"{w.size} weights for {len(params)} clients")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    total = math.fsum(w.tolist())
    if total <= 0:
        raise ValueError("weights must not all be zero")
    if all(np.array_equal(p.values, params[0].values) for p in params[1:]):
        return params[0]
    w = w / total
    terms = np.stack([wi * p.values for wi, p in zip(w, params)])
    return params[0].like(np.array([math.fsum(col) for col in terms.T.tolist()]))


def init_clients(
    timelines: Sequence[ClientTimeline],
    strategy: StrategyConfig,
    spec: ModelSpec,
    config: FederationConfig,
    seed: int,
) -> list[ClientState]:
    base = init_model(spec)
    states = []
    for tl in timelines:
        buf = None
        if strategy.name == "ER":
            buf = ReplayBuffer(strategy.buffer_capacity, spec.input_dim, keyed_rng(seed, tl.client_id, "buffer"))
        swad = None
        if strategy.name == "SWAD":
            window = strategy.swad_window or config.rounds_per_task * max(config.local_steps, 1)
            swad = SwadState(window)
        states.append(ClientState(tl.client_id, tl, base, buf, swad))
    return states


def _make_batch(
    state: ClientState, task: Dataset, strategy: StrategyConfig, phase: int, B: int, rng: np.random.Generator
) -> Batch:
    if phase == 2 or strategy.name == "CB":
        return sample_batch_class_balanced(task, B, rng)
    if strategy.name == "GB":
        return sample_batch_group_balanced(task, B, rng)
    if strategy.name == "ER":
        return sample_batch_er(task, state.buffer, B, strategy.replay_ratio, rng)
    batch = sample_batch_uniform(task, B, rng)
    if strategy.name == "MIXUP" and B >= 2:
        batch = mixup_batch(batch, strategy.mixup_alpha, rng)
    return batch


def _local_train(
    state: ClientState,
    task_index: int,
    round_index: int,
    phase: int,
    strategy: StrategyConfig,
    spec: ModelSpec,
    config: FederationConfig,
    seed: int,
) -> tuple[ParamVector, list[float], Batch | None]:
    rng = keyed_rng(seed, state.client_id, task_index, round_index, "local")
    task = state.timeline.train_tasks[task_index]
    mask = head_mask(spec.shapes) if phase == 2 else None
    params = state.params
    losses: list[float] = []
    batch = None
    for step in range(config.local_steps):
        batch = _make_batch(state, task, strategy, phase, config.batch_size, rng)
        loss, grad = loss_and_grad(params, batch, spec)
        if not math.isfinite(loss):
            raise DivergenceError(
                f"client {state.client_id}: non-finite loss at task {task_index + 1}, "
                f"round {round_index + 1}, step {step + 1}"
            )
        try:
            params = sgd_step(params, grad, spec.learning_rate, spec.l2, mask)
        except DivergenceError as exc:
            raise DivergenceError(
                f"client {state.client_id}, task {task_index + 1}, round {round_index + 1}: {exc}"
            ) from None
        if state.swad is not None:
            swad_update(state.swad, params)
        losses.append(loss)
    return params, losses, batch


def run_round(
    states: list[ClientState],
    strategy: StrategyConfig,
    config: FederationConfig,
    spec: ModelSpec,
    task_index: int,
    round_index: int,
    seed: int,
    *,
    phase: int = 1,
    executor: ThreadPoolExecutor | None = None,
) -> tuple[list[ClientState], RoundRecord]:
    """M local steps on every client, then FedAvg when the strategy is federated."""

    def work(state):
        return _local_train(state, task_index, round_index, phase, strategy, spec, config, seed)

    outs = list(executor.map(work, states)) if executor is not None else [work(s) for s in states]
    pre = {}
    for state, (params, losses, _) in zip(states, outs):
        state.params = params
        pre[state.client_id] = float(np.mean(losses)) if losses else float("nan")

    if strategy.federated:
        if config.weighting == "samples":
            weights = [len(s.timeline.train_tasks[task_index]) for s in states]
        else:
            weights = [1.0] * len(states)
        agg = fedavg([s.params for s in states], weights)
        for s in states:
            s.params = agg

    post = {}
    for state, (_, _, batch) in zip(states, outs):
        post[state.client_id] = loss_and_grad(state.params, batch, spec)[0] if batch is not None else float("nan")
    record = RoundRecord(
        task_index, round_index, phase, pre, post, {s.client_id: s.params.checksum() for s in states}
    )
    return states, record


def _phases(strategy: StrategyConfig, config: FederationConfig, task_index: int, n_tasks: int) -> list[int]:
    R = config.rounds_per_task
    if strategy.name != "CRT":
        return [1] * R
    if strategy.crt_per_task:
        return crt_schedule(R, strategy.crt_stage2_fraction)
    return crt_schedule(R * n_tasks, strategy.crt_stage2_fraction)[task_index * R : (task_index + 1) * R]


def _evaluate(params: ParamVector, data: Dataset) -> EvalResult:
    return evaluate(forward(params, data.features), data.labels, data.num_classes)


def run_task(
    states: list[ClientState],
    task_index: int,
    config: FederationConfig,
    strategy: StrategyConfig,
    spec: ModelSpec,
    seed: int,
    matrix: EvalMatrix,
    *,
    executor: ThreadPoolExecutor | None = None,
) -> tuple[list[ClientState], list[RoundRecord]]:
    """Train all clients on task ``task_index`` and fill row ``task_index`` of ``matrix``."""
    n_tasks = states[0].timeline.n_tasks
    records = []
    for r, phase in enumerate(_phases(strategy, config, task_index, n_tasks)):
        states, rec = run_round(states, strategy, config, spec, task_index, r, seed, phase=phase, executor=executor)
        records.append(rec)
    for s in states:
        params = s.eval_params()
        for j in range(task_index + 1):
            matrix.set(s.client_id, task_index, j, _evaluate(params, s.timeline.test_tasks[j]))
        if s.buffer is not None:
            task = s.timeline.train_tasks[task_index]
            order = stable_permutation(task.record_ids, keyed_rng(seed, s.client_id, task_index, "er-stream"))
            s.buffer.extend(task, order, origin=task_index)
    return states, records


@dataclass
class ExperimentResult:
    benchmark: Benchmark
    strategy: StrategyConfig
    seed: int
    model: ModelSpec
    federation: FederationConfig
    matrix: EvalMatrix
    rounds: list[RoundRecord]
    final_params: dict[int, ParamVector] = field(repr=False)

    @property
    def novel_label(self) -> int | None:
        return self.benchmark.novel_label


def train(
    benchmark: Benchmark,
    strategy: StrategyConfig,
    config: FederationConfig,
    spec: ModelSpec,
    seed: int,
) -> ExperimentResult:
    """Run all tasks on a prepared benchmark and evaluate on the hold-out set."""
    for tl in benchmark.timelines:
        for t, task in enumerate(tl.train_tasks):
            if len(task) == 0:
                raise ValueError(f"client {tl.client_id}: train task {t + 1} is empty")
        for t, task in enumerate(tl.test_tasks):
            if len(task) == 0:
                raise ValueError(f"client {tl.client_id}: test task {t + 1} is empty")
    states = init_clients(benchmark.timelines, strategy, spec, config, seed)
    matrix = EvalMatrix(benchmark.n_clients, benchmark.n_tasks, benchmark.novel_label)
    rounds: list[RoundRecord] = []
    executor = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for t in range(benchmark.n_tasks):
            states, recs = run_task(states, t, config, strategy, spec, seed, matrix, executor=executor)
            rounds.extend(recs)
            log.debug("%s seed %d: task %d done, mean LTR %.4f", strategy.label, seed, t + 1,
                      matrix.mean_across_clients(t))
    finally:
        if executor is not None:
            executor.shutdown()
    final = {}
    for s in states:
        final[s.client_id] = s.eval_params()
        if len(benchmark.holdout):
            matrix.holdout[s.client_id] = _evaluate(final[s.client_id], benchmark.holdout)
    return ExperimentResult(benchmark, strategy, seed, spec, config, matrix, rounds, final)


def run_experiment(
    data: Dataset | SyntheticSpec,
    plan: PartitionPlan,
    strategy: StrategyConfig,
    config: FederationConfig,
    seed: int,
    *,
    model: ModelSpec | Mapping[str, Any] | None = None,
    schedule: NovelDiseaseSchedule | None = None,
) -> ExperimentResult:
    """Partition, train and evaluate in one call.

    ``seed`` drives the partition, the model initialisation and every
    sampling stream (and the synthetic draw when ``data`` is a spec).
    """
    dataset = generate_synthetic(data) if isinstance(data, SyntheticSpec) else data
    plan = replace(plan, seed=seed)
    if schedule is None:
        bench = build_localized_benchmark(dataset, plan)
    else:
        bench = build_pandemic_benchmark(dataset, plan, schedule)
    if isinstance(model, ModelSpec):
        spec = model
        if (spec.input_dim, spec.n_classes) != (dataset.dim, dataset.num_classes):
            raise ValueError("model dimensions do not match the dataset")
    else:
        spec = ModelSpec.from_mapping(model or {}, dataset.dim, dataset.num_classes, seed=seed)
    return train(bench, strategy, config, spec, seed)
