"""Training strategies: batch construction and weight post-processing policies.

Strategies only change how batches are built (uniform, class-balanced,
group-balanced, replay, MixUp), which coordinates a step may update (CRT
stage 2) or which parameters are evaluated (SWAD). Federated averaging is
orthogonal and controlled by ``StrategyConfig.federated``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Literal, Mapping

import numpy as np

from .data import Dataset, Record
from .learner import Batch, ParamVector

__all__ = [
    "STRATEGY_NAMES",
    "ReplayBuffer",
    "StrategyConfig",
    "SwadState",
    "buffer_update",
    "crt_schedule",
    "mixup_batch",
    "sample_batch_class_balanced",
    "sample_batch_er",
    "sample_batch_group_balanced",
    "sample_batch_uniform",
    "swad_finalize",
    "swad_update",
]

STRATEGY_NAMES = ("ERM", "CB", "GB", "ER", "MIXUP", "CRT", "SWAD")

_PARAMS = {
    "ER": {"buffer_capacity": 200, "replay_ratio": 0.5},
    "MIXUP": {"mixup_alpha": 0.2},
    "CRT": {"crt_stage2_fraction": 0.25, "crt_per_task": True},
    "SWAD": {"swad_window": None},
}
_ALL_PARAMS = {k for d in _PARAMS.values() for k in d}


@dataclass(frozen=True)
class StrategyConfig:
    """A strategy and its parameters.

    Parameters that belong to other strategies must stay ``None``; the ones
    the strategy uses are filled with defaults. ``swad_window=None`` means one
    task's worth of local steps.
    """

    name: Literal["ERM", "CB", "GB", "ER", "MIXUP", "CRT", "SWAD"]
    federated: bool = True
    buffer_capacity: int | None = None
    replay_ratio: float | None = None
    mixup_alpha: float | None = None
    crt_stage2_fraction: float | None = None
    crt_per_task: bool | None = None
    swad_window: int | None = None

    def __post_init__(self):
        name = str(self.name).upper()
        if name not in STRATEGY_NAMES:
            raise ValueError(f"unknown strategy {self.name!r}; expected one of {STRATEGY_NAMES}")
        object.__setattr__(self, "name", name)
        own = _PARAMS.get(name, {})
        stray = [k for k in _ALL_PARAMS - set(own) if getattr(self, k) is not None]
        if stray:
            raise ValueError(f"strategy {name} does not take parameter(s) {sorted(stray)}")
        for k, default in own.items():
            if getattr(self, k) is None:
                object.__setattr__(self, k, default)
        if name == "ER":
            if self.buffer_capacity < 0:
                raise ValueError("buffer_capacity must be >= 0")
            if not 0.0 <= self.replay_ratio <= 1.0:
                raise ValueError("replay_ratio must lie in [0, 1]")
        if name == "MIXUP" and not self.mixup_alpha > 0:
            raise ValueError("mixup_alpha must be > 0")
        if name == "CRT" and not 0.0 < self.crt_stage2_fraction < 1.0:
            raise ValueError("crt_stage2_fraction must lie in (0, 1)")
        if name == "SWAD" and self.swad_window is not None and self.swad_window < 1:
            raise ValueError("swad_window must be >= 1")

    @property
    def label(self) -> str:
        return f"F-{self.name}" if self.federated else self.name

    def params(self) -> dict[str, Any]:
        return {k: getattr(self, k) for k in _PARAMS.get(self.name, {})}

    @classmethod
    def parse(cls, spec: str | Mapping[str, Any]) -> StrategyConfig:
        """``"F-CB"`` or ``{"name": "F-ER", "buffer_capacity": 100}``.

        An ``F-`` prefix means federated averaging; plain ``ERM`` is local
        training. Other bare names default to federated.
        """
        if isinstance(spec, str):
            spec = {"name": spec}
        spec = dict(spec)
        name = str(spec.pop("name")).strip()
        if name.upper().startswith("F-"):
            federated = True
            name = name[2:]
        else:
            federated = name.upper() != "ERM"
        federated = bool(spec.pop("federated", federated))
        return cls(name=name, federated=federated, **spec)


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------


def _batch(task: Dataset, idx: np.ndarray) -> Batch:
    return Batch(task.features[idx], task.labels[idx], task.attributes[idx], task.record_ids[idx])


def sample_batch_uniform(task: Dataset, batch_size: int, rng: np.random.Generator) -> Batch:
    """``batch_size`` records drawn uniformly with replacement."""
    if len(task) == 0:
        raise ValueError("cannot sample from an empty task")
    return _batch(task, rng.integers(0, len(task), size=batch_size))


def _balanced(groups: dict[int, np.ndarray], batch_size: int, rng: np.random.Generator) -> np.ndarray:
    keys = sorted(groups)
    if not keys:
        raise ValueError("cannot sample from an empty task")
    which = rng.integers(0, len(keys), size=batch_size)
    out = np.empty(batch_size, dtype=np.int64)
    for j, g in enumerate(keys):
        slots = np.flatnonzero(which == j)
        if slots.size:
            members = groups[g]
            out[slots] = members[rng.integers(0, members.size, size=slots.size)]
    return out


def sample_batch_class_balanced(task: Dataset, batch_size: int, rng: np.random.Generator) -> Batch:
    """Each slot picks a class uniformly among those present, then a record of it."""
    return _batch(task, _balanced(task.indices_by_label, batch_size, rng))


def sample_batch_group_balanced(task: Dataset, batch_size: int, rng: np.random.Generator) -> Batch:
    """Like :func:`sample_batch_class_balanced` over attribute groups."""
    return _batch(task, _balanced(task.indices_by_attribute, batch_size, rng))


# ---------------------------------------------------------------------------
# Experience replay
# ---------------------------------------------------------------------------


class ReplayBuffer:
    """Fixed-capacity reservoir of records (Algorithm R).

    After ``seen`` records have been offered, the stored ones are a uniform
    sample without replacement of the stream. ``origins`` keeps the task
    index each stored record came from.
    """

    def __init__(self, capacity: int, dim: int, seed: int | np.random.Generator = 0):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = int(capacity)
        self.seen = 0
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.features = np.zeros((self.capacity, dim))
        self.labels = np.zeros(self.capacity, dtype=np.int64)
        self.attributes = np.zeros(self.capacity, dtype=np.int64)
        self.record_ids = np.zeros(self.capacity, dtype=np.int64)
        self.origins = np.zeros(self.capacity, dtype=np.int64)

    def __len__(self) -> int:
        return min(self.seen, self.capacity)

    def _put(self, slot: int, record: Record, origin: int) -> None:
        self.features[slot] = record.features
        self.labels[slot] = record.label
        self.attributes[slot] = record.attribute
        self.record_ids[slot] = record.record_id
        self.origins[slot] = origin

    def offer(self, record: Record, origin: int = 0) -> None:
        if self.capacity == 0:
            self.seen += 1
            return
        if self.seen < self.capacity:
            self._put(self.seen, record, origin)
        else:
            j = int(self.rng.integers(0, self.seen + 1))
            if j < self.capacity:
                self._put(j, record, origin)
        self.seen += 1

    def extend(self, task: Dataset, order: np.ndarray | None = None, origin: int = 0) -> None:
        """Offer every record of ``task`` (in ``order``) as one reservoir pass.

        Equivalent in distribution to repeated :meth:`offer`; the slot draws
        are vectorised.
        """
        order = np.arange(len(task)) if order is None else np.asarray(order)
        n = order.size
        if n == 0:
            return
        if self.capacity == 0:
            self.seen += n
            return
        fill = min(max(self.capacity - self.seen, 0), n)
        for k in range(fill):
            self._put_row(self.seen + k, task, order[k], origin)
        start = self.seen + fill
        rest = order[fill:]
        if rest.size:
            slots = self.rng.integers(0, np.arange(start, start + rest.size) + 1)
            hits = np.flatnonzero(slots < self.capacity)
            for h in hits.tolist():
                self._put_row(int(slots[h]), task, rest[h], origin)
        self.seen += n

    def _put_row(self, slot: int, task: Dataset, i: int, origin: int) -> None:
        self.features[slot] = task.features[i]
        self.labels[slot] = task.labels[i]
        self.attributes[slot] = task.attributes[i]
        self.record_ids[slot] = task.record_ids[i]
        self.origins[slot] = origin

    def stored_ids(self) -> np.ndarray:
        return self.record_ids[: len(self)].copy()

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        idx = rng.integers(0, len(self), size=n)
        return Batch(self.features[idx], self.labels[idx], self.attributes[idx], self.record_ids[idx])


def buffer_update(buffer: ReplayBuffer, record: Record, origin: int = 0) -> ReplayBuffer:
    """One reservoir step; mutates and returns ``buffer``."""
    buffer.offer(record, origin)
    return buffer


def sample_batch_er(
    task: Dataset, buffer: ReplayBuffer, batch_size: int, replay_ratio: float, rng: np.random.Generator
) -> Batch:
    """ceil(replay_ratio * B) replayed records (fewer if the buffer is smaller), the rest from the task.

    Replayed rows come first; ``Batch.n_replayed`` says how many.
    """
    n_replay = min(math.ceil(replay_ratio * batch_size), len(buffer))
    current = sample_batch_uniform(task, batch_size - n_replay, rng)
    if n_replay == 0:
        return current
    old = buffer.sample(n_replay, rng)
    return Batch(
        np.concatenate([old.features, current.features]),
        np.concatenate([old.labels, current.labels]),
        np.concatenate([old.attributes, current.attributes]),
        np.concatenate([old.record_ids, current.record_ids]),
        n_replayed=n_replay,
    )


# ---------------------------------------------------------------------------
# MixUp
# ---------------------------------------------------------------------------


def mixup_batch(batch: Batch, alpha: float, rng: np.random.Generator, lam: float | None = None) -> Batch:
    """Blend each example with a random partner: x' = lam * x_i + (1 - lam) * x_j.

    ``lam`` ~ Beta(alpha, alpha) once per batch unless given. Labels are not
    blended; the loss weights both labels instead.
    """
    B = len(batch)
    if B < 2:
        raise ValueError("MixUp needs at least 2 examples")
    if lam is None:
        lam = float(rng.beta(alpha, alpha))
    perm = rng.permutation(B)
    feats = lam * batch.features + (1.0 - lam) * batch.features[perm]
    return Batch(
        feats,
        batch.labels,
        batch.attributes,
        batch.record_ids,
        mix_labels=batch.labels[perm],
        mix_weights=np.full(B, lam),
    )


# ---------------------------------------------------------------------------
# CRT and SWAD
# ---------------------------------------------------------------------------


def crt_schedule(n_rounds: int, stage2_fraction: float) -> list[int]:
    """Phase (1 or 2) per round: the last floor(f * R) rounds are stage 2."""
    if not 0.0 < stage2_fraction < 1.0:
        raise ValueError("stage2_fraction must lie in (0, 1)")
    n2 = math.floor(stage2_fraction * n_rounds + 1e-9)
    return [1] * (n_rounds - n2) + [2] * n2


@dataclass
class SwadState:
    window: int
    history: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        self.history = deque(self.history, maxlen=self.window)


def swad_update(state: SwadState, params: ParamVector, window: int | None = None) -> SwadState:
    """Push a post-step parameter vector into the trailing window."""
    if window is not None and window != state.window:
        state = SwadState(window, state.history)
    if state.history and state.history[0].shapes != params.shapes:
        raise ValueError("parameter layout changed")
    state.history.append(params)
    return state


def swad_finalize(state: SwadState) -> ParamVector:
    """Mean of the parameter vectors in the window."""
    if not state.history:
        raise ValueError("no parameters averaged yet")
    first = state.history[0]
    return first.like(np.mean(np.stack([p.values for p in state.history]), axis=0))
