"""Benchmark construction: hold-out set, client splitting and temporal tasks.

Pipeline for the localized benchmark::

    remainder, holdout = split_holdout(dataset, plan.holdout_fraction, plan.seed)
    clients = make_clients(remainder, plan)
    timelines = [localized_split(data, profile, plan.n_tasks, plan.seed) for ...]

:func:`build_localized_benchmark` and :func:`build_pandemic_benchmark` run the
whole pipeline and keep an audit :class:`PartitionReport`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any, Literal, Mapping, Sequence

import numpy as np

from ._random import keyed_rng, largest_remainder, round_half_up, stable_permutation
from .data import Dataset, attribute_counts, class_counts

__all__ = [
    "FAST_SCHEDULE",
    "SLOW_SCHEDULE",
    "Benchmark",
    "ClientProfile",
    "ClientTimeline",
    "InfeasiblePartitionError",
    "NovelDiseaseError",
    "NovelDiseaseSchedule",
    "PartitionPlan",
    "PartitionReport",
    "PartitionWarning",
    "build_localized_benchmark",
    "build_pandemic_benchmark",
    "localized_split",
    "make_clients",
    "novel_disease_split",
    "split_holdout",
    "task_targets",
    "total_variation",
]

FAST_SCHEDULE = (0.0, 0.10, 0.50, 0.90)
SLOW_SCHEDULE = (0.0, 0.0, 0.10, 0.50)


class PartitionWarning(UserWarning):
    pass


class InfeasiblePartitionError(ValueError):
    pass


class NovelDiseaseError(ValueError):
    pass


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p, float) - np.asarray(q, float)).sum())


def _distribution(counts) -> np.ndarray:
    c = np.asarray(counts, dtype=np.float64)
    s = c.sum()
    return c / s if s else c


# ---------------------------------------------------------------------------
# Plans, profiles, timelines
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PartitionPlan:
    n_clients: int = 10
    n_tasks: int = 4
    seed: int = 0
    skewed_fraction: float = 0.5
    holdout_fraction: float = 0.2
    test_fraction: float = 0.2
    skew_share: float = 0.8
    balance_ratio: float = 1.2
    task_dominant_share: float = 0.7
    schedule: Literal["rotation", "resample"] = "rotation"
    client_size: int | None = None
    min_client_size: int = 100
    tv_tol: float = 0.05

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ValueError("invalid partition plan: " + "; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if self.n_clients < 1:
            out.append("n_clients must be >= 1")
        if self.n_tasks < 1:
            out.append("n_tasks must be >= 1")
        if self.seed < 0:
            out.append("seed must be >= 0")
        for name in ("skewed_fraction", "test_fraction", "skew_share", "task_dominant_share", "tv_tol"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                out.append(f"{name} must lie in [0, 1], got {v}")
        if not 0.0 < self.holdout_fraction < 1.0:
            out.append(f"holdout_fraction must lie in (0, 1), got {self.holdout_fraction}")
        if self.balance_ratio < 1.0:
            out.append("balance_ratio must be >= 1")
        if self.schedule not in ("rotation", "resample"):
            out.append(f"schedule must be 'rotation' or 'resample', got {self.schedule!r}")
        if self.client_size is not None and self.client_size < 1:
            out.append("client_size must be positive")
        if self.min_client_size < 1:
            out.append("min_client_size must be positive")
        return out

    @property
    def n_skewed(self) -> int:
        return int(round_half_up(self.n_clients * self.skewed_fraction))

    @classmethod
    def from_mapping(cls, cfg: Mapping[str, Any], **overrides) -> PartitionPlan:
        known = set(cls.__dataclass_fields__)
        unknown = set(cfg) - known
        if unknown:
            raise ValueError(f"unknown partition keys: {sorted(unknown)}")
        return cls(**{**cfg, **overrides})


@dataclass(frozen=True)
class ClientProfile:
    client_id: int
    kind: Literal["balanced", "skewed"]
    target: tuple[float, ...]
    dominant: int | None = None
    dominant_share: float | None = None


@dataclass
class ClientTimeline:
    """T sequential training tasks plus T aligned test tasks for one client."""

    client_id: int
    train_tasks: list[Dataset]
    test_tasks: list[Dataset]
    targets: np.ndarray
    kind: str = "localized"

    @property
    def n_tasks(self) -> int:
        return len(self.train_tasks)

    def record_ids(self) -> np.ndarray:
        parts = [t.record_ids for t in self.train_tasks + self.test_tasks]
        return np.concatenate(parts) if parts else np.zeros(0, np.int64)

    def dominant_sequence(self) -> list[int]:
        return [int(np.argmax(attribute_counts(t))) for t in self.train_tasks]


@dataclass
class PartitionReport:
    """Audit trail: unallocated record ids per stage, relaxed targets, notes."""

    unallocated: dict[str, list[int]] = field(default_factory=dict)
    relaxations: list[dict[str, Any]] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def add_unallocated(self, stage: str, ids) -> None:
        ids = [int(i) for i in np.asarray(ids).tolist()]
        if ids:
            self.unallocated.setdefault(stage, []).extend(ids)

    def n_unallocated(self) -> int:
        return sum(len(v) for v in self.unallocated.values())

    def to_dict(self) -> dict[str, Any]:
        return {
            "unallocated": {k: sorted(v) for k, v in self.unallocated.items()},
            "relaxations": self.relaxations,
            "notes": self.notes,
        }


@dataclass(frozen=True)
class NovelDiseaseSchedule:
    """Per-client, per-task prevalence of a label absent from the first task."""

    novel_label: int
    prevalences: np.ndarray

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.prevalences, dtype=np.float64))
        if p.ndim != 2:
            raise ValueError("prevalences must be a K x T matrix")
        if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
            raise ValueError("prevalences must lie in [0, 1]")
        if np.any(p[:, 0] != 0):
            raise ValueError("the first task must have zero novel-label prevalence for every client")
        p.flags.writeable = False
        object.__setattr__(self, "prevalences", p)
        object.__setattr__(self, "novel_label", int(self.novel_label))

    @property
    def n_clients(self) -> int:
        return self.prevalences.shape[0]

    @property
    def n_tasks(self) -> int:
        return self.prevalences.shape[1]

    @classmethod
    def from_assignment(
        cls,
        novel_label: int,
        assignment: Sequence[str],
        schedules: Mapping[str, Sequence[float]] | None = None,
    ) -> NovelDiseaseSchedule:
        table = {"fast": FAST_SCHEDULE, "slow": SLOW_SCHEDULE, "none": (0.0, 0.0, 0.0, 0.0)}
        table.update(schedules or {})
        try:
            rows = [table[name] for name in assignment]
        except KeyError as exc:
            raise ValueError(f"unknown schedule {exc.args[0]!r}; known: {sorted(table)}") from None
        return cls(novel_label, np.array(rows, dtype=np.float64))

    @classmethod
    def default(cls, novel_label: int, n_clients: int = 5) -> NovelDiseaseSchedule:
        """Roughly three fast clients for every two slow ones (3 + 2 at K=5)."""
        n_fast = int(round_half_up(0.6 * n_clients))
        return cls.from_assignment(novel_label, ["fast"] * n_fast + ["slow"] * (n_clients - n_fast))

    @classmethod
    def zeros(cls, novel_label: int, n_clients: int, n_tasks: int) -> NovelDiseaseSchedule:
        return cls(novel_label, np.zeros((n_clients, n_tasks)))


# ---------------------------------------------------------------------------
# Stratified sampling helpers
# ---------------------------------------------------------------------------


def _stratified_mask(dataset: Dataset, fraction: float, key: tuple) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Select round(fraction * n_cell) records from every (label, attribute) cell.

    A cell of size >= 2 always keeps at least one record unselected; a
    singleton cell is never selected and is returned for reporting.
    """
    mask = np.zeros(len(dataset), dtype=bool)
    singletons = []
    cells = dataset.labels * dataset.num_attributes + dataset.attributes
    for cell in np.unique(cells).tolist():
        idx = np.flatnonzero(cells == cell)
        y, a = divmod(cell, dataset.num_attributes)
        if idx.size == 1:
            singletons.append((y, a))
            continue
        k = min(int(round_half_up(fraction * idx.size)), idx.size - 1)
        if k <= 0:
            continue
        perm = stable_permutation(dataset.record_ids[idx], keyed_rng(*key, y, a))
        mask[idx[perm[:k]]] = True
    return mask, singletons


def split_holdout(dataset: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified hold-out split over (label, attribute) cells.

    Each cell contributes round(fraction * size) records, capped so that at
    least one record of every cell with two or more records stays in the
    remainder. Singleton cells stay in the remainder with a
    :class:`PartitionWarning`. Both outputs keep the input row order.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"hold-out fraction must lie in (0, 1), got {fraction}")
    mask, singletons = _stratified_mask(dataset, fraction, (seed, "holdout"))
    if singletons:
        warnings.warn(
            f"{len(singletons)} (label, attribute) cell(s) hold a single record and stay in the remainder: "
            f"{singletons}",
            PartitionWarning,
            stacklevel=2,
        )
    return dataset.subset(~mask), dataset.subset(mask)


# ---------------------------------------------------------------------------
# Client splitting
# ---------------------------------------------------------------------------


def client_profiles(plan: PartitionPlan, m: int) -> list[ClientProfile]:
    """Balanced clients first, then Skewed ones cycling the dominant group."""
    n_bal = plan.n_clients - plan.n_skewed
    profiles = []
    for k in range(plan.n_clients):
        if k < n_bal:
            profiles.append(ClientProfile(k, "balanced", tuple([1.0 / m] * m)))
        else:
            dom = (k - n_bal) % m
            rest = (1.0 - plan.skew_share) / (m - 1)
            target = tuple(plan.skew_share if i == dom else rest for i in range(m))
            profiles.append(ClientProfile(k, "skewed", target, dom, plan.skew_share))
    return profiles


def _client_counts(profiles: Sequence[ClientProfile], size: int) -> np.ndarray:
    return np.stack([largest_remainder(size, p.target) for p in profiles])


def make_clients(
    dataset: Dataset, plan: PartitionPlan, report: PartitionReport | None = None
) -> list[tuple[ClientProfile, Dataset]]:
    """Split ``dataset`` into ``plan.n_clients`` disjoint clients of equal size.

    Without an explicit ``plan.client_size`` the largest size for which every
    client's attribute target is met exactly is used. Leftover records are
    listed in ``report`` under ``"clients"``.
    """
    m = dataset.num_attributes
    profiles = client_profiles(plan, m)
    avail = attribute_counts(dataset)
    demand_share = np.sum([p.target for p in profiles], axis=0)

    if plan.client_size is not None:
        size = plan.client_size
        counts = _client_counts(profiles, size)
        short = counts.sum(axis=0) - avail
        if np.any(short > 0):
            i = int(np.argmax(short))
            raise InfeasiblePartitionError(
                f"attribute {dataset.attribute_schema.values[i]!r} (index {i}) is short by {int(short[i])} "
                f"records: clients of size {size} need {int(counts[:, i].sum())}, dataset has {int(avail[i])}"
            )
    else:
        with np.errstate(divide="ignore"):
            caps = np.where(demand_share > 0, avail / demand_share, np.inf)
        size = int(min(len(dataset) // plan.n_clients, np.floor(caps.min())))
        while size > 0:
            counts = _client_counts(profiles, size)
            if np.all(counts.sum(axis=0) <= avail):
                break
            size -= 1
        else:
            counts = _client_counts(profiles, 0)
        if size < plan.min_client_size:
            i = int(np.argmin(caps))
            need = int(np.ceil(plan.min_client_size * demand_share[i]))
            raise InfeasiblePartitionError(
                f"attribute {dataset.attribute_schema.values[i]!r} (index {i}) limits clients to {size} records "
                f"(< min_client_size {plan.min_client_size}); needs {need}, has {int(avail[i])}, "
                f"shortfall {need - int(avail[i])}"
            )

    for p, row in zip(profiles, counts):
        if p.kind == "balanced" and row.min() > 0 and row.max() / row.min() > plan.balance_ratio:
            raise InfeasiblePartitionError(
                f"client {p.client_id}: balanced counts {row.tolist()} exceed ratio {plan.balance_ratio}; "
                "increase client size"
            )

    taken = np.zeros(len(dataset), dtype=bool)
    members: list[list[np.ndarray]] = [[] for _ in profiles]
    for i in range(m):
        idx = np.flatnonzero(dataset.attributes == i)
        perm = idx[stable_permutation(dataset.record_ids[idx], keyed_rng(plan.seed, "clients", i))]
        start = 0
        for k in range(len(profiles)):
            chunk = perm[start : start + counts[k, i]]
            members[k].append(chunk)
            start += counts[k, i]
        taken[perm[:start]] = True

    out = []
    for p, parts in zip(profiles, members):
        idx = np.sort(np.concatenate(parts))
        out.append((p, dataset.subset(idx)))
    if report is not None:
        report.add_unallocated("clients", dataset.record_ids[~taken])
    return out


# ---------------------------------------------------------------------------
# Localized temporal split
# ---------------------------------------------------------------------------


def task_targets(
    client_id: int, m: int, n_tasks: int, *, dominant_share: float, schedule: str = "rotation", seed: int = 0
) -> tuple[np.ndarray, list[int]]:
    """Per-task attribute targets for one client.

    ``rotation``: dominant group (offset + stride * t) mod m, with offset
    ``client_id mod m`` and stride ``1 + (client_id // m) mod (m - 1)``, so
    clients get distinct dominant sequences for up to m * (m - 1) clients.
    ``resample``: dominant group drawn from a stream keyed by
    (seed, client_id, t).
    """
    if schedule == "rotation":
        offset = client_id % m
        stride = 1 + (client_id // m) % max(m - 1, 1)
        dominant = [(offset + stride * t) % m for t in range(n_tasks)]
    elif schedule == "resample":
        dominant = [int(keyed_rng(seed, client_id, t, "resample").integers(m)) for t in range(n_tasks)]
    else:
        raise ValueError(f"unknown schedule {schedule!r}")
    rest = (1.0 - dominant_share) / (m - 1)
    targets = np.full((n_tasks, m), rest)
    targets[np.arange(n_tasks), dominant] = dominant_share
    return targets, dominant


def fit_counts(targets: np.ndarray, sizes: np.ndarray, available: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Integer (task x group) counts with row sums ``sizes`` and column sums <= ``available``.

    Over-demanded groups are scaled down to what is available; each task's
    resulting shortfall is spread over groups with spare records in
    proportion to the spare amount. Returns the counts and the real-valued
    relaxed demand.
    """
    sizes = np.asarray(sizes, dtype=np.float64)
    available = np.asarray(available, dtype=np.float64)
    if sizes.sum() > available.sum() + 1e-9:
        raise InfeasiblePartitionError(f"tasks need {sizes.sum():.0f} records, pool has {available.sum():.0f}")
    x = sizes[:, None] * targets
    col = x.sum(axis=0)
    over = col > available
    if np.any(over):
        x[:, over] *= available[over] / col[over]
        deficit = sizes - x.sum(axis=1)
        slack = available - x.sum(axis=0)
        if slack.sum() > 0:
            x += np.outer(deficit, slack / slack.sum())

    counts = np.floor(x + 1e-9).astype(np.int64)
    row_need = sizes.astype(np.int64) - counts.sum(axis=1)
    col_cap = available.astype(np.int64) - counts.sum(axis=0)
    frac = x - counts
    T, m = x.shape
    order = np.lexsort((np.tile(np.arange(m), T), np.repeat(np.arange(T), m), -frac.ravel()))
    for flat in order.tolist():
        t, i = divmod(flat, m)
        if row_need[t] > 0 and col_cap[i] > 0:
            counts[t, i] += 1
            row_need[t] -= 1
            col_cap[i] -= 1
    # Rows still short draw from any group with spare records.
    for t in range(T):
        while row_need[t] > 0:
            i = int(np.argmax(col_cap))
            counts[t, i] += 1
            row_need[t] -= 1
            col_cap[i] -= 1
    return counts, x


def _carve(pool: Dataset, counts: np.ndarray, key: tuple) -> tuple[list[Dataset], np.ndarray]:
    """Cut ``pool`` into tasks with the given per-group counts; returns leftovers too."""
    T, m = counts.shape
    parts: list[list[np.ndarray]] = [[] for _ in range(T)]
    used = np.zeros(len(pool), dtype=bool)
    for i in range(m):
        idx = np.flatnonzero(pool.attributes == i)
        perm = idx[stable_permutation(pool.record_ids[idx], keyed_rng(*key, i))]
        start = 0
        for t in range(T):
            chunk = perm[start : start + counts[t, i]]
            parts[t].append(chunk)
            start += counts[t, i]
        used[perm[:start]] = True
    tasks = [pool.subset(np.sort(np.concatenate(p))) for p in parts]
    return tasks, pool.record_ids[~used]


def _note_relaxation(report, client_id, split, intended, relaxed, counts):
    if report is None:
        return
    for t in range(intended.shape[0]):
        want = _distribution(intended[t])
        got = _distribution(relaxed[t])
        if total_variation(want, got) > 1e-9:
            report.relaxations.append(
                {
                    "client": int(client_id),
                    "split": split,
                    "task": t,
                    "intended": [round(float(v), 6) for v in want],
                    "relaxed": [round(float(v), 6) for v in got],
                    "counts": counts[t].tolist(),
                    "tv": round(total_variation(want, got), 6),
                }
            )


def localized_split(
    client_data: Dataset,
    profile: ClientProfile,
    n_tasks: int,
    seed: int,
    *,
    schedule: str = "rotation",
    dominant_share: float = 0.7,
    test_fraction: float = 0.2,
    report: PartitionReport | None = None,
) -> ClientTimeline:
    """Split one client's data into ``n_tasks`` demographically drifting tasks.

    ``test_fraction`` of the client's records (stratified by label and group)
    form a reserved test pool. Train tasks have equal size and follow the
    client's per-task group targets; test task t is carved from the pool with
    the group mix realised by train task t. Targets that the client's records
    cannot meet are relaxed (see :func:`fit_counts`) and logged in ``report``.
    """
    if n_tasks < 1:
        raise ValueError("n_tasks must be >= 1")
    if len(client_data) == 0:
        raise ValueError(f"client {profile.client_id} has no records")
    m = client_data.num_attributes
    cid = profile.client_id
    test_mask, _ = _stratified_mask(client_data, test_fraction, (seed, cid, "test-pool"))
    train_pool, test_pool = client_data.subset(~test_mask), client_data.subset(test_mask)

    if n_tasks == 1:
        target = _distribution(attribute_counts(client_data))[None, :]
        return ClientTimeline(cid, [train_pool], [test_pool], target)

    targets, _ = task_targets(cid, m, n_tasks, dominant_share=dominant_share, schedule=schedule, seed=seed)
    sizes = np.full(n_tasks, len(train_pool) // n_tasks)
    counts, relaxed = fit_counts(targets, sizes, attribute_counts(train_pool))
    _note_relaxation(report, cid, "train", targets, relaxed, counts)
    train_tasks, left_train = _carve(train_pool, counts, (seed, cid, "train-tasks"))

    realized = counts / np.maximum(counts.sum(axis=1, keepdims=True), 1)
    test_sizes = np.full(n_tasks, len(test_pool) // n_tasks)
    tcounts, trelaxed = fit_counts(realized, test_sizes, attribute_counts(test_pool))
    _note_relaxation(report, cid, "test", realized, trelaxed, tcounts)
    test_tasks, left_test = _carve(test_pool, tcounts, (seed, cid, "test-tasks"))

    if report is not None:
        report.add_unallocated(f"client{cid}/tasks", np.concatenate([left_train, left_test]))
    return ClientTimeline(cid, train_tasks, test_tasks, realized)


# ---------------------------------------------------------------------------
# Novel disease split
# ---------------------------------------------------------------------------


def _novel_test_reserve(n_novel: int, test_fraction: float, n_tasks: int) -> int:
    if n_novel == 0:
        return 0
    return min(n_novel, max(int(round_half_up(test_fraction * n_novel)), n_tasks))


def novel_disease_split(
    client_data: Dataset,
    prevalences: Sequence[float],
    novel_label: int,
    n_tasks: int,
    seed: int,
    *,
    client_id: int = 0,
    task_size: int | None = None,
    test_fraction: float = 0.2,
    base: ClientTimeline | None = None,
    report: PartitionReport | None = None,
) -> ClientTimeline:
    """Temporal tasks in which ``novel_label`` appears at scheduled prevalences.

    Task t holds round(prevalence[t] * size_t) novel records; the rest of the
    task is non-novel. Non-novel records come from ``base`` (an existing
    timeline over the client's non-novel records, e.g. a localized split) or,
    without ``base``, from a uniform shuffle of the client's non-novel train
    pool. Every test task receives a share of the client's reserved novel
    records so both kinds are always evaluated.

    Raises :class:`NovelDiseaseError` when the client lacks the novel records
    the schedule requires.
    """
    q = np.asarray(prevalences, dtype=np.float64)
    if q.shape != (n_tasks,):
        raise ValueError(f"expected {n_tasks} prevalences, got {q.shape}")
    if np.any(q < 0) or np.any(q > 1):
        raise ValueError("prevalences must lie in [0, 1]")
    if q[0] != 0:
        raise ValueError("the first task must contain no novel-label records")

    is_novel = client_data.labels == novel_label
    novel = client_data.subset(is_novel)
    rest = client_data.subset(~is_novel)
    if len(rest) == 0:
        raise NovelDiseaseError(f"client {client_id} has no non-novel records")
    if len(novel) == 0 and np.any(q > 0):
        raise NovelDiseaseError(f"client {client_id}: schedule {q.tolist()} needs novel records, client has none")

    nperm = stable_permutation(novel.record_ids, keyed_rng(seed, client_id, "novel"))
    n_nt = _novel_test_reserve(len(novel), test_fraction, n_tasks) if np.any(q > 0) else 0
    novel_test, novel_train = novel.subset(nperm[:n_nt]), novel.subset(nperm[n_nt:])

    leftovers: list[np.ndarray] = []
    if base is None:
        test_mask, _ = _stratified_mask(rest, test_fraction, (seed, client_id, "test-pool"))
        train_pool, test_pool = rest.subset(~test_mask), rest.subset(test_mask)
        if task_size is None:
            size = (len(train_pool) + len(novel_train)) // n_tasks
            while size > 0:
                nv = round_half_up(q * size)
                if (size - nv).sum() <= len(train_pool) and nv.sum() <= len(novel_train):
                    break
                size -= 1
            sizes = np.full(n_tasks, size)
        else:
            sizes = np.full(n_tasks, task_size)
        n_new = round_half_up(q * sizes)
        keep = sizes - n_new
        if keep.sum() > len(train_pool):
            raise NovelDiseaseError(
                f"client {client_id}: non-novel records required {int(keep.sum())}, available {len(train_pool)}"
            )
        perm = stable_permutation(train_pool.record_ids, keyed_rng(seed, client_id, "nonnovel"))
        bounds = np.concatenate([[0], np.cumsum(keep)])
        base_parts = [train_pool.subset(np.sort(perm[bounds[t] : bounds[t + 1]])) for t in range(n_tasks)]
        leftovers.append(train_pool.record_ids[perm[bounds[-1] :]])
        tperm = stable_permutation(test_pool.record_ids, keyed_rng(seed, client_id, "test-split"))
        base_tests = [test_pool.subset(np.sort(c)) for c in np.array_split(tperm, n_tasks)]
    else:
        if base.n_tasks != n_tasks:
            raise ValueError(f"base timeline has {base.n_tasks} tasks, expected {n_tasks}")
        sizes = np.array([len(t) if task_size is None else task_size for t in base.train_tasks])
        n_new = round_half_up(q * sizes)
        keep = sizes - n_new
        base_parts = []
        for t, task in enumerate(base.train_tasks):
            if keep[t] > len(task):
                raise NovelDiseaseError(
                    f"client {client_id}, task {t}: non-novel records required {int(keep[t])}, available {len(task)}"
                )
            if keep[t] == len(task):
                base_parts.append(task)
                continue
            perm = stable_permutation(task.record_ids, keyed_rng(seed, client_id, "keep", t))
            base_parts.append(task.subset(np.sort(perm[: keep[t]])))
            leftovers.append(task.record_ids[perm[keep[t] :]])
        base_tests = list(base.test_tasks)

    if n_new.sum() > len(novel_train):
        raise NovelDiseaseError(
            f"client {client_id}: novel records required {int(n_new.sum())}, available {len(novel_train)} "
            f"(after reserving {n_nt} for testing)"
        )
    bounds = np.concatenate([[0], np.cumsum(n_new)])
    train_tasks = []
    for t in range(n_tasks):
        chunk = novel_train.subset(np.arange(bounds[t], bounds[t + 1]))
        train_tasks.append(base_parts[t] if len(chunk) == 0 else Dataset.concat([base_parts[t], chunk]))
    leftovers.append(novel_train.record_ids[bounds[-1] :])

    test_tasks = []
    for t, chunk in enumerate(np.array_split(np.arange(len(novel_test)), n_tasks)):
        part = novel_test.subset(chunk)
        test_tasks.append(base_tests[t] if len(part) == 0 else Dataset.concat([base_tests[t], part]))

    if report is not None:
        report.add_unallocated(f"client{client_id}/novel", np.concatenate(leftovers) if leftovers else [])
    targets = np.stack([1.0 - q, q], axis=1)
    return ClientTimeline(client_id, train_tasks, test_tasks, targets, kind="novel")


# ---------------------------------------------------------------------------
# Whole benchmarks
# ---------------------------------------------------------------------------


@dataclass
class Benchmark:
    dataset: Dataset
    holdout: Dataset
    profiles: list[ClientProfile]
    timelines: list[ClientTimeline]
    report: PartitionReport
    novel_label: int | None = None

    @property
    def n_clients(self) -> int:
        return len(self.timelines)

    @property
    def n_tasks(self) -> int:
        return self.timelines[0].n_tasks

    def allocated_ids(self) -> np.ndarray:
        parts = [self.holdout.record_ids] + [tl.record_ids() for tl in self.timelines]
        return np.concatenate(parts)

    def check_integrity(self) -> None:
        """Raise if any record is used twice or goes missing from the report."""
        ids = self.allocated_ids()
        if np.unique(ids).size != ids.size:
            raise AssertionError("a record_id appears in more than one split")
        unalloc = np.array(sorted(i for v in self.report.unallocated.values() for i in v), dtype=np.int64)
        if np.intersect1d(ids, unalloc).size:
            raise AssertionError("a record is both allocated and reported unallocated")
        if ids.size + unalloc.size != len(self.dataset):
            raise AssertionError(
                f"conservation violated: {ids.size} allocated + {unalloc.size} unallocated != {len(self.dataset)}"
            )

    def describe_rows(self) -> list[dict[str, Any]]:
        """Per-client, per-task count table (one row per split)."""
        ds = self.dataset
        rows = []

        def row(client, kind, split, task, part):
            r = {"client": client, "kind": kind, "split": split, "task": task, "n": len(part)}
            r.update({f"label:{n}": int(c) for n, c in zip(ds.label_space.class_names, class_counts(part))})
            r.update({f"attr:{n}": int(c) for n, c in zip(ds.attribute_schema.values, attribute_counts(part))})
            return r

        for p, tl in zip(self.profiles, self.timelines):
            for t, task in enumerate(tl.train_tasks):
                rows.append(row(p.client_id, p.kind, "train", t + 1, task))
            for t, task in enumerate(tl.test_tasks):
                rows.append(row(p.client_id, p.kind, "test", t + 1, task))
        rows.append(row("", "", "holdout", "", self.holdout))
        return rows


def build_localized_benchmark(dataset: Dataset, plan: PartitionPlan) -> Benchmark:
    report = PartitionReport()
    remainder, holdout = split_holdout(dataset, plan.holdout_fraction, plan.seed)
    clients = make_clients(remainder, plan, report)
    timelines = [
        localized_split(
            data,
            profile,
            plan.n_tasks,
            plan.seed,
            schedule=plan.schedule,
            dominant_share=plan.task_dominant_share,
            test_fraction=plan.test_fraction,
            report=report,
        )
        for profile, data in clients
    ]
    return Benchmark(dataset, holdout, [p for p, _ in clients], timelines, report)


def build_pandemic_benchmark(dataset: Dataset, plan: PartitionPlan, schedule: NovelDiseaseSchedule) -> Benchmark:
    """Localized benchmark over non-novel records with the novel label injected per schedule.

    Novel records are dealt to clients in proportion to what their schedule
    row needs; a client whose row is all zeros receives none, so an all-zero
    schedule leaves the non-novel part identical to the localized benchmark
    of the dataset without novel records.
    """
    if schedule.n_clients != plan.n_clients or schedule.n_tasks != plan.n_tasks:
        raise ValueError(
            f"schedule is {schedule.n_clients}x{schedule.n_tasks}, plan needs {plan.n_clients}x{plan.n_tasks}"
        )
    y_new = schedule.novel_label
    if not 0 <= y_new < dataset.num_classes:
        raise ValueError(f"novel label {y_new} outside [0, {dataset.num_classes})")
    report = PartitionReport()
    remainder, holdout = split_holdout(dataset, plan.holdout_fraction, plan.seed)
    is_novel = remainder.labels == y_new
    base_data, novel_pool = remainder.subset(~is_novel), remainder.subset(is_novel)
    clients = make_clients(base_data, plan, report)

    bases, needs = [], []
    for (profile, data), q in zip(clients, schedule.prevalences):
        base = localized_split(
            data,
            profile,
            plan.n_tasks,
            plan.seed,
            schedule=plan.schedule,
            dominant_share=plan.task_dominant_share,
            test_fraction=plan.test_fraction,
            report=report,
        )
        bases.append(base)
        need = int(round_half_up(q * np.array([len(t) for t in base.train_tasks])).sum())
        total = need
        if need:
            while total - _novel_test_reserve(total, plan.test_fraction, plan.n_tasks) < need:
                total += 1
        needs.append(total)

    if sum(needs) > len(novel_pool):
        raise NovelDiseaseError(
            f"novel label {y_new}: clients require {sum(needs)} records ({needs}), available {len(novel_pool)}"
        )
    perm = stable_permutation(novel_pool.record_ids, keyed_rng(plan.seed, "novel-alloc"))
    bounds = np.concatenate([[0], np.cumsum(needs)])
    report.add_unallocated("novel", novel_pool.record_ids[perm[bounds[-1] :]])

    timelines = []
    for k, ((profile, data), base) in enumerate(zip(clients, bases)):
        mine = novel_pool.subset(np.sort(perm[bounds[k] : bounds[k + 1]]))
        client_data = data if len(mine) == 0 else Dataset.concat([data, mine])
        timelines.append(
            novel_disease_split(
                client_data,
                schedule.prevalences[k],
                y_new,
                plan.n_tasks,
                plan.seed,
                client_id=profile.client_id,
                test_fraction=plan.test_fraction,
                base=base,
                report=report,
            )
        )
    return Benchmark(dataset, holdout, [p for p, _ in clients], timelines, report, novel_label=y_new)
