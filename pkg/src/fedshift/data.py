"""Attributed tabular datasets: schemas, CSV ingestion and a synthetic generator.

A :class:`Dataset` is an immutable, column-oriented table of records. Each
record carries a feature vector, a class label index and a single attribute
(demographic group) index.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

import numpy as np

__all__ = [
    "AttributeSchema",
    "CsvSchema",
    "Dataset",
    "IngestError",
    "LabelSpace",
    "Record",
    "SyntheticSpec",
    "attribute_counts",
    "class_counts",
    "generate_synthetic",
    "ingest_csv",
    "write_csv",
]

PROB_TOL = 1e-9


class IngestError(ValueError):
    """Raised when a CSV file does not match its column mapping."""


@dataclass(frozen=True)
class LabelSpace:
    class_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "class_names", tuple(str(c) for c in self.class_names))
        if len(self.class_names) < 2:
            raise ValueError("a label space needs at least 2 classes")
        if len(set(self.class_names)) != len(self.class_names):
            raise ValueError(f"class names must be unique: {self.class_names}")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @classmethod
    def of_size(cls, n: int) -> LabelSpace:
        return cls(tuple(f"class_{i}" for i in range(n)))


@dataclass(frozen=True)
class AttributeSchema:
    name: str
    values: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(str(v) for v in self.values))
        if len(self.values) < 2:
            raise ValueError(f"attribute {self.name!r} needs at least 2 values")
        if len(set(self.values)) != len(self.values):
            raise ValueError(f"attribute values must be unique: {self.values}")

    @property
    def num_values(self) -> int:
        return len(self.values)

    @classmethod
    def of_size(cls, m: int, name: str = "group") -> AttributeSchema:
        return cls(name, tuple(f"{name}_{i}" for i in range(m)))


@dataclass(frozen=True)
class Record:
    features: np.ndarray
    label: int
    attribute: int
    record_id: int


class Dataset:
    """Immutable collection of records sharing one schema.

    Storage is columnar: ``features`` (n, d), ``labels`` (n,), ``attributes`` (n,)
    and ``record_ids`` (n,). All arrays are read-only views.
    """

    def __init__(
        self,
        label_space: LabelSpace,
        attribute_schema: AttributeSchema,
        features: np.ndarray,
        labels: Sequence[int] | np.ndarray,
        attributes: Sequence[int] | np.ndarray,
        record_ids: Sequence[int] | np.ndarray | None = None,
        *,
        validate: bool = True,
    ):
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        attributes = np.asarray(attributes, dtype=np.int64).reshape(-1)
        n = labels.shape[0]
        if features.ndim != 2:
            if features.size == 0:
                features = features.reshape(n, 0)
            else:
                raise ValueError(f"features must be 2-D, got shape {features.shape}")
        if record_ids is None:
            record_ids = np.arange(n, dtype=np.int64)
        record_ids = np.asarray(record_ids, dtype=np.int64).reshape(-1)

        if validate:
            if features.shape[0] != n or attributes.shape[0] != n or record_ids.shape[0] != n:
                raise ValueError(
                    "column lengths differ: "
                    f"features={features.shape[0]} labels={n} "
                    f"attributes={attributes.shape[0]} record_ids={record_ids.shape[0]}"
                )
            if n:
                if labels.min() < 0 or labels.max() >= label_space.num_classes:
                    raise ValueError(f"labels must lie in [0, {label_space.num_classes})")
                if attributes.min() < 0 or attributes.max() >= attribute_schema.num_values:
                    raise ValueError(f"attributes must lie in [0, {attribute_schema.num_values})")
                if np.unique(record_ids).size != n:
                    raise ValueError("record_ids must be unique")

        for arr in (features, labels, attributes, record_ids):
            arr.flags.writeable = False
        self.label_space = label_space
        self.attribute_schema = attribute_schema
        self.features = features
        self.labels = labels
        self.attributes = attributes
        self.record_ids = record_ids

    # -- basic protocol ---------------------------------------------------
    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def __iter__(self) -> Iterator[Record]:
        for i in range(len(self)):
            yield self.record(i)

    def __repr__(self) -> str:
        return (
            f"Dataset(n={len(self)}, d={self.dim}, L={self.num_classes}, "
            f"m={self.num_attributes})"
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.label_space == other.label_space
            and self.attribute_schema == other.attribute_schema
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.attributes, other.attributes)
            and np.array_equal(self.record_ids, other.record_ids)
        )

    __hash__ = None  # type: ignore[assignment]

    def record(self, i: int) -> Record:
        return Record(self.features[i], int(self.labels[i]), int(self.attributes[i]), int(self.record_ids[i]))

    @property
    def records(self) -> list[Record]:
        return list(self)

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def num_classes(self) -> int:
        return self.label_space.num_classes

    @property
    def num_attributes(self) -> int:
        return self.attribute_schema.num_values

    @property
    def schema(self) -> tuple[LabelSpace, AttributeSchema, int]:
        return self.label_space, self.attribute_schema, self.dim

    # -- derived views ----------------------------------------------------
    def subset(self, index: np.ndarray | Sequence[int]) -> Dataset:
        """Rows at ``index`` (positions, or a boolean mask), in that order."""
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        index = index.astype(np.int64, copy=False)
        return Dataset(
            self.label_space,
            self.attribute_schema,
            self.features[index],
            self.labels[index],
            self.attributes[index],
            self.record_ids[index],
            validate=False,
        )

    def select_ids(self, ids: Iterable[int]) -> Dataset:
        """Rows whose record_id is in ``ids``, in the order of ``ids``."""
        ids = np.asarray(list(ids), dtype=np.int64)
        pos = self._id_position
        try:
            index = np.array([pos[i] for i in ids.tolist()], dtype=np.int64)
        except KeyError as exc:
            raise KeyError(f"record_id {exc.args[0]} not in dataset") from None
        return self.subset(index)

    def empty_like(self) -> Dataset:
        return self.subset(np.zeros(0, dtype=np.int64))

    @cached_property
    def _id_position(self) -> dict[int, int]:
        return {rid: i for i, rid in enumerate(self.record_ids.tolist())}

    @cached_property
    def indices_by_label(self) -> dict[int, np.ndarray]:
        return {c: np.flatnonzero(self.labels == c) for c in np.unique(self.labels).tolist()}

    @cached_property
    def indices_by_attribute(self) -> dict[int, np.ndarray]:
        return {a: np.flatnonzero(self.attributes == a) for a in np.unique(self.attributes).tolist()}

    @staticmethod
    def concat(parts: Sequence[Dataset]) -> Dataset:
        if not parts:
            raise ValueError("nothing to concatenate")
        first = parts[0]
        for p in parts[1:]:
            if p.label_space != first.label_space or p.attribute_schema != first.attribute_schema:
                raise ValueError("cannot concatenate datasets with different schemas")
        return Dataset(
            first.label_space,
            first.attribute_schema,
            np.concatenate([p.features for p in parts]).reshape(-1, first.dim),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.attributes for p in parts]),
            np.concatenate([p.record_ids for p in parts]),
        )


def class_counts(dataset: Dataset) -> np.ndarray:
    """Number of records per class, length L (the N_j of the LTR formula)."""
    return np.bincount(dataset.labels, minlength=dataset.num_classes).astype(np.int64)


def attribute_counts(dataset: Dataset) -> np.ndarray:
    return np.bincount(dataset.attributes, minlength=dataset.num_attributes).astype(np.int64)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

ROLES = ("feature", "label", "attribute", "ignore", "id")


def _value_map(spec: Sequence[str] | Mapping[str, int], what: str) -> tuple[tuple[str, ...], dict[str, int]]:
    # A list maps value -> position; a dict is taken as given.
    if isinstance(spec, Mapping):
        mapping = {str(k): int(v) for k, v in spec.items()}
        n = len(set(mapping.values()))
        if sorted(set(mapping.values())) != list(range(n)):
            raise ValueError(f"{what} indices must be 0..{n - 1}, got {sorted(set(mapping.values()))}")
        names = [""] * n
        for k, v in mapping.items():
            if not names[v]:
                names[v] = k
        return tuple(names), mapping
    names = tuple(str(v) for v in spec)
    return names, {v: i for i, v in enumerate(names)}


@dataclass
class CsvSchema:
    """Column-role mapping for :func:`ingest_csv`.

    ``columns`` maps column names to one of ``feature``, ``label``,
    ``attribute``, ``ignore`` or ``id``. ``labels`` and ``attribute_values``
    give the categorical vocabularies, either as ordered lists (value ->
    position) or as explicit ``{value: index}`` dictionaries.
    """

    columns: dict[str, str]
    labels: Sequence[str] | Mapping[str, int]
    attribute_values: Sequence[str] | Mapping[str, int]
    attribute_name: str | None = None
    label_space: LabelSpace = field(init=False)
    attribute_schema: AttributeSchema = field(init=False)

    def __post_init__(self):
        bad = {c: r for c, r in self.columns.items() if r not in ROLES}
        if bad:
            raise ValueError(f"unknown column roles {bad}; expected one of {ROLES}")
        roles = list(self.columns.values())
        if roles.count("label") != 1:
            raise ValueError("exactly one column must have role 'label'")
        if roles.count("attribute") != 1:
            raise ValueError("exactly one column must have role 'attribute' (one active attribute per run)")
        if roles.count("id") > 1:
            raise ValueError("at most one column may have role 'id'")
        names, self._label_map = _value_map(self.labels, "label")
        self.label_space = LabelSpace(names)
        attr_col = self.column_for("attribute")
        anames, self._attr_map = _value_map(self.attribute_values, "attribute")
        self.attribute_schema = AttributeSchema(self.attribute_name or attr_col, anames)

    def column_for(self, role: str) -> str:
        return next(c for c, r in self.columns.items() if r == role)

    @property
    def feature_columns(self) -> list[str]:
        return [c for c, r in self.columns.items() if r == "feature"]

    @classmethod
    def from_mapping(cls, cfg: Mapping[str, Any]) -> CsvSchema:
        attr = cfg.get("attribute", {})
        return cls(
            columns=dict(cfg["columns"]),
            labels=cfg["labels"],
            attribute_values=attr.get("values", cfg.get("attribute_values")),
            attribute_name=attr.get("name"),
        )


def ingest_csv(path: str | Path, schema: CsvSchema | Mapping[str, Any]) -> Dataset:
    """Read a headed CSV file into a :class:`Dataset`, preserving row order.

    Record ids come from the ``id`` column when one is mapped, otherwise from
    the zero-based data row number.
    """
    if not isinstance(schema, CsvSchema):
        schema = CsvSchema.from_mapping(schema)
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: missing header row") from None
        missing = [c for c in schema.columns if c not in header]
        if missing:
            raise IngestError(f"{path}: missing column(s) {missing}")
        pos = {c: header.index(c) for c in schema.columns}
        fcols = schema.feature_columns
        lcol, acol = schema.column_for("label"), schema.column_for("attribute")
        idcol = schema.column_for("id") if "id" in schema.columns.values() else None

        feats, labels, attrs, ids = [], [], [], []
        for rownum, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestError(f"{path}: row {rownum} has {len(row)} cells, header has {len(header)}")
            vec = []
            for c in fcols:
                cell = row[pos[c]]
                try:
                    v = float(cell)
                except ValueError:
                    raise IngestError(f"{path}: row {rownum}, column {c!r}: unparseable number {cell!r}") from None
                if not math.isfinite(v):
                    raise IngestError(f"{path}: row {rownum}, column {c!r}: non-finite value {cell!r}")
                vec.append(v)
            lab = row[pos[lcol]]
            if lab not in schema._label_map:
                raise IngestError(f"{path}: row {rownum}, column {lcol!r}: unknown label value {lab!r}")
            att = row[pos[acol]]
            if att not in schema._attr_map:
                raise IngestError(f"{path}: row {rownum}, column {acol!r}: unknown attribute value {att!r}")
            if idcol is not None:
                try:
                    ids.append(int(row[pos[idcol]]))
                except ValueError:
                    raise IngestError(
                        f"{path}: row {rownum}, column {idcol!r}: unparseable id {row[pos[idcol]]!r}"
                    ) from None
            else:
                ids.append(rownum - 1)
            feats.append(vec)
            labels.append(schema._label_map[lab])
            attrs.append(schema._attr_map[att])

    features = np.array(feats, dtype=np.float64).reshape(len(feats), len(fcols))
    try:
        return Dataset(schema.label_space, schema.attribute_schema, features, labels, attrs, ids)
    except ValueError as exc:
        raise IngestError(f"{path}: {exc}") from None


def write_csv(dataset: Dataset, path: str | Path) -> CsvSchema:
    """Write ``dataset`` as CSV and return the schema that reads it back exactly."""
    fcols = [f"f{i}" for i in range(dataset.dim)]
    attr_col = dataset.attribute_schema.name
    header = ["record_id", *fcols, "label", attr_col]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in dataset:
            w.writerow(
                [
                    r.record_id,
                    *(repr(float(v)) for v in r.features),
                    dataset.label_space.class_names[r.label],
                    dataset.attribute_schema.values[r.attribute],
                ]
            )
    columns = {"record_id": "id", **{c: "feature" for c in fcols}, "label": "label", attr_col: "attribute"}
    return CsvSchema(
        columns=columns,
        labels=list(dataset.label_space.class_names),
        attribute_values=list(dataset.attribute_schema.values),
        attribute_name=dataset.attribute_schema.name,
    )


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


def _check_probs(p: np.ndarray, what: str) -> None:
    if p.ndim != 1 or p.size < 1:
        raise ValueError(f"{what} must be a non-empty vector")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError(f"{what} must be finite and non-negative, got {p.tolist()}")
    if abs(p.sum() - 1.0) > PROB_TOL:
        raise ValueError(f"{what} must sum to 1 within {PROB_TOL}, got sum {p.sum()!r}")


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a Gaussian class x attribute mixture.

    ``means`` has shape (L, m, d): record features for class ``y`` and group
    ``a`` are drawn from N(means[y, a], diag(variance)). Labels and groups are
    drawn independently from their marginals.
    """

    means: np.ndarray
    variance: np.ndarray
    class_probs: np.ndarray
    attribute_probs: np.ndarray
    n: int
    seed: int = 0
    class_names: tuple[str, ...] | None = None
    attribute_name: str = "group"
    attribute_values: tuple[str, ...] | None = None

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        cp = np.asarray(self.class_probs, dtype=np.float64)
        ap = np.asarray(self.attribute_probs, dtype=np.float64)
        if means.ndim != 3:
            raise ValueError(f"means must have shape (L, m, d), got {means.shape}")
        L, m, d = means.shape
        var = np.broadcast_to(np.asarray(self.variance, dtype=np.float64), (d,)).copy()
        if L < 2:
            raise ValueError("need at least 2 classes")
        if m < 2:
            raise ValueError(f"need at least 2 attribute values, got m={m}")
        if d < 1:
            raise ValueError("feature dimension must be positive")
        _check_probs(cp, "class_probs")
        _check_probs(ap, "attribute_probs")
        if cp.size != L or ap.size != m:
            raise ValueError(f"marginals have sizes ({cp.size}, {ap.size}), means imply ({L}, {m})")
        if np.any(var <= 0) or not np.all(np.isfinite(var)):
            raise ValueError("variances must be positive")
        if not np.all(np.isfinite(means)):
            raise ValueError("means must be finite")
        if int(self.n) < 0:
            raise ValueError("n must be >= 0")
        for name, val in (("means", means), ("variance", var), ("class_probs", cp), ("attribute_probs", ap)):
            val.flags.writeable = False
            object.__setattr__(self, name, val)
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def num_classes(self) -> int:
        return self.means.shape[0]

    @property
    def num_attributes(self) -> int:
        return self.means.shape[1]

    @property
    def dim(self) -> int:
        return self.means.shape[2]

    @classmethod
    def build(
        cls,
        class_probs: Sequence[float],
        attribute_probs: Sequence[float],
        *,
        n: int,
        d: int = 8,
        class_separation: float = 2.0,
        attribute_shift: float = 1.0,
        interaction: float = 0.5,
        variance: float = 1.0,
        means_seed: int = 12345,
        seed: int = 0,
        **kwargs: Any,
    ) -> SyntheticSpec:
        """Spec with means built from a seeded layout.

        means[y, a] = class_separation * u_y + attribute_shift * v_a
        + interaction * w_ya, with u, v, w independent standard normal
        directions scaled to unit norm.
        """
        L, m = len(class_probs), len(attribute_probs)
        rng = np.random.default_rng(means_seed)

        def unit(shape):
            z = rng.standard_normal(shape + (d,))
            return z / np.linalg.norm(z, axis=-1, keepdims=True)

        u, v, w = unit((L,)), unit((m,)), unit((L, m))
        means = class_separation * u[:, None, :] + attribute_shift * v[None, :, :] + interaction * w
        return cls(means, np.full(d, variance), np.asarray(class_probs), np.asarray(attribute_probs), n, seed, **kwargs)

    @classmethod
    def from_mapping(cls, cfg: Mapping[str, Any], default_seed: int = 0) -> SyntheticSpec:
        cfg = dict(cfg)
        seed = int(cfg.pop("seed", default_seed))
        extra = {}
        if "class_names" in cfg:
            extra["class_names"] = tuple(cfg.pop("class_names"))
        if "attribute_name" in cfg:
            extra["attribute_name"] = cfg.pop("attribute_name")
        if "attribute_values" in cfg:
            extra["attribute_values"] = tuple(cfg.pop("attribute_values"))
        if "means" in cfg:
            return cls(
                np.asarray(cfg["means"]),
                np.asarray(cfg.get("variance", 1.0)),
                np.asarray(cfg["class_probs"]),
                np.asarray(cfg["attribute_probs"]),
                int(cfg["n"]),
                seed,
                **extra,
            )
        return cls.build(cfg.pop("class_probs"), cfg.pop("attribute_probs"), seed=seed, **cfg, **extra)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Draw ``spec.n`` records; a pure function of ``spec``."""
    rng = np.random.default_rng(spec.seed)
    L, m, d = spec.means.shape
    labels = rng.choice(L, size=spec.n, p=spec.class_probs)
    attrs = rng.choice(m, size=spec.n, p=spec.attribute_probs)
    noise = rng.standard_normal((spec.n, d)) * np.sqrt(spec.variance)
    features = spec.means[labels, attrs] + noise
    label_space = LabelSpace(spec.class_names) if spec.class_names else LabelSpace.of_size(L)
    if spec.attribute_values:
        attr_schema = AttributeSchema(spec.attribute_name, spec.attribute_values)
    else:
        attr_schema = AttributeSchema.of_size(m, spec.attribute_name)
    return Dataset(label_space, attr_schema, features, labels, attrs, np.arange(spec.n))
