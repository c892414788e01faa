"""Small softmax classifiers trained by mini-batch SGD on flat parameter vectors.

Two families share one flat layout convention: weight matrices (fan_in x
fan_out) followed by their bias, layer by layer. ``logistic`` is a single
layer; ``mlp`` adds tanh hidden layers.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any, Literal, Mapping, Sequence

import numpy as np

from ._random import keyed_rng

__all__ = [
    "Batch",
    "DivergenceError",
    "ModelSpec",
    "ParamVector",
    "forward",
    "head_mask",
    "init_model",
    "loss_and_grad",
    "predict",
    "sgd_step",
]


class DivergenceError(FloatingPointError):
    """Raised when training produces non-finite values."""


@dataclass(frozen=True, eq=False)
class ParamVector:
    values: np.ndarray
    shapes: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        shapes = tuple(tuple(int(d) for d in s) for s in self.shapes)
        expected = sum(int(np.prod(s)) for s in shapes)
        if v.size != expected:
            raise ValueError(f"{v.size} values do not fit layout {shapes} ({expected} values)")
        if not np.all(np.isfinite(v)):
            raise DivergenceError(f"non-finite parameters ({int((~np.isfinite(v)).sum())} entries)")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "shapes", shapes)

    def __len__(self) -> int:
        return self.values.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self.shapes == other.shapes and np.array_equal(self.values, other.values)

    def unflatten(self) -> list[np.ndarray]:
        out, start = [], 0
        for s in self.shapes:
            n = int(np.prod(s))
            out.append(self.values[start : start + n].reshape(s))
            start += n
        return out

    def like(self, values: np.ndarray) -> ParamVector:
        return ParamVector(values, self.shapes)

    def checksum(self) -> str:
        return hashlib.sha256(self.values.tobytes()).hexdigest()[:16]


@dataclass(frozen=True)
class ModelSpec:
    family: Literal["logistic", "mlp"]
    input_dim: int
    n_classes: int
    hidden: tuple[int, ...] = ()
    seed: int = 0
    learning_rate: float = 0.05
    l2: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.family not in ("logistic", "mlp"):
            raise ValueError(f"unknown model family {self.family!r}")
        if self.input_dim < 1 or self.n_classes < 2:
            raise ValueError("input_dim must be >= 1 and n_classes >= 2")
        if self.family == "logistic" and self.hidden:
            raise ValueError("logistic models take no hidden layers")
        if self.family == "mlp" and (not self.hidden or min(self.hidden) < 1):
            raise ValueError("mlp needs at least one positive hidden size")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.n_classes)

    @property
    def shapes(self) -> tuple[tuple[int, ...], ...]:
        sizes = self.layer_sizes
        out: list[tuple[int, ...]] = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            out += [(a, b), (b,)]
        return tuple(out)

    @classmethod
    def from_mapping(cls, cfg: Mapping[str, Any], input_dim: int, n_classes: int, seed: int = 0) -> ModelSpec:
        cfg = dict(cfg)
        return cls(
            family=cfg.pop("family", "logistic"),
            input_dim=input_dim,
            n_classes=n_classes,
            hidden=tuple(cfg.pop("hidden", ())),
            seed=int(cfg.pop("seed", seed)),
            **cfg,
        )


@dataclass(frozen=True)
class Batch:
    """Mini-batch. ``mix_labels``/``mix_weights`` are set by MixUp: example i
    then targets ``mix_weights[i]`` of ``labels[i]`` and the rest of
    ``mix_labels[i]``."""

    features: np.ndarray
    labels: np.ndarray
    attributes: np.ndarray
    record_ids: np.ndarray | None = None
    mix_labels: np.ndarray | None = None
    mix_weights: np.ndarray | None = None
    n_replayed: int = field(default=0, compare=False)

    def __post_init__(self):
        B = len(self.labels)
        if self.features.ndim != 2 or self.features.shape[0] != B or len(self.attributes) != B:
            raise ValueError("inconsistent batch sizes")
        if (self.mix_labels is None) != (self.mix_weights is None):
            raise ValueError("mix_labels and mix_weights go together")
        if self.mix_labels is not None and (len(self.mix_labels) != B or len(self.mix_weights) != B):
            raise ValueError("inconsistent mix sizes")

    def __len__(self) -> int:
        return len(self.labels)


def init_model(spec: ModelSpec) -> ParamVector:
    """Logistic models start at zero; mlp weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases."""
    if spec.family == "logistic":
        n = sum(int(np.prod(s)) for s in spec.shapes)
        return ParamVector(np.zeros(n), spec.shapes)
    rng = keyed_rng(spec.seed, "init")
    parts = []
    for s in spec.shapes:
        if len(s) == 2:
            bound = 1.0 / np.sqrt(s[0])
            parts.append(rng.uniform(-bound, bound, size=s).ravel())
        else:
            parts.append(np.zeros(s))
    return ParamVector(np.concatenate(parts), spec.shapes)


def _layers(params: ParamVector) -> list[tuple[np.ndarray, np.ndarray]]:
    arrs = params.unflatten()
    return list(zip(arrs[0::2], arrs[1::2]))


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward_cache(params: ParamVector, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    layers = _layers(params)
    acts = [x]
    h = x
    for W, b in layers[:-1]:
        h = np.tanh(h @ W + b)
        acts.append(h)
    W, b = layers[-1]
    return acts, h @ W + b


def forward(params: ParamVector, features: np.ndarray) -> np.ndarray:
    """Class-probability matrix (softmax of the logits)."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != params.shapes[0][0]:
        raise ValueError(f"features have dimension {x.shape[1]}, model expects {params.shapes[0][0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite features")
    _, logits = _forward_cache(params, x)
    return _softmax(logits)


def predict(params: ParamVector, features: np.ndarray) -> np.ndarray:
    """Argmax class per row; exact ties go to the lowest class index."""
    return np.argmax(forward(params, features), axis=1)


def loss_and_grad(params: ParamVector, batch: Batch, spec: ModelSpec | None = None) -> tuple[float, ParamVector]:
    """Mean softmax cross-entropy over the batch and its gradient.

    With mix weights, each example's loss is
    ``w * CE(labels) + (1 - w) * CE(mix_labels)``.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    if spec is not None and params.shapes != spec.shapes:
        raise ValueError(f"parameter layout {params.shapes} does not match spec {spec.shapes}")
    B = len(batch)
    acts, logits = _forward_cache(params, batch.features)
    L = logits.shape[1]
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    target = np.zeros((B, L))
    rows = np.arange(B)
    if batch.mix_weights is None:
        target[rows, batch.labels] = 1.0
    else:
        w = np.asarray(batch.mix_weights, dtype=np.float64)
        target[rows, batch.labels] += w
        target[rows, batch.mix_labels] += 1.0 - w
    loss = float(-(target * logp).sum() / B)

    delta = (np.exp(logp) - target) / B
    layers = _layers(params)
    grads: list[np.ndarray] = []
    for li in range(len(layers) - 1, -1, -1):
        W, _ = layers[li]
        h = acts[li]
        grads.append(delta.sum(axis=0))
        grads.append(h.T @ delta)
        if li > 0:
            delta = (delta @ W.T) * (1.0 - h * h)
    grads.reverse()
    return loss, params.like(np.concatenate([g.ravel() for g in grads]))


def head_mask(shapes: Sequence[tuple[int, ...]]) -> np.ndarray:
    """Boolean mask of the final weight matrix and bias in the flat layout."""
    sizes = [int(np.prod(s)) for s in shapes]
    mask = np.zeros(sum(sizes), dtype=bool)
    mask[sum(sizes[:-2]) :] = True
    return mask


def sgd_step(
    params: ParamVector,
    gradient: ParamVector,
    learning_rate: float,
    l2: float = 0.0,
    mask: np.ndarray | None = None,
) -> ParamVector:
    """``p - lr * (g + l2 * p)``; coordinates outside ``mask`` are left untouched."""
    if params.shapes != gradient.shapes:
        raise ValueError("parameter and gradient layouts differ")
    with np.errstate(over="ignore", invalid="ignore"):
        update = learning_rate * (gradient.values + l2 * params.values)
    if not np.all(np.isfinite(update)):
        bad = np.flatnonzero(~np.isfinite(update))
        raise DivergenceError(
            f"non-finite SGD update at {bad.size} coordinate(s) (first {bad[:5].tolist()}); "
            f"max |param| {np.abs(params.values).max():.3g}, max |grad| "
            f"{np.nanmax(np.abs(gradient.values)):.3g}, lr {learning_rate}"
        )
    if mask is None:
        return params.like(params.values - update)
    new = params.values.copy()
    new[mask] -= update[mask]
    return params.like(new)
