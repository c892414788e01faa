"""Keyed random streams.

Every stochastic step draws from a generator keyed by a tuple such as
``(seed, client_id, task, round)``. Streams therefore do not depend on the
order in which clients or cells are processed.
"""

from __future__ import annotations

import zlib

import numpy as np


def _word(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode())
    k = int(k)
    if k < 0:
        raise ValueError(f"rng key parts must be non-negative, got {k}")
    return k


def keyed_rng(*key) -> np.random.Generator:
    return np.random.default_rng([_word(k) for k in key])


def stable_permutation(record_ids: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Positions of ``record_ids`` sorted by id, then shuffled by ``rng``.

    Sorting first makes the result independent of input row order.
    """
    order = np.argsort(record_ids, kind="stable")
    return order[rng.permutation(order.size)]


def round_half_up(x) -> np.ndarray | int:
    r = np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(np.int64)
    return int(r) if r.ndim == 0 else r


def largest_remainder(total: int, weights) -> np.ndarray:
    """Integer apportionment of ``total`` proportional to ``weights``.

    Ties in the fractional parts go to the lowest index.
    """
    w = np.asarray(weights, dtype=np.float64)
    if total == 0 or w.sum() == 0:
        return np.zeros(w.size, dtype=np.int64)
    quota = np.round(total * w / w.sum(), 9)
    base = np.floor(quota).astype(np.int64)
    rem = int(total - base.sum())
    if rem > 0:
        frac = quota - base
        order = np.lexsort((np.arange(w.size), -frac))
        base[order[:rem]] += 1
    return base
