"""Independent reference computations used by several test modules."""

import itertools
import zlib

import numpy as np

from fedshift.learner import Batch, init_model, loss_and_grad, sgd_step


def fd_gradient(params, batch, eps=1e-5):
    """Central finite differences of the batch loss, one coordinate at a time."""
    v = params.values
    g = np.empty_like(v)
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = eps
        lp, _ = loss_and_grad(params.like(v + e), batch)
        lm, _ = loss_and_grad(params.like(v - e), batch)
        g[i] = (lp - lm) / (2 * eps)
    return g


def max_rel_error(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(1e-6, np.abs(a) + np.abs(b))))


def pairwise_auc(scores, positives):
    """Fraction of (positive, negative) pairs ranked correctly; ties count half."""
    pos = [s for s, p in zip(scores, positives) if p]
    neg = [s for s, p in zip(scores, positives) if not p]
    total = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a, b in itertools.product(pos, neg))
    return total / (len(pos) * len(neg))


def standalone_sgd(timeline, spec, rounds_per_task, local_steps, batch_size, seed, client_id=0):
    """Plain uniform-batch SGD over a timeline's train tasks.

    Batch indices come from the documented local stream: a numpy generator
    seeded with [seed, client_id, task, round, crc32("local")].
    Returns the parameters after each task.
    """
    p = init_model(spec)
    local = zlib.crc32(b"local")
    out = []
    for t, task in enumerate(timeline.train_tasks):
        for r in range(rounds_per_task):
            rng = np.random.default_rng([seed, client_id, t, r, local])
            for _ in range(local_steps):
                idx = rng.integers(0, len(task), size=batch_size)
                b = Batch(task.features[idx], task.labels[idx], task.attributes[idx])
                _, g = loss_and_grad(p, b)
                p = sgd_step(p, g, spec.learning_rate, spec.l2)
        out.append(p)
    return out
