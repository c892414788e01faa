from collections import deque

import numpy as np
import pytest

from fedshift.learner import Batch, ModelSpec, ParamVector, head_mask, init_model, loss_and_grad, sgd_step
from fedshift.strategies import (
    ReplayBuffer,
    StrategyConfig,
    SwadState,
    buffer_update,
    crt_schedule,
    mixup_batch,
    sample_batch_class_balanced,
    sample_batch_er,
    sample_batch_group_balanced,
    sample_batch_uniform,
    swad_finalize,
    swad_update,
)

from .conftest import make_dataset

N_DRAWS = 10**5


def ninety_ten():
    return make_dataset([0] * 90 + [1] * 10, [0] * 70 + [1] * 30)


def shares(values, k):
    return np.bincount(values, minlength=k) / len(values)


def test_config_parsing_and_validation():
    assert StrategyConfig.parse("F-CB").label == "F-CB"
    assert StrategyConfig.parse("ERM").federated is False
    er = StrategyConfig.parse({"name": "F-ER", "buffer_capacity": 50})
    assert er.buffer_capacity == 50 and er.replay_ratio == 0.5
    assert StrategyConfig("MIXUP").mixup_alpha == 0.2
    with pytest.raises(ValueError):
        StrategyConfig("CB", buffer_capacity=10)
    with pytest.raises(ValueError):
        StrategyConfig("FOCAL")


def test_uniform_sampler():
    one = make_dataset([1], [0], L=2, m=2)
    assert sample_batch_uniform(one, 7, np.random.default_rng(0)).labels.tolist() == [1] * 7
    b = sample_batch_uniform(ninety_ten(), N_DRAWS, np.random.default_rng(1))
    assert abs(shares(b.labels, 2)[0] - 0.9) < 0.01
    x = sample_batch_uniform(ninety_ten(), 10, np.random.default_rng(5)).record_ids
    assert np.array_equal(x, sample_batch_uniform(ninety_ten(), 10, np.random.default_rng(5)).record_ids)


def test_class_balanced_sampler():
    b = sample_batch_class_balanced(ninety_ten(), N_DRAWS, np.random.default_rng(2))
    assert np.all(np.abs(shares(b.labels, 2) - 0.5) < 0.01)
    only = make_dataset([1] * 5, [0] * 5, L=2, m=2)
    assert set(sample_batch_class_balanced(only, 20, np.random.default_rng(0)).labels) == {1}
    rng = np.random.default_rng(3)
    y = np.repeat(np.arange(7), [1000, 400, 200, 100, 50, 30, 17])
    seven = make_dataset(y, np.zeros_like(y), L=7, m=2)
    assert np.all(np.abs(shares(sample_batch_class_balanced(seven, N_DRAWS, rng).labels, 7) - 1 / 7) < 0.01)


def test_group_balanced_sampler():
    b = sample_batch_group_balanced(ninety_ten(), N_DRAWS, np.random.default_rng(4))
    assert np.all(np.abs(shares(b.attributes, 2) - 0.5) < 0.01)
    only = make_dataset([0, 1, 0], [1, 1, 1], L=2, m=2)
    assert set(sample_batch_group_balanced(only, 20, np.random.default_rng(0)).attributes) == {1}
    a = np.repeat(np.arange(5), [500, 100, 60, 30, 10])
    five = make_dataset(np.zeros_like(a), a, L=2, m=5)
    s = shares(sample_batch_group_balanced(five, N_DRAWS, np.random.default_rng(5)).attributes, 5)
    assert np.all(np.abs(s - 0.2) < 0.01)


def test_reservoir_small_cases():
    ds = make_dataset(np.zeros(5, dtype=int), np.zeros(5, dtype=int), L=2, m=2)
    buf = ReplayBuffer(5, ds.dim, 0)
    for r in ds:
        buffer_update(buf, r)
    assert sorted(buf.stored_ids().tolist()) == [0, 1, 2, 3, 4]
    empty = ReplayBuffer(0, ds.dim, 0)
    for r in ds:
        buffer_update(empty, r)
    assert len(empty) == 0 and empty.seen == 5


@pytest.mark.parametrize("vectorised", [False, True])
def test_reservoir_inclusion_probability(vectorised):
    # capacity 3 over a stream of 30: each position is kept with probability 0.1
    n, cap, reps = 30, 3, 20_000
    ds = make_dataset(np.zeros(n, dtype=int), np.zeros(n, dtype=int), L=2, m=2)
    hits = np.zeros(n)
    for seed in range(reps):
        buf = ReplayBuffer(cap, ds.dim, seed)
        if vectorised:
            buf.extend(ds)
        else:
            for r in ds:
                buf.offer(r)
        hits[buf.stored_ids()] += 1
    p = cap / n
    sigma = np.sqrt(reps * p * (1 - p))
    assert np.all(np.abs(hits - reps * p) < 3 * sigma)


def test_er_batches():
    task = ninety_ten()
    rng = np.random.default_rng(0)
    empty = ReplayBuffer(10, task.dim, 0)
    b = sample_batch_er(task, empty, 10, 0.5, rng)
    assert len(b) == 10 and b.n_replayed == 0
    old = make_dataset([1] * 8, [0] * 8, ids=np.arange(1000, 1008), L=2, m=2)
    buf = ReplayBuffer(20, task.dim, 0)
    buf.extend(old)
    b = sample_batch_er(task, buf, 10, 0.5, rng)
    assert b.n_replayed == 5 and np.all(b.record_ids[:5] >= 1000) and np.all(b.record_ids[5:] < 1000)
    small = ReplayBuffer(2, task.dim, 0)
    small.extend(old)
    assert sample_batch_er(task, small, 10, 0.5, rng).n_replayed == 2


def test_er_replay_origin_matches_buffer_composition():
    a = make_dataset([0] * 30, [0] * 30, ids=np.arange(30), L=2, m=2)
    b = make_dataset([1] * 10, [1] * 10, ids=np.arange(100, 110), L=2, m=2)
    buf = ReplayBuffer(40, 2, 0)
    buf.extend(a, origin=0)
    buf.extend(b, origin=1)
    rng = np.random.default_rng(1)
    ids = np.concatenate([sample_batch_er(a, buf, 10, 0.5, rng).record_ids[:5] for _ in range(20_000)])
    assert abs(np.mean(ids >= 100) - 0.25) < 0.01


def test_mixup_identity_and_arithmetic():
    b = Batch(np.array([[0.0, 0.0], [2.0, 2.0]]), np.array([0, 1]), np.array([0, 0]))
    rng = np.random.default_rng(0)
    same = mixup_batch(b, 0.2, rng, lam=1.0)
    assert np.array_equal(same.features, b.features)
    half = mixup_batch(b, 0.2, np.random.default_rng(3), lam=0.5)
    partner = half.mix_labels
    for i in range(2):
        j = int(np.flatnonzero(b.labels == partner[i])[0])
        assert np.allclose(half.features[i], (b.features[i] + b.features[j]) / 2)
    perm_swap = [r for r in range(20) if np.array_equal(np.random.default_rng(r).permutation(2), [1, 0])][0]
    swapped = mixup_batch(b, 0.2, np.random.default_rng(perm_swap), lam=0.5)
    assert swapped.features.tolist() == [[1.0, 1.0], [1.0, 1.0]]


def test_mixup_loss_linearity():
    rng = np.random.default_rng(7)
    spec = ModelSpec("mlp", 3, 3, hidden=(4,), seed=1)
    p = init_model(spec)
    b = Batch(rng.normal(size=(6, 3)), rng.integers(0, 3, 6), np.zeros(6, dtype=np.int64))
    mixed = mixup_batch(b, 0.2, rng, lam=0.3)
    as_i = Batch(mixed.features, mixed.labels, mixed.attributes)
    as_j = Batch(mixed.features, mixed.mix_labels, mixed.attributes)
    lm, gm = loss_and_grad(p, mixed)
    li, gi = loss_and_grad(p, as_i)
    lj, gj = loss_and_grad(p, as_j)
    assert abs(lm - (0.3 * li + 0.7 * lj)) < 1e-9
    assert np.allclose(gm.values, 0.3 * gi.values + 0.7 * gj.values, atol=1e-12)


def test_mixup_small_alpha_is_nearly_plain():
    rng = np.random.default_rng(0)
    b = Batch(rng.normal(size=(4, 2)), np.arange(4) % 2, np.zeros(4, dtype=np.int64))
    lams = [mixup_batch(b, 1e-3, rng).mix_weights[0] for _ in range(2000)]
    assert np.mean([min(x, 1 - x) < 1e-3 for x in lams]) > 0.95


def test_crt_schedule():
    assert crt_schedule(10, 0.3) == [1] * 7 + [2] * 3
    assert crt_schedule(1, 0.5) == [1]
    assert crt_schedule(20, 0.25) == [1] * 15 + [2] * 5
    with pytest.raises(ValueError):
        crt_schedule(10, 1.0)


def test_crt_stage2_keeps_body_fixed():
    rng = np.random.default_rng(0)
    spec = ModelSpec("mlp", 3, 2, hidden=(5,), seed=2)
    p0 = p = init_model(spec)
    mask = head_mask(spec.shapes)
    for _ in range(50):
        b = Batch(rng.normal(size=(10, 3)), rng.integers(0, 2, 10), np.zeros(10, dtype=np.int64))
        _, g = loss_and_grad(p, b)
        p = sgd_step(p, g, 0.5, mask=mask)
    assert np.array_equal(p.values[~mask], p0.values[~mask])


def pv(*vals):
    return ParamVector(np.array(vals, dtype=float), ((len(vals),),))


def test_swad():
    s = SwadState(3)
    for _ in range(5):
        s = swad_update(s, pv(1.0, -2.0))
    assert swad_finalize(s) == pv(1.0, -2.0)
    s = SwadState(2)
    for v in (1.0, 2.0, 4.0):
        s = swad_update(s, pv(v))
    assert swad_finalize(s).values.tolist() == [3.0]
    stream = [pv(float(v), float(v * v)) for v in range(6)]
    s = SwadState(10)
    for q in stream:
        s = swad_update(s, q)
    expect = sum(q.values for q in stream) / len(stream)
    assert np.allclose(swad_finalize(s).values, expect, atol=1e-15)
    with pytest.raises(ValueError):
        swad_finalize(SwadState(2))
    assert isinstance(s.history, deque)
