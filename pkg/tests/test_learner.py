import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedshift.learner import (
    Batch,
    DivergenceError,
    ModelSpec,
    ParamVector,
    forward,
    head_mask,
    init_model,
    loss_and_grad,
    predict,
    sgd_step,
)
from fedshift.metrics import ltr_accuracy

from .oracles import fd_gradient, max_rel_error


def random_batch(rng, B, d, L, mix=False):
    x = rng.normal(size=(B, d))
    y = rng.integers(0, L, size=B)
    kw = {}
    if mix:
        kw = {"mix_labels": rng.integers(0, L, size=B), "mix_weights": rng.uniform(size=B)}
    return Batch(x, y, np.zeros(B, dtype=np.int64), **kw)


def test_init_shapes():
    p = init_model(ModelSpec("logistic", 3, 2))
    assert len(p) == 8 and not p.values.any()
    spec = ModelSpec("mlp", 2, 3, hidden=(4,), seed=9)
    assert len(init_model(spec)) == 27
    assert init_model(spec) == init_model(spec)
    bound = 1 / math.sqrt(2)
    W1 = init_model(spec).unflatten()[0]
    assert np.all(np.abs(W1) <= bound)


def test_spec_validation():
    for bad in [dict(family="cnn"), dict(learning_rate=0.0), dict(hidden=(3,)), dict(l2=-1.0)]:
        kw = dict(family="logistic", input_dim=2, n_classes=2) | bad
        with pytest.raises(ValueError):
            ModelSpec(**kw)


def test_param_vector_rejects_non_finite():
    with pytest.raises(DivergenceError):
        ParamVector(np.array([1.0, np.nan]), ((2,),))
    with pytest.raises(ValueError):
        ParamVector(np.zeros(3), ((2,),))


def test_forward_examples():
    p = init_model(ModelSpec("logistic", 3, 4))
    assert np.allclose(forward(p, np.ones((5, 3))), 0.25)
    W = np.zeros((2, 2))
    W[1, 1] = 1e3
    big = ParamVector(np.concatenate([W.ravel(), np.zeros(2)]), ((2, 2), (2,)))
    assert forward(big, [[0.0, 1.0]])[0, 1] > 1 - 1e-6
    rng = np.random.default_rng(0)
    q = init_model(ModelSpec("mlp", 4, 5, hidden=(6,), seed=1))
    assert np.allclose(forward(q, rng.normal(size=(9, 4))).sum(axis=1), 1.0, atol=1e-9)
    with pytest.raises(ValueError):
        forward(q, np.full((1, 4), np.inf))
    with pytest.raises(ValueError):
        forward(q, np.zeros((1, 3)))


def test_forward_row_permutation_equivariant():
    rng = np.random.default_rng(1)
    q = init_model(ModelSpec("mlp", 3, 3, hidden=(5,), seed=2))
    x = rng.normal(size=(7, 3))
    perm = rng.permutation(7)
    assert np.array_equal(forward(q, x)[perm], forward(q, x[perm]))


def test_zero_params_loss_is_log_l():
    rng = np.random.default_rng(2)
    p = init_model(ModelSpec("logistic", 4, 2))
    loss, _ = loss_and_grad(p, random_batch(rng, 6, 4, 2))
    assert abs(loss - math.log(2)) < 1e-9


def test_logistic_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    spec = ModelSpec("logistic", 4, 3)
    p = spec_params(spec, rng)
    b = random_batch(rng, 5, 4, 3)
    _, g = loss_and_grad(p, b, spec)
    assert max_rel_error(g.values, fd_gradient(p, b)) < 1e-4


def spec_params(spec, rng):
    n = sum(int(np.prod(s)) for s in spec.shapes)
    return ParamVector(rng.normal(scale=0.5, size=n), spec.shapes)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["logistic", "mlp"]), st.booleans())
def test_gradient_property(seed, family, mix):
    rng = np.random.default_rng(seed)
    d, L = int(rng.integers(1, 5)), int(rng.integers(2, 5))
    hidden = (int(rng.integers(1, 5)),) if family == "mlp" else ()
    spec = ModelSpec(family, d, L, hidden=hidden)
    p = spec_params(spec, rng)
    b = random_batch(rng, int(rng.integers(1, 7)), d, L, mix)
    _, g = loss_and_grad(p, b, spec)
    assert max_rel_error(g.values, fd_gradient(p, b)) < 1e-4


def test_duplicated_batch_same_loss_and_grad():
    rng = np.random.default_rng(4)
    spec = ModelSpec("mlp", 3, 3, hidden=(4,))
    p = spec_params(spec, rng)
    b = random_batch(rng, 5, 3, 3)
    b2 = Batch(np.vstack([b.features] * 2), np.tile(b.labels, 2), np.tile(b.attributes, 2))
    l1, g1 = loss_and_grad(p, b)
    l2, g2 = loss_and_grad(p, b2)
    assert abs(l1 - l2) < 1e-12 and np.allclose(g1.values, g2.values, atol=1e-15)


def test_sgd_step_examples():
    p = ParamVector(np.array([1.0]), ((1,),))
    assert sgd_step(p, p.like(np.array([0.0])), 0.1) == p
    assert sgd_step(p, p.like(np.array([2.0])), 0.1).values[0] == pytest.approx(0.8, abs=1e-15)
    assert sgd_step(p, p.like(np.array([0.0])), 0.1, l2=0.5).values[0] == pytest.approx(0.95, abs=1e-15)
    with pytest.raises(DivergenceError, match="non-finite"):
        sgd_step(p, p.like(np.array([1e308])), 1e10)


def test_masked_step_only_touches_head():
    spec = ModelSpec("mlp", 3, 2, hidden=(4,))
    rng = np.random.default_rng(5)
    p = spec_params(spec, rng)
    mask = head_mask(spec.shapes)
    assert mask.sum() == 4 * 2 + 2
    q = sgd_step(p, p.like(rng.normal(size=len(p))), 0.5, mask=mask)
    assert np.array_equal(q.values[~mask], p.values[~mask])
    assert not np.array_equal(q.values[mask], p.values[mask])


def test_predict_ties_and_order():
    spec = ModelSpec("logistic", 1, 2)
    zero = init_model(spec)
    assert predict(zero, [[3.0]]).tolist() == [0]
    p = ParamVector(np.array([1.0, 2.0, 0.0, 0.0]), spec.shapes)
    assert predict(p, [[1.0], [-1.0], [0.0]]).tolist() == [1, 0, 0]


def test_separable_data_trains_to_high_ltr():
    rng = np.random.default_rng(6)
    n, d = 400, 2
    y = rng.integers(0, 2, size=n)
    x = rng.normal(size=(n, d)) + np.where(y[:, None] == 1, 3.0, -3.0)
    spec = ModelSpec("logistic", d, 2, learning_rate=0.1)
    p = init_model(spec)
    for _ in range(500):
        idx = rng.integers(0, n, size=10)
        _, g = loss_and_grad(p, Batch(x[idx], y[idx], np.zeros(10, dtype=np.int64)))
        p = sgd_step(p, g, spec.learning_rate)
    assert ltr_accuracy(predict(p, x), y, 2) > 0.95
