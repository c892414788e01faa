import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedshift.data import SyntheticSpec, generate_synthetic
from fedshift.federation import (
    ClientState,
    EvalMatrix,
    FederationConfig,
    fedavg,
    init_clients,
    run_experiment,
    run_round,
    train,
)
from fedshift.learner import ModelSpec, ParamVector, init_model
from fedshift.metrics import evaluate
from fedshift.partition import PartitionPlan, build_localized_benchmark
from fedshift.strategies import STRATEGY_NAMES, StrategyConfig

from .oracles import standalone_sgd

SPEC = SyntheticSpec.build([0.7, 0.3], [0.5, 0.5], n=1500, d=3, seed=2)
PLAN = PartitionPlan(n_clients=3, n_tasks=2, min_client_size=50)
SMALL = FederationConfig(rounds_per_task=3, local_steps=2, batch_size=8)


def pv(*vals):
    return ParamVector(np.array(vals, dtype=float), ((len(vals),),))


def test_fedavg_examples():
    assert fedavg([pv(0, 2), pv(2, 0)], [1, 1]) == pv(1, 1)
    assert fedavg([pv(4), pv(0)], [3, 1]) == pv(3)
    solo = pv(0.1, 0.7)
    assert fedavg([solo], [5]) is solo


def test_fedavg_errors():
    with pytest.raises(ValueError, match=r"client\(s\) \[1\]"):
        fedavg([pv(1, 2), pv(1)])
    with pytest.raises(ValueError):
        fedavg([pv(1), pv(2)], [0, 0])
    with pytest.raises(ValueError):
        fedavg([pv(1), pv(2)], [-1, 2])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.floats(1e-3, 1e3))
def test_fedavg_permutation_and_scale_invariance(seed, K, c):
    rng = np.random.default_rng(seed)
    ps = [pv(*rng.normal(size=5)) for _ in range(K)]
    w = rng.uniform(0.1, 10, size=K)
    base = fedavg(ps, w)
    perm = rng.permutation(K)
    assert fedavg([ps[i] for i in perm], w[perm]) == base
    assert np.allclose(fedavg(ps, w * c).values, base.values, rtol=1e-12, atol=1e-15)
    expect = (w[:, None] * np.stack([p.values for p in ps])).sum(axis=0) / w.sum()
    assert np.allclose(base.values, expect, rtol=1e-12, atol=1e-12)


def bench(plan=PLAN, seed=0):
    from dataclasses import replace

    return build_localized_benchmark(generate_synthetic(SPEC), replace(plan, seed=seed))


def model(b, **kw):
    return ModelSpec.from_mapping({"learning_rate": 0.1, **kw}, b.dataset.dim, b.dataset.num_classes)


def test_zero_local_steps_is_noop():
    b = bench()
    spec = model(b, family="mlp", hidden=(3,))
    cfg = FederationConfig(local_steps=0)
    states = init_clients(b.timelines, StrategyConfig("ERM"), spec, cfg, 0)
    states, rec = run_round(states, StrategyConfig("ERM"), cfg, spec, 0, 0, 0)
    assert all(s.params == init_model(spec) for s in states) and rec.consensus


def test_identical_clients_match_single_client():
    b = bench()
    spec = model(b)
    tl = b.timelines[0]
    strat = StrategyConfig("ERM", federated=True)
    one = init_clients([tl], strat, spec, SMALL, 0)
    two = init_clients([tl, tl], strat, spec, SMALL, 0)
    one, _ = run_round(one, strat, SMALL, spec, 0, 0, 0)
    two, rec = run_round(two, strat, SMALL, spec, 0, 0, 0)
    assert two[0].params == one[0].params == two[1].params


def test_single_client_round_equals_plain_sgd():
    b = bench(PartitionPlan(n_clients=1, n_tasks=2, min_client_size=50))
    spec = model(b)
    ref = standalone_sgd(b.timelines[0], spec, SMALL.rounds_per_task, SMALL.local_steps, SMALL.batch_size, 0)
    for name in ("F-ERM", "ERM"):
        res = train(b, StrategyConfig.parse(name), SMALL, spec, 0)
        assert res.final_params[0] == ref[-1]


def test_consensus_every_round():
    b = bench()
    res = train(b, StrategyConfig.parse("F-ER"), SMALL, model(b), 0)
    assert len(res.rounds) == SMALL.rounds_per_task * 2
    assert all(r.consensus for r in res.rounds)
    local = train(b, StrategyConfig.parse("ERM"), SMALL, model(b), 0)
    assert not all(r.consensus for r in local.rounds)


def test_eval_matrix_schedule():
    b = bench(PartitionPlan(n_clients=2, n_tasks=1, min_client_size=50))
    res = train(b, StrategyConfig.parse("F-ERM"), SMALL, model(b), 0)
    assert set(res.matrix.entries) == {(0, 0, 0), (1, 0, 0)}
    b3 = bench(PartitionPlan(n_clients=1, n_tasks=3, min_client_size=50))
    res = train(b3, StrategyConfig.parse("F-CB"), SMALL, model(b3), 0)
    assert sorted(k[1:] for k in res.matrix.entries if k[1] == 2) == [(2, 0), (2, 1), (2, 2)]
    assert res.matrix.is_complete()
    row = res.matrix.row(0, 2)
    assert res.matrix.seen_mean(0, 2) == pytest.approx(np.mean(row), abs=1e-15)
    assert set(res.matrix.holdout) == {0}


def test_eval_matrix_rejects_bad_entries():
    m = EvalMatrix(1, 2)
    r = evaluate(np.array([[0.6, 0.4]]), [0], 2)
    m.set(0, 1, 0, r)
    with pytest.raises(ValueError):
        m.set(0, 1, 0, r)
    with pytest.raises(IndexError):
        m.set(0, 0, 1, r)


@pytest.mark.parametrize("name", [f"F-{n}" for n in STRATEGY_NAMES])
def test_every_strategy_runs_deterministically(name):
    b = bench()
    spec = model(b, family="mlp", hidden=(4,))
    a = train(b, StrategyConfig.parse(name), SMALL, spec, 3)
    c = train(b, StrategyConfig.parse(name), SMALL, spec, 3)
    assert [r.checksums for r in a.rounds] == [r.checksums for r in c.rounds]
    assert a.matrix.is_complete()


def test_crt_stage2_rounds_leave_body_fixed():
    b = bench(PartitionPlan(n_clients=2, n_tasks=1, min_client_size=50))
    spec = model(b, family="mlp", hidden=(4,))
    cfg = FederationConfig(rounds_per_task=4, local_steps=3, batch_size=8)
    strat = StrategyConfig("CRT", crt_stage2_fraction=0.5)
    states = init_clients(b.timelines, strat, spec, cfg, 0)
    for r in range(2):
        states, _ = run_round(states, strat, cfg, spec, 0, r, 0, phase=1)
    body = states[0].params.values[: -(4 * 2 + 2)].copy()
    for r in range(2, 4):
        states, rec = run_round(states, strat, cfg, spec, 0, r, 0, phase=2)
        assert rec.phase == 2
    assert np.array_equal(states[0].params.values[: -(4 * 2 + 2)], body)


def test_swad_evaluates_average_not_raw():
    b = bench(PartitionPlan(n_clients=1, n_tasks=1, min_client_size=50))
    res = train(b, StrategyConfig("SWAD", swad_window=5), SMALL, model(b), 0)
    raw = train(b, StrategyConfig("ERM", federated=True), SMALL, model(b), 0)
    assert res.final_params[0] != raw.final_params[0]
    assert res.rounds[-1].checksums == raw.rounds[-1].checksums


def test_serial_and_parallel_identical():
    b = bench()
    spec = model(b)
    for name in ("F-ER", "ERM", "F-SWAD"):
        s = train(b, StrategyConfig.parse(name), SMALL, spec, 1)
        p = train(b, StrategyConfig.parse(name), FederationConfig(3, 2, 8, workers=3), spec, 1)
        assert [r.checksums for r in s.rounds] == [r.checksums for r in p.rounds]
        assert [r.pre_loss for r in s.rounds] == [r.pre_loss for r in p.rounds]


def test_run_experiment_seed_drives_everything():
    a = run_experiment(SPEC, PLAN, StrategyConfig.parse("F-CB"), SMALL, seed=4)
    b = run_experiment(SPEC, PLAN, StrategyConfig.parse("F-CB"), SMALL, seed=4)
    c = run_experiment(SPEC, PLAN, StrategyConfig.parse("F-CB"), SMALL, seed=5)
    assert a.final_params[0] == b.final_params[0]
    assert a.final_params[0] != c.final_params[0]


def test_empty_task_rejected():
    b = bench()
    tl = b.timelines[0]
    tl.train_tasks[1] = tl.train_tasks[1].empty_like()
    with pytest.raises(ValueError, match="empty"):
        train(b, StrategyConfig.parse("F-ERM"), SMALL, model(b), 0)


def test_federation_config_validation():
    with pytest.raises(ValueError):
        FederationConfig(rounds_per_task=0)
    with pytest.raises(ValueError):
        FederationConfig.from_mapping({"rounds": 3})
    assert isinstance(ClientState, type)
