import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from poflsc.errors import (
    BadParams,
    DimensionMismatch,
    EmptyRound,
    NoContributors,
    StaleNegative,
)
from poflsc.fedavg import (
    RoundContext,
    aggregate_sync,
    apply_async,
    run_global_round,
)
from poflsc.learner import GradientUpdate, ModelParams, train_local
from poflsc.ledger import params_hash
from poflsc.state import Phase, Subchain
from poflsc.verification import audit_replay

from helpers import contiguous_shards, rt_matrix, tiny_dataset, zero_params


def _params(vals):
    return ModelParams((1, 2), np.asarray(vals, dtype=np.float64))


def _upd(miner, delta, samples=1, rnd=0):
    return GradientUpdate(miner=miner, delta=np.asarray(delta, np.float64),
                          samples_used=samples, round=rnd)


# --- synchronous aggregation ----------------------------------------------

def test_identical_deltas_aggregate_to_one_delta():
    p = _params([1.0, 2.0, 3.0, 4.0])
    d = np.array([0.5, -0.25, 0.125, 1.0])
    updates = [_upd(m, d) for m in range(3)]
    out = aggregate_sync(p, updates)
    assert np.allclose(out.vec, p.vec + d, rtol=0, atol=1e-12)


def test_weighted_mean_matches_direct_arithmetic():
    rng = np.random.default_rng(1)
    p = _params(rng.normal(size=4))
    deltas = rng.normal(size=(3, 4))
    samples = [2, 5, 3]
    updates = [_upd(m, deltas[m], samples=samples[m]) for m in range(3)]
    out = aggregate_sync(p, updates)
    expect = p.vec + np.average(deltas, axis=0, weights=samples)
    assert np.allclose(out.vec, expect, rtol=0, atol=1e-12)


def test_aggregation_ignores_input_order():
    rng = np.random.default_rng(2)
    p = _params(rng.normal(size=4))
    updates = [_upd(m, rng.normal(size=4), samples=m + 1) for m in range(4)]
    a = aggregate_sync(p, updates)
    b = aggregate_sync(p, list(reversed(updates)))
    assert np.array_equal(a.vec, b.vec)


def test_aggregation_rejects_bad_batches():
    p = _params([0.0] * 4)
    with pytest.raises(EmptyRound):
        aggregate_sync(p, [])
    with pytest.raises(DimensionMismatch):
        aggregate_sync(p, [_upd(0, [1.0, 2.0])])
    with pytest.raises(BadParams):
        aggregate_sync(p, [_upd(0, [0.0] * 4, samples=0)])
    with pytest.raises(BadParams):
        aggregate_sync(p, [_upd(0, [0.0] * 4), _upd(0, [1.0] * 4)])
    with pytest.raises(BadParams):
        aggregate_sync(p, [_upd(0, [0.0] * 4, rnd=0), _upd(1, [0.0] * 4, rnd=1)])


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=1, max_value=6),
       st.integers(min_value=0, max_value=2 ** 32))
def test_aggregate_is_a_weighted_mean(k, seed):
    rng = np.random.default_rng(seed)
    p = _params(rng.normal(size=4))
    deltas = rng.normal(size=(k, 4))
    samples = rng.integers(1, 20, size=k)
    updates = [_upd(m, deltas[m], samples=int(samples[m])) for m in range(k)]
    out = aggregate_sync(p, updates)
    expect = p.vec + np.average(deltas, axis=0, weights=samples)
    assert np.allclose(out.vec, expect, rtol=0, atol=1e-10)


# --- asynchronous application ---------------------------------------------

def test_fresh_async_update_equals_single_sync_aggregate():
    p = _params([1.0, -1.0, 0.5, 2.0])
    d = np.array([0.3, 0.7, -0.2, 0.1])
    sync = aggregate_sync(p, [_upd(7, d, samples=5)])
    async_ = apply_async(p, _upd(7, d, samples=5), staleness=0)
    assert np.array_equal(sync.vec, async_.vec)


def test_stale_update_discounted_by_one_over_one_plus_s():
    p = _params([0.0] * 4)
    d = np.array([1.0, 2.0, 3.0, 4.0])
    out = apply_async(p, _upd(0, d), staleness=3)
    assert np.array_equal(out.vec, d / 4.0)


def test_custom_decay_overrides_the_default():
    p = _params([0.0] * 4)
    d = np.array([1.0, 1.0, 1.0, 1.0])
    out = apply_async(p, _upd(0, d), staleness=5, decay=lambda s: 0.5 ** s)
    assert np.array_equal(out.vec, d * 0.03125)


def test_async_rejects_bad_staleness():
    p = _params([0.0] * 4)
    with pytest.raises(StaleNegative):
        apply_async(p, _upd(0, [0.0] * 4), staleness=-1)
    with pytest.raises(BadParams):
        apply_async(p, _upd(0, [0.0] * 4), staleness=1.5)
    with pytest.raises(DimensionMismatch):
        apply_async(p, _upd(0, [0.0] * 2), staleness=0)


# --- whole rounds ----------------------------------------------------------

def _ctx(ds, shards, n=6):
    epoch_ms = {m: 10.0 for m in range(n)}
    return RoundContext(dataset=ds, shards=shards, epochs=1, lr=0.2,
                        master_seed=99, rts=rt_matrix(n, {}, fill=20.0),
                        epoch_ms=epoch_ms)


class _Clock:
    def now(self):
        return 0.0


def _fresh_subchain(ds, members, phase):
    p0 = zero_params(ds)
    return Subchain(id=0, members=frozenset(members), host=min(members),
                    params=p0, initial_params=p0, phase=phase)


def test_core_round_trains_all_scheduled_members():
    ds = tiny_dataset()
    shards = contiguous_shards(ds, 3, 10)
    s = _fresh_subchain(ds, {0, 1, 2}, Phase.CORE)
    s.scheduled = frozenset({0, 1, 2})
    ctx = _ctx(ds, shards, n=3)
    rec = run_global_round(s, _Clock(), ctx)
    assert rec.mode == "SYNC"
    assert rec.round == 0
    assert [m for m, _ in rec.contributors] == [0, 1, 2]
    assert all(basis == 0 for _, basis in rec.contributors)
    assert set(rec.seeds) == {0, 1, 2}
    assert rec.pre_hash == params_hash(s.initial_params)
    assert rec.post_hash == params_hash(s.params)
    assert s.round == 1
    assert s.records == [rec]
    # The aggregate must equal doing the same math by hand.
    updates = [train_local(s.initial_params, ds, shards[m], 1, 0.2,
                           rec.seeds[m], round_index=0) for m in range(3)]
    expect = aggregate_sync(s.initial_params, updates)
    assert np.array_equal(s.params.vec, expect.vec)


def test_core_round_with_nobody_scheduled_fails():
    ds = tiny_dataset()
    shards = contiguous_shards(ds, 3, 10)
    s = _fresh_subchain(ds, {0, 1, 2}, Phase.CORE)
    s.scheduled = frozenset()
    with pytest.raises(NoContributors):
        run_global_round(s, _Clock(), _ctx(ds, shards, n=3))


def test_secondary_round_queues_unscheduled_members_for_later():
    ds = tiny_dataset()
    shards = contiguous_shards(ds, 3, 10)
    s = _fresh_subchain(ds, {0, 1, 2}, Phase.SECONDARY)
    ctx = _ctx(ds, shards, n=3)

    s.scheduled = frozenset({0, 1})
    rec0 = run_global_round(s, _Clock(), ctx)
    assert rec0.mode == "ASYNC"
    assert [m for m, _ in rec0.contributors] == [0, 1]
    assert len(s.pending) == 1
    assert s.pending[0].update.miner == 2

    # Next round everyone is scheduled; miner 2 delivers its queued
    # update (one step stale) instead of training again.
    s.scheduled = frozenset({0, 1, 2})
    basis_params = s.params
    rec1 = run_global_round(s, _Clock(), ctx)
    by_miner = dict(rec1.contributors)
    assert by_miner == {0: 1, 1: 1, 2: 0}
    assert set(rec1.seeds) == {0, 1, 2}

    # Replaying by hand: the stale delta carries weight 1/2, fresh ones 1.
    stale = train_local(s.initial_params, ds, shards[2], 1, 0.2,
                        rec1.seeds[2], round_index=0)
    fresh = {m: train_local(basis_params, ds, shards[m], 1, 0.2,
                            rec1.seeds[m], round_index=1) for m in (0, 1)}
    order = sorted(rec1.contributors,
                   key=lambda c: (ctx.arrival_ms(c[0], s.host), c[0]))
    expect = basis_params
    for m, basis in order:
        upd = stale if m == 2 else fresh[m]
        expect = apply_async(expect, upd, 1 - basis)
    assert np.array_equal(s.params.vec, expect.vec)


def test_secondary_rounds_replay_cleanly():
    ds = tiny_dataset()
    shards = contiguous_shards(ds, 3, 10)
    s = _fresh_subchain(ds, {0, 1, 2}, Phase.SECONDARY)
    ctx = _ctx(ds, shards, n=3)
    for scheduled in [{0, 1}, {0, 1, 2}, {1, 2}, {0, 2}]:
        s.scheduled = frozenset(scheduled)
        run_global_round(s, _Clock(), ctx)
    outcome = audit_replay(s, s.records, ds, shards, epochs=1, lr=0.2)
    assert outcome.passed
    assert outcome.rounds_checked == 4


def test_secondary_round_with_no_work_fails():
    ds = tiny_dataset()
    shards = contiguous_shards(ds, 3, 10)
    s = _fresh_subchain(ds, {0, 1, 2}, Phase.SECONDARY)
    s.scheduled = frozenset()
    s.members = frozenset()  # nobody to train in the background either
    with pytest.raises(NoContributors):
        run_global_round(s, _Clock(), _ctx(ds, shards, n=3))


def test_round_context_seeds_are_positionally_distinct():
    ds = tiny_dataset()
    ctx = _ctx(ds, contiguous_shards(ds, 3, 10), n=3)
    seeds = {ctx.train_seed(0, 0, 0), ctx.train_seed(0, 0, 1),
             ctx.train_seed(0, 1, 0), ctx.train_seed(1, 0, 0)}
    assert len(seeds) == 4
