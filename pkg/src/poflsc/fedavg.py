"""Federated averaging over a subchain's members, sync and async.

Synchronous rounds weight each member's delta by its sample count and sum
in ascending miner id, which pins the floating-point reduction order.
Asynchronous rounds apply updates one by one in arrival order, discounting
stale deltas by 1/(1+staleness).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import (
    BadParams,
    DimensionMismatch,
    EmptyRound,
    NoContributors,
    StaleNegative,
)
from .learner import Dataset, GradientUpdate, ModelParams, Shard, train_local
from .ledger import params_hash
from .rng import derive_seed
from .state import Phase, Subchain


def aggregate_sync(params: ModelParams,
                   updates: Sequence[GradientUpdate]) -> ModelParams:
    """Sample-weighted mean of same-round deltas added onto the params.

    Updates are summed in ascending miner id regardless of input order,
    so the result is bit-identical across callers.
    """
    if not updates:
        raise EmptyRound("no updates to aggregate")
    seen = set()
    for u in updates:
        if u.delta.shape != params.vec.shape:
            raise DimensionMismatch(
                f"delta of size {u.delta.size} vs params of size {params.vec.size}")
        if u.samples_used < 1:
            raise BadParams(f"update from miner {u.miner} used no samples")
        if u.miner in seen:
            raise BadParams(f"two updates from miner {u.miner}")
        seen.add(u.miner)
    rounds = {u.round for u in updates}
    if len(rounds) > 1:
        raise BadParams(f"updates span rounds {sorted(rounds)}")
    total = sum(u.samples_used for u in updates)
    vec = params.vec.copy()
    for u in sorted(updates, key=lambda u: u.miner):
        vec += (u.samples_used / total) * u.delta
    return ModelParams(params.arch, vec)


def apply_async(params: ModelParams, update: GradientUpdate, staleness: int,
                decay: Callable[[int], float] | None = None) -> ModelParams:
    """Apply one update scaled by the staleness discount (1/(1+s) default)."""
    if not isinstance(staleness, (int, np.integer)) or isinstance(staleness, bool):
        raise BadParams(f"staleness must be an integer, got {staleness!r}")
    if staleness < 0:
        raise StaleNegative(f"staleness {staleness}")
    if update.delta.shape != params.vec.shape:
        raise DimensionMismatch(
            f"delta of size {update.delta.size} vs params of size {params.vec.size}")
    weight = (1.0 / (1.0 + staleness)) if decay is None else float(decay(staleness))
    return ModelParams(params.arch, params.vec + weight * update.delta)


@dataclass(frozen=True)
class RoundRecord:
    """Replay material for one global round.

    ``contributors`` lists (miner, basis_round) in application order; the
    basis round names the parameter snapshot the miner trained from.
    ``seeds`` are the exact training streams used, keyed by miner.  The
    pre/post hashes commit to the model before and after the round.
    """

    subchain_id: int
    round: int
    mode: str  # "SYNC" | "ASYNC"
    contributors: tuple[tuple[int, int], ...]
    seeds: dict[int, int]
    pre_hash: bytes
    post_hash: bytes
    at: float = 0.0


@dataclass(frozen=True)
class _PendingUpdate:
    update: GradientUpdate
    seed: int
    arrival: float


@dataclass
class RoundContext:
    """Everything run_global_round needs besides the subchain itself."""

    dataset: Dataset
    shards: Mapping[int, Shard]
    epochs: int
    lr: float
    master_seed: int
    rts: np.ndarray
    epoch_ms: Mapping[int, float]

    def train_seed(self, subchain_id: int, round_index: int, miner: int) -> int:
        return derive_seed(self.master_seed, "train", subchain_id, round_index,
                           miner)

    def arrival_ms(self, miner: int, host: int) -> float:
        return float(self.rts[miner, host]) + self.epoch_ms[miner] * self.epochs


def run_global_round(subchain: Subchain, clock, ctx: RoundContext) -> RoundRecord:
    """Advance the subchain's model by one global communication round.

    CORE subchains run a synchronous round over the scheduled members.
    SECONDARY subchains run asynchronously: updates pending from the
    previous round land first, fresh updates land in arrival order, and
    members that were not scheduled train in the background against this
    round's starting model for delivery next round.
    """
    r = subchain.round
    scheduled = sorted(subchain.scheduled & subchain.members)
    pre = params_hash(subchain.params)
    seeds: dict[int, int] = {}

    if subchain.phase is Phase.CORE:
        if not scheduled:
            raise NoContributors(f"subchain {subchain.id} round {r}")
        updates = []
        for m in scheduled:
            seed = ctx.train_seed(subchain.id, r, m)
            seeds[m] = seed
            updates.append(train_local(subchain.params, ctx.dataset,
                                       ctx.shards[m], ctx.epochs, ctx.lr,
                                       seed, round_index=r))
        subchain.params = aggregate_sync(subchain.params, updates)
        contributors = tuple((m, r) for m in scheduled)
        mode = "SYNC"
    else:
        if not scheduled and not subchain.pending:
            raise NoContributors(f"subchain {subchain.id} round {r}")
        basis = subchain.params
        queue: list[tuple[float, int, _PendingUpdate]] = [
            (pu.arrival, pu.update.miner, pu) for pu in subchain.pending
        ]
        # A miner delivering a late update spends this round on it; only
        # members with nothing in flight train fresh.  Keeps every miner
        # to one applied update per round, so the seed map stays unique.
        pending_miners = {pu.update.miner for pu in subchain.pending}
        for m in scheduled:
            if m in pending_miners:
                continue
            seed = ctx.train_seed(subchain.id, r, m)
            upd = train_local(basis, ctx.dataset, ctx.shards[m], ctx.epochs,
                              ctx.lr, seed, round_index=r)
            arrival = ctx.arrival_ms(m, subchain.host)
            queue.append((arrival, m, _PendingUpdate(upd, seed, arrival)))
        queue.sort(key=lambda item: (item[0], item[1]))
        contributors = []
        params = subchain.params
        for _, m, pu in queue:
            params = apply_async(params, pu.update, r - pu.update.round)
            contributors.append((m, pu.update.round))
            seeds[m] = pu.seed
        subchain.params = params
        contributors = tuple(contributors)
        mode = "ASYNC"
        # Members the schedule skipped still pull this round's basis and
        # train; their updates arrive next round one step stale.
        subchain.pending = []
        for m in sorted(subchain.members - set(scheduled)):
            seed = ctx.train_seed(subchain.id, r, m)
            upd = train_local(basis, ctx.dataset, ctx.shards[m], ctx.epochs,
                              ctx.lr, seed, round_index=r)
            subchain.pending.append(
                _PendingUpdate(upd, seed, ctx.arrival_ms(m, subchain.host)))

    record = RoundRecord(subchain_id=subchain.id, round=r, mode=mode,
                         contributors=contributors, seeds=seeds,
                         pre_hash=pre, post_hash=params_hash(subchain.params),
                         at=clock.now())
    subchain.records.append(record)
    subchain.round += 1
    return record
