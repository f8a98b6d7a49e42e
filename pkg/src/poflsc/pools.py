"""Pool formation: candidate lists, core pools, partnerships, merging.

The candidate list is a response-time budget: a miner keeps the nearest
peers whose combined response time fits one sub-block, greedily evicting
the slowest entry whenever an admission overflows the budget.  Core pools
then grow by unanimous confirmation, one proposal per member per round,
and any single rejection freezes the pool at whatever was confirmed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import BadParams, PartnershipUnknownPool, UnknownMiner
from .state import MinerProfile, Partnership, Phase, Subchain
from .learner import ModelParams

Trace = Callable[[dict], None]


def _no_trace(_: dict) -> None:
    pass


@dataclass(frozen=True)
class CorePool:
    members: frozenset[int]
    host: int | None = None


def build_candidate_list(miner: int, rts: np.ndarray, t_sub: float,
                         arrivals: Sequence[int] | None = None,
                         trace: Trace = _no_trace) -> list[int]:
    """Run the admission/eviction rule over peers in arrival order.

    A peer is admitted when it still fits the budget outright, or when it
    is faster than the slowest current entry; after every admission the
    slowest entries are evicted until the total fits again.  Returns the
    surviving peers sorted fastest first (ties toward the lower id).
    """
    n = rts.shape[0]
    if not (0 <= miner < n):
        raise UnknownMiner(f"miner {miner} not in matrix of size {n}")
    if t_sub <= 0:
        raise BadParams(f"sub-block budget must be positive, got {t_sub}")
    if arrivals is None:
        arrivals = [j for j in range(n) if j != miner]
    kept: list[int] = []
    total = 0.0
    for j in arrivals:
        if j == miner:
            continue
        rt = float(rts[miner, j])
        fits = total + rt < t_sub
        faster = bool(kept) and rt < max(rts[miner, k] for k in kept)
        if not (fits or faster):
            continue
        kept.append(j)
        total += rt
        trace({"event": "list_add", "owner": miner, "peer": j, "rt": rt,
               "sum": total})
        while total > t_sub:
            worst = max(kept, key=lambda k: (rts[miner, k], k))
            kept.remove(worst)
            total -= float(rts[miner, worst])
            trace({"event": "list_evict", "owner": miner, "peer": worst,
                   "rt": float(rts[miner, worst]), "sum": total})
    kept.sort(key=lambda k: (rts[miner, k], k))
    return kept


@dataclass(frozen=True)
class EstablishOutcome:
    """Result of one establishment attempt.

    ``pool`` is None when the attempt found no seed or ended below the
    member threshold (demolished); ``confirmed`` holds every miner the
    attempt consumed either way.
    """

    pool: CorePool | None
    confirmed: frozenset[int]

    @property
    def established(self) -> bool:
        return self.pool is not None


def establish_core_pool(candidate_lists: Mapping[int, Sequence[int]],
                        threshold: int, cap: int | None = None,
                        pool_id: int = 0,
                        trace: Trace = _no_trace) -> EstablishOutcome:
    """Grow one pool from the first mutual pair with a shared candidate.

    Seeding scans miner pairs in id order for two miners carrying each
    other, then takes the seeder's fastest candidate that the partner also
    lists.  Growth proceeds in proposal rounds: every member proposes its
    own fastest unconfirmed candidate (member id order); a proposal joins
    only when every current member lists it, and the first missing listing
    is a rejection that stops selection for good.  The pool stands only if
    the confirmed count exceeds the threshold.
    """
    if threshold < 0:
        raise BadParams(f"negative threshold {threshold}")
    lists = {m: list(candidate_lists[m]) for m in candidate_lists}
    sets = {m: set(v) for m, v in lists.items()}
    miners = sorted(lists)

    seed = None
    for ai, i in enumerate(miners):
        for j in miners[ai + 1:]:
            if j not in sets[i] or i not in sets[j]:
                continue
            for c in lists[i]:
                if c != j and c != i and c in sets[j]:
                    seed = (i, j, c)
                    break
            if seed:
                break
        if seed:
            break
    if seed is None:
        return EstablishOutcome(pool=None, confirmed=frozenset())

    confirmed: list[int] = sorted(set(seed))
    trace({"event": "seed", "pool": pool_id, "members": list(confirmed)})

    stopped = False
    while not stopped and (cap is None or len(confirmed) < cap):
        progressed = False
        for m in sorted(confirmed):
            if cap is not None and len(confirmed) >= cap:
                break
            candidate = next(
                (c for c in lists.get(m, []) if c not in confirmed), None)
            if candidate is None:
                continue
            trace({"event": "propose", "pool": pool_id, "proposer": m,
                   "candidate": candidate})
            rejector = next(
                (x for x in confirmed if candidate not in sets.get(x, set())),
                None)
            if rejector is not None:
                trace({"event": "reject", "pool": pool_id, "proposer": m,
                       "candidate": candidate, "rejector": rejector})
                stopped = True
                break
            confirmed.append(candidate)
            confirmed.sort()
            progressed = True
            trace({"event": "confirm", "pool": pool_id, "candidate": candidate})
        if not progressed and not stopped:
            break

    members = frozenset(confirmed)
    if len(members) > threshold:
        trace({"event": "established", "pool": pool_id,
               "members": sorted(members)})
        return EstablishOutcome(pool=CorePool(members=members), confirmed=members)
    trace({"event": "demolished", "pool": pool_id, "confirmed": sorted(members)})
    return EstablishOutcome(pool=None, confirmed=members)


def select_host(members: frozenset[int] | set[int], rts: np.ndarray,
                profiles: Mapping[int, MinerProfile]) -> int:
    """Pick the pool host: dependable first, then nearest to the pool.

    Candidates are the members whose reliability strictly exceeds the
    pool mean; when nobody does (all equal), everyone qualifies.  Among
    candidates, lowest mean response time to the other members wins,
    ties toward the lower id.
    """
    if not members:
        raise BadParams("cannot pick a host for an empty pool")
    ordered = sorted(members)
    rel = {m: profiles[m].reliability for m in ordered}
    mean_rel = sum(rel.values()) / len(ordered)
    qualified = [m for m in ordered if rel[m] > mean_rel]
    if not qualified:
        qualified = ordered
    if len(ordered) == 1:
        return ordered[0]

    def mean_rt(m: int) -> float:
        others = [o for o in ordered if o != m]
        return float(np.mean([rts[m, o] for o in others]))

    return min(qualified, key=lambda m: (mean_rt(m), m))


def form_partnerships(managers: Sequence[int], rts: np.ndarray, t_sub: float,
                      pool_of: Mapping[int, int], threshold: int = 2,
                      cap: int | None = None,
                      trace: Trace = _no_trace) -> list[Partnership]:
    """Let pool managers run the same formation dance among themselves.

    Candidate lists are built over the manager set only; establishment is
    greedy with removal, so each manager (and therefore each pool) joins
    at most one partnership per call.
    """
    unknown = [m for m in managers if m not in pool_of]
    if unknown:
        raise PartnershipUnknownPool(f"manager {unknown[0]} heads no pool")
    remaining = sorted(managers)
    partnerships: list[Partnership] = []
    attempt = 0
    while len(remaining) >= 3:
        lists = {
            m: build_candidate_list(
                m, rts, t_sub,
                arrivals=[o for o in remaining if o != m])
            for m in remaining
        }
        outcome = establish_core_pool(lists, threshold, cap=cap,
                                      pool_id=1000 + attempt, trace=trace)
        attempt += 1
        if not outcome.confirmed:
            break
        if outcome.established:
            members = outcome.pool.members
            partnerships.append(Partnership(
                pools=frozenset(pool_of[m] for m in members),
                managers=members))
        remaining = [m for m in remaining if m not in outcome.confirmed]
    return partnerships


def split_merge(subchains: Sequence[Subchain],
                partnerships: Sequence[Partnership],
                rts: np.ndarray,
                profiles: Mapping[int, MinerProfile],
                next_id: int) -> tuple[list[Subchain], int]:
    """Split each partnered subchain into branches and merge per partnership.

    A subchain contributes one branch (a copy of its model, weighted by
    its member count) to every partnership it belongs to; subchains in no
    partnership pass through untouched.  Each merged subchain is brand
    new: fresh id, fresh ledger whose genesis anchor digests the parent
    branch heads, model equal to the member-count-weighted mean of the
    branch models, and host re-selected over the member union.
    """
    by_id = {s.id: s for s in subchains}
    for p in partnerships:
        missing = [pid for pid in p.pools if pid not in by_id]
        if missing:
            raise PartnershipUnknownPool(f"subchain {missing[0]} does not exist")
    partnered = {pid for p in partnerships for pid in p.pools}
    out = [s for s in subchains if s.id not in partnered]

    for p in sorted(partnerships, key=lambda p: sorted(p.pools)):
        parents = [by_id[pid] for pid in sorted(p.pools)]
        total = sum(len(s.members) for s in parents)
        arch = parents[0].params.arch
        vec = np.zeros_like(parents[0].params.vec)
        for s in parents:
            if s.params.arch != arch:
                raise BadParams("cannot merge models of different architectures")
            vec += (len(s.members) / total) * s.params.vec
        params = ModelParams(arch, vec)
        members = frozenset().union(*(s.members for s in parents))
        h = hashlib.sha256()
        h.update(b"merge")
        for s in parents:
            h.update(s.chain[-1].hash if s.chain else s.genesis_prev)
        merged = Subchain(
            id=next_id,
            members=members,
            host=select_host(members, rts, profiles),
            params=params,
            initial_params=params,
            phase=Phase.SECONDARY,
            genesis_prev=h.digest(),
        )
        next_id += 1
        out.append(merged)
    return out, next_id
