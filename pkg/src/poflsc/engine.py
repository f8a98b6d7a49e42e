"""Block orchestration: one full consensus task from formation to winner.

A block runs in four phases.  Formation costs no simulated time; each
following sub-block hosts one global training round per active subchain
plus that period's challenges and audits, sealed into one sub-block per
subchain ledger.  Partnerships form once the core rounds finish, merged
subchains work the open secondary phase, and the block ends when every
survivor has reached candidacy.
"""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .config import Estimator, ReservationOrder, ScenarioConfig
from .errors import NoPoolFormed
from .fedavg import RoundContext, run_global_round
from .learner import (
    Dataset,
    ModelParams,
    Shard,
    evaluate,
    init_model,
    load_idx,
    shard_dataset,
    shard_digest,
    synth_dataset,
)
from .ledger import (
    ActivationTransaction,
    ActivationType,
    Role,
    append_sub_block,
    chains_digest,
    params_hash,
    select_winner,
)
from .pools import (
    build_candidate_list,
    establish_core_pool,
    form_partnerships,
    select_host,
    split_merge,
)
from .rng import derive_seed, stream
from .state import MinerProfile, Phase, Subchain
from .topology import gen_response_matrix
from .valuation import (
    CoalitionValue,
    ShapleyReport,
    exact_shapley,
    g_shapley,
    loo_values,
    pool_shrink_experiment,
    reservation_order,
    tmc_shapley,
)
from .verification import (
    VerificationState,
    audit_replay,
    candidacy_check,
    generate_challenge,
    respond_challenge,
)

_ISSUERS_PER_PERIOD = 2


class SimClock:
    """Simulated wall time in milliseconds; only the engine advances it."""

    def __init__(self, start: float = 0.0):
        self._now = float(start)

    def now(self) -> float:
        return self._now

    def advance(self, ms: float) -> None:
        if ms < 0:
            raise ValueError(f"cannot rewind the clock by {ms}")
        self._now += float(ms)


class EventKind(enum.Enum):
    LIST_ADD = 0
    LIST_EVICT = 1
    SEED = 2
    PROPOSE = 3
    CONFIRM = 4
    REJECT = 5
    ESTABLISHED = 6
    DEMOLISHED = 7
    ROUND = 8
    CHALLENGE = 9
    AUDIT = 10
    PHASE = 11
    WINNER = 12


@dataclass(frozen=True)
class EventRecord:
    at: float
    actor: int
    kind: EventKind
    payload: dict


class EventLog:
    """Collects events; drains in (at, actor, kind) order, then insertion."""

    def __init__(self):
        self._events: list[tuple[float, int, int, int, EventRecord]] = []
        self._seq = 0

    def emit(self, at: float, actor: int, kind: EventKind, payload: dict) -> None:
        rec = EventRecord(at=at, actor=actor, kind=kind, payload=payload)
        self._events.append((at, actor, kind.value, self._seq, rec))
        self._seq += 1

    def drain(self) -> list[EventRecord]:
        return [item[4] for item in sorted(self._events,
                                           key=lambda e: e[:4])]


def schedule_subchains(miner: int, sv_by_subchain: Mapping[int, float],
                       capacity: float,
                       round_times: Mapping[int, float]) -> list[int]:
    """Rank a miner's subchains by score and keep what fits the budget.

    Highest score first (ties to the lower subchain id); the list is cut
    at the first subchain whose round time would push the running total
    past the capacity.
    """
    order = sorted(sv_by_subchain, key=lambda sid: (-sv_by_subchain[sid], sid))
    kept = []
    total = 0.0
    for sid in order:
        cost = float(round_times[sid])
        if total + cost > capacity:
            break
        kept.append(sid)
        total += cost
    return kept


def advance_phase(subchain: Subchain, clock: SimClock,
                  vstate: VerificationState, *, audits_min: int,
                  challenges_min: int, qualification_floor: float) -> Phase:
    """Promote a secondary subchain to candidacy once it qualifies.

    Qualification needs the audit and challenge thresholds met and the
    latest recorded accuracy at or above the floor; a subchain that has
    not finished a secondary round yet has no accuracy to show and stays.
    """
    if subchain.phase is not Phase.SECONDARY:
        return subchain.phase
    if not candidacy_check(vstate, audits_min, challenges_min):
        return subchain.phase
    if not subchain.accuracy_history:
        return subchain.phase
    if subchain.accuracy_history[-1] < qualification_floor:
        return subchain.phase
    subchain.phase = Phase.VERIFICATION
    return subchain.phase


@dataclass
class BlockResult:
    """Everything one block run produced, ready for reporting."""

    config: ScenarioConfig
    subchains: list[Subchain]
    vstates: dict[int, VerificationState]
    profiles: dict[int, MinerProfile]
    initial_pools: dict[int, frozenset[int]]
    demonstration_id: int
    winner_id: int
    round_accuracy: dict[int, list[float]]
    shapley: dict[str, ShapleyReport]
    shrink: dict[str, dict]
    events: list[EventRecord]
    ledger_digest: str
    sub_blocks: int
    value_evals: int

    def winner_chain(self):
        by_id = {s.id: s for s in self.subchains}
        return by_id[self.winner_id].chain


def _build_dataset(cfg: ScenarioConfig) -> Dataset:
    if cfg.idx_images is not None:
        return load_idx(cfg.idx_images, cfg.idx_labels)
    return synth_dataset(cfg.data_classes, cfg.data_per_class, cfg.data_dim,
                         cfg.data_separation,
                         derive_seed(cfg.master_seed, "dataset"))


def _holdout_split(cfg: ScenarioConfig, ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint (train_rows, eval_rows); shards draw from train rows only."""
    order = stream(cfg.master_seed, "holdout").permutation(ds.n)
    n_eval = max(1, int(round(ds.n * cfg.holdout_fraction)))
    n_eval = min(n_eval, ds.n - 1)
    eval_rows = np.sort(order[:n_eval])
    train_rows = np.sort(order[n_eval:])
    return train_rows, eval_rows


def _form_pools(cfg: ScenarioConfig, rts: np.ndarray, log: EventLog
                ) -> list[frozenset[int]]:
    """Phase one: candidate lists once, then greedy establishment."""

    def trace(payload: dict) -> None:
        actor = payload.get("owner", payload.get("proposer",
                                                 payload.get("pool", 0)))
        kind = EventKind[payload["event"].upper()]
        log.emit(0.0, int(actor), kind, payload)

    lists = {m: build_candidate_list(m, rts, cfg.sub_block_time, trace=trace)
             for m in range(cfg.miner_count)}
    remaining = set(range(cfg.miner_count))
    pools: list[frozenset[int]] = []
    attempt = 0
    while len(remaining) >= 3:
        filtered = {m: [c for c in lists[m] if c in remaining]
                    for m in sorted(remaining)}
        outcome = establish_core_pool(filtered, cfg.core_pool_threshold,
                                      cap=cfg.pool_size_cap, pool_id=attempt,
                                      trace=trace)
        attempt += 1
        if not outcome.confirmed:
            break
        if outcome.established:
            pools.append(outcome.pool.members)
        remaining -= outcome.confirmed
    return pools


def _compute_reports(cfg: ScenarioConfig, estimators: Sequence[Estimator],
                     members: Sequence[int], v: CoalitionValue,
                     params0: ModelParams, ds: Dataset,
                     shards: Mapping[int, Shard],
                     eval_rows: np.ndarray) -> dict[str, ShapleyReport]:
    reports: dict[str, ShapleyReport] = {}
    for est in estimators:
        if est.value in reports:
            continue
        if est is Estimator.EXACT:
            rep = exact_shapley(members, v)
        elif est is Estimator.LOO:
            rep = loo_values(members, v)
        elif est is Estimator.TMC:
            rep = tmc_shapley(members, v, tolerance=cfg.tmc_tolerance,
                              permutations=cfg.sv_permutations,
                              seed=derive_seed(cfg.master_seed, "sv", "tmc"))
        else:
            rep = g_shapley(members, params0, ds, shards, eval_rows,
                            lr=cfg.learning_rate,
                            permutations=cfg.sv_permutations,
                            seed=derive_seed(cfg.master_seed, "sv", "gshapley"))
        reports[est.value] = rep
    return reports


def _audit_digest(subchain: Subchain) -> bytes:
    h = hashlib.sha256()
    h.update(b"audit")
    h.update(struct.pack(">Q", subchain.id))
    for rec in subchain.records:
        h.update(rec.post_hash)
    return h.digest()


def run_block(cfg: ScenarioConfig, estimators: Sequence[Estimator] | None = None,
              include_shrink: bool = False) -> BlockResult:
    """Simulate one full block task under the given configuration.

    Deterministic end to end: the same config always yields bit-identical
    ledgers, reports, and events.  `estimators` extends the contribution
    reports beyond the configured one; `include_shrink` additionally runs
    the pool-shrink experiment for every reported estimator.
    """
    cfg.validate()
    log = EventLog()
    clock = SimClock()

    ds = _build_dataset(cfg)
    train_rows, eval_rows = _holdout_split(cfg, ds)
    shards = shard_dataset(ds, cfg.miner_count, cfg.samples_per_miner,
                           derive_seed(cfg.master_seed, "shards"),
                           allowed=train_rows)
    rts = gen_response_matrix(cfg.miner_count, cfg.rt_mean, cfg.rt_std,
                              derive_seed(cfg.master_seed, "topology"))
    profiles = {m: MinerProfile(m) for m in range(cfg.miner_count)}
    epoch_ms = dict(enumerate(
        stream(cfg.master_seed, "epoch-ms").uniform(5.0, 15.0,
                                                    cfg.miner_count)))

    member_pools = _form_pools(cfg, rts, log)
    if not member_pools:
        raise NoPoolFormed(
            f"no pool exceeded the threshold of {cfg.core_pool_threshold}")

    arch = ((ds.dim, cfg.hidden_units, ds.classes) if cfg.hidden_units
            else (ds.dim, ds.classes))
    params0 = init_model(arch, derive_seed(cfg.master_seed, "init"))

    subchains: list[Subchain] = []
    for sid, members in enumerate(member_pools):
        host = select_host(members, rts, profiles)
        subchains.append(Subchain(id=sid, members=members, host=host,
                                  params=params0, initial_params=params0,
                                  phase=Phase.CORE))
        log.emit(0.0, host, EventKind.PHASE,
                 {"subchain": sid, "phase": Phase.CORE.value,
                  "members": sorted(members)})
    next_id = len(subchains)
    initial_pools = {s.id: s.members for s in subchains}
    demo_id = max(subchains, key=lambda s: (len(s.members), -s.id)).id
    demo_members = sorted(initial_pools[demo_id])

    vstates: dict[int, VerificationState] = {
        s.id: VerificationState() for s in subchains}
    ctx = RoundContext(dataset=ds, shards=shards, epochs=cfg.local_epochs,
                       lr=cfg.learning_rate, master_seed=cfg.master_seed,
                       rts=rts, epoch_ms=epoch_ms)
    latest_acc = {s.id: evaluate(params0, ds, eval_rows) for s in subchains}
    issue_registry: set[tuple[int, int]] = set()

    sub_block = 0
    while sub_block < cfg.max_sub_blocks:
        if all(s.phase is Phase.VERIFICATION for s in subchains):
            break
        # Each miner ranks its active subchains and keeps what fits.
        active = [s for s in subchains if s.phase in (Phase.CORE,
                                                      Phase.SECONDARY)]
        scheduled: dict[int, set[int]] = {s.id: set() for s in active}
        for m in range(cfg.miner_count):
            mine = [s for s in active if m in s.members]
            if not mine:
                continue
            scores = {s.id: latest_acc[s.id] for s in mine}
            times = {s.id: float(rts[m, s.host]) + epoch_ms[m] * cfg.local_epochs
                     for s in mine}
            for sid in schedule_subchains(m, scores, cfg.sub_block_time, times):
                scheduled[sid].add(m)
        payloads: dict[int, list[ActivationTransaction]] = {
            s.id: [] for s in subchains}

        for s in sorted(active, key=lambda s: s.id):
            s.scheduled = frozenset(scheduled[s.id])
            record = run_global_round(s, clock, ctx)
            acc = evaluate(s.params, ds, eval_rows)
            s.accuracy_history.append(acc)
            latest_acc[s.id] = acc
            log.emit(clock.now(), s.host, EventKind.ROUND,
                     {"subchain": s.id, "round": record.round,
                      "mode": record.mode, "accuracy": acc,
                      "contributors": [list(c) for c in record.contributors]})
            for m, _basis in record.contributors:
                payloads[s.id].append(ActivationTransaction(
                    tx_number=s.tx_count,
                    activation_type=ActivationType.TRAINING,
                    chain_id=s.id,
                    model_hash=record.post_hash,
                    verifier_id=s.host,
                    verifier_role=Role.HOST,
                    miner_id=m,
                    miner_role=Role.TRAINER,
                    data_id=shard_digest(shards[m]),
                    prev_dependency=s.tx_count - 1 if s.tx_count else None,
                ))
                s.tx_count += 1

        # This period's challenges: a rotating pair of data contributors
        # quizzes every live subchain.
        period = sub_block
        issuers = [(period * _ISSUERS_PER_PERIOD + i) % cfg.miner_count
                   for i in range(_ISSUERS_PER_PERIOD)]
        for issuer in issuers:
            challenge = generate_challenge(
                shards[issuer], period, cfg.challenge_subsets,
                min(cfg.challenge_subset_size, cfg.samples_per_miner),
                cfg.master_seed, registry=issue_registry)
            assignment = challenge.assign([s.id for s in subchains])
            for s in sorted(subchains, key=lambda s: s.id):
                tx = respond_challenge(s, challenge, assignment[s.id], ds,
                                       vstates[s.id])
                payloads[s.id].append(tx)
                log.emit(clock.now(), issuer, EventKind.CHALLENGE,
                         {"subchain": s.id, "period": period,
                          "accuracy": tx.result})

        # One logical audit per subchain per period over its full history.
        for s in sorted(subchains, key=lambda s: s.id):
            if not s.records:
                continue
            auditor = (period + s.id) % cfg.miner_count
            outcome = audit_replay(s, s.records, ds, shards, cfg.local_epochs,
                                   cfg.learning_rate, vstates[s.id], profiles)
            payloads[s.id].append(ActivationTransaction(
                tx_number=s.tx_count,
                activation_type=ActivationType.AUDIT,
                chain_id=s.id,
                model_hash=params_hash(s.params),
                verifier_id=auditor,
                verifier_role=Role.PROXY,
                miner_id=s.host,
                miner_role=Role.HOST,
                data_id=_audit_digest(s),
                prev_dependency=s.tx_count - 1 if s.tx_count else None,
                result=1.0 if outcome.passed else 0.0,
            ))
            s.tx_count += 1
            log.emit(clock.now(), auditor, EventKind.AUDIT,
                     {"subchain": s.id, "period": period,
                      "passed": outcome.passed,
                      "rounds": outcome.rounds_checked})

        for s in sorted(subchains, key=lambda s: s.id):
            if payloads[s.id]:
                append_sub_block(s.chain, payloads[s.id],
                                 genesis_prev=s.genesis_prev)

        if sub_block == cfg.core_rounds - 1:
            # Core phase over: managers court each other, pools merge.
            pool_of = {s.host: s.id for s in subchains}
            partnerships = form_partnerships(
                sorted(pool_of), rts, cfg.sub_block_time, pool_of,
                threshold=cfg.partnership_threshold,
                cap=cfg.partnership_cap,
                trace=lambda p: log.emit(
                    clock.now(),
                    int(p.get("owner", p.get("proposer", p.get("pool", 0)))),
                    EventKind[p["event"].upper()], p))
            subchains, next_id = split_merge(subchains, partnerships, rts,
                                             profiles, next_id)
            for s in subchains:
                if s.phase is Phase.CORE:
                    s.phase = Phase.SECONDARY
                if s.id not in vstates:
                    vstates[s.id] = VerificationState()
                    latest_acc[s.id] = evaluate(s.params, ds, eval_rows)
                log.emit(clock.now(), s.host, EventKind.PHASE,
                         {"subchain": s.id, "phase": s.phase.value,
                          "members": sorted(s.members)})
        else:
            for s in sorted(subchains, key=lambda s: s.id):
                before = s.phase
                after = advance_phase(
                    s, clock, vstates[s.id], audits_min=cfg.audits_min,
                    challenges_min=cfg.challenges_min,
                    qualification_floor=cfg.qualification_floor)
                if after is not before:
                    log.emit(clock.now(), s.host, EventKind.PHASE,
                             {"subchain": s.id, "phase": after.value,
                              "members": sorted(s.members)})

        clock.advance(cfg.sub_block_time)
        sub_block += 1

    candidates = {s.id: vstates[s.id].challenge_accuracies
                  for s in subchains if s.phase is Phase.VERIFICATION}
    if not candidates:
        # Safety net for starved configs: judge whoever was challenged.
        candidates = {s.id: vstates[s.id].challenge_accuracies
                      for s in subchains}
    winner = select_winner(candidates)
    winner_host = next(s.host for s in subchains if s.id == winner)
    log.emit(clock.now(), winner_host, EventKind.WINNER,
             {"subchain": winner})

    wanted = [cfg.sv_estimator] + [e for e in (estimators or [])]
    v = CoalitionValue(params0, ds, shards, eval_rows,
                       rounds=cfg.value_rounds, epochs=cfg.local_epochs,
                       lr=cfg.learning_rate, master_seed=cfg.master_seed)
    reports = _compute_reports(cfg, wanted, demo_members, v, params0, ds,
                               shards, eval_rows)

    shrink: dict[str, dict] = {}
    if include_shrink:
        for name, rep in sorted(reports.items()):
            desc = reservation_order(rep, ReservationOrder.DESCENDING)
            asc = reservation_order(rep, ReservationOrder.ASCENDING)
            curve_d = dict(pool_shrink_experiment(demo_members, desc, v))
            curve_a = dict(pool_shrink_experiment(demo_members, asc, v))
            sizes = sorted(curve_d)
            full = curve_d[len(demo_members)]
            shrink[name] = {
                "sizes": sizes,
                "descending": [curve_d[k] for k in sizes],
                "ascending": [curve_a[k] for k in sizes],
                "rel_descending": [curve_d[k] / full if full else 0.0
                                   for k in sizes],
                "rel_ascending": [curve_a[k] / full if full else 0.0
                                  for k in sizes],
            }

    return BlockResult(
        config=cfg,
        subchains=subchains,
        vstates=vstates,
        profiles=profiles,
        initial_pools=initial_pools,
        demonstration_id=demo_id,
        winner_id=winner,
        round_accuracy={s.id: list(s.accuracy_history) for s in subchains},
        shapley=reports,
        shrink=shrink,
        events=log.drain(),
        ledger_digest=chains_digest({s.id: s.chain for s in subchains}),
        sub_blocks=sub_block,
        value_evals=v.evals,
    )
