"""Challenges, audits, and candidacy: how a subchain earns trust.

Data contributors quiz a subchain's current model on slices of their own
private shards (type two), and auditors re-run the entire recorded
training history from seeds to confirm every post-round model hash (type
three).  Both leave activation transactions behind; candidacy requires
enough of each.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    AlreadyIssued,
    BadParams,
    MissingSeeds,
    NoModel,
    SubsetTooLarge,
)
from .fedavg import RoundRecord, aggregate_sync, apply_async
from .learner import Dataset, Shard, digest_indices, evaluate, train_local
from .ledger import (
    ActivationTransaction,
    ActivationType,
    Role,
    SubBlock,
    params_hash,
    verify_chain,
)
from .rng import stream
from .state import MinerProfile, Subchain


@dataclass
class VerificationState:
    """Running verification tallies for one subchain."""

    challenges_received: int = 0
    challenge_accuracies: list[float] = field(default_factory=list)
    audits_passed: int = 0
    audits_failed: int = 0


@dataclass(frozen=True)
class ChallengeSet:
    """One issuer's challenge material for one period."""

    issuer: int
    period: int
    subsets: tuple[tuple[int, ...], ...]  # dataset row indices per subset

    def assign(self, subchain_ids: Sequence[int]) -> dict[int, int]:
        """Round-robin subsets over the subchains, lowest id first."""
        ordered = sorted(subchain_ids)
        k = len(self.subsets)
        return {sid: pos % k for pos, sid in enumerate(ordered)}


def generate_challenge(issuer_shard: Shard, period: int, k_subsets: int,
                       subset_size: int, seed: int,
                       registry: set[tuple[int, int]] | None = None
                       ) -> ChallengeSet:
    """Draw k row subsets from the issuer's shard for this period.

    Draws are seeded and without replacement within each subset.  An
    issuer gets one challenge set per period; the registry (when shared
    across calls) enforces that.
    """
    issuer = issuer_shard.owner
    if k_subsets < 1:
        raise BadParams(f"need at least one subset, got {k_subsets}")
    if subset_size < 1:
        raise BadParams(f"need a positive subset size, got {subset_size}")
    if subset_size > len(issuer_shard.indices):
        raise SubsetTooLarge(
            f"subset of {subset_size} from a shard of {len(issuer_shard.indices)}")
    if registry is not None:
        key = (issuer, period)
        if key in registry:
            raise AlreadyIssued(f"issuer {issuer} already challenged period {period}")
        registry.add(key)
    rng = stream(seed, "challenge", issuer, period)
    rows = np.asarray(issuer_shard.indices, dtype=np.int64)
    subsets = []
    for _ in range(k_subsets):
        draw = rng.choice(rows, size=subset_size, replace=False)
        subsets.append(tuple(int(i) for i in draw))
    return ChallengeSet(issuer=issuer, period=period, subsets=tuple(subsets))


def respond_challenge(subchain: Subchain, challenge: ChallengeSet,
                      subset_index: int, ds: Dataset,
                      vstate: VerificationState) -> ActivationTransaction:
    """Evaluate the current model on the challenge subset and record it.

    Returns the CHALLENGE activation carrying the measured accuracy; the
    caller seals it into the next sub-block.  Also bumps the subchain's
    challenge tally.
    """
    if subchain.params is None:
        raise NoModel(f"subchain {subchain.id} has no model to challenge")
    indices = challenge.subsets[subset_index]
    accuracy = evaluate(subchain.params, ds, list(indices))
    tx = ActivationTransaction(
        tx_number=subchain.tx_count,
        activation_type=ActivationType.CHALLENGE,
        chain_id=subchain.id,
        model_hash=params_hash(subchain.params),
        verifier_id=challenge.issuer,
        verifier_role=Role.DATA_CONTRIBUTOR,
        miner_id=subchain.host,
        miner_role=Role.HOST,
        data_id=digest_indices("challenge", challenge.issuer, indices),
        prev_dependency=subchain.tx_count - 1 if subchain.tx_count else None,
        result=float(accuracy),
    )
    subchain.tx_count += 1
    vstate.challenges_received += 1
    vstate.challenge_accuracies.append(float(accuracy))
    return tx


@dataclass(frozen=True)
class AuditOutcome:
    passed: bool
    failed_round: int | None
    rounds_checked: int


def audit_replay(subchain: Subchain, round_records: Sequence[RoundRecord],
                 ds: Dataset, shards: Mapping[int, Shard], epochs: int,
                 lr: float, vstate: VerificationState | None = None,
                 profiles: Mapping[int, MinerProfile] | None = None
                 ) -> AuditOutcome:
    """Re-run the recorded training history and confirm every model hash.

    Replays from the subchain's initial parameters: each round's local
    deltas are recomputed from the recorded seeds against the recorded
    basis round, re-aggregated, and the result compared to the recorded
    post hash.  The first mismatch fails the audit at that round.  When
    tallies are supplied, a pass credits every contributor and a failure
    debits the failing round's contributors.
    """
    params_at = [subchain.initial_params]
    outcome = AuditOutcome(passed=True, failed_round=None,
                           rounds_checked=len(round_records))
    for rec in round_records:
        params = params_at[rec.round]
        if params_hash(params) != rec.pre_hash:
            outcome = AuditOutcome(False, rec.round, len(round_records))
            break
        for miner, _basis in rec.contributors:
            if miner not in rec.seeds:
                raise MissingSeeds(f"round {rec.round} miner {miner}")
        if rec.mode == "SYNC":
            updates = [
                train_local(params, ds, shards[m], epochs, lr,
                            rec.seeds[m], round_index=basis)
                for m, basis in rec.contributors
            ]
            new = aggregate_sync(params, updates)
        else:
            new = params
            for m, basis in rec.contributors:
                upd = train_local(params_at[basis], ds, shards[m], epochs, lr,
                                  rec.seeds[m], round_index=basis)
                new = apply_async(new, upd, rec.round - basis)
        if params_hash(new) != rec.post_hash:
            outcome = AuditOutcome(False, rec.round, len(round_records))
            break
        params_at.append(new)

    if vstate is not None:
        if outcome.passed:
            vstate.audits_passed += 1
        else:
            vstate.audits_failed += 1
    if profiles is not None:
        if outcome.passed:
            miners = {m for rec in round_records for m, _ in rec.contributors}
            for m in sorted(miners):
                profiles[m].audit_passes += 1
        else:
            failing = next(rec for rec in round_records
                           if rec.round == outcome.failed_round)
            for m in sorted({m for m, _ in failing.contributors}):
                profiles[m].audit_fails += 1
    return outcome


def candidacy_check(vstate: VerificationState, audits_min: int,
                    challenges_min: int) -> bool:
    """Enough audits and enough challenges, both counted inclusively."""
    return (vstate.audits_passed >= audits_min
            and vstate.challenges_received >= challenges_min)


@dataclass(frozen=True)
class TypeOneReport:
    ok: bool
    findings: tuple[dict, ...]
    tallies: dict[int, int]  # node id -> transactions it took part in


def type_one_check(chain: Sequence[SubBlock]) -> TypeOneReport:
    """Structural pass over a chain plus bookkeeping sanity.

    Delegates structure to verify_chain, then confirms every CHALLENGE
    and AUDIT activation carries a recorded result.  Findings are
    reported, never raised; tallies count each node's appearances in
    valid transactions (as miner or verifier).
    """
    findings: list[dict] = []
    structure = verify_chain(chain)
    if not structure.ok:
        findings.append({"kind": f"CHAIN_{structure.reason}",
                         "sub_block": structure.index})
    tallies: dict[int, int] = {}
    for block in chain:
        for tx in block.payload:
            if tx.activation_type in (ActivationType.CHALLENGE,
                                      ActivationType.AUDIT) and tx.result is None:
                findings.append({"kind": "MISSING_RESULT",
                                 "sub_block": block.index,
                                 "tx_number": tx.tx_number})
                continue
            tallies[tx.miner_id] = tallies.get(tx.miner_id, 0) + 1
            tallies[tx.verifier_id] = tallies.get(tx.verifier_id, 0) + 1
    return TypeOneReport(ok=not findings, findings=tuple(findings),
                         tallies=tallies)
