"""Shared simulation state: phases, miner profiles, subchains."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .ledger import SubBlock, ZERO32
from .learner import ModelParams


class Phase(enum.Enum):
    """Lifecycle of a subchain within one block task.

    INITIAL covers discovery and pool formation, CORE the synchronous
    rounds among the founding pool, SECONDARY the asynchronous open
    rounds after partnerships, VERIFICATION the candidacy stretch where
    a subchain only answers challenges and audits.
    """

    INITIAL = "INITIAL"
    CORE = "CORE"
    SECONDARY = "SECONDARY"
    VERIFICATION = "VERIFICATION"


_PHASE_RANK = {Phase.INITIAL: 0, Phase.CORE: 1, Phase.SECONDARY: 2,
               Phase.VERIFICATION: 3}


def phase_rank(phase: Phase) -> int:
    return _PHASE_RANK[phase]


@dataclass
class MinerProfile:
    """Per-miner standing; reliability is a smoothed audit pass rate.

    The estimate starts at 1.0 (a prior pass of weight one) and moves
    with every audited round the miner contributed to.
    """

    miner: int
    audit_passes: int = 0
    audit_fails: int = 0

    @property
    def reliability(self) -> float:
        return (1.0 + self.audit_passes) / (1.0 + self.audit_passes + self.audit_fails)


@dataclass
class Subchain:
    """One pool's ledger, model, and training position."""

    id: int
    members: frozenset[int]
    host: int
    params: ModelParams
    initial_params: ModelParams
    phase: Phase = Phase.CORE
    genesis_prev: bytes = ZERO32
    chain: list[SubBlock] = field(default_factory=list)
    records: list = field(default_factory=list)  # RoundRecord, in round order
    pending: list = field(default_factory=list)  # _PendingUpdate carried over
    round: int = 0  # completed global rounds
    tx_count: int = 0
    scheduled: frozenset[int] = field(default_factory=frozenset)
    accuracy_history: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class Partnership:
    """A contract between whole pools, keyed by their subchain ids."""

    pools: frozenset[int]
    managers: frozenset[int]
