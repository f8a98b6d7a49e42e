"""Deterministic simulator of a proof-of-federated-learning subchain.

Miners close in response time form core pools, train a shared model by
federated averaging on private shards, rank each other by contribution,
and record every round, challenge, and audit on hash-chained sub-block
ledgers.  Everything derives from one master seed, so a scenario is a
pure function of its configuration.
"""

from .config import (
    Estimator,
    ReservationOrder,
    ScenarioConfig,
    load_config,
)
from .engine import BlockResult, SimClock, advance_phase, run_block, schedule_subchains
from .errors import PoflscError
from .fedavg import RoundRecord, aggregate_sync, apply_async, run_global_round
from .learner import (
    Dataset,
    GradientUpdate,
    ModelParams,
    Shard,
    evaluate,
    init_model,
    load_idx,
    shard_dataset,
    synth_dataset,
    train_local,
)
from .ledger import (
    ActivationTransaction,
    ActivationType,
    Role,
    SubBlock,
    append_sub_block,
    canonical_serialize,
    dump_chain,
    params_hash,
    restore_chain,
    select_winner,
    verify_chain,
)
from .pools import (
    CorePool,
    build_candidate_list,
    establish_core_pool,
    form_partnerships,
    select_host,
    split_merge,
)
from .state import MinerProfile, Partnership, Phase, Subchain
from .topology import export_response_csv, gen_response_matrix, visible_miners
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
    AuditOutcome,
    ChallengeSet,
    VerificationState,
    audit_replay,
    candidacy_check,
    generate_challenge,
    respond_challenge,
    type_one_check,
)

__version__ = "0.1.0"

__all__ = [
    "ActivationTransaction", "ActivationType", "AuditOutcome", "BlockResult",
    "ChallengeSet", "CoalitionValue", "CorePool", "Dataset", "Estimator",
    "GradientUpdate", "MinerProfile", "ModelParams", "Partnership",
    "Phase", "PoflscError", "ReservationOrder", "Role", "RoundRecord",
    "ScenarioConfig", "ShapleyReport", "Shard", "SimClock", "SubBlock",
    "Subchain", "VerificationState", "advance_phase", "aggregate_sync",
    "append_sub_block", "apply_async", "audit_replay",
    "build_candidate_list", "candidacy_check", "canonical_serialize",
    "dump_chain", "establish_core_pool", "evaluate", "exact_shapley",
    "export_response_csv", "form_partnerships", "g_shapley",
    "gen_response_matrix", "generate_challenge", "init_model", "load_config",
    "load_idx", "loo_values", "params_hash", "pool_shrink_experiment",
    "reservation_order", "respond_challenge", "restore_chain", "run_block",
    "run_global_round", "schedule_subchains", "select_host", "select_winner",
    "shard_dataset", "split_merge", "synth_dataset", "tmc_shapley",
    "train_local", "type_one_check", "verify_chain", "visible_miners",
]
