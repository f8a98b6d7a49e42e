"""Shared builders for the test suite."""

from __future__ import annotations

import struct

import numpy as np

from poflsc.config import ScenarioConfig
from poflsc.learner import Dataset, ModelParams, Shard, param_count, synth_dataset
from poflsc.ledger import ActivationTransaction, ActivationType, Role


def rt_matrix(n: int, entries: dict[tuple[int, int], float],
              fill: float = 1000.0) -> np.ndarray:
    """Symmetric response matrix with given pair times, `fill` elsewhere."""
    rts = np.full((n, n), fill, dtype=np.float64)
    np.fill_diagonal(rts, 0.0)
    for (i, j), v in entries.items():
        rts[i, j] = v
        rts[j, i] = v
    return rts


def tiny_dataset(classes: int = 3, per_class: int = 20, dim: int = 4,
                 separation: float = 3.0, seed: int = 11) -> Dataset:
    return synth_dataset(classes, per_class, dim, separation, seed)


def contiguous_shards(ds: Dataset, owners: int, size: int) -> dict[int, Shard]:
    """Disjoint length-`size` row slices, one per owner, in row order."""
    assert owners * size <= ds.n
    return {m: Shard(owner=m, indices=tuple(range(m * size, (m + 1) * size)))
            for m in range(owners)}


def zero_params(ds: Dataset) -> ModelParams:
    return ModelParams((ds.dim, ds.classes),
                       np.zeros(param_count((ds.dim, ds.classes))))


def make_tx(tx_number: int = 0, chain_id: int = 0,
            activation_type: ActivationType = ActivationType.TRAINING,
            prev_dependency: int | None = None,
            result: float | None = None,
            miner_id: int = 1, verifier_id: int = 2) -> ActivationTransaction:
    return ActivationTransaction(
        tx_number=tx_number,
        activation_type=activation_type,
        chain_id=chain_id,
        model_hash=bytes(range(32)),
        verifier_id=verifier_id,
        verifier_role=Role.HOST,
        miner_id=miner_id,
        miner_role=Role.TRAINER,
        data_id=bytes(reversed(range(32))),
        prev_dependency=prev_dependency,
        result=result,
    )


def small_cfg(**overrides) -> ScenarioConfig:
    """A 12-miner scenario that forms three pools and merges them."""
    base = dict(
        miner_count=12,
        samples_per_miner=8,
        sub_block_time=1500.0,
        core_pool_threshold=3,
        pool_size_cap=4,
        audits_min=1,
        challenges_min=2,
        data_classes=3,
        data_per_class=30,
        data_dim=6,
        data_separation=1.8,
        challenge_subsets=2,
        challenge_subset_size=4,
        core_rounds=2,
        max_sub_blocks=12,
        value_rounds=2,
        sv_permutations=40,
        master_seed=3,
    )
    base.update(overrides)
    return ScenarioConfig(**base)


def idx_images_bytes(arr: np.ndarray) -> bytes:
    """Encode a (n, rows, cols) uint8 array in the 3-dimension IDX format."""
    n, rows, cols = arr.shape
    return struct.pack(">IIII", 0x00000803, n, rows, cols) + arr.tobytes()


def idx_labels_bytes(labels: np.ndarray) -> bytes:
    return struct.pack(">II", 0x00000801, labels.size) + labels.astype(np.uint8).tobytes()
