"""Subchain ledger: activation transactions, sub-blocks, and chain checks.

Serialization is canonical and injective: fixed-width big-endian integers,
length-prefixed byte strings, and presence flags for optional fields.  Two
distinct records can never encode to the same bytes, and every encoding
parses back to an equal record, so payload hashes commit to exactly one
transaction history.
"""

from __future__ import annotations

import enum
import hashlib
import statistics
import struct
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InvalidTx, NoCandidate, TruncatedFile
from .learner import ModelParams

ZERO32 = b"\x00" * 32
_MAX_U64 = (1 << 64) - 1


class ActivationType(enum.Enum):
    TRAINING = 0
    CHALLENGE = 1
    AUDIT = 2


class Role(enum.Enum):
    TRAINER = 0
    HOST = 1
    PROXY = 2
    DATA_CONTRIBUTOR = 3


def _check_u64(value: int, what: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or not (0 <= value <= _MAX_U64):
        raise InvalidTx(f"{what} must be a 64-bit unsigned integer, got {value!r}")
    return value


def _check_hash(value: bytes, what: str) -> bytes:
    if not isinstance(value, bytes) or len(value) != 32:
        raise InvalidTx(f"{what} must be 32 bytes")
    return value


@dataclass(frozen=True)
class ActivationTransaction:
    """One recorded action: a training delta, a challenge, or an audit.

    ``model_hash`` commits to the subchain model after the action,
    ``data_id`` to the data subset involved, ``prev_dependency`` to the
    transaction this one builds on (absent only for a subchain's first),
    and ``result`` carries a measured accuracy where the action has one.
    """

    tx_number: int
    activation_type: ActivationType
    chain_id: int
    model_hash: bytes
    verifier_id: int
    verifier_role: Role
    miner_id: int
    miner_role: Role
    data_id: bytes
    prev_dependency: int | None = None
    result: float | None = None

    def __post_init__(self):
        _check_u64(self.tx_number, "tx_number")
        if not isinstance(self.activation_type, ActivationType):
            raise InvalidTx(f"bad activation_type {self.activation_type!r}")
        _check_u64(self.chain_id, "chain_id")
        _check_hash(self.model_hash, "model_hash")
        _check_u64(self.verifier_id, "verifier_id")
        if not isinstance(self.verifier_role, Role):
            raise InvalidTx(f"bad verifier_role {self.verifier_role!r}")
        _check_u64(self.miner_id, "miner_id")
        if not isinstance(self.miner_role, Role):
            raise InvalidTx(f"bad miner_role {self.miner_role!r}")
        _check_hash(self.data_id, "data_id")
        if self.prev_dependency is not None:
            _check_u64(self.prev_dependency, "prev_dependency")
        if self.result is not None:
            if not isinstance(self.result, float) or not np.isfinite(self.result):
                raise InvalidTx(f"result must be a finite float, got {self.result!r}")


@dataclass(frozen=True)
class SubBlock:
    index: int
    prev_hash: bytes
    transfer_ledger: bytes
    payload: tuple[ActivationTransaction, ...]
    payload_root: bytes
    hash: bytes


def serialize_tx(tx: ActivationTransaction) -> bytes:
    parts = [
        struct.pack(">Q", tx.tx_number),
        struct.pack(">B", tx.activation_type.value),
        struct.pack(">Q", tx.chain_id),
        tx.model_hash,
        struct.pack(">Q", tx.verifier_id),
        struct.pack(">B", tx.verifier_role.value),
        struct.pack(">Q", tx.miner_id),
        struct.pack(">B", tx.miner_role.value),
        tx.data_id,
    ]
    if tx.prev_dependency is None:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01" + struct.pack(">Q", tx.prev_dependency))
    if tx.result is None:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01" + struct.pack(">d", tx.result))
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes, offset: int = 0):
        self.data = data
        self.off = offset

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise TruncatedFile(
                f"need {n} bytes at offset {self.off}, have {len(self.data) - self.off}")
        out = self.data[self.off:self.off + n]
        self.off += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack(">d", self.take(8))[0]


def _read_flag(r: _Reader) -> bool:
    # only 0x00/0x01 are canonical; anything else would let two distinct
    # byte strings parse to the same transaction and dodge the root check
    b = r.u8()
    if b > 1:
        raise InvalidTx(f"presence flag must be 0 or 1, got {b}")
    return bool(b)


def _read_tx(r: _Reader) -> ActivationTransaction:
    tx_number = r.u64()
    try:
        a_type = ActivationType(r.u8())
    except ValueError as exc:
        raise InvalidTx(str(exc)) from exc
    chain_id = r.u64()
    model_hash = r.take(32)
    verifier_id = r.u64()
    try:
        v_role = Role(r.u8())
        miner_id = r.u64()
        m_role = Role(r.u8())
    except ValueError as exc:
        raise InvalidTx(str(exc)) from exc
    data_id = r.take(32)
    prev = r.u64() if _read_flag(r) else None
    result = r.f64() if _read_flag(r) else None
    return ActivationTransaction(tx_number, a_type, chain_id, model_hash,
                                 verifier_id, v_role, miner_id, m_role,
                                 data_id, prev, result)


def parse_tx(data: bytes) -> ActivationTransaction:
    r = _Reader(data)
    tx = _read_tx(r)
    if r.off != len(data):
        raise InvalidTx(f"{len(data) - r.off} trailing bytes after transaction")
    return tx


def serialize_sub_block(block: SubBlock) -> bytes:
    parts = [
        struct.pack(">Q", block.index),
        block.prev_hash,
        struct.pack(">I", len(block.transfer_ledger)),
        block.transfer_ledger,
        struct.pack(">I", len(block.payload)),
    ]
    parts.extend(serialize_tx(tx) for tx in block.payload)
    parts.append(block.payload_root)
    parts.append(block.hash)
    return b"".join(parts)


def _read_sub_block(r: _Reader) -> SubBlock:
    index = r.u64()
    prev_hash = r.take(32)
    transfer = r.take(r.u32())
    count = r.u32()
    payload = tuple(_read_tx(r) for _ in range(count))
    root = r.take(32)
    block_hash = r.take(32)
    return SubBlock(index, prev_hash, transfer, payload, root, block_hash)


def canonical_serialize(value: ActivationTransaction | SubBlock) -> bytes:
    if isinstance(value, ActivationTransaction):
        return serialize_tx(value)
    if isinstance(value, SubBlock):
        return serialize_sub_block(value)
    raise InvalidTx(f"cannot serialize {type(value).__name__}")


def payload_root(payload: Sequence[ActivationTransaction],
                 transfer_ledger: bytes = b"") -> bytes:
    """Binary Merkle root over the block contents.

    Leaves are the transaction digests, preceded by a digest of the
    transfer ledger when one is present.  An odd leaf is paired with
    itself; an empty block hashes a single marker byte.
    """
    leaves = []
    if transfer_ledger:
        leaves.append(hashlib.sha256(transfer_ledger).digest())
    leaves.extend(hashlib.sha256(serialize_tx(tx)).digest() for tx in payload)
    if not leaves:
        return hashlib.sha256(b"\x00").digest()
    while len(leaves) > 1:
        if len(leaves) % 2:
            leaves.append(leaves[-1])
        leaves = [hashlib.sha256(leaves[i] + leaves[i + 1]).digest()
                  for i in range(0, len(leaves), 2)]
    return leaves[0]


def _block_hash(index: int, prev_hash: bytes, root: bytes) -> bytes:
    return hashlib.sha256(struct.pack(">Q", index) + prev_hash + root).digest()


def append_sub_block(chain: list[SubBlock],
                     payload: Sequence[ActivationTransaction],
                     transfer_ledger: bytes = b"",
                     genesis_prev: bytes = ZERO32) -> SubBlock:
    """Seal a payload into the next sub-block and link it onto the chain.

    Transaction numbers must continue the chain's running sequence from
    zero with no gaps.
    """
    expected = sum(len(b.payload) for b in chain)
    for tx in payload:
        if tx.tx_number != expected:
            raise InvalidTx(
                f"tx_number {tx.tx_number} breaks the sequence at {expected}")
        expected += 1
    prev = chain[-1].hash if chain else _check_hash(genesis_prev, "genesis_prev")
    index = len(chain)
    root = payload_root(payload, transfer_ledger)
    block = SubBlock(index=index, prev_hash=prev,
                     transfer_ledger=bytes(transfer_ledger),
                     payload=tuple(payload), payload_root=root,
                     hash=_block_hash(index, prev, root))
    chain.append(block)
    return block


@dataclass(frozen=True)
class VerifyResult:
    ok: bool
    index: int | None = None
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.ok


def verify_chain(chain: Sequence[SubBlock],
                 genesis_prev: bytes | None = None) -> VerifyResult:
    """Structural audit of a chain; reports the first failing sub-block.

    Checks, in order per block: the hash link to the predecessor, the
    stored index, transaction numbering, the recomputed payload root, and
    the recomputed block hash.  The first block's link is only checkable
    when the genesis anchor is supplied.
    """
    expected_tx = 0
    for i, block in enumerate(chain):
        if i > 0:
            if block.prev_hash != chain[i - 1].hash:
                return VerifyResult(False, i, "LINK")
        elif genesis_prev is not None and block.prev_hash != genesis_prev:
            return VerifyResult(False, 0, "LINK")
        if block.index != i:
            return VerifyResult(False, i, "INDEX")
        for tx in block.payload:
            if tx.tx_number != expected_tx:
                return VerifyResult(False, i, "TX_ORDER")
            expected_tx += 1
        if payload_root(block.payload, block.transfer_ledger) != block.payload_root:
            return VerifyResult(False, i, "ROOT")
        if _block_hash(block.index, block.prev_hash, block.payload_root) != block.hash:
            return VerifyResult(False, i, "HASH")
    return VerifyResult(True)


def dump_chain(chain: Sequence[SubBlock]) -> bytes:
    """Concatenated canonical sub-blocks; the on-disk chain format."""
    return b"".join(serialize_sub_block(b) for b in chain)


def restore_chain(data: bytes) -> list[SubBlock]:
    r = _Reader(data)
    chain = []
    while r.off < len(data):
        chain.append(_read_sub_block(r))
    return chain


def export_chain_json(chain: Sequence[SubBlock]) -> list[dict]:
    """Human-readable view of a chain (hashes hex, enums by name)."""
    out = []
    for block in chain:
        out.append({
            "index": block.index,
            "prev_hash": block.prev_hash.hex(),
            "payload_root": block.payload_root.hex(),
            "hash": block.hash.hex(),
            "transfer_ledger": block.transfer_ledger.hex(),
            "payload": [{
                "tx_number": tx.tx_number,
                "activation_type": tx.activation_type.name,
                "chain_id": tx.chain_id,
                "model_hash": tx.model_hash.hex(),
                "verifier_id": tx.verifier_id,
                "verifier_role": tx.verifier_role.name,
                "miner_id": tx.miner_id,
                "miner_role": tx.miner_role.name,
                "data_id": tx.data_id.hex(),
                "prev_dependency": tx.prev_dependency,
                "result": tx.result,
            } for tx in block.payload],
        })
    return out


def params_hash(params: ModelParams) -> bytes:
    """Commitment to a model: architecture plus exact parameter bytes."""
    h = hashlib.sha256()
    h.update(b"model")
    h.update(struct.pack(">B", len(params.arch)))
    for width in params.arch:
        h.update(struct.pack(">Q", width))
    h.update(params.vec.astype(">f8").tobytes())
    return h.digest()


def select_winner(challenge_accuracies: Mapping[int, Sequence[float]]) -> int:
    """Candidate with the highest median challenge accuracy; ties go low.

    Candidates with no recorded challenge accuracy cannot win.
    """
    best_id = None
    best_median = None
    for cid in sorted(challenge_accuracies):
        accs = challenge_accuracies[cid]
        if not accs:
            continue
        med = statistics.median(accs)
        if best_median is None or med > best_median:
            best_id, best_median = cid, med
    if best_id is None:
        raise NoCandidate("no candidate has any challenge accuracy")
    return best_id


def chains_digest(chains: Mapping[int, Sequence[SubBlock]]) -> str:
    """Hex digest over every subchain's head hash, in subchain-id order."""
    h = hashlib.sha256()
    for cid in sorted(chains):
        h.update(struct.pack(">Q", cid))
        blocks = chains[cid]
        h.update(blocks[-1].hash if blocks else ZERO32)
    return h.hexdigest()
