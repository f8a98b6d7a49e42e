"""Pairwise response times between miners.

The matrix is the network model: entry [i, j] is the round-trip time in
milliseconds miner i observes when probing miner j, covering both transfer
and the peer's turnaround.  Probing is treated as instantaneous and free.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import BadParams, UnknownMiner
from .rng import stream


def gen_response_matrix(n: int, mean: float, std: float, seed: int) -> np.ndarray:
    """Sample a symmetric response-time matrix with a zero diagonal.

    Upper-triangle entries are i.i.d. Normal(mean, std) clipped below at
    1.0 ms so a pathological draw can never produce a free or negative
    link.  Mirrored to the lower triangle: rt[i, j] == rt[j, i].
    """
    if n < 1:
        raise BadParams(f"need at least one miner, got n={n}")
    if std < 0:
        raise BadParams(f"negative std {std}")
    rng = stream(seed, "response-matrix")
    rts = np.zeros((n, n), dtype=np.float64)
    iu = np.triu_indices(n, k=1)
    draws = rng.normal(mean, std, size=len(iu[0]))
    rts[iu] = np.maximum(draws, 1.0)
    rts += rts.T
    return rts


def visible_miners(rts: np.ndarray, miner: int, horizon: float) -> list[int]:
    """Peers miner can reach within `horizon` ms, nearest first.

    Ties on response time break toward the lower id.  The miner itself is
    never included.
    """
    n = rts.shape[0]
    if not (0 <= miner < n):
        raise UnknownMiner(f"miner {miner} not in matrix of size {n}")
    peers = [j for j in range(n) if j != miner and rts[miner, j] <= horizon]
    peers.sort(key=lambda j: (rts[miner, j], j))
    return peers


def export_response_csv(rts: np.ndarray, path: str | Path) -> None:
    """Write the full matrix as CSV with a miner-id header row/column."""
    n = rts.shape[0]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["miner"] + [str(j) for j in range(n)])
        for i in range(n):
            writer.writerow([str(i)] + [repr(float(v)) for v in rts[i]])
