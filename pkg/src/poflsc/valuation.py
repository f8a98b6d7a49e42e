"""Contribution valuation: who is worth keeping when the pool shrinks.

The coalition value v(S) is the held-out accuracy of a model federated
over exactly the members of S.  Estimators on top of v:

- exact subset enumeration (small pools only),
- leave-one-out differences,
- truncated Monte Carlo over member permutations,
- a gradient-step approximation that never retrains from scratch.

Per-member training seeds inside v depend only on (round, miner), never
on the coalition, so v is a pure set function and caching is sound.
"""

from __future__ import annotations

import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .config import ReservationOrder
from .errors import BadParams, TooManyMembers
from .fedavg import aggregate_sync
from .learner import (
    Dataset,
    ModelParams,
    Shard,
    evaluate,
    gradient_step,
    train_local,
)
from .rng import derive_seed, stream

ValueFn = Callable[[frozenset[int]], float]


def _thread_count() -> int:
    raw = os.environ.get("POFLSC_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _map_jobs(fn: Callable[[int], object], count: int) -> list:
    """Run fn(0..count-1); results merge by index so threading is invisible."""
    threads = _thread_count()
    if threads <= 1 or count <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(count)))


class CoalitionValue:
    """v(S): held-out accuracy after a fixed federated budget over S.

    The budget is `rounds` synchronous rounds starting from the given
    initial model.  v(empty) is the untrained model's accuracy.  Values
    are memoized; the cache is shared across estimators and safe under
    the thread cap.
    """

    def __init__(self, params0: ModelParams, dataset: Dataset,
                 shards: Mapping[int, Shard], eval_indices: Sequence[int],
                 rounds: int = 5, epochs: int = 1, lr: float = 0.5,
                 master_seed: int = 0):
        if rounds < 1:
            raise BadParams(f"need at least one round, got {rounds}")
        self.params0 = params0
        self.dataset = dataset
        self.shards = dict(shards)
        self.eval_indices = np.asarray(eval_indices, dtype=np.int64)
        self.rounds = rounds
        self.epochs = epochs
        self.lr = lr
        self.master_seed = master_seed
        self._cache: dict[frozenset[int], float] = {}
        self._lock = threading.Lock()
        self.evals = 0  # distinct coalitions valued, for budget reporting

    def __call__(self, coalition: Iterable[int]) -> float:
        key = frozenset(coalition)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        params = self.params0
        if key:
            for r in range(self.rounds):
                updates = [
                    train_local(params, self.dataset, self.shards[m],
                                self.epochs, self.lr,
                                derive_seed(self.master_seed, "valuation", r, m),
                                round_index=r)
                    for m in sorted(key)
                ]
                params = aggregate_sync(params, updates)
        acc = evaluate(params, self.dataset, self.eval_indices)
        with self._lock:
            self._cache[key] = acc
            self.evals += 1
        return acc


@dataclass
class ShapleyReport:
    """Per-miner contribution estimates from one estimator run."""

    estimator: str
    values: dict[int, float]
    stds: dict[int, float]
    iterations: int

    def members(self) -> list[int]:
        return sorted(self.values)


def exact_shapley(members: Iterable[int], v: ValueFn) -> ShapleyReport:
    """Full subset enumeration; only viable for pools of up to 10."""
    ids = sorted(set(members))
    n = len(ids)
    if n == 0:
        raise BadParams("empty member set")
    if n > 10:
        raise TooManyMembers(f"{n} members need {2 ** n} evaluations")
    vals = {}
    for mask in range(1 << n):
        coalition = frozenset(ids[b] for b in range(n) if mask >> b & 1)
        vals[mask] = v(coalition)
    fact = [math.factorial(k) for k in range(n + 1)]
    weights = [fact[s] * fact[n - s - 1] / fact[n] for s in range(n)]
    values = {}
    for b, miner in enumerate(ids):
        bit = 1 << b
        total = 0.0
        for mask in range(1 << n):
            if mask & bit:
                continue
            total += weights[bin(mask).count("1")] * (vals[mask | bit] - vals[mask])
        values[miner] = total
    return ShapleyReport(estimator="EXACT", values=values,
                         stds={m: 0.0 for m in ids}, iterations=1 << n)


def loo_values(members: Iterable[int], v: ValueFn) -> ShapleyReport:
    """Leave-one-out: each member's drop from the full coalition."""
    ids = sorted(set(members))
    if not ids:
        raise BadParams("empty member set")
    full = frozenset(ids)
    v_full = v(full)
    values = {m: v_full - v(full - {m}) for m in ids}
    return ShapleyReport(estimator="LOO", values=values,
                         stds={m: 0.0 for m in ids}, iterations=len(ids) + 1)


def _finish_permutation_report(estimator: str, ids: list[int],
                               rows: list[dict[int, float]]) -> ShapleyReport:
    matrix = np.array([[row[m] for m in ids] for row in rows], dtype=np.float64)
    means = matrix.mean(axis=0)
    stds = matrix.std(axis=0)
    return ShapleyReport(
        estimator=estimator,
        values={m: float(means[k]) for k, m in enumerate(ids)},
        stds={m: float(stds[k]) for k, m in enumerate(ids)},
        iterations=len(rows))


def tmc_shapley(members: Iterable[int], v: ValueFn, tolerance: float = 0.0,
                permutations: int = 200, seed: int = 0) -> ShapleyReport:
    """Permutation-sampled Shapley with truncation near the full value.

    Each permutation walks the members, crediting marginal gains.  After
    every computed marginal, the walk stops early once the prefix value
    is within `tolerance` of the full-coalition value; skipped members
    take a zero marginal for that permutation.  tolerance=0 never
    truncates.
    """
    ids = sorted(set(members))
    if not ids:
        raise BadParams("empty member set")
    if permutations < 1:
        raise BadParams(f"need at least one permutation, got {permutations}")
    if tolerance < 0:
        raise BadParams(f"negative tolerance {tolerance}")
    v_full = v(frozenset(ids))
    v_empty = v(frozenset())

    def one(p: int) -> dict[int, float]:
        perm = stream(seed, "tmc", p).permutation(ids)
        marginals = {m: 0.0 for m in ids}
        prefix: set[int] = set()
        prev = v_empty
        for m in perm:
            m = int(m)
            prefix.add(m)
            cur = v(frozenset(prefix))
            marginals[m] = cur - prev
            prev = cur
            if abs(cur - v_full) < tolerance:
                break
        return marginals

    rows = _map_jobs(one, permutations)
    return _finish_permutation_report("TMC", ids, rows)


def g_shapley(members: Iterable[int], params0: ModelParams, dataset: Dataset,
              shards: Mapping[int, Shard], eval_indices: Sequence[int],
              lr: float | Mapping[int, float], permutations: int = 200,
              seed: int = 0) -> ShapleyReport:
    """One-gradient-step Shapley: cheap marginals without retraining.

    Walks each permutation applying a single full-batch descent step on
    the member's shard; the member's marginal is the accuracy change that
    step produced.  `lr` may be one rate or a per-miner map (a zero rate
    pins that member's marginals to zero).
    """
    ids = sorted(set(members))
    if not ids:
        raise BadParams("empty member set")
    if permutations < 1:
        raise BadParams(f"need at least one permutation, got {permutations}")
    eval_idx = np.asarray(eval_indices, dtype=np.int64)
    rates = ({m: float(lr) for m in ids} if isinstance(lr, (int, float))
             else {m: float(lr[m]) for m in ids})
    if any(r < 0 for r in rates.values()):
        raise BadParams("negative learning rate")
    base_acc = evaluate(params0, dataset, eval_idx)

    def one(p: int) -> dict[int, float]:
        perm = stream(seed, "gshapley", p).permutation(ids)
        marginals = {}
        params = params0
        prev = base_acc
        for m in perm:
            m = int(m)
            params = gradient_step(params, dataset, shards[m], rates[m])
            acc = evaluate(params, dataset, eval_idx)
            marginals[m] = acc - prev
            prev = acc
        return marginals

    rows = _map_jobs(one, permutations)
    return _finish_permutation_report("GSHAPLEY", ids, rows)


def reservation_order(report: ShapleyReport,
                      order: ReservationOrder) -> list[int]:
    """Members sorted for reservation; ties always break to the lower id."""
    ids = report.members()
    if order is ReservationOrder.DESCENDING:
        return sorted(ids, key=lambda m: (-report.values[m], m))
    if order is ReservationOrder.ASCENDING:
        return sorted(ids, key=lambda m: (report.values[m], m))
    raise BadParams(f"unknown reservation order {order!r}")


def pool_shrink_experiment(members: Iterable[int], order: Sequence[int],
                           v: ValueFn) -> list[tuple[int, float]]:
    """Re-value the pool as it shrinks to its top-k prefix, k = n..1."""
    ids = sorted(set(members))
    if sorted(order) != ids:
        raise BadParams("order must rank exactly the pool members")
    curve = []
    for k in range(len(ids), 0, -1):
        curve.append((k, v(frozenset(order[:k]))))
    return curve
