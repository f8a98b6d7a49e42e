"""Datasets, shards, and the small differentiable models miners train.

Two architectures are supported: a linear softmax classifier (the default)
and a single-hidden-layer tanh network.  Parameters live in one flat
float64 vector next to an architecture descriptor, which keeps hashing,
aggregation, and replay trivially byte-stable.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    BadParams,
    CountMismatch,
    DatasetTooSmall,
    DimensionMismatch,
    TruncatedFile,
)

_IMAGES_MAGIC = 0x00000803
_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Dense feature matrix with integer labels in [0, classes)."""

    features: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int64
    classes: int

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise BadParams("features must be (n, d) and labels (n,)")
        if self.features.shape[0] != self.labels.shape[0]:
            raise CountMismatch(
                f"{self.features.shape[0]} feature rows vs "
                f"{self.labels.shape[0]} labels")
        if self.classes < 2:
            raise BadParams("need at least two classes")
        if not np.all(np.isfinite(self.features)):
            raise BadParams("features contain non-finite values")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise BadParams("labels out of range")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class Shard:
    """A miner's private slice of the dataset, as row indices."""

    owner: int
    indices: tuple[int, ...]


@dataclass(frozen=True)
class ModelParams:
    arch: tuple[int, ...]  # layer widths, input first, classes last
    vec: np.ndarray  # flat float64 parameter vector

    def __post_init__(self):
        object.__setattr__(self, "arch", tuple(int(a) for a in self.arch))
        vec = np.ascontiguousarray(self.vec, dtype=np.float64)
        object.__setattr__(self, "vec", vec)
        if len(self.arch) not in (2, 3):
            raise BadParams(f"unsupported architecture {self.arch}")
        if any(a < 1 for a in self.arch):
            raise BadParams(f"non-positive layer width in {self.arch}")
        if vec.ndim != 1 or vec.size != param_count(self.arch):
            raise DimensionMismatch(
                f"arch {self.arch} needs {param_count(self.arch)} parameters, "
                f"got {vec.size}")

    @property
    def dim(self) -> int:
        return self.vec.size


@dataclass(frozen=True)
class GradientUpdate:
    """One miner's parameter delta for one global round."""

    miner: int
    delta: np.ndarray
    samples_used: int
    round: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "delta", np.ascontiguousarray(self.delta, dtype=np.float64))


def param_count(arch: tuple[int, ...]) -> int:
    return sum(a * b + b for a, b in zip(arch[:-1], arch[1:]))


def init_model(arch: tuple[int, ...], seed: int = 0) -> ModelParams:
    """Zeros for the linear model; uniform(-0.05, 0.05) hidden weights."""
    arch = tuple(int(a) for a in arch)
    vec = np.zeros(param_count(arch), dtype=np.float64)
    if len(arch) == 3:
        rng = np.random.default_rng(seed)
        d, h, _ = arch
        span = d * h + h
        vec[:span] = rng.uniform(-0.05, 0.05, size=span)
    return ModelParams(arch, vec)


def _unpack(params: ModelParams) -> list[tuple[np.ndarray, np.ndarray]]:
    layers = []
    off = 0
    for a, b in zip(params.arch[:-1], params.arch[1:]):
        w = params.vec[off:off + a * b].reshape(a, b)
        off += a * b
        bias = params.vec[off:off + b]
        off += b
        layers.append((w, bias))
    return layers


def forward(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Class logits for a batch of feature rows."""
    if x.ndim != 2 or x.shape[1] != params.arch[0]:
        raise DimensionMismatch(
            f"features of width {x.shape[-1]} vs input width {params.arch[0]}")
    layers = _unpack(params)
    act = x
    for w, b in layers[:-1]:
        act = np.tanh(act @ w + b)
    w, b = layers[-1]
    return act @ w + b


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grad(params: ModelParams, x: np.ndarray,
                  y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its flat analytic gradient."""
    if x.shape[0] == 0:
        raise BadParams("empty batch")
    layers = _unpack(params)
    acts = [x]
    for w, b in layers[:-1]:
        acts.append(np.tanh(acts[-1] @ w + b))
    w_out, b_out = layers[-1]
    logits = acts[-1] @ w_out + b_out
    log_p = _log_softmax(logits)
    n = x.shape[0]
    loss = -float(log_p[np.arange(n), y].mean())

    grad = np.empty_like(params.vec)
    d_logits = np.exp(log_p)
    d_logits[np.arange(n), y] -= 1.0
    d_logits /= n
    # Walk layers backward, writing each layer's gradient into the flat slot.
    offsets = []
    off = 0
    for a, b in zip(params.arch[:-1], params.arch[1:]):
        offsets.append((off, off + a * b, off + a * b + b))
        off = offsets[-1][2]
    d_out = d_logits
    for li in range(len(layers) - 1, -1, -1):
        w, _ = layers[li]
        lo, mid, hi = offsets[li]
        grad[lo:mid] = (acts[li].T @ d_out).ravel()
        grad[mid:hi] = d_out.sum(axis=0)
        if li > 0:
            d_out = (d_out @ w.T) * (1.0 - acts[li] ** 2)
    return loss, grad


def predict(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Argmax class per row; exact logit ties go to the lower class index."""
    return np.argmax(forward(params, x), axis=1)


def evaluate(params: ModelParams, ds: Dataset,
             indices: np.ndarray | list[int] | None = None) -> float:
    """Accuracy on the dataset, or on a row subset when given."""
    if ds.dim != params.arch[0] or ds.classes != params.arch[-1]:
        raise DimensionMismatch(
            f"dataset ({ds.dim} features, {ds.classes} classes) vs "
            f"arch {params.arch}")
    if indices is None:
        x, y = ds.features, ds.labels
    else:
        idx = np.asarray(indices, dtype=np.int64)
        x, y = ds.features[idx], ds.labels[idx]
    if x.shape[0] == 0:
        raise BadParams("cannot evaluate on zero rows")
    return float(np.mean(predict(params, x) == y))


def train_local(params: ModelParams, ds: Dataset, shard: Shard, epochs: int,
                lr: float, seed: int, round_index: int = 0) -> GradientUpdate:
    """Mini-batch gradient descent on the shard; returns the param delta.

    Batch size is min(8, shard size); the shard is reshuffled each epoch
    from the given stream seed, so identical inputs give a bit-identical
    delta.  Zero epochs or a zero rate legitimately produce a zero delta.
    """
    if epochs < 0:
        raise BadParams(f"negative epochs {epochs}")
    if lr < 0:
        raise BadParams(f"negative learning rate {lr}")
    if not shard.indices:
        raise BadParams("empty shard")
    idx = np.asarray(shard.indices, dtype=np.int64)
    if idx.min() < 0 or idx.max() >= ds.n:
        raise BadParams("shard indices outside the dataset")
    if ds.dim != params.arch[0] or ds.classes != params.arch[-1]:
        raise DimensionMismatch(
            f"dataset ({ds.dim} features, {ds.classes} classes) vs "
            f"arch {params.arch}")
    x_all, y_all = ds.features[idx], ds.labels[idx]
    n = idx.size
    batch = min(8, n)
    rng = np.random.default_rng(seed)
    vec = params.vec.copy()
    work = ModelParams(params.arch, vec)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            sel = order[start:start + batch]
            _, grad = loss_and_grad(work, x_all[sel], y_all[sel])
            vec = vec - lr * grad
            work = ModelParams(params.arch, vec)
    return GradientUpdate(miner=shard.owner, delta=vec - params.vec,
                          samples_used=n, round=round_index)


def gradient_step(params: ModelParams, ds: Dataset, shard: Shard,
                  lr: float) -> ModelParams:
    """One full-batch descent step on the shard (no shuffling, no seed)."""
    idx = np.asarray(shard.indices, dtype=np.int64)
    _, grad = loss_and_grad(params, ds.features[idx], ds.labels[idx])
    return ModelParams(params.arch, params.vec - lr * grad)


def synth_dataset(classes: int, per_class: int, dim: int, separation: float,
                  seed: int) -> Dataset:
    """Gaussian blobs: class c centered at separation * e_(c mod dim).

    Rows are shuffled so any contiguous split is class-balanced in
    expectation.
    """
    if classes < 2:
        raise BadParams(f"need at least two classes, got {classes}")
    if per_class < 1:
        raise BadParams(f"need at least one sample per class, got {per_class}")
    if dim < 1:
        raise BadParams(f"need at least one feature, got {dim}")
    if separation < 0:
        raise BadParams(f"negative separation {separation}")
    rng = np.random.default_rng(seed)
    n = classes * per_class
    feats = rng.standard_normal((n, dim))
    labels = np.repeat(np.arange(classes, dtype=np.int64), per_class)
    for c in range(classes):
        feats[labels == c, c % dim] += separation
    order = rng.permutation(n)
    return Dataset(feats[order], labels[order], classes)


def shard_dataset(ds: Dataset, miner_count: int, samples_per_miner: int,
                  seed: int, allowed: np.ndarray | list[int] | None = None
                  ) -> dict[int, Shard]:
    """Draw each miner's shard uniformly from the (optionally restricted) rows.

    Sampling is without replacement inside a shard but independent across
    miners, so two miners may hold overlapping rows.  Each miner's draw
    comes from its own named stream and does not move when miner_count
    changes.
    """
    if miner_count < 1:
        raise BadParams(f"need at least one miner, got {miner_count}")
    if samples_per_miner < 1:
        raise BadParams(f"need at least one sample per shard, got {samples_per_miner}")
    pool = np.arange(ds.n, dtype=np.int64) if allowed is None \
        else np.asarray(sorted(allowed), dtype=np.int64)
    if pool.size < samples_per_miner:
        raise DatasetTooSmall(
            f"{pool.size} rows available, {samples_per_miner} per shard")
    from .rng import stream  # local import avoids a cycle at module load

    shards = {}
    for m in range(miner_count):
        draw = stream(seed, "shard", m).choice(pool, size=samples_per_miner,
                                               replace=False)
        shards[m] = Shard(owner=m, indices=tuple(int(i) for i in sorted(draw)))
    return shards


def _read_idx(path: str | Path, expect_magic: int) -> tuple[int, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise TruncatedFile(f"{path}: no room for a magic number")
    (magic,) = struct.unpack(">I", data[:4])
    if magic != expect_magic:
        raise BadMagic(f"{path}: magic {magic:#010x}, expected {expect_magic:#010x}")
    dims = magic & 0xFF  # low byte of an IDX magic is the dimension count
    header = 4 + 4 * dims
    if len(data) < header:
        raise TruncatedFile(f"{path}: header cut short")
    shape = struct.unpack(f">{dims}I", data[4:header])
    count = int(np.prod(shape))
    if len(data) < header + count:
        raise TruncatedFile(
            f"{path}: payload holds {len(data) - header} bytes, header"
            f" promises {count}")
    payload = np.frombuffer(data, dtype=np.uint8, count=count, offset=header)
    return shape[0], payload.reshape(shape)


def load_idx(images_path: str | Path, labels_path: str | Path) -> Dataset:
    """Load an IDX image/label file pair into a flat float dataset.

    Pixels scale to [0, 1]; the class count is taken from the labels.
    """
    n_img, images = _read_idx(images_path, _IMAGES_MAGIC)
    n_lab, labels = _read_idx(labels_path, _LABELS_MAGIC)
    if n_img != n_lab:
        raise CountMismatch(f"{n_img} images vs {n_lab} labels")
    feats = images.reshape(n_img, -1).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    classes = max(int(labels.max()) + 1 if labels.size else 2, 2)
    return Dataset(feats, labels, classes)


def digest_indices(tag: str, owner: int, indices: tuple[int, ...]) -> bytes:
    """32-byte digest naming a row subset (shard or challenge batch)."""
    h = hashlib.sha256()
    h.update(tag.encode("utf-8"))
    h.update(int(owner).to_bytes(8, "big"))
    h.update(len(indices).to_bytes(4, "big"))
    for i in indices:
        h.update(int(i).to_bytes(8, "big"))
    return h.digest()


def shard_digest(shard: Shard) -> bytes:
    return digest_indices("shard", shard.owner, shard.indices)
