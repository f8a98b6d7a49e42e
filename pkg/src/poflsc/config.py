"""Scenario configuration: the single input object for a simulation run."""

from __future__ import annotations

import dataclasses
import enum
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigInvalid

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover - py310 path
    import tomli as tomllib


class Estimator(enum.Enum):
    LOO = "LOO"
    TMC = "TMC"
    GSHAPLEY = "GSHAPLEY"
    EXACT = "EXACT"


class ReservationOrder(enum.Enum):
    DESCENDING = "DESCENDING"
    ASCENDING = "ASCENDING"


# CLI spellings accepted for --estimator.
ESTIMATOR_ALIASES = {
    "loo": Estimator.LOO,
    "tmc": Estimator.TMC,
    "gshapley": Estimator.GSHAPLEY,
    "exact": Estimator.EXACT,
}

_MAX_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything a block simulation depends on.

    The first block of fields drives the consensus itself; the fields after
    ``reservation_order`` tune the synthetic workload and experiment budgets
    and have conservative defaults.
    """

    miner_count: int = 100
    samples_per_miner: int = 30
    sub_block_time: float = 6000.0  # ms; candidate-list and scheduling budget
    core_pool_threshold: int = 19
    pool_size_cap: int = 20
    audits_min: int = 2
    challenges_min: int = 4
    local_epochs: int = 1
    learning_rate: float = 0.15
    rt_mean: float = 50.0
    rt_std: float = 10.0
    master_seed: int = 7
    sv_estimator: Estimator = Estimator.GSHAPLEY
    reservation_order: ReservationOrder = ReservationOrder.DESCENDING

    # Advanced knobs.
    qualification_floor: float = 0.0
    sv_permutations: int = 200
    tmc_tolerance: float = 0.0
    value_rounds: int = 3
    core_rounds: int = 3
    max_sub_blocks: int = 64
    partnership_threshold: int = 2
    partnership_cap: int = 3
    data_classes: int = 10
    data_per_class: int = 40
    data_dim: int = 16
    data_separation: float = 1.5
    holdout_fraction: float = 0.2
    challenge_subsets: int = 4
    challenge_subset_size: int = 10
    hidden_units: int = 0  # 0 = linear softmax model
    idx_images: str | None = None  # pair of IDX files overrides the
    idx_labels: str | None = None  # synthetic dataset when both are set

    def validate(self) -> None:
        """Raise ConfigInvalid naming the offending field."""
        pos_int = [
            "miner_count", "samples_per_miner", "local_epochs",
            "sv_permutations", "value_rounds", "core_rounds",
            "max_sub_blocks", "data_classes", "data_per_class", "data_dim",
            "challenge_subsets", "challenge_subset_size", "pool_size_cap",
            "partnership_cap",
        ]
        for name in pos_int:
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigInvalid(name, f"must be a positive integer, got {v!r}")
        nonneg_int = ["core_pool_threshold", "audits_min", "challenges_min",
                      "partnership_threshold", "hidden_units"]
        for name in nonneg_int:
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ConfigInvalid(name, f"must be a non-negative integer, got {v!r}")
        for name in ["sub_block_time", "learning_rate", "rt_mean"]:
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or v <= 0:
                raise ConfigInvalid(name, f"must be positive, got {v!r}")
        for name in ["rt_std", "qualification_floor", "tmc_tolerance",
                     "data_separation"]:
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or v < 0:
                raise ConfigInvalid(name, f"must be non-negative, got {v!r}")
        if not isinstance(self.master_seed, int) or isinstance(self.master_seed, bool) \
                or not (0 <= self.master_seed <= _MAX_U64):
            raise ConfigInvalid("master_seed", "must be an integer in [0, 2^64)")
        if not isinstance(self.sv_estimator, Estimator):
            raise ConfigInvalid("sv_estimator", f"unknown estimator {self.sv_estimator!r}")
        if not isinstance(self.reservation_order, ReservationOrder):
            raise ConfigInvalid("reservation_order", f"unknown order {self.reservation_order!r}")
        if self.data_classes < 2:
            raise ConfigInvalid("data_classes", "need at least two classes")
        if self.pool_size_cap > self.miner_count:
            raise ConfigInvalid("pool_size_cap", "exceeds miner_count")
        if self.core_pool_threshold >= self.pool_size_cap:
            raise ConfigInvalid(
                "core_pool_threshold",
                "must be below pool_size_cap or no pool can establish")
        if self.sv_estimator is Estimator.EXACT and self.pool_size_cap > 10:
            raise ConfigInvalid(
                "sv_estimator",
                "EXACT enumerates subsets and only supports pools of up to 10")
        if not (0.0 < self.holdout_fraction < 1.0):
            raise ConfigInvalid("holdout_fraction", "must be in (0, 1)")
        if (self.idx_images is None) != (self.idx_labels is None):
            raise ConfigInvalid("idx_images", "idx_images and idx_labels go together")


_FIELD_NAMES = {f.name for f in dataclasses.fields(ScenarioConfig)}


def config_from_mapping(raw: dict) -> ScenarioConfig:
    """Build and validate a config from parsed file contents."""
    if not isinstance(raw, dict):
        raise ConfigInvalid("<root>", "top level must be a table/object")
    unknown = sorted(set(raw) - _FIELD_NAMES)
    if unknown:
        raise ConfigInvalid(unknown[0], "unknown key")
    kwargs = dict(raw)
    if "sv_estimator" in kwargs:
        val = kwargs["sv_estimator"]
        try:
            kwargs["sv_estimator"] = Estimator(str(val).upper())
        except ValueError:
            raise ConfigInvalid("sv_estimator", f"unknown estimator {val!r}") from None
    if "reservation_order" in kwargs:
        val = kwargs["reservation_order"]
        try:
            kwargs["reservation_order"] = ReservationOrder(str(val).upper())
        except ValueError:
            raise ConfigInvalid("reservation_order", f"unknown order {val!r}") from None
    cfg = ScenarioConfig(**kwargs)
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> ScenarioConfig:
    """Parse a TOML or JSON scenario file (dispatch on extension)."""
    p = Path(path)
    try:
        data = p.read_bytes()
    except OSError as exc:
        raise ConfigInvalid(str(p), f"cannot read: {exc}") from exc
    suffix = p.suffix.lower()
    try:
        if suffix == ".json":
            raw = json.loads(data.decode("utf-8"))
        elif suffix == ".toml":
            raw = tomllib.loads(data.decode("utf-8"))
        else:
            try:
                raw = json.loads(data.decode("utf-8"))
            except Exception:
                raw = tomllib.loads(data.decode("utf-8"))
    except ConfigInvalid:
        raise
    except Exception as exc:
        raise ConfigInvalid(str(p), f"cannot parse: {exc}") from exc
    return config_from_mapping(raw)


def config_to_dict(cfg: ScenarioConfig) -> dict:
    """JSON-ready echo of the config (enums as their names)."""
    out = dataclasses.asdict(cfg)
    out["sv_estimator"] = cfg.sv_estimator.value
    out["reservation_order"] = cfg.reservation_order.value
    return out
