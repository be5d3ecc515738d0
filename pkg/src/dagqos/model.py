"""Domain types shared by the simulator: reputation, QoS indicators,
transactions, node/user state and the network configuration."""

from __future__ import annotations

import enum
import hashlib
import json
import math
import sys
from collections import deque
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import TYPE_CHECKING, Any, NamedTuple

import numpy as np

if TYPE_CHECKING:
    from .access import AimdState
    from .qos import FeeControllerState, SawtoothFilterState

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid or unrecognised configuration."""


class Policy(str, enum.Enum):
    URNS = "urns"
    RBNS = "rbns"
    DBNS = "dbns"
    DBNS_PLUS = "dbns-plus"

    @classmethod
    def parse(cls, name: str | Policy) -> Policy:
        if isinstance(name, Policy):
            return name
        key = str(name).strip().lower().replace("_", "-")
        if key in ("dbns+", "dbnsplus"):
            key = "dbns-plus"
        try:
            return cls(key)
        except ValueError:
            valid = ", ".join(p.value for p in cls)
            raise ConfigError(f"unknown policy {name!r}; valid policies: {valid}") from None


class Scenario(str, enum.Enum):
    A90 = "a90"
    B98 = "b98"
    C120 = "c120"

    @property
    def load_fraction(self) -> float:
        return {"a90": 0.90, "b98": 0.98, "c120": 1.20}[self.value]

    @classmethod
    def parse(cls, name: str | Scenario) -> Scenario:
        if isinstance(name, Scenario):
            return name
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            valid = ", ".join(s.value for s in cls)
            raise ConfigError(f"unknown scenario {name!r}; valid scenarios: {valid}") from None


# ---------------------------------------------------------------- reputation

@dataclass(frozen=True)
class ReputationVector:
    """Per-node reputation, fixed for the lifetime of a run."""

    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ConfigError("reputation vector must be nonempty")
        if any(not (v > 0.0) or math.isinf(v) for v in vals):
            raise ConfigError("every reputation must be strictly positive and finite")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]

    def __iter__(self):
        return iter(self.values)

    @property
    def node_count(self) -> int:
        return len(self.values)

    @property
    def total(self) -> float:
        return math.fsum(self.values)

    def shares(self) -> np.ndarray:
        arr = self.as_array()
        return arr / arr.sum()

    def as_array(self) -> np.ndarray:
        """Read-only float array view of the reputations."""
        arr = np.array(self.values, dtype=float)
        arr.flags.writeable = False
        return arr


def generate_reputation(n: int, s: float) -> ReputationVector:
    """Deterministic Zipf rank weights ``k**-s`` scaled so the mean is 1.

    Node index ``i`` holds rank ``i + 1``, so the output is nonincreasing.
    """
    if n < 1:
        raise ConfigError(f"node count must be >= 1, got {n}")
    if s < 0:
        raise ConfigError(f"zipf exponent must be >= 0, got {s}")
    raw = [k ** (-s) for k in range(1, n + 1)]
    norm = n / math.fsum(raw)
    return ReputationVector(tuple(w * norm for w in raw))


# ------------------------------------------------------------ runtime types

class QosIndicator(NamedTuple):
    """A node's advertised (delay, fee) pair and when it was published."""

    expected_delay: float
    fee: float
    published_at: float


@dataclass(slots=True)
class Transaction:
    id: int
    user_id: int
    created_at: float
    node_id: int = -1
    enqueued_at: float = math.nan
    issued_at: float = math.nan
    fee_paid: float = 0.0
    deferred: bool = False

    @property
    def delay(self) -> float:
        return self.issued_at - self.enqueued_at


@dataclass(slots=True)
class NodeState:
    node_id: int
    reputation: float
    aimd: AimdState
    filter: SawtoothFilterState
    controller: FeeControllerState
    ltp: deque = field(default_factory=deque)
    indicator: QosIndicator | None = None
    cumulative_fees: float = 0.0

    @property
    def issue_rate(self) -> float:
        return self.aimd.current_rate


@dataclass(slots=True)
class UserState:
    user_id: int
    send_rate: float
    tradeoff_weight: float
    cost_threshold: float
    probabilities: np.ndarray = field(default_factory=lambda: np.zeros(0))
    pending: deque = field(default_factory=deque)


# -------------------------------------------------------------- configuration

@dataclass(frozen=True)
class AimdParams:
    enabled: bool = True
    additive_step: float = 0.0075
    multiplicative_factor: float = 0.7
    update_interval: float = 0.1
    rate_floor: float = 0.05
    backlog_threshold: float = 20
    scale_threshold: bool = True
    min_threshold: float = 1.0
    # None: one fair-share service time per node, at least one update_interval
    decrease_cooldown: float | None = None
    # None: start each node at its fair share of the scheduling rate
    initial_rate: float | None = None
    # used for every node when enabled is false; None means fair share
    fixed_rate: float | None = None


@dataclass(frozen=True)
class ControllerParams:
    gain: float = 0.8
    setpoint: float = 15.0
    filter_window: int = 5
    # count the prospective transaction itself in the advertised queue length
    include_arrival: bool = True


@dataclass(frozen=True)
class UserOverride:
    send_rate: float | None = None
    tradeoff_weight: float | None = None
    cost_threshold: float | None = None


@dataclass(frozen=True)
class UserParams:
    tradeoff_weight: float = 0.6
    cost_threshold: float = 11.0
    retry_on_publish: bool = False
    overrides: dict[int, UserOverride] = field(default_factory=dict)


@dataclass(frozen=True)
class NetworkConfig:
    node_count: int = 50
    user_count: int = 100
    scheduling_rate: float = 50.0
    neighbour_degree: int = 4
    zipf_exponent: float = 0.9
    load_fraction: float = 0.9
    policy: Policy = Policy.URNS
    duration: float = 2000.0
    warmup: float = 100.0
    mc_runs: int = 10
    rng_seed: int = 0
    qos_publish_interval: float = 0.05
    sample_interval: float = 1.0
    # None: same as scheduling_rate
    scheduler_rate: float | None = None
    aimd: AimdParams = field(default_factory=AimdParams)
    controller: ControllerParams = field(default_factory=ControllerParams)
    users: UserParams = field(default_factory=UserParams)

    def __post_init__(self):
        object.__setattr__(self, "policy", Policy.parse(self.policy))
        self.validate()

    def validate(self) -> None:
        errs = []
        if not self.scheduling_rate > 0:
            errs.append("scheduling_rate must be > 0")
        if self.node_count < 1:
            errs.append("node_count must be >= 1")
        if self.user_count < 1:
            errs.append("user_count must be >= 1")
        if not self.load_fraction > 0:
            errs.append("load_fraction must be > 0")
        if self.zipf_exponent < 0:
            errs.append("zipf_exponent must be >= 0")
        if self.duration < 0:
            errs.append("duration must be >= 0")
        if self.warmup < 0:
            errs.append("warmup must be >= 0")
        if self.mc_runs < 1:
            errs.append("mc_runs must be >= 1")
        if self.neighbour_degree < 0:
            errs.append("neighbour_degree must be >= 0")
        for name in ("qos_publish_interval", "sample_interval"):
            if not getattr(self, name) > 0:
                errs.append(f"{name} must be > 0")
        if self.scheduler_rate is not None and not self.scheduler_rate > 0:
            errs.append("scheduler_rate must be > 0")
        a = self.aimd
        if not 0 < a.multiplicative_factor < 1:
            errs.append("aimd.multiplicative_factor must be in (0, 1)")
        if not a.update_interval > 0:
            errs.append("aimd.update_interval must be > 0")
        if not a.rate_floor > 0:
            errs.append("aimd.rate_floor must be > 0")
        if a.additive_step < 0:
            errs.append("aimd.additive_step must be >= 0")
        if a.backlog_threshold < 0:
            errs.append("aimd.backlog_threshold must be >= 0")
        if a.fixed_rate is not None and not a.fixed_rate > 0:
            errs.append("aimd.fixed_rate must be > 0")
        c = self.controller
        if not c.gain > 0:
            errs.append("controller.gain must be > 0")
        if c.setpoint < 0:
            errs.append("controller.setpoint must be >= 0")
        if c.filter_window < 1:
            errs.append("controller.filter_window must be >= 1")
        u = self.users
        if not 0 <= u.tradeoff_weight <= 1:
            errs.append("users.tradeoff_weight must be in [0, 1]")
        for uid, ov in u.overrides.items():
            if not 0 <= uid < self.user_count:
                errs.append(f"users.overrides: user id {uid} out of range")
            if ov.tradeoff_weight is not None and not 0 <= ov.tradeoff_weight <= 1:
                errs.append(f"users.overrides.{uid}.tradeoff_weight must be in [0, 1]")
            if ov.send_rate is not None and ov.send_rate < 0:
                errs.append(f"users.overrides.{uid}.send_rate must be >= 0")
        if errs:
            raise ConfigError("; ".join(errs))

    @property
    def effective_scheduler_rate(self) -> float:
        return self.scheduling_rate if self.scheduler_rate is None else self.scheduler_rate

    @property
    def user_send_rate(self) -> float:
        return self.load_fraction * self.scheduling_rate / self.user_count

    def with_(self, **changes) -> NetworkConfig:
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return config_to_dict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# Config file sections. The flat NetworkConfig fields are split between
# [network] and [simulation] purely for readability.
_NETWORK_KEYS = ("node_count", "user_count", "scheduling_rate", "neighbour_degree",
                 "zipf_exponent", "scheduler_rate")
_SIMULATION_KEYS = ("policy", "load_fraction", "duration", "warmup", "mc_runs",
                    "rng_seed", "qos_publish_interval", "sample_interval")
_SECTIONS = {"network", "simulation", "aimd", "controller", "users"}


def _take(section: str, data: dict, cls) -> dict:
    allowed = {f.name for f in fields(cls)}
    out = {}
    for key, val in data.items():
        if key not in allowed:
            raise ConfigError(f"unknown key {section}.{key}")
        out[key] = val
    return out


def _take_keys(section: str, data: dict, allowed: tuple[str, ...]) -> dict:
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown key {section}.{key}")
    return dict(data)


def config_from_dict(doc: dict[str, Any]) -> NetworkConfig:
    """Build a NetworkConfig from a nested mapping (as parsed from TOML)."""
    for key, val in doc.items():
        if key not in _SECTIONS:
            raise ConfigError(f"unknown section or key {key!r}")
        if not isinstance(val, dict):
            raise ConfigError(f"section {key!r} must be a table")
    kwargs: dict[str, Any] = {}
    kwargs.update(_take_keys("network", doc.get("network", {}), _NETWORK_KEYS))
    kwargs.update(_take_keys("simulation", doc.get("simulation", {}), _SIMULATION_KEYS))
    if "aimd" in doc:
        kwargs["aimd"] = AimdParams(**_take("aimd", doc["aimd"], AimdParams))
    if "controller" in doc:
        kwargs["controller"] = ControllerParams(**_take("controller", doc["controller"], ControllerParams))
    if "users" in doc:
        users = dict(doc["users"])
        raw_ov = users.pop("overrides", {})
        ov = {}
        for uid, body in raw_ov.items():
            try:
                idx = int(uid)
            except ValueError:
                raise ConfigError(f"users.overrides key {uid!r} is not an integer user id") from None
            ov[idx] = UserOverride(**_take(f"users.overrides.{uid}", body, UserOverride))
        kwargs["users"] = UserParams(overrides=ov, **_take("users", users, UserParams))
    try:
        return NetworkConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def config_to_dict(cfg: NetworkConfig) -> dict[str, Any]:
    d = asdict(cfg)
    doc: dict[str, Any] = {
        "network": {k: d[k] for k in _NETWORK_KEYS if d[k] is not None},
        "simulation": {k: d[k] for k in _SIMULATION_KEYS},
        "aimd": {k: v for k, v in d["aimd"].items() if v is not None},
        "controller": d["controller"],
        "users": {
            "tradeoff_weight": d["users"]["tradeoff_weight"],
            "cost_threshold": d["users"]["cost_threshold"],
            "retry_on_publish": d["users"]["retry_on_publish"],
        },
    }
    doc["simulation"]["policy"] = cfg.policy.value
    ovs = {str(uid): {k: v for k, v in asdict(o).items() if v is not None}
           for uid, o in sorted(cfg.users.overrides.items())}
    if ovs:
        doc["users"]["overrides"] = ovs
    return doc


def load_config(path: str | Path) -> NetworkConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    return config_from_dict(doc)
