"""Scenario configuration: all knobs of a simulation run, JSON/TOML loadable.

Every run is a pure function of this object; the master seed feeds every
random stream (no wall clock, no OS entropy).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

ADVERSARIES = ("none", "simple", "camouflage", "observe_act")


@dataclass(frozen=True)
class ScenarioConfig:
    n: int = 40
    k: int = 2
    epochs: int = 3
    w: int = 10                       # reputation sliding window, epochs
    tx_capacity: int = 8              # max tx hashes per TxList
    tbs_per_rb: int = 3               # TBs confirmed between reputation blocks
    tbs_per_epoch: int = 6            # TB quota before the epoch starts draining
    delta_ticks: int = 1              # synchronous step bound within a region
    regions: int = 2                  # latency regions (cross-region +1 tick)
    pow_difficulty: int = 12          # state-block nonce difficulty, bits
    pow_ticks: int = 2                # simulated ticks charged for the solve
    adversary: str = "none"
    malicious_fraction: float = 0.0   # of n, strictly below 1/3
    capability: tuple = ("fixed", 1.0)  # ("fixed", c) or ("uniform", lo, hi)
    cross_shard_fraction: float = 0.2
    multi_input_fraction: float = 0.1
    tx_rate: float = 0.15             # per validator per tick submission probability
    fee: int = 2
    genesis_utxos_per_validator: int = 2
    genesis_value: int = 1000
    abort_timeout: int = 20           # pending cross-tx abort, ticks
    drain_slack: int = 30             # extra drain budget past the abort timeout
    seconds_per_tick: float = 1.0
    crypto_mode: str = "fast"         # "fast" or "schnorr"
    reputation_enabled: bool = True   # False: random sharding + random leaders
    workload_epochs: int | None = None  # last epoch that accepts submissions
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.k < 1:
            raise ValueError("n and k must be positive")
        if self.n % self.k:
            raise ValueError(f"k must divide n (n={self.n}, k={self.k})")
        if self.adversary not in ADVERSARIES:
            raise ValueError(f"adversary must be one of {ADVERSARIES}")
        if not 0.0 <= self.malicious_fraction < 1 / 3 + 1e-9:
            raise ValueError("malicious fraction must stay below 1/3")
        if self.malicious_count >= self.n / 3 and self.malicious_count > 0:
            raise ValueError("malicious count must stay below n/3")
        if self.regions not in (1, 2):
            raise ValueError("regions must be 1 or 2")
        if self.capability[0] not in ("fixed", "uniform"):
            raise ValueError("capability must be ('fixed', c) or ('uniform', lo, hi)")
        if self.tx_capacity < 1 or self.tbs_per_rb < 1 or self.tbs_per_epoch < 1:
            raise ValueError("capacities must be positive")
        if not 0 <= self.pow_difficulty <= 32:
            raise ValueError("pow difficulty must be in [0, 32]")

    @property
    def m(self) -> int:
        return self.n // self.k

    @property
    def malicious_count(self) -> int:
        return int(self.n * self.malicious_fraction + 1e-9)

    def master_seed_bytes(self) -> bytes:
        return hashlib.sha256(b"repshard-master" + str(self.seed).encode()).digest()

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["capability"] = list(self.capability)
        return d

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()

    def replace(self, **kw) -> "ScenarioConfig":
        return dataclasses.replace(self, **kw)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ScenarioConfig)}


def _coerce(name: str, raw):
    if name == "capability":
        parts = list(raw)
        return (str(parts[0]), *[float(x) for x in parts[1:]])
    if name == "workload_epochs":
        return None if raw in (None, "none", "") else int(raw)
    current = getattr(ScenarioConfig, name, None)
    if isinstance(current, bool):
        if isinstance(raw, str):
            return raw.lower() in ("1", "true", "yes", "on")
        return bool(raw)
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, str):
        return str(raw)
    return raw


def config_from_dict(data: dict) -> ScenarioConfig:
    unknown = set(data) - set(_FIELD_TYPES)
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    coerced = {name: _coerce(name, raw) for name, raw in data.items()}
    return ScenarioConfig(**coerced)


def load_config(path: str | Path) -> ScenarioConfig:
    """Read a scenario from a .json or .toml file."""
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".toml":
        data = tomllib.loads(raw.decode())
    else:
        data = json.loads(raw)
    if not isinstance(data, dict):
        raise ValueError("config file must hold one object/table")
    return config_from_dict(data)


def apply_overrides(config: ScenarioConfig, overrides: dict[str, str]) -> ScenarioConfig:
    """Apply key=value overrides (CLI style) on top of a config."""
    updates = {}
    for name, raw in overrides.items():
        if name not in _FIELD_TYPES:
            raise ValueError(f"unknown config field {name!r}")
        updates[name] = _coerce(name, raw)
    return config.replace(**updates)
