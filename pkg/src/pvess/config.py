"""Experiment configuration: one JSON document covering plant, data, training and evaluation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .env import CaseSpec, EpisodeConfig, MarketSeries, Plant, SynthProfile, load_series, synth_series
from .ppo import PpoConfig
from .proto import DistillConfig, PrototypicalState
from .storage import BatteryCostModel, BatteryParams, HesCostModel, HydrogenParams


class ConfigError(ValueError):
    pass


# Table of experimental cases: which devices run and which costs are charged.
CASES = {
    1: CaseSpec(1, bes_enabled=True, bes_cost_enabled=True, hes_enabled=True, hes_cost_enabled=True),
    2: CaseSpec(2, bes_enabled=True, bes_cost_enabled=False, hes_enabled=True, hes_cost_enabled=False),
    3: CaseSpec(3, bes_enabled=True, bes_cost_enabled=True, hes_enabled=False, hes_cost_enabled=False),
    4: CaseSpec(4, bes_enabled=False, bes_cost_enabled=False, hes_enabled=True, hes_cost_enabled=True),
}


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"  # or "csv"
    path: str | None = None
    days: int = 365
    seed: int = 1
    profile: SynthProfile = field(default_factory=SynthProfile)

    def __post_init__(self):
        if self.source not in ("synthetic", "csv"):
            raise ConfigError(f"unknown data source {self.source!r}")
        if self.source == "csv" and not self.path:
            raise ConfigError("data.path is required for csv data")


@dataclass(frozen=True)
class EvalConfig:
    trials: int = 5
    sims: int = 30
    seed: int = 1000
    dataset_pairs: int = 10_000
    dataset_seed: int = 7
    kmeans_seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    battery: BatteryParams = field(default_factory=BatteryParams)
    battery_cost: BatteryCostModel = field(default_factory=BatteryCostModel)
    hydrogen: HydrogenParams = field(default_factory=HydrogenParams)
    hes_cost: HesCostModel = field(default_factory=HesCostModel)
    bes_capacity_kwh: float = 400.0
    battery_cost_mode: str = "exact"
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    ppo: PpoConfig = field(default_factory=lambda: PpoConfig(total_steps=400_000, reward_scale=0.1))
    distill: DistillConfig = field(default_factory=DistillConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    prototypes: tuple[PrototypicalState, ...] | None = None

    @property
    def plant(self) -> Plant:
        return Plant(
            self.battery, self.battery_cost, self.hydrogen, self.hes_cost, self.bes_capacity_kwh, self.battery_cost_mode
        )

    def series(self) -> MarketSeries:
        if self.data.source == "csv":
            return load_series(self.data.path)
        return synth_series(self.data.days, self.data.seed, self.data.profile)

    def to_dict(self) -> dict:
        return _to_jsonable(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        return _build(cls, doc, "config")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(doc)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


def _to_jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(x) for x in obj]
    return obj


_NESTED = {
    "data": DataConfig,
    "profile": SynthProfile,
    "battery": BatteryParams,
    "battery_cost": BatteryCostModel,
    "hydrogen": HydrogenParams,
    "hes_cost": HesCostModel,
    "episode": EpisodeConfig,
    "ppo": PpoConfig,
    "distill": DistillConfig,
    "evaluation": EvalConfig,
}


def _build(cls, doc, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - set(names))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for key, value in doc.items():
        if key in _NESTED:
            kwargs[key] = _build(_NESTED[key], value, f"{where}.{key}")
        elif key == "prototypes" and cls is ExperimentConfig:
            kwargs[key] = None if value is None else _prototypes(value, f"{where}.prototypes")
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _prototypes(items, where: str):
    if not isinstance(items, list) or len(items) != 4:
        raise ConfigError(f"{where}: expected a list of four prototypical states")
    out = []
    for i, item in enumerate(items):
        try:
            obs = tuple(float(x) for x in item["obs"])
            if len(obs) != 4:
                raise ValueError("obs must have 4 entries (price, pv, soc, loh)")
            out.append(PrototypicalState(obs, str(item["label"]), str(item.get("intent", ""))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{where}[{i}]: {exc}") from exc
    return tuple(out)
