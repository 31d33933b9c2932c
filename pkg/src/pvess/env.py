"""Day-ahead PV + storage arbitrage as a finite-horizon MDP.

The functional core is :func:`reset` / :func:`step`; :class:`PVESSEnv` wraps
it with normalized observations and the 4-dimensional policy action
(charge, discharge, electrolyzer, fuel cell), each in [0, 1] after clipping.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .storage import (
    KW_TO_MJH,
    BatteryCostModel,
    BatteryParams,
    BatteryState,
    HesCostModel,
    HydrogenParams,
    HydrogenState,
    battery_cost_exact,
    battery_cost_linear,
    battery_step,
    clamp_battery_power,
    clamp_hes_power,
    discharge_rate,
    electrolyzer_flow,
    fuel_cell_flow,
    hes_cost,
    reservoir_step,
    update_device_status,
)

HOURS_PER_DAY = 24


class SeriesError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MarketSeries:
    prices: np.ndarray
    pv: np.ndarray

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=np.float64)
        pv = np.asarray(self.pv, dtype=np.float64)
        if prices.ndim != 1 or prices.shape != pv.shape:
            raise SeriesError("prices and pv must be 1-D and of equal length")
        if len(prices) == 0:
            raise SeriesError("empty series")
        if not (np.all(np.isfinite(prices)) and np.all(np.isfinite(pv))):
            raise SeriesError("series contains non-finite values")
        if np.any(prices < 0):
            raise SeriesError(f"negative price at hour {int(np.argmax(prices < 0))}")
        if np.any(pv < 0):
            raise SeriesError(f"negative pv at hour {int(np.argmax(pv < 0))}")
        prices.setflags(write=False)
        pv.setflags(write=False)
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "pv", pv)

    def __len__(self) -> int:
        return len(self.prices)

    def window(self, start: int, length: int) -> "MarketSeries":
        return MarketSeries(self.prices[start : start + length], self.pv[start : start + length])


@dataclass(frozen=True)
class CaseSpec:
    case_id: int
    bes_enabled: bool = True
    bes_cost_enabled: bool = True
    hes_enabled: bool = True
    hes_cost_enabled: bool = True


FULL_CASE = CaseSpec(1)


@dataclass(frozen=True)
class EpisodeConfig:
    horizon: int = HOURS_PER_DAY
    rho: float = 0.95
    soc_init_range: tuple[float, float] = (0.25, 1.0)
    loh_init_range: tuple[float, float] = (5.0, 35.0)
    rng_seed: int = 0
    asymmetric_pricing: bool = False

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if not 0.0 < self.rho <= 1.0:
            raise ValueError(f"rho={self.rho} outside (0, 1]")


@dataclass(frozen=True)
class Plant:
    """Device parameters, cost models and sizing shared by every episode."""

    battery: BatteryParams = field(default_factory=BatteryParams)
    battery_cost: BatteryCostModel = field(default_factory=BatteryCostModel)
    hydrogen: HydrogenParams = field(default_factory=HydrogenParams)
    hes_cost: HesCostModel = field(default_factory=HesCostModel)
    bes_capacity_kwh: float = 400.0
    battery_cost_mode: str = "exact"

    def __post_init__(self):
        if self.battery_cost_mode not in ("exact", "linear"):
            raise ValueError(f"unknown battery cost mode {self.battery_cost_mode!r}")
        if self.bes_capacity_kwh <= 0:
            raise ValueError("bes_capacity_kwh must be positive")


@dataclass(frozen=True)
class Action:
    """Battery power in capacity/h; electrolyzer and fuel-cell power in kW."""

    p_bat: float = 0.0
    p_el: float = 0.0
    p_fc: float = 0.0


@dataclass(frozen=True)
class EnvState:
    price: float
    pv: float
    battery: BatteryState
    hydrogen: HydrogenState
    t: int = 0
    start: int = 0

    def observation(self) -> np.ndarray:
        return np.array([self.price, self.pv, self.battery.soc, self.hydrogen.loh])


@dataclass(frozen=True)
class StepResult:
    next: EnvState
    reward: float
    p_sell: float
    cost_bat: float
    cost_hes: float
    done: bool
    applied: Action


# -- series I/O ----------------------------------------------------------------


def load_series(path) -> MarketSeries:
    """Read an ``hour,price,pv`` CSV; hours must be consecutive integers."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"hour", "price", "pv"} - set(reader.fieldnames or [])
        if missing:
            raise SeriesError(f"{path}: missing columns {sorted(missing)}")
        prices, pv = [], []
        prev_hour = None
        for lineno, row in enumerate(reader, start=2):
            try:
                hour = int(row["hour"])
                price = float(row["price"])
                gen = float(row["pv"])
            except (TypeError, ValueError) as exc:
                raise SeriesError(f"{path}:{lineno}: malformed row {row!r}") from exc
            if prev_hour is not None and hour != prev_hour + 1:
                raise SeriesError(f"{path}:{lineno}: hour {hour} does not follow {prev_hour}")
            if not (math.isfinite(price) and math.isfinite(gen)):
                raise SeriesError(f"{path}:{lineno}: non-finite value")
            if price < 0:
                raise SeriesError(f"{path}:{lineno}: negative price {price}")
            if gen < 0:
                raise SeriesError(f"{path}:{lineno}: negative pv {gen}")
            prev_hour = hour
            prices.append(price)
            pv.append(gen)
    if not prices:
        raise SeriesError(f"{path}: no data rows")
    return MarketSeries(np.array(prices), np.array(pv))


def save_series(series: MarketSeries, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["hour", "price", "pv"])
        for hour, (price, gen) in enumerate(zip(series.prices, series.pv)):
            writer.writerow([hour, repr(float(price)), repr(float(gen))])


@dataclass(frozen=True)
class SynthProfile:
    pv_peak: float = 200.0  # kW
    sunrise: float = 6.0
    sunset: float = 18.0
    pv_noise: float = 0.1  # relative; also scales day-to-day cloudiness
    price_base: float = 0.10  # currency/kWh
    morning_peak: float = 0.10
    morning_hour: float = 8.0
    evening_peak: float = 0.18
    evening_hour: float = 19.0
    midday_dip: float = 0.06
    price_noise: float = 0.05
    price_floor: float = 0.01


def synth_series(days: int, seed: int = 0, profile: SynthProfile | None = None) -> MarketSeries:
    """Hourly PV (half-sine daylight bell) and double-peaked prices."""
    if days < 1:
        raise ValueError("days must be at least 1")
    prof = profile or SynthProfile()
    rng = np.random.default_rng(seed)
    hours = np.arange(days * HOURS_PER_DAY)
    h = (hours % HOURS_PER_DAY).astype(np.float64)

    daylight = (h > prof.sunrise) & (h < prof.sunset)
    bell = np.where(daylight, np.sin(np.pi * (h - prof.sunrise) / (prof.sunset - prof.sunrise)), 0.0)
    cloudiness = np.repeat(rng.uniform(1.0 - 3 * prof.pv_noise, 1.0, size=days), HOURS_PER_DAY)
    pv = prof.pv_peak * bell * cloudiness * (1.0 + prof.pv_noise * rng.standard_normal(len(h)))
    pv = np.where(daylight, np.maximum(pv, 0.0), 0.0)

    def bump(center, width):
        return np.exp(-0.5 * ((h - center) / width) ** 2)

    price = (
        prof.price_base
        + prof.morning_peak * bump(prof.morning_hour, 1.5)
        + prof.evening_peak * bump(prof.evening_hour, 2.0)
        - prof.midday_dip * bump(13.0, 2.5)
    )
    price = price * (1.0 + prof.price_noise * rng.standard_normal(len(h)))
    price = np.maximum(price, prof.price_floor)
    return MarketSeries(price, pv)


# -- MDP core ------------------------------------------------------------------


def reset(
    series: MarketSeries,
    config: EpisodeConfig,
    rng: np.random.Generator,
    *,
    start: int | None = None,
    soc: float | None = None,
    loh: float | None = None,
) -> EnvState:
    """Sample a midnight-aligned window and initial storage levels.

    The three random draws are always consumed, so overriding one of them does
    not shift the stream for the others.
    """
    if len(series) < config.horizon:
        raise SeriesError(f"series of {len(series)} h is shorter than horizon {config.horizon}")
    n_starts = (len(series) - config.horizon) // HOURS_PER_DAY + 1
    s_start = int(rng.integers(n_starts)) * HOURS_PER_DAY
    s_soc = float(rng.uniform(*config.soc_init_range))
    s_loh = float(rng.uniform(*config.loh_init_range))
    start = s_start if start is None else start
    if start + config.horizon > len(series):
        raise SeriesError(f"window at {start} runs past the end of the series")
    return EnvState(
        price=float(series.prices[start]),
        pv=float(series.pv[start]),
        battery=BatteryState(s_soc if soc is None else soc),
        hydrogen=HydrogenState(loh=s_loh if loh is None else loh),
        t=0,
        start=start,
    )


def enforce_exclusivity(action: Action) -> Action:
    if action.p_el > 0 and action.p_fc > 0:
        if action.p_el >= action.p_fc:
            return replace(action, p_fc=0.0)
        return replace(action, p_el=0.0)
    return action


def settle(price: float, p_sell: float, rho: float, asymmetric: bool = False) -> float:
    """Market revenue for selling ``p_sell`` (negative means buying)."""
    if asymmetric and p_sell < 0:
        return price * p_sell
    return rho * price * p_sell


def step(
    state: EnvState,
    raw_action: Action,
    series: MarketSeries,
    config: EpisodeConfig,
    plant: Plant,
    case: CaseSpec = FULL_CASE,
) -> StepResult:
    if state.t >= config.horizon:
        raise RuntimeError("episode is done; call reset")
    for value in (raw_action.p_bat, raw_action.p_el, raw_action.p_fc):
        if not math.isfinite(value):
            raise ValueError(f"non-finite action {raw_action}")

    act = Action(
        p_bat=raw_action.p_bat if case.bes_enabled else 0.0,
        p_el=max(raw_action.p_el, 0.0) if case.hes_enabled else 0.0,
        p_fc=max(raw_action.p_fc, 0.0) if case.hes_enabled else 0.0,
    )
    act = enforce_exclusivity(act)

    bat = plant.battery
    p_bat = clamp_battery_power(state.battery, act.p_bat, bat)
    battery = battery_step(state.battery, p_bat, bat)

    hydrogen = state.hydrogen
    el_mjh = fc_mjh = 0.0
    if case.hes_enabled:
        h2 = plant.hydrogen
        el_mjh, fc_mjh = clamp_hes_power(hydrogen, act.p_el * KW_TO_MJH, act.p_fc * KW_TO_MJH, h2)
        hydrogen = reservoir_step(
            hydrogen, electrolyzer_flow(el_mjh, h2), fuel_cell_flow(fc_mjh, h2), h2
        )
        hydrogen = update_device_status(hydrogen, el_mjh, fc_mjh)

    cost_bat = 0.0
    if case.bes_enabled and case.bes_cost_enabled:
        s0, s1 = state.battery.soc, battery.soc
        if plant.battery_cost_mode == "exact":
            cost_bat = battery_cost_exact(s0, s1, plant.battery_cost)
        else:
            cost_bat = battery_cost_linear(s0, s1, discharge_rate(s0, s1, bat.dt), plant.battery_cost)
    cost_hes = hes_cost(hydrogen, plant.hes_cost) if case.hes_enabled and case.hes_cost_enabled else 0.0

    p_el_kw = el_mjh / KW_TO_MJH
    p_fc_kw = fc_mjh / KW_TO_MJH
    p_sell = state.pv + p_fc_kw - p_bat * plant.bes_capacity_kwh - p_el_kw
    reward = settle(state.price, p_sell, config.rho, config.asymmetric_pricing) - cost_bat - cost_hes

    t = state.t + 1
    done = t >= config.horizon
    # at the terminal step the market pointer stays on the last hour of the window
    idx = state.start + min(t, config.horizon - 1)
    nxt = EnvState(
        price=float(series.prices[idx]),
        pv=float(series.pv[idx]),
        battery=battery,
        hydrogen=hydrogen,
        t=t,
        start=state.start,
    )
    return StepResult(nxt, reward, p_sell, cost_bat, cost_hes, done, Action(p_bat, p_el_kw, p_fc_kw))


# -- RL wrapper ------------------------------------------------------------------


@dataclass(frozen=True)
class ObsBox:
    """Bounds of the observation tuple (price, pv, soc, loh)."""

    low: tuple[float, float, float, float]
    high: tuple[float, float, float, float]

    @classmethod
    def for_series(cls, series: MarketSeries, plant: Plant) -> "ObsBox":
        return cls(
            low=(0.0, 0.0, plant.battery.soc_min, plant.hydrogen.loh_min),
            high=(
                float(series.prices.max()),
                max(float(series.pv.max()), 1e-9),
                plant.battery.soc_max,
                plant.hydrogen.loh_max,
            ),
        )

    def normalize(self, obs: np.ndarray) -> np.ndarray:
        """Map raw observations (rows) into [-1, 1]."""
        low = np.asarray(self.low)
        high = np.asarray(self.high)
        return 2.0 * (np.asarray(obs, dtype=np.float64) - low) / (high - low) - 1.0

    def contains(self, obs, tol: float = 1e-9) -> bool:
        obs = np.asarray(obs)
        return bool(np.all(obs >= np.asarray(self.low) - tol) and np.all(obs <= np.asarray(self.high) + tol))


ACTION_DIM = 4


def scale_action(bat: float, el: float, fc: float, plant: Plant) -> Action:
    """Turn normalized magnitudes (battery in [-1, 1], EL/FC in [0, 1]) into powers."""
    rating = plant.battery.p_max if bat >= 0 else -plant.battery.p_min
    return Action(
        p_bat=float(bat * rating),
        p_el=float(el * plant.hydrogen.p_el_max / KW_TO_MJH),
        p_fc=float(fc * plant.hydrogen.p_fc_max / KW_TO_MJH),
    )


def policy_to_action(u: np.ndarray, plant: Plant) -> Action:
    """Map a 4-vector (charge, discharge, EL, FC), each clipped to [0, 1], to device powers."""
    c, d, e, f = np.clip(np.asarray(u, dtype=np.float64), 0.0, 1.0)
    return scale_action(c - d, e, f, plant)


class PVESSEnv:
    """Stateful wrapper used for rollouts: normalized obs in, 4-d policy action out."""

    obs_dim = 4
    act_dim = ACTION_DIM

    def __init__(
        self,
        series: MarketSeries,
        plant: Plant | None = None,
        config: EpisodeConfig | None = None,
        case: CaseSpec = FULL_CASE,
        box: ObsBox | None = None,
    ):
        self.series = series
        self.plant = plant or Plant()
        self.config = config or EpisodeConfig()
        self.case = case
        self.box = box or ObsBox.for_series(series, self.plant)
        self.state: EnvState | None = None
        self.last: StepResult | None = None

    def reset(self, rng: np.random.Generator, **overrides) -> np.ndarray:
        self.state = reset(self.series, self.config, rng, **overrides)
        self.last = None
        return self.box.normalize(self.state.observation())

    def step(self, u: np.ndarray) -> tuple[np.ndarray, float, bool]:
        result = step(
            self.state, policy_to_action(u, self.plant), self.series, self.config, self.plant, self.case
        )
        self.state = result.next
        self.last = result
        return self.box.normalize(self.state.observation()), result.reward, result.done
