"""Finite-horizon value iteration on a discretized copy of the storage MDP.

Used as an oracle: the optimum of the gridded problem is a reference that a
trained policy is measured against on the same price/PV window.

State: (hour, SoC level, LoH level, hydrogen mode). The mode remembers which
device ran in the previous hour and at which power level, because start-up
and ramping costs depend on it. SoC and LoH values that land between grid
points are handled by bilinear interpolation of the next-hour value table.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import FULL_CASE, Action, CaseSpec, EpisodeConfig, MarketSeries, Plant, reset, scale_action, step
from .storage import (
    KW_TO_MJH,
    BatteryState,
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


@dataclass(frozen=True)
class DPGrid:
    soc_levels: int = 21
    loh_levels: int = 21
    action_levels: int = 5

    def __post_init__(self):
        if min(self.soc_levels, self.loh_levels) < 2 or self.action_levels < 2:
            raise ValueError("every grid needs at least two levels")


@dataclass
class DPResult:
    soc: np.ndarray  # grid values
    loh: np.ndarray
    values: np.ndarray  # (horizon + 1, n_soc, n_loh, n_mode)
    optimum: float  # value at the requested initial state, mode "off"
    bat_actions: np.ndarray  # normalized battery magnitudes in [-1, 1]
    h2_actions: list  # (el_fraction, fc_fraction) per hydrogen action


def _interp_weights(grid, x):
    """Lower index and upper weight for linear interpolation on a uniform grid."""
    pos = (np.asarray(x) - grid[0]) / (grid[1] - grid[0])
    lo = np.clip(np.floor(pos).astype(int), 0, len(grid) - 2)
    w = np.clip(pos - lo, 0.0, 1.0)
    return lo, w


def _h2_menu(levels: int):
    fracs = np.linspace(0.0, 1.0, levels)[1:]
    return [(0.0, 0.0)] + [(f, 0.0) for f in fracs] + [(0.0, f) for f in fracs]


def _mode_state(mode: int, menu, plant: Plant, loh: float) -> HydrogenState:
    el, fc = menu[mode]
    p_el = el * plant.hydrogen.p_el_max
    p_fc = fc * plant.hydrogen.p_fc_max
    return HydrogenState(loh=loh, sigma_el=int(p_el > 0), sigma_fc=int(p_fc > 0), prev_p_el=p_el, prev_p_fc=p_fc)


def _snap_mode(el_mjh: float, fc_mjh: float, menu, plant: Plant) -> int:
    """Nearest menu entry to an applied (possibly clamped) power pair, keeping on/off exact."""
    if el_mjh <= 0 and fc_mjh <= 0:
        return 0
    best, best_d = 0, np.inf
    for m, (e, f) in enumerate(menu):
        if m == 0 or (el_mjh > 0) != (e > 0):
            continue
        d = abs(e * plant.hydrogen.p_el_max - el_mjh) + abs(f * plant.hydrogen.p_fc_max - fc_mjh)
        if d < best_d:
            best, best_d = m, d
    return best


def value_iteration(
    series: MarketSeries,
    start: int,
    soc0: float,
    loh0: float,
    plant: Plant | None = None,
    config: EpisodeConfig | None = None,
    case: CaseSpec = FULL_CASE,
    grid: DPGrid = DPGrid(),
) -> DPResult:
    """Backward induction over one ``config.horizon``-hour window starting at ``start``."""
    plant = plant or Plant()
    config = config or EpisodeConfig()
    horizon = config.horizon
    if start < 0 or start + horizon > len(series):
        raise ValueError(f"window [{start}, {start + horizon}) does not fit a series of {len(series)} h")
    bat_p, h2_p = plant.battery, plant.hydrogen
    soc = np.linspace(bat_p.soc_min, bat_p.soc_max, grid.soc_levels)
    loh = np.linspace(h2_p.loh_min, h2_p.loh_max, grid.loh_levels)
    bat_actions = np.linspace(-1.0, 1.0, grid.action_levels) if case.bes_enabled else np.zeros(1)
    menu = _h2_menu(grid.action_levels) if case.hes_enabled else [(0.0, 0.0)]
    n_b, n_h, n_m = len(bat_actions), len(menu), len(menu)

    # battery table: applied power (fraction of capacity per hour), next SoC, cost
    b_pow = np.zeros((len(soc), n_b))
    b_next = np.zeros((len(soc), n_b))
    b_cost = np.zeros((len(soc), n_b))
    for i, s in enumerate(soc):
        for a, frac in enumerate(bat_actions):
            state = BatteryState(float(s))
            p = clamp_battery_power(state, scale_action(frac, 0.0, 0.0, plant).p_bat, bat_p)
            s1 = battery_step(state, p, bat_p).soc
            b_pow[i, a], b_next[i, a] = p, s1
            if case.bes_cost_enabled:
                if plant.battery_cost_mode == "exact":
                    b_cost[i, a] = battery_cost_exact(s, s1, plant.battery_cost)
                else:
                    b_cost[i, a] = battery_cost_linear(s, s1, discharge_rate(s, s1, bat_p.dt), plant.battery_cost)

    # hydrogen table over (loh, mode, action): net kW delivered, next loh, next mode, cost
    h_kw = np.zeros((len(loh), n_m, n_h))
    h_next = np.zeros((len(loh), n_m, n_h))
    h_mode = np.zeros((len(loh), n_m, n_h), dtype=int)
    h_cost = np.zeros((len(loh), n_m, n_h))
    for j, lv in enumerate(loh):
        for m in range(n_m):
            prev = _mode_state(m, menu, plant, float(lv))
            for a, (e, f) in enumerate(menu):
                el, fc = clamp_hes_power(prev, e * h2_p.p_el_max, f * h2_p.p_fc_max, h2_p)
                nxt = reservoir_step(prev, electrolyzer_flow(el, h2_p), fuel_cell_flow(fc, h2_p), h2_p)
                nxt = update_device_status(nxt, el, fc)
                h_kw[j, m, a] = (fc - el) / KW_TO_MJH
                h_next[j, m, a] = nxt.loh
                h_mode[j, m, a] = _snap_mode(el, fc, menu, plant)
                if case.hes_cost_enabled:
                    h_cost[j, m, a] = hes_cost(nxt, plant.hes_cost)

    s_lo, s_w = _interp_weights(soc, b_next)  # (n_soc, n_b)
    l_lo, l_w = _interp_weights(loh, h_next)  # (n_loh, n_m, n_h)

    values = np.zeros((horizon + 1, len(soc), len(loh), n_m))
    for t in reversed(range(horizon)):
        price = float(series.prices[start + t])
        pv = float(series.pv[start + t])
        v_next = values[t + 1]
        # continuation value for every (soc, b-action, loh, mode, h-action)
        si, sw = s_lo[:, :, None, None, None], s_w[:, :, None, None, None]
        li, lw = l_lo[None, None], l_w[None, None]
        mi = h_mode[None, None]
        cont = (
            (1 - sw) * (1 - lw) * v_next[si, li, mi]
            + sw * (1 - lw) * v_next[si + 1, li, mi]
            + (1 - sw) * lw * v_next[si, li + 1, mi]
            + sw * lw * v_next[si + 1, li + 1, mi]
        )
        p_sell = (
            pv
            - b_pow[:, :, None, None, None] * plant.bes_capacity_kwh
            + h_kw[None, None]
        )
        if config.asymmetric_pricing:
            revenue = np.where(p_sell < 0, price * p_sell, config.rho * price * p_sell)
        else:
            revenue = config.rho * price * p_sell
        q = revenue - b_cost[:, :, None, None, None] - h_cost[None, None] + cont
        values[t] = q.max(axis=(1, 4))

    result = DPResult(soc, loh, values, float("nan"), bat_actions, menu)
    result.optimum = _interp_value(result, values[0], soc0, loh0, 0)
    return result


def _interp_value(result: DPResult, table, soc, loh, mode) -> float:
    j, w = _interp_weights(result.soc, soc)
    k, u = _interp_weights(result.loh, loh)
    v = table[:, :, mode]
    return float(
        (1 - w) * (1 - u) * v[j, k] + w * (1 - u) * v[j + 1, k] + (1 - w) * u * v[j, k + 1] + w * u * v[j + 1, k + 1]
    )


def greedy_rollout(
    result: DPResult,
    series: MarketSeries,
    start: int,
    soc0: float,
    loh0: float,
    plant: Plant | None = None,
    config: EpisodeConfig | None = None,
    case: CaseSpec = FULL_CASE,
) -> float:
    """Total reward of acting greedily on the DP values in the exact (ungridded) environment."""
    plant = plant or Plant()
    config = config or EpisodeConfig()
    state = reset(series, config, np.random.default_rng(0), start=start, soc=soc0, loh=loh0)
    total = 0.0
    for t in range(config.horizon):
        best = None
        for frac in result.bat_actions:
            for e, f in result.h2_actions:
                a = scale_action(float(frac), e, f, plant)
                r = step(state, Action(a.p_bat, a.p_el, a.p_fc), series, config, plant, case)
                mode = _snap_mode(r.applied.p_el * KW_TO_MJH, r.applied.p_fc * KW_TO_MJH, result.h2_actions, plant)
                q = r.reward + _interp_value(
                    result, result.values[t + 1], r.next.battery.soc, r.next.hydrogen.loh, mode
                )
                if best is None or q > best[0]:
                    best = (q, r)
        total += best[1].reward
        state = best[1].next
    return total
