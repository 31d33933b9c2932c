"""Battery and hydrogen storage physics plus their operating cost models.

Units
-----
Battery state of charge is a fraction of capacity in [0, 1]; battery power is
expressed in capacity per hour (positive charges, negative discharges).
Hydrogen device powers are MJ/h, molar flows kmol/h, and the reservoir level
is a pressure-like quantity bounded by ``loh_min``/``loh_max``.

Everything here is a pure function of its arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

TOL = 1e-9

# 1 kW held for one hour is 3.6 MJ.
KW_TO_MJH = 3.6


class ContractViolation(ValueError):
    """A transition was asked to leave its admissible region."""


@dataclass(frozen=True)
class BatteryParams:
    eta_charge: float = 0.9
    eta_discharge: float = 0.95
    soc_min: float = 0.0
    soc_max: float = 1.0
    p_min: float = -0.25
    p_max: float = 0.25
    dt: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.soc_min < self.soc_max <= 1.0:
            raise ValueError(f"bad SoC bounds [{self.soc_min}, {self.soc_max}]")
        if not self.p_min < 0.0 < self.p_max:
            raise ValueError(f"need p_min < 0 < p_max, got {self.p_min}, {self.p_max}")
        for name in ("eta_charge", "eta_discharge"):
            eta = getattr(self, name)
            if not 0.0 < eta <= 1.0:
                raise ValueError(f"{name}={eta} outside (0, 1]")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


@dataclass(frozen=True)
class BatteryState:
    soc: float


@dataclass(frozen=True)
class BatteryCostModel:
    capital_cost: float = 100.0
    capacity: float = 1.0
    round_trip_eff: float = 0.9
    phi: float = 1.5
    omega: float = 2.0
    # linear surrogate coefficients (w1..w4)
    w1: float = -36.23
    w2: float = 34.80
    w3: float = 2.77
    w4: float = -2.45

    def __post_init__(self):
        if self.capacity <= 0:
            raise ValueError("capacity must be positive")
        if not 0.0 < self.round_trip_eff <= 1.0:
            raise ValueError("round_trip_eff outside (0, 1]")
        if self.phi <= 0 or self.omega <= 0:
            raise ValueError("phi and omega must be positive")


@dataclass(frozen=True)
class HydrogenParams:
    eta_el: float = 0.725
    eta_fc: float = 0.6
    eta_hes: float = 0.05
    ncv: float = 240.0  # MJ/kmol
    gas_const: float = 8.314
    temp: float = 313.0
    volume: float = 35.0
    loh_min: float = 0.0
    loh_max: float = 40.0
    p_el_min: float = 0.0
    p_el_max: float = 144.0  # MJ/h (40 kW)
    p_fc_min: float = 0.0
    p_fc_max: float = 72.0  # MJ/h (20 kW)

    def __post_init__(self):
        for name in ("eta_el", "eta_fc"):
            eta = getattr(self, name)
            if not 0.0 < eta <= 1.0:
                raise ValueError(f"{name}={eta} outside (0, 1]")
        if not 0.0 <= self.eta_hes < 1.0:
            raise ValueError(f"eta_hes={self.eta_hes} outside [0, 1)")
        if self.volume <= 0 or self.ncv <= 0:
            raise ValueError("volume and ncv must be positive")
        if not self.loh_min < self.loh_max:
            raise ValueError("need loh_min < loh_max")
        if not 0.0 <= self.p_el_min <= self.p_el_max:
            raise ValueError("bad electrolyzer power bounds")
        if not 0.0 <= self.p_fc_min <= self.p_fc_max:
            raise ValueError("bad fuel-cell power bounds")

    @property
    def pressure_per_kmol(self) -> float:
        """Reservoir level change per kmol of net hydrogen inflow (R*T/V)."""
        return self.gas_const * self.temp / self.volume


@dataclass(frozen=True)
class HydrogenState:
    loh: float
    sigma_el: int = 0
    sigma_fc: int = 0
    prev_p_el: float = 0.0
    prev_p_fc: float = 0.0
    zeta_el: int = 0
    zeta_fc: int = 0
    kappa_el: float = 0.0
    kappa_fc: float = 0.0


@dataclass(frozen=True)
class HesCostModel:
    cc_el: float = 2000.0
    nu_el: float = 10000.0
    op_el: float = 0.5
    st_el: float = 5.0
    de_el: float = 0.1
    cc_fc: float = 2000.0
    nu_fc: float = 10000.0
    op_fc: float = 0.5
    st_fc: float = 5.0
    de_fc: float = 0.1

    def __post_init__(self):
        if self.nu_el <= 0 or self.nu_fc <= 0:
            raise ValueError("lifetime hours must be positive")
        for name, value in self.__dict__.items():
            if value < 0:
                raise ValueError(f"{name} must be nonnegative")


# -- battery -----------------------------------------------------------------


def clamp_battery_power(state: BatteryState, power: float, params: BatteryParams) -> float:
    """Limit a requested battery power to what the SoC window and rating allow."""
    if power > 0:
        headroom = (params.soc_max - state.soc) / (params.eta_charge * params.dt)
        power = min(power, headroom, params.p_max)
        return max(power, 0.0)
    if power < 0:
        floor = (params.soc_min - state.soc) / (params.eta_discharge * params.dt)
        power = max(power, floor, params.p_min)
        return min(power, 0.0)
    return 0.0


def battery_step(state: BatteryState, power: float, params: BatteryParams) -> BatteryState:
    if not math.isfinite(power):
        raise ValueError(f"non-finite battery power {power!r}")
    eta = params.eta_charge if power > 0 else params.eta_discharge
    soc = state.soc + eta * power * params.dt
    if soc < params.soc_min - TOL or soc > params.soc_max + TOL:
        raise ContractViolation(
            f"SoC {soc} leaves [{params.soc_min}, {params.soc_max}]; clamp the power first"
        )
    return BatteryState(soc=min(max(soc, params.soc_min), params.soc_max))


def discharge_rate(soc_prev: float, soc_now: float, dt: float = 1.0) -> float:
    if dt <= 0:
        raise ValueError("dt must be positive")
    return (soc_prev - soc_now) / dt


def battery_cost_exact(soc_prev: float, soc_now: float, model: BatteryCostModel) -> float:
    """Depth-of-discharge degradation cost; a difference of a potential in SoC."""
    scale = model.capital_cost / (model.capacity * model.round_trip_eff**2 * model.phi)
    return scale * ((1.0 - soc_now) ** model.omega - (1.0 - soc_prev) ** model.omega)


def battery_cost_linear(
    soc_prev: float, soc_now: float, rate: float, model: BatteryCostModel
) -> float:
    return model.w1 * soc_now + model.w2 * soc_prev + model.w3 * rate + model.w4


# -- hydrogen ----------------------------------------------------------------


def electrolyzer_flow(p_el: float, params: HydrogenParams) -> float:
    if p_el < 0:
        raise ValueError(f"electrolyzer power must be nonnegative, got {p_el}")
    return params.eta_el * p_el / params.ncv


def fuel_cell_flow(p_fc: float, params: HydrogenParams) -> float:
    if p_fc < 0:
        raise ValueError(f"fuel-cell power must be nonnegative, got {p_fc}")
    return p_fc / (params.eta_fc * params.ncv)


def reservoir_step(
    state: HydrogenState, f_el: float, f_fc: float, params: HydrogenParams
) -> HydrogenState:
    loh = (1.0 - params.eta_hes) * state.loh + params.pressure_per_kmol * (f_el - f_fc)
    if loh < params.loh_min - TOL or loh > params.loh_max + TOL:
        raise ContractViolation(
            f"reservoir level {loh} leaves [{params.loh_min}, {params.loh_max}]"
        )
    return replace(state, loh=min(max(loh, params.loh_min), params.loh_max))


def clamp_hes_power(
    state: HydrogenState, p_el: float, p_fc: float, params: HydrogenParams
) -> tuple[float, float]:
    """Limit electrolyzer/fuel-cell powers so the reservoir stays in bounds.

    Expects exclusivity to be resolved already (at most one positive input).
    The fuel-cell limit also keeps the level above ``loh_min`` after
    self-consumption.
    """
    retained = (1.0 - params.eta_hes) * state.loh
    k = params.pressure_per_kmol
    el = 0.0
    fc = 0.0
    if p_el > 0:
        room = max(params.loh_max - retained, 0.0)
        el = min(p_el, room / k * params.ncv / params.eta_el)
        el = min(max(el, params.p_el_min), params.p_el_max)
        # p_el_min > 0 must not push the reservoir over its ceiling
        el = min(el, room / k * params.ncv / params.eta_el)
    if p_fc > 0:
        avail = max(retained - params.loh_min, 0.0)
        fc = min(p_fc, avail / k * params.eta_fc * params.ncv)
        fc = min(max(fc, params.p_fc_min), params.p_fc_max)
        fc = min(fc, avail / k * params.eta_fc * params.ncv)
    return el, fc


def update_device_status(state: HydrogenState, p_el: float, p_fc: float) -> HydrogenState:
    """Roll on/off flags, start-up indicators and power variations forward one step."""
    sigma_el = int(p_el > 0)
    sigma_fc = int(p_fc > 0)
    return replace(
        state,
        sigma_el=sigma_el,
        sigma_fc=sigma_fc,
        zeta_el=int(sigma_el == 1 and state.sigma_el == 0),
        zeta_fc=int(sigma_fc == 1 and state.sigma_fc == 0),
        kappa_el=abs(p_el - state.prev_p_el) if sigma_el else 0.0,
        kappa_fc=abs(p_fc - state.prev_p_fc) if sigma_fc else 0.0,
        prev_p_el=p_el,
        prev_p_fc=p_fc,
    )


def hes_cost(status: HydrogenState, model: HesCostModel) -> float:
    el = (
        (model.cc_el / model.nu_el + model.op_el) * status.sigma_el
        + model.st_el * status.zeta_el
        + model.de_el * status.kappa_el
    )
    fc = (
        (model.cc_fc / model.nu_fc + model.op_fc) * status.sigma_fc
        + model.st_fc * status.zeta_fc
        + model.de_fc * status.kappa_fc
    )
    return el + fc
