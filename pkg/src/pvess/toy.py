"""A deterministic buy-low/sell-high task with a known optimum, for checking PPO."""

from __future__ import annotations

import numpy as np


class PriceCycleEnv:
    """Unit storage facing prices that alternate low, high, low, high, ...

    Observation: (price flag in {-1, +1}, 2*soc - 1). Action: (buy, sell),
    each clipped to [0, 1]; the net flow is limited by the storage bounds.
    Reward is ``price * (sold - bought)``.
    """

    obs_dim = 2
    act_dim = 2

    def __init__(self, horizon: int = 8, low: float = 1.0, high: float = 3.0):
        if horizon < 2 or horizon % 2:
            raise ValueError("horizon must be an even number >= 2")
        self.horizon = horizon
        self.prices = np.where(np.arange(horizon) % 2 == 0, low, high)
        self.t = 0
        self.soc = 0.0

    @property
    def optimal_return(self) -> float:
        """Fill at every low step, empty at every high step."""
        return float(self.horizon // 2 * (self.prices[1] - self.prices[0]))

    def _obs(self):
        flag = 1.0 if self.prices[min(self.t, self.horizon - 1)] > self.prices[0] else -1.0
        return np.array([flag, 2.0 * self.soc - 1.0])

    def reset(self, rng=None):
        self.t = 0
        self.soc = 0.0
        return self._obs()

    def step(self, u):
        buy, sell = np.clip(np.asarray(u, dtype=np.float64), 0.0, 1.0)
        flow = buy - sell
        flow = min(flow, 1.0 - self.soc) if flow > 0 else max(flow, -self.soc)
        reward = -self.prices[self.t] * flow
        self.soc += flow
        self.t += 1
        done = self.t >= self.horizon
        return self._obs(), float(reward), done
