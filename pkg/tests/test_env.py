import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pvess.config import CASES
from pvess.env import (
    Action,
    EpisodeConfig,
    MarketSeries,
    ObsBox,
    Plant,
    PVESSEnv,
    SeriesError,
    enforce_exclusivity,
    load_series,
    policy_to_action,
    reset,
    save_series,
    scale_action,
    settle,
    step,
    synth_series,
)
from pvess.storage import KW_TO_MJH, battery_cost_exact

PLANT = Plant()
CFG = EpisodeConfig()


def fixed_state(series, soc=0.5, loh=20.0, start=0):
    return reset(series, CFG, np.random.default_rng(0), start=start, soc=soc, loh=loh)


class TestSeries:
    def test_round_trip(self, tmp_path, small_series):
        path = tmp_path / "s.csv"
        save_series(small_series, path)
        back = load_series(path)
        assert np.array_equal(back.prices, small_series.prices)
        assert np.array_equal(back.pv, small_series.pv)

    @pytest.mark.parametrize(
        "body, message",
        [
            ("hour,price\n0,1\n", "missing columns"),
            ("hour,price,pv\n0,abc,1\n", ":2: malformed"),
            ("hour,price,pv\n0,1,1\n2,1,1\n", ":3: hour 2 does not follow 0"),
            ("hour,price,pv\n0,-1,1\n", "negative price"),
            ("hour,price,pv\n0,1,-1\n", "negative pv"),
            ("hour,price,pv\n0,nan,1\n", "non-finite"),
            ("hour,price,pv\n", "no data rows"),
        ],
    )
    def test_load_diagnostics(self, tmp_path, body, message):
        path = tmp_path / "bad.csv"
        path.write_text(body)
        with pytest.raises(SeriesError, match=message):
            load_series(path)

    def test_series_is_read_only(self, small_series):
        with pytest.raises(ValueError):
            small_series.prices[0] = 1.0

    def test_series_validation(self):
        with pytest.raises(SeriesError):
            MarketSeries(np.ones(3), np.ones(4))
        with pytest.raises(SeriesError):
            MarketSeries(np.array([]), np.array([]))

    def test_synth_shape_and_determinism(self):
        a, b = synth_series(5, seed=9), synth_series(5, seed=9)
        assert len(a) == 120
        assert np.array_equal(a.prices, b.prices) and np.array_equal(a.pv, b.pv)
        night = np.arange(120) % 24 < 5
        assert np.all(a.pv[night] == 0) and np.all(a.prices > 0)

    def test_synth_rejects_zero_days(self):
        with pytest.raises(ValueError):
            synth_series(0)


class TestReset:
    def test_midnight_windows_and_ranges(self, small_series):
        rng = np.random.default_rng(1)
        for _ in range(200):
            s = reset(small_series, CFG, rng)
            assert s.start % 24 == 0 and s.start + 24 <= len(small_series)
            assert 0.25 <= s.battery.soc <= 1.0 and 5.0 <= s.hydrogen.loh <= 35.0
            assert s.t == 0

    def test_override_does_not_shift_stream(self, small_series):
        a = reset(small_series, CFG, np.random.default_rng(4))
        b = reset(small_series, CFG, np.random.default_rng(4), soc=0.3)
        assert (a.start, a.hydrogen.loh) == (b.start, b.hydrogen.loh) and b.battery.soc == 0.3

    def test_short_series_rejected(self):
        with pytest.raises(SeriesError):
            reset(synth_series(1).window(0, 10), CFG, np.random.default_rng(0))


class TestStep:
    def test_exclusivity_keeps_larger(self):
        assert enforce_exclusivity(Action(0, 5, 3)) == Action(0, 5, 0)
        assert enforce_exclusivity(Action(0, 2, 3)) == Action(0, 0, 3)
        assert enforce_exclusivity(Action(0, 4, 4)) == Action(0, 4, 0)

    def test_settle(self):
        assert settle(2.0, 10.0, 0.95) == pytest.approx(19.0)
        assert settle(2.0, -10.0, 0.95) == pytest.approx(-19.0)
        assert settle(2.0, -10.0, 0.95, asymmetric=True) == pytest.approx(-20.0)

    def test_reward_decomposition(self, small_series):
        state = fixed_state(small_series, soc=0.5, loh=20.0)
        r = step(state, Action(0.1, 10.0, 0.0), small_series, CFG, PLANT, CASES[1])
        p_sell = state.pv - 0.1 * PLANT.bes_capacity_kwh - 10.0
        assert r.p_sell == pytest.approx(p_sell)
        assert r.cost_bat == pytest.approx(battery_cost_exact(0.5, 0.59, PLANT.battery_cost))
        assert r.cost_hes == pytest.approx(0.7 + 5.0 + 0.1 * 36.0)
        assert r.reward == pytest.approx(0.95 * state.price * p_sell - r.cost_bat - r.cost_hes)
        assert r.next.t == 1 and r.next.price == small_series.prices[1]

    def test_case2_differs_by_costs_on_identical_actions(self, small_series):
        rng = np.random.default_rng(3)
        s1 = s2 = fixed_state(small_series)
        for _ in range(24):
            a = Action(rng.uniform(-0.3, 0.3), rng.uniform(0, 50), rng.uniform(0, 25))
            r1 = step(s1, a, small_series, CFG, PLANT, CASES[1])
            r2 = step(s2, a, small_series, CFG, PLANT, CASES[2])
            assert r2.reward - r1.reward == pytest.approx(r1.cost_bat + r1.cost_hes, abs=1e-9)
            assert r2.cost_bat == 0 and r2.cost_hes == 0
            s1, s2 = r1.next, r2.next

    def test_case3_freezes_hydrogen(self, small_series):
        state = fixed_state(small_series)
        for _ in range(24):
            r = step(state, Action(0.1, 30.0, 10.0), small_series, CFG, PLANT, CASES[3])
            assert r.applied.p_el == 0 and r.applied.p_fc == 0 and r.cost_hes == 0
            assert r.next.hydrogen == state.hydrogen
            state = r.next

    def test_case4_freezes_battery(self, small_series):
        state = fixed_state(small_series)
        r = step(state, Action(0.2, 0.0, 10.0), small_series, CFG, PLANT, CASES[4])
        assert r.applied.p_bat == 0 and r.cost_bat == 0 and r.next.battery == state.battery

    def test_done_after_horizon(self, small_series):
        state = fixed_state(small_series)
        for t in range(24):
            r = step(state, Action(), small_series, CFG, PLANT)
            state = r.next
            assert r.done == (t == 23)
        with pytest.raises(RuntimeError):
            step(state, Action(), small_series, CFG, PLANT)

    def test_nonfinite_action_rejected(self, small_series):
        with pytest.raises(ValueError):
            step(fixed_state(small_series), Action(float("inf")), small_series, CFG, PLANT)

    @given(
        st.floats(0, 1),
        st.floats(0, 40),
        st.floats(-5, 5),
        st.floats(-100, 500),
        st.floats(-100, 500),
    )
    def test_any_action_keeps_state_admissible(self, soc, loh, pb, pe, pf):
        series = synth_series(1, seed=0)
        state = reset(series, CFG, np.random.default_rng(0), soc=soc, loh=loh)
        r = step(state, Action(pb, pe, pf), series, CFG, PLANT)
        assert 0 <= r.next.battery.soc <= 1 and 0 <= r.next.hydrogen.loh <= 40
        assert r.applied.p_el * r.applied.p_fc == 0
        assert r.next.hydrogen.sigma_el * r.next.hydrogen.sigma_fc == 0


class TestWrapper:
    def test_scale_and_policy_mapping(self):
        a = policy_to_action(np.array([1.0, 0.0, 0.5, 2.0]), PLANT)
        assert a.p_bat == PLANT.battery.p_max
        assert a.p_el == pytest.approx(0.5 * PLANT.hydrogen.p_el_max / KW_TO_MJH)
        assert a.p_fc == pytest.approx(PLANT.hydrogen.p_fc_max / KW_TO_MJH)
        a = policy_to_action(np.array([0.2, 0.7, -1.0, -1.0]), PLANT)
        assert a.p_bat == pytest.approx(scale_action(-0.5, 0, 0, PLANT).p_bat) and a.p_el == a.p_fc == 0

    def test_obs_box(self, small_series):
        box = ObsBox.for_series(small_series, PLANT)
        lo, hi = np.array(box.low), np.array(box.high)
        assert np.allclose(box.normalize(lo), -1) and np.allclose(box.normalize(hi), 1)
        assert box.contains(0.5 * (lo + hi)) and not box.contains(hi + 1)

    def test_episode_runs_and_is_deterministic(self, small_series):
        def run(seed):
            env = PVESSEnv(small_series)
            obs = env.reset(np.random.default_rng(seed))
            total, done = 0.0, False
            while not done:
                obs, r, done = env.step(np.array([0.3, 0.1, 0.2, 0.0]))
                assert obs.shape == (4,) and np.all(np.abs(obs) <= 1 + 1e-9)
                total += r
            return total

        assert run(5) == run(5)

    def test_episode_config_validation(self):
        with pytest.raises(ValueError):
            EpisodeConfig(horizon=0)
        with pytest.raises(ValueError):
            EpisodeConfig(rho=1.5)

    def test_plant_validation(self):
        with pytest.raises(ValueError):
            Plant(battery_cost_mode="quadratic")
