"""測試設備動態：一階致動、指令延遲與時變區域。"""

from __future__ import annotations

import math

import numpy as np
import pytest

from der_feedback_simulator.devices import BatteryState, CommandLink, EvState, HvacState, actuate
from der_feedback_simulator.regions import Discrete, Disk, Singleton


# ── 致動 ─────────────────────────────────────────────────────────


class TestActuate:
    """output = commanded + (current - commanded) exp(-h / tau)。"""

    def test_instant(self):
        out = actuate([0.3, 0.1], [0.0, 0.0], tau=0.0, h=1.0)
        np.testing.assert_array_equal(out, [0.3, 0.1])

    def test_one_time_constant(self):
        out = actuate([1.0, 0.0], [0.0, 0.5], tau=2.0, h=2.0)
        np.testing.assert_allclose(out, [1.0 - math.exp(-1.0), 0.5 * math.exp(-1.0)])

    def test_repeated_steps_compound(self):
        """四步 h = tau 後剩餘差距為 exp(-4)。"""
        out = np.zeros(2)
        for _ in range(4):
            out = actuate([1.0, 0.0], out, tau=1.0, h=1.0)
        assert 1.0 - out[0] == pytest.approx(math.exp(-4.0))

    def test_at_target_stays(self):
        np.testing.assert_allclose(actuate([0.2, 0.2], [0.2, 0.2], tau=5.0, h=1.0), [0.2, 0.2])

    def test_negative_tau(self):
        with pytest.raises(ValueError):
            actuate([0.0, 0.0], [0.0, 0.0], tau=-1.0, h=1.0)


# ── 指令通道 ─────────────────────────────────────────────────────


class TestCommandLink:

    def test_no_delay_arrives_next_step(self):
        link = CommandLink()
        link.send(0, {"pv1": [0.1, 0.0]})
        assert link.deliver(0) == {}
        delivered = link.deliver(1)
        np.testing.assert_array_equal(delivered["pv1"], [0.1, 0.0])
        assert link.pending == 0

    def test_delay_steps(self):
        link = CommandLink(delay_steps=2)
        link.send(3, {"bat1": [0.2, 0.0]})
        assert link.deliver(5) == {}
        assert link.pending == 1
        assert "bat1" in link.deliver(6)

    def test_latest_command_wins(self):
        link = CommandLink(delay_steps=1)
        link.send(0, {"pv1": [0.1, 0.0], "bat1": [0.0, 0.0]})
        link.send(1, {"pv1": [0.4, 0.0]})
        delivered = link.deliver(10)
        np.testing.assert_array_equal(delivered["pv1"], [0.4, 0.0])
        np.testing.assert_array_equal(delivered["bat1"], [0.0, 0.0])

    def test_only_due_commands(self):
        link = CommandLink(delay_steps=0)
        link.send(0, {"pv1": [0.1, 0.0]})
        link.send(1, {"pv1": [0.2, 0.0]})
        np.testing.assert_array_equal(link.deliver(1)["pv1"], [0.1, 0.0])
        np.testing.assert_array_equal(link.deliver(2)["pv1"], [0.2, 0.0])

    def test_negative_delay(self):
        with pytest.raises(ValueError):
            CommandLink(delay_steps=-1)


# ── 電池 ─────────────────────────────────────────────────────────


class TestBatteryState:

    def test_region_limited_by_rating(self):
        assert BatteryState(capacity=1.0, soc=0.5, rating=0.5).region(3600.0) == Disk(-0.5, 0.5, 0.5)

    def test_region_limited_by_energy(self):
        region = BatteryState(capacity=1.0, soc=0.1, rating=0.5).region(3600.0)
        assert region.p_hi == pytest.approx(0.1)
        assert region.p_lo == pytest.approx(-0.5)

    def test_full_battery_cannot_charge(self):
        region = BatteryState(capacity=1.0, soc=1.0, rating=0.5).region(60.0)
        assert region.p_lo == 0.0
        assert region.p_hi == 0.5

    def test_advance(self):
        battery = BatteryState(capacity=1.0, soc=0.5, rating=0.5)
        battery.advance(-0.5, 1800.0)
        assert battery.soc == pytest.approx(0.75)
        battery.advance(0.5, 3600.0)
        assert battery.soc == pytest.approx(0.25)

    def test_advance_clamps(self):
        battery = BatteryState(capacity=1.0, soc=0.5, rating=0.5)
        battery.advance(2.0, 3600.0)
        assert battery.soc == 0.0
        battery.advance(-5.0, 3600.0)
        assert battery.soc == 1.0

    @pytest.mark.parametrize("capacity, soc", [(0.0, 0.0), (1.0, -0.1), (1.0, 1.5)])
    def test_invalid(self, capacity, soc):
        with pytest.raises(ValueError):
            BatteryState(capacity=capacity, soc=soc, rating=0.5)


# ── 電動車 ───────────────────────────────────────────────────────


class TestEvState:

    @pytest.fixture()
    def ev(self):
        return EvState(p_max=1.0, levels=(0.5, 1.0), energy=1.0, departure=7200.0)

    def test_min_rate(self, ev):
        assert ev.min_rate(0.0, 60.0) == pytest.approx(0.5)
        assert ev.min_rate(3600.0, 60.0) == pytest.approx(1.0)

    def test_tight_deadline_drops_zero(self, ev):
        assert ev.region(0.0, 60.0) == Discrete(((-0.5, 0.0), (-1.0, 0.0)))

    def test_slack_allows_pause(self, ev):
        ev.departure = 36000.0
        assert ev.region(0.0, 60.0) == Discrete(((0.0, 0.0), (-0.5, 0.0), (-1.0, 0.0)))

    def test_infeasible_deadline_uses_top_rate(self, ev):
        ev.energy = 5.0
        assert ev.region(0.0, 60.0) == Discrete(((-1.0, 0.0),))

    def test_done_or_departed_is_locked(self, ev):
        assert ev.region(7200.0, 60.0) == Singleton(0.0, 0.0)
        ev.energy = 0.0
        assert ev.region(0.0, 60.0) == Singleton(0.0, 0.0)

    def test_advance(self, ev):
        ev.advance(-0.5, 3600.0)
        assert ev.energy == pytest.approx(0.5)
        ev.advance(-1.0, 3600.0)
        assert ev.energy == 0.0


# ── 空調 ─────────────────────────────────────────────────────────


class TestHvacState:

    def test_initially_free(self):
        assert HvacState(p_on=0.5).region() == Discrete(((0.0, 0.0), (-0.5, 0.0)))

    def test_minimum_off_time(self):
        hvac = HvacState(p_on=0.5, min_off_steps=2)
        hvac.advance(-0.5)
        assert hvac.on
        assert isinstance(hvac.region(), Discrete)

        hvac.advance(0.0)
        assert not hvac.on
        assert hvac.region() == Singleton(0.0, 0.0)

        hvac.advance(0.0)
        assert hvac.off_steps == 2
        assert isinstance(hvac.region(), Discrete)

    def test_partial_output_counts_as_off(self):
        hvac = HvacState(p_on=0.5)
        hvac.advance(-0.2)
        assert not hvac.on
