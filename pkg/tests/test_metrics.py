"""Data-usage, timing, and energy model arithmetic."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from fieldcam import metrics
from fieldcam.errors import InconsistentTotals
from fieldcam.metrics import (
    BatteryParams,
    EnergyParams,
    SignalProfile,
    TimingParams,
)


class TestPayloadRatio:
    def test_reference_transfer(self):
        assert metrics.payload_ratio(18093, 20686) == 87.46

    def test_no_overhead(self):
        assert metrics.payload_ratio(1000, 1000) == 100.00

    def test_payload_above_total_rejected(self):
        with pytest.raises(InconsistentTotals):
            metrics.payload_ratio(1000, 999)


class TestSerialTime:
    def test_reference_file_plus_header(self):
        # 18093 bytes of payload plus the 10-byte header at 102400 bps.
        ms = metrics.serial_time_ms(18103)
        assert ms == pytest.approx(1414.3, abs=0.5)

    def test_zero_bytes(self):
        assert metrics.serial_time_ms(0) == 0.0

    def test_exact_one_second(self):
        # 12800 bytes * 8 bits = 102400 bits = exactly 1 s at the effective rate.
        assert metrics.serial_time_ms(12800) == pytest.approx(1000.0)

    def test_effective_rate(self):
        assert TimingParams().effective_bps == pytest.approx(102400.0)


class TestTransferBreakdown:
    def test_reference_publish_wait(self):
        bd = metrics.transfer_breakdown(18093)
        assert bd.publish_count == 14
        assert bd.publish_wait_s == pytest.approx(7.0)

    def test_reference_pre_upload_and_total(self):
        bd = metrics.transfer_breakdown(18093)
        assert bd.pre_upload_s == pytest.approx(26.0)
        # ~40 s observed end to end; the modeled phases land within 20%.
        assert abs(bd.total_s - 40.0) / 40.0 < 0.20

    def test_zero_attach_delay(self):
        bd = metrics.transfer_breakdown(18093, signal=SignalProfile(attach_delay=0))
        assert bd.pre_upload_s == pytest.approx(13.0)

    @given(st.integers(min_value=1, max_value=200_000))
    def test_phases_sum_to_total(self, size):
        bd = metrics.transfer_breakdown(size)
        assert bd.total_s == pytest.approx(
            bd.pre_upload_s + bd.publish_wait_s + bd.serial_s
        )


class TestEnergyModel:
    def test_default_average_current(self):
        # (3 * 0.19 * 40 + 8.885e-6 * 3480) / 3600 amperes
        assert metrics.average_current_ma() == pytest.approx(6.342, abs=0.01)

    def test_default_average_power(self):
        assert metrics.average_power_w() == pytest.approx(0.0317, abs=0.0002)

    def test_pure_quiescent(self):
        p = EnergyParams(runs_per_hour=0)
        assert metrics.average_current_ma(p) == pytest.approx(0.008885)

    def test_always_on(self):
        p = EnergyParams(runs_per_hour=3, run_duration=1200.0)
        assert metrics.average_current_ma(p) == pytest.approx(190.0)

    def test_units_audit(self):
        p = EnergyParams()
        amps = metrics.average_current_ma(p) / 1000.0
        assert metrics.average_power_w(p) / p.supply_voltage == pytest.approx(
            amps, rel=1e-9
        )

    def test_over_an_hour_rejected(self):
        with pytest.raises(ValueError):
            EnergyParams(runs_per_hour=4, run_duration=1000.0)

    @given(st.integers(min_value=1, max_value=80))
    def test_monotonic_in_runs(self, runs):
        lo = metrics.average_current_ma(EnergyParams(runs_per_hour=runs, run_duration=40.0))
        hi = metrics.average_current_ma(EnergyParams(runs_per_hour=runs + 1, run_duration=40.0))
        assert hi > lo

    @given(st.floats(min_value=1.0, max_value=1100.0))
    def test_monotonic_in_duration(self, duration):
        lo = metrics.average_current_ma(EnergyParams(run_duration=duration))
        hi = metrics.average_current_ma(EnergyParams(run_duration=duration + 1.0))
        assert hi > lo


class TestBatteryLife:
    def test_reference_cell(self):
        hours = metrics.battery_life_hours(BatteryParams(), 0.0315)
        assert hours == pytest.approx(293.2, abs=0.5)
        assert hours > 290
        assert metrics.battery_life_days(BatteryParams(), 0.0315) > 12

    def test_watt_hour_capacity(self):
        assert BatteryParams().watt_hours == pytest.approx(9.62)

    def test_unit_efficiency_unit_load(self):
        b = BatteryParams(converter_efficiency=1.0)
        assert metrics.battery_life_hours(b, 9.62) == pytest.approx(1.0)

    def test_zero_load_rejected(self):
        with pytest.raises(ZeroDivisionError):
            metrics.battery_life_hours(BatteryParams(), 0.0)

    @given(st.floats(min_value=0.001, max_value=5.0))
    def test_monotonic_decreasing_in_load(self, load):
        assert metrics.battery_life_hours(load_watts=load) > metrics.battery_life_hours(
            load_watts=load * 1.01
        )
