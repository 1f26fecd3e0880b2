"""Unit tests for surge ratios, baselines and the DER quadrature."""

import dataclasses

import numpy as np
import pytest

from surgekit.metrics import (
    DerDelayModel,
    EventTraces,
    SurgeWindow,
    adaptive_simpson,
    baseline_mean,
    der_missing_power,
    penetration,
    surge_ratios,
    window_mean,
)


@dataclasses.dataclass
class _Event:
    event_id: str = "E1"
    feeder_id: str = "F1"
    start_time: np.datetime64 = np.datetime64("2024-01-09T18:00", "m")
    restoration_time: np.datetime64 = np.datetime64("2024-01-09T20:00", "m")


@dataclasses.dataclass
class _Feeder:
    n_smart_meters: int = 1000
    n_ev_submeters: int = 300
    n_hp_submeters: int = 250
    der_capacity_kw: float = 450.0
    daily_peak_kw: float = 3000.0


def _grid(start="2024-01-01T00:00", days=10, step=15):
    t0 = np.datetime64(start, "m")
    n = int(days * 1440 / step)
    return t0 + np.arange(n) * np.timedelta64(step, "m")


def _flat_traces(total=1000.0, ev=100.0, hp=200.0, der=0.0, **grid_kw):
    ts = _grid(**grid_kw)
    n = len(ts)
    return EventTraces(ts, np.full(n, total), np.full(n, ev),
                       np.full(n, hp), np.full(n, der))


def _set_window(traces, t_start, window, channel, value):
    offs = traces.minutes_since(t_start)
    mask = (offs >= -1e-9) & (offs < window.length_min - 1e-9)
    getattr(traces, channel)[mask] = value


class TestHandExample:
    def test_frozen_decomposition(self):
        # baseline 1000 kW total, window totals jump to 1500 kW:
        # s_tot 0.5, s_ev 0.2, s_hp 0.2, no DER, residual 0.1
        w = SurgeWindow()
        ev = _Event()
        tr = _flat_traces()
        _set_window(tr, ev.restoration_time, w, "total_kw", 1500.0)
        _set_window(tr, ev.restoration_time, w, "ev_kw", 300.0)
        _set_window(tr, ev.restoration_time, w, "hp_kw", 400.0)
        s = surge_ratios(ev, tr, w)
        assert s.s_tot == pytest.approx(0.5, abs=1e-12)
        assert s.s_ev == pytest.approx(0.2, abs=1e-12)
        assert s.s_hp == pytest.approx(0.2, abs=1e-12)
        assert s.s_der == pytest.approx(0.0, abs=1e-12)
        assert s.s_oth == pytest.approx(0.1, abs=1e-12)

    def test_identity_exact_and_scale_invariant(self):
        rng = np.random.default_rng(7)
        w = SurgeWindow()
        ev = _Event()
        for _ in range(20):
            tr = _flat_traces(total=1000.0, ev=80.0, hp=150.0, der=0.0)
            tr.total_kw += rng.normal(0, 30, len(tr.total_kw))
            tr.ev_kw += rng.normal(0, 10, len(tr.ev_kw))
            tr.hp_kw += rng.normal(0, 12, len(tr.hp_kw))
            tr.der_kw = np.abs(rng.normal(50, 10, len(tr.der_kw)))
            s = surge_ratios(ev, tr, w)
            assert abs(s.s_tot - (s.s_ev + s.s_hp + s.s_der + s.s_oth)) <= 1e-12
            c = 3.7
            tr2 = EventTraces(tr.timestamps, tr.total_kw * c, tr.ev_kw * c,
                              tr.hp_kw * c, tr.der_kw * c)
            s2 = surge_ratios(ev, tr2, w)
            for a, b in zip(s.as_tuple(), s2.as_tuple()):
                assert a == pytest.approx(b, abs=1e-12)


class TestBaseline:
    def test_skips_days_overlapping_outage(self):
        # 30 h outage: the 1-day lookback lands inside the outage, so the
        # baseline must start 2 days back
        w = SurgeWindow()
        start = np.datetime64("2024-01-08T10:00", "m")
        rest = np.datetime64("2024-01-09T16:00", "m")
        tr = _flat_traces(total=500.0, days=12)
        t_in_outage = rest - np.timedelta64(1440, "m")
        _set_window(tr, t_in_outage, w, "total_kw", 0.0)  # would poison a 1-day baseline
        assert baseline_mean(tr, tr.total_kw, start, rest, w) == pytest.approx(500.0)

    def test_missing_rows_raise(self):
        w = SurgeWindow()
        ev = _Event(start_time=np.datetime64("2024-01-02T18:00", "m"),
                    restoration_time=np.datetime64("2024-01-02T20:00", "m"))
        tr = _flat_traces(days=4)  # only 1 prior day available
        with pytest.raises(ValueError):
            surge_ratios(ev, tr, w)

    def test_degenerate_baseline(self):
        w = SurgeWindow()
        ev = _Event()
        tr = _flat_traces(total=0.0)
        with pytest.raises(ValueError, match="degenerate baseline"):
            surge_ratios(ev, tr, w)

    def test_window_mean_requires_grid_alignment(self):
        w = SurgeWindow()
        tr = _flat_traces()
        with pytest.raises(ValueError, match="missing"):
            window_mean(tr, tr.total_kw, np.datetime64("2024-01-03T10:07", "m"), w)


class TestQuadrature:
    def test_simpson_polynomials(self):
        assert adaptive_simpson(lambda x: x ** 2, 0.0, 1.0, 1e-12) == pytest.approx(1 / 3, abs=1e-10)
        assert adaptive_simpson(lambda x: np.sin(x), 0.0, np.pi, 1e-12) == pytest.approx(2.0, abs=1e-9)

    def test_constant_profile_closed_form(self):
        # constant C: missing power = C * (1 - q), q the delay mass inside the window
        model = DerDelayModel(mu=5.0, sigma=1.5, tau_min=1.0)
        w = SurgeWindow(length_min=15.0)
        times = np.arange(-30.0, 60.0, 1.0)
        c = 137.5
        vals = np.full_like(times, c)
        q = model.mass(model.tau_min, w.length_min)
        got = der_missing_power(times, vals, model, w, t0_min=0.0)
        assert got == pytest.approx(c * (1.0 - q), abs=1e-8 * c)

    def test_matches_fine_trapezoid(self):
        rng = np.random.default_rng(11)
        model = DerDelayModel()
        w = SurgeWindow()
        for _ in range(5):
            times = np.arange(-30.0, 60.0, 5.0)
            vals = np.clip(rng.normal(200, 60, len(times)), 0, None)
            got = der_missing_power(times, vals, model, w, t0_min=0.0)
            tt = np.arange(model.tau_min, w.length_min + 1e-12, 1e-3)
            integrand = np.interp(tt, times, vals) * model.pdf(tt)
            oracle = float(np.interp(0.0, times, vals)) - np.trapezoid(integrand, tt)
            assert got == pytest.approx(oracle, rel=1e-6, abs=1e-6)

    def test_zero_profile(self):
        times = np.arange(-30.0, 60.0, 5.0)
        assert der_missing_power(times, np.zeros_like(times)) == 0.0

    def test_no_reconnection_in_window(self):
        model = DerDelayModel(mu=30.0, sigma=2.0, tau_min=20.0)
        times = np.arange(-30.0, 120.0, 5.0)
        vals = np.full_like(times, 80.0)
        det = der_missing_power(times, vals, model, SurgeWindow(), detail=True)
        assert det.no_reconnect_in_window
        assert det.value_kw == pytest.approx(80.0)

    def test_coverage_required(self):
        model = DerDelayModel()
        times = np.arange(0.0, 10.0, 1.0)  # too short for window + 3 sigma
        with pytest.raises(ValueError, match="cover"):
            der_missing_power(times, np.ones_like(times), model)


class TestPenetration:
    def test_rates(self):
        r = penetration(_Feeder())
        assert r.r_ev == pytest.approx(0.3)
        assert r.r_hp == pytest.approx(0.25)
        assert r.r_der == pytest.approx(0.15)

    def test_zero_meters(self):
        with pytest.raises(ValueError):
            penetration(_Feeder(n_smart_meters=0))


class TestTraces:
    def test_nonuniform_grid_rejected(self):
        ts = np.array(["2024-01-01T00:00", "2024-01-01T00:15",
                       "2024-01-01T00:45"], dtype="datetime64[m]")
        with pytest.raises(ValueError):
            EventTraces(ts, np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3))

    def test_frame_round_trip(self):
        tr = _flat_traces(days=1)
        tr2 = EventTraces.from_frame(tr.to_frame())
        assert np.array_equal(tr.timestamps, tr2.timestamps)
        assert np.array_equal(tr.total_kw, tr2.total_kw)
