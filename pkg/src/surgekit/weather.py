"""Synthetic weather on a 15-min grid: temperature, GHI, precipitable water.

A fixed-latitude sinusoidal daylight model drives irradiance; temperature is
seasonal + diurnal + an AR(1) daily anomaly; precipitable water tracks
temperature.  Everything is deterministic given (seed, start, n_days).
"""

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .rngtools import substream

STEP_MIN = 15
STEPS_PER_DAY = 24 * 60 // STEP_MIN


@dataclass(frozen=True)
class DaylightModel:
    """Seasonal sunrise/sunset and clear-sky irradiance envelope."""

    day_length_mean_h: float = 12.0
    day_length_amp_h: float = 3.0
    equinox_doy: float = 80.0
    peak_ghi_mean: float = 850.0
    peak_ghi_amp: float = 250.0

    def day_length(self, doy):
        phase = 2.0 * math.pi * (np.asarray(doy, dtype=float) - self.equinox_doy) / 365.25
        return self.day_length_mean_h + self.day_length_amp_h * np.sin(phase)

    def sunrise(self, doy):
        return 12.0 - 0.5 * self.day_length(doy)

    def sunset(self, doy):
        return 12.0 + 0.5 * self.day_length(doy)

    def clear_ghi(self, doy, hour):
        """Clear-sky GHI (W/m²) at fractional hour of day."""
        doy = np.asarray(doy, dtype=float)
        hour = np.asarray(hour, dtype=float)
        length = self.day_length(doy)
        rise = 12.0 - 0.5 * length
        phase = 2.0 * math.pi * (doy - self.equinox_doy) / 365.25
        peak = self.peak_ghi_mean + self.peak_ghi_amp * np.sin(phase)
        x = (hour - rise) / length
        elev = np.sin(np.pi * np.clip(x, 0.0, 1.0))
        elev = np.where((x <= 0.0) | (x >= 1.0), 0.0, elev)
        return peak * elev


DEFAULT_DAYLIGHT = DaylightModel()


@dataclass
class WeatherTrace:
    timestamps: np.ndarray     # datetime64[m], 15-min grid
    temp_c: np.ndarray
    ghi_wm2: np.ndarray
    pw_mm: np.ndarray

    @property
    def start(self):
        return self.timestamps[0]

    @property
    def end(self):
        return self.timestamps[-1]

    def index_of(self, t):
        """Row index of an on-grid timestamp; error if off-grid/out of range."""
        off = (np.datetime64(t, "m") - self.timestamps[0]) / np.timedelta64(STEP_MIN, "m")
        i = int(round(float(off)))
        if abs(float(off) - i) > 1e-9 or i < 0 or i >= len(self.timestamps):
            raise ValueError(f"timestamp {t} not on the weather grid")
        return i

    def at(self, t):
        """(temp_c, ghi_wm2, pw_mm) at an on-grid timestamp."""
        i = self.index_of(t)
        return float(self.temp_c[i]), float(self.ghi_wm2[i]), float(self.pw_mm[i])

    def slice(self, t_lo, t_hi):
        i0, i1 = self.index_of(t_lo), self.index_of(t_hi)
        return (self.timestamps[i0:i1 + 1], self.temp_c[i0:i1 + 1],
                self.ghi_wm2[i0:i1 + 1], self.pw_mm[i0:i1 + 1])

    def to_frame(self):
        return pd.DataFrame({
            "timestamp": self.timestamps,
            "temp_c": self.temp_c,
            "ghi_wm2": self.ghi_wm2,
            "pw_mm": self.pw_mm,
        })

    @classmethod
    def from_frame(cls, df):
        return cls(
            timestamps=df["timestamp"].to_numpy(dtype="datetime64[m]"),
            temp_c=df["temp_c"].to_numpy(dtype=float),
            ghi_wm2=df["ghi_wm2"].to_numpy(dtype=float),
            pw_mm=df["pw_mm"].to_numpy(dtype=float),
        )


def _day_anomaly(rng, n_days, rho, sd):
    eps = rng.normal(0.0, sd, n_days)
    out = np.empty(n_days)
    acc = eps[0] / math.sqrt(1.0 - rho * rho)  # start at stationary scale
    for i in range(n_days):
        acc = rho * acc + eps[i]
        out[i] = acc
    return out


def gen_weather(seed, start="2023-01-01T00:00", n_days=420,
                daylight=DEFAULT_DAYLIGHT):
    """Generate a WeatherTrace.

    Daily anomalies are linearly interpolated between noon anchors so the
    temperature path stays continuous (|step change| well under 5 °C).
    Cloudiness is a per-day clearness factor in [0.25, 1].
    """
    if n_days < 1:
        raise ValueError("n_days must be >= 1")
    n = n_days * STEPS_PER_DAY
    t0 = np.datetime64(start, "m")
    ts = t0 + np.arange(n) * np.timedelta64(STEP_MIN, "m")

    doy0 = (t0.astype("datetime64[D]") - t0.astype("datetime64[Y]")) / np.timedelta64(1, "D")
    step_h = STEP_MIN / 60.0
    hours = (np.arange(n) * step_h) % 24.0
    doy = float(doy0) + np.arange(n) * step_h / 24.0 + 1.0

    season = 11.0 - 14.0 * np.cos(2.0 * math.pi * (doy - 15.0) / 365.25)
    diurnal = -4.0 * np.cos(2.0 * math.pi * (hours - 15.0) / 24.0)

    anom_day = _day_anomaly(substream(seed, "weather", "temp"), n_days + 1, rho=0.75, sd=3.2)
    # anomaly anchored at local noon of each day, linear in between
    anchor = np.arange(n_days + 1) * STEPS_PER_DAY + STEPS_PER_DAY // 2
    anom = np.interp(np.arange(n), anchor, anom_day)
    temp = season + diurnal + anom

    x = _day_anomaly(substream(seed, "weather", "cloud"), n_days, rho=0.6, sd=0.8)
    clearness = 0.25 + 0.75 / (1.0 + np.exp(-(1.2 * x + 0.8)))
    k = np.repeat(clearness, STEPS_PER_DAY)[:n]
    ghi = daylight.clear_ghi(doy, hours) * k
    ghi = np.clip(ghi, 0.0, 1400.0)

    w = _day_anomaly(substream(seed, "weather", "pw"), n_days, rho=0.7, sd=2.0)
    day_mean_temp = season.reshape(n_days, STEPS_PER_DAY).mean(axis=1)
    pw_day = np.maximum(0.5, 1.5 + 0.5 * np.maximum(day_mean_temp, -2.0) + w)
    pw = np.repeat(pw_day, STEPS_PER_DAY)[:n]

    return WeatherTrace(timestamps=ts, temp_c=temp, ghi_wm2=ghi, pw_mm=pw)
