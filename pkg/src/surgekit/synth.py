"""Synthetic city generator with planted surge physics.

Produces feeders, weather, outage events and per-event meter traces whose
post-restoration surge components are known exactly (recorded before noise
injection), so every downstream estimator can be validated against ground
truth.  The planted mechanisms:

EV   per-submeter Bernoulli "deferred charging" flags with a diurnal
     propensity peaked in the evening, linear duration gain saturating at
     6 h, fixed charger power.
HP   duty-cycle ramp below a comfort temperature plus an additive
     strip-heat step below 5 °C; duration gain saturates faster in deep
     cold.
DER  potential generation C_e(t) = capacity x ghi/1000 x derate; the surge
     is the missing-power integral of `metrics.der_missing_power` applied
     to the emitted profile, so recovery is exact by construction.
CLPU residual: saturating in duration, amplified away from a comfort
     temperature.

Traces embed the surge by writing the metrics-rule baseline plus the
planted increment into the post-restoration window, which makes
`metrics.surge_ratios` recover the planted components to float precision.
"""

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import metrics
from .metrics import DerDelayModel, EventTraces, SurgeComponents, SurgeWindow
from .rngtools import substream
from .weather import STEP_MIN, WeatherTrace, gen_weather

# Mon..Sun demand modulation; weekly-periodic so any 7 consecutive baseline
# days average to the same factor.
WEEKDAY_FACTORS = np.array([1.0, 1.0, 1.0, 1.0, 1.0, 0.95, 0.90])

FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class FeederTemplate:
    feeder_id: str
    n_smart_meters: int
    n_ev_submeters: int
    n_hp_submeters: int
    der_capacity_kw: float
    daily_peak_kw: float
    base_profile: np.ndarray  # 96 per-15-min feeder kW, weekday scale 1.0

    def __post_init__(self):
        if not (0 <= self.n_ev_submeters <= self.n_smart_meters):
            raise ValueError("EV submeter count outside [0, n_smart_meters]")
        if not (0 <= self.n_hp_submeters <= self.n_smart_meters):
            raise ValueError("HP submeter count outside [0, n_smart_meters]")
        if self.der_capacity_kw < 0:
            raise ValueError("DER capacity must be >= 0")


@dataclass(frozen=True)
class OutageEvent:
    event_id: str
    feeder_id: str
    start_time: np.datetime64
    duration_h: float
    n_customers_affected: int
    restoration_time: np.datetime64
    temp_c: float
    ghi_wm2: float
    pw_mm: float
    p_base_kw: float = None

    def __post_init__(self):
        if self.duration_h <= 0:
            raise ValueError("duration_h must be > 0")


@dataclass(frozen=True)
class GroundTruthParams:
    """Planted-physics knobs; all surge gains are dimensionless ratios."""

    ev_evening_peak_hours: tuple = (18.0, 21.0)
    ev_evening_propensity: float = 0.55
    ev_base_propensity: float = 0.04
    ev_midday_propensity: float = 0.12
    ev_duration_gain: float = 1.0
    ev_duration_sat_h: float = 6.0
    ev_charger_kw: float = 7.2
    hp_comfort_c: float = 15.0
    hp_strip_heat_threshold_c: float = 5.0
    hp_cold_slope: float = 0.02
    hp_strip_gain: float = 0.5
    hp_gain: float = 1.0
    hp_sat_tau_cold_h: float = 0.6
    hp_sat_tau_warm_h: float = 2.0
    der_delay_mu: float = 5.0
    der_delay_sigma: float = 1.5
    der_delay_tau_min: float = 1.0
    der_derate: float = 0.85
    clpu_amplitude: float = 0.26
    clpu_decay_const: float = 2.0
    clpu_temp_coeff: float = 0.025
    noise_sd: float = 0.05
    ev_penetration_range: tuple = (0.05, 0.50)
    hp_penetration_range: tuple = (0.05, 0.85)
    der_penetration_range: tuple = (0.05, 0.35)

    def __post_init__(self):
        for name in ("ev_duration_gain", "hp_cold_slope", "hp_strip_gain",
                     "hp_gain", "clpu_amplitude", "clpu_temp_coeff",
                     "ev_evening_propensity", "ev_base_propensity",
                     "ev_midday_propensity", "der_derate"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.der_delay_tau_min < 0:
            raise ValueError("der_delay_tau_min must be >= 0")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        for name in ("ev_penetration_range", "hp_penetration_range",
                     "der_penetration_range"):
            lo, hi = getattr(self, name)
            if not (0 <= lo <= hi <= 1):
                raise ValueError(f"{name} must satisfy 0 <= lo <= hi <= 1")

    def der_delay_model(self):
        return DerDelayModel(mu=self.der_delay_mu, sigma=self.der_delay_sigma,
                             tau_min=self.der_delay_tau_min)


DEFAULT_PARAMS = GroundTruthParams()


# ---------------------------------------------------------------------------
# planted response curves (public so tests can evaluate oracles against them)
# ---------------------------------------------------------------------------

def _circ_dist_h(hour, center):
    d = np.abs(np.asarray(hour, dtype=float) - center) % 24.0
    return np.minimum(d, 24.0 - d)


def ev_propensity(hour, params=DEFAULT_PARAMS):
    """Probability that an EV submeter holds a deferred charge at a given
    restoration hour."""
    center = 0.5 * (params.ev_evening_peak_hours[0] + params.ev_evening_peak_hours[1])
    p = (params.ev_base_propensity
         + params.ev_evening_propensity * np.exp(-0.5 * (_circ_dist_h(hour, center) / 1.4) ** 2)
         + params.ev_midday_propensity * np.exp(-0.5 * (_circ_dist_h(hour, 12.5) / 1.6) ** 2))
    return np.clip(p, 0.0, 1.0)


def ev_duration_factor(duration_h, params=DEFAULT_PARAMS):
    d = np.asarray(duration_h, dtype=float)
    return params.ev_duration_gain * np.minimum(d, params.ev_duration_sat_h) / params.ev_duration_sat_h


def hp_saturation(temp_c, duration_h, params=DEFAULT_PARAMS):
    t = np.asarray(temp_c, dtype=float)
    ramp = np.clip((t + 10.0) / 20.0, 0.0, 1.0)
    tau = params.hp_sat_tau_cold_h + (params.hp_sat_tau_warm_h - params.hp_sat_tau_cold_h) * ramp
    return 1.0 - np.exp(-np.asarray(duration_h, dtype=float) / tau)


def hp_response(temp_c, duration_h, params=DEFAULT_PARAMS):
    """Planted HP surge per unit HP penetration."""
    t = np.asarray(temp_c, dtype=float)
    level = (params.hp_cold_slope * np.maximum(0.0, params.hp_comfort_c - t)
             + params.hp_strip_gain * (t < params.hp_strip_heat_threshold_c))
    return params.hp_gain * level * hp_saturation(t, duration_h, params)


def clpu_response(temp_c, duration_h, params=DEFAULT_PARAMS):
    """Planted residual (diversity-loss) surge ratio."""
    t = np.asarray(temp_c, dtype=float)
    sat = 1.0 - np.exp(-np.asarray(duration_h, dtype=float) / params.clpu_decay_const)
    return params.clpu_amplitude * sat * (1.0 + params.clpu_temp_coeff * np.abs(t - 18.0))


# ---------------------------------------------------------------------------
# baseline demand shapes (per meter, kW)
# ---------------------------------------------------------------------------

def _house_shape(hour):
    h = np.asarray(hour, dtype=float)
    return (0.55
            + 0.18 * np.exp(-0.5 * (_circ_dist_h(h, 8.0) / 2.0) ** 2)
            + 0.30 * np.exp(-0.5 * (_circ_dist_h(h, 19.0) / 2.2) ** 2))


def _ev_base_shape(hour):
    # overnight scheduled charging hump per EV submeter
    h = np.asarray(hour, dtype=float)
    return 0.05 + 0.40 * np.exp(-0.5 * (_circ_dist_h(h, 2.0) / 3.0) ** 2)


def _hp_base_shape(hour):
    h = np.asarray(hour, dtype=float)
    return 0.30 + 0.10 * np.exp(-0.5 * (_circ_dist_h(h, 7.0) / 2.5) ** 2)


def _base_rows(feeder, hour, wd_factor):
    """Per-channel baseline kW rows; identical expression used by the trace
    builder and the analytic baseline so recovery is bit-exact."""
    ev = (feeder.n_ev_submeters * _ev_base_shape(hour)) * wd_factor
    hp = (feeder.n_hp_submeters * _hp_base_shape(hour)) * wd_factor
    house = (feeder.n_smart_meters * _house_shape(hour)) * wd_factor
    total = house + ev + hp
    return total, ev, hp


def _baseline_lookbacks(event, window):
    """Day offsets k and weekday indices of the metrics baseline windows."""
    dur_min = (np.datetime64(event.restoration_time, "m")
               - np.datetime64(event.start_time, "m")) / np.timedelta64(1, "m")
    k0 = max(1, math.ceil((dur_min + window.length_min) / metrics.MINUTES_PER_DAY))
    rest_dow = pd.Timestamp(event.restoration_time).dayofweek
    ks = np.arange(k0, k0 + window.baseline_days)
    dows = (rest_dow - ks) % 7
    return ks, dows


def _analytic_baselines(event, feeder, window):
    """Total/EV/HP baseline means exactly as metrics.baseline_mean sees them."""
    h = pd.Timestamp(event.restoration_time)
    hour = h.hour + h.minute / 60.0
    _, dows = _baseline_lookbacks(event, window)
    tot, ev, hp = _base_rows(feeder, hour, WEEKDAY_FACTORS[dows])
    return float(np.mean(tot)), float(np.mean(ev)), float(np.mean(hp))


# ---------------------------------------------------------------------------
# planting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlantedSurge:
    planted: SurgeComponents      # pre-noise ground truth
    observed: SurgeComponents     # embedded in the emitted traces
    p_base_tot_kw: float
    p_base_ev_kw: float
    p_base_hp_kw: float
    kappa_der: float              # multiplicative DER profile noise


def _der_profile_kw(feeder, ghi, params, kappa):
    return (feeder.der_capacity_kw * ghi / 1000.0 * params.der_derate) * (1.0 + kappa)


def _planted_der_ratio(event, feeder, weather, params, kappa, p_base, window):
    """Missing-power surge ratio of the emitted DER profile around the
    restoration window (slice wide enough for the delay tail)."""
    rest = np.datetime64(event.restoration_time, "m")
    need = window.length_min + 3.0 * params.der_delay_sigma
    n_after = int(math.ceil(need / STEP_MIN)) + 1
    t_lo = rest - np.timedelta64(STEP_MIN, "m")
    t_hi = rest + np.timedelta64(n_after * STEP_MIN, "m")
    if t_lo < weather.start or t_hi > weather.end:
        raise ValueError(f"event {event.event_id} outside weather coverage")
    ts, _, ghi, _ = weather.slice(t_lo, t_hi)
    prof = _der_profile_kw(feeder, ghi, params, kappa)
    rel = (ts - rest) / np.timedelta64(1, "m")
    missing = metrics.der_missing_power(rel, prof, params.der_delay_model(),
                                        window, t0_min=0.0)
    return missing / p_base


def plant_components(event, feeder, weather, params, seed, window=None):
    """Planted and observed (noise-injected) surge components for one event.

    Per-event substreams keyed by event_id make the result independent of
    generation order and stable under counterfactual edits of duration or
    restoration time on the same event_id.
    """
    window = window or SurgeWindow()
    p_base, p_base_ev, p_base_hp = _analytic_baselines(event, feeder, window)
    ts = pd.Timestamp(event.restoration_time)
    hour = ts.hour + ts.minute / 60.0

    u = substream(seed, "ev", event.event_id).random(feeder.n_ev_submeters)
    n_deferred = int(np.sum(u < float(ev_propensity(hour, params))))
    s_ev = n_deferred * params.ev_charger_kw * float(ev_duration_factor(event.duration_h, params)) / p_base

    r_hp = feeder.n_hp_submeters / feeder.n_smart_meters
    s_hp = r_hp * float(hp_response(event.temp_c, event.duration_h, params))
    s_oth = float(clpu_response(event.temp_c, event.duration_h, params))

    noise = substream(seed, "noise", event.event_id).normal(0.0, 1.0, 4)
    eps = params.noise_sd * noise[:3]
    kappa = max(params.noise_sd * noise[3], -0.9)

    s_der = _planted_der_ratio(event, feeder, weather, params, 0.0, p_base, window)
    s_der_obs = _planted_der_ratio(event, feeder, weather, params, kappa, p_base, window)

    planted = SurgeComponents(s_tot=s_ev + s_hp + s_der + s_oth,
                              s_ev=s_ev, s_hp=s_hp, s_der=s_der, s_oth=s_oth)
    obs_ev, obs_hp, obs_oth = s_ev + eps[0], s_hp + eps[1], s_oth + eps[2]
    observed = SurgeComponents(s_tot=obs_ev + obs_hp + s_der_obs + obs_oth,
                               s_ev=obs_ev, s_hp=obs_hp, s_der=s_der_obs, s_oth=obs_oth)
    return PlantedSurge(planted=planted, observed=observed,
                        p_base_tot_kw=p_base, p_base_ev_kw=p_base_ev,
                        p_base_hp_kw=p_base_hp, kappa_der=kappa)


def build_event_traces(event, feeder, weather, params, seed, window=None):
    """Emit the 15-min meter traces for one event.

    Covers the whole baseline lookback range through a few hours past
    restoration.  Demand channels are zero during the outage; the first
    post-restoration window holds baseline + planted increment; a decaying
    tail follows (cosmetic, outside the assessment window).
    """
    window = window or SurgeWindow()
    plan = plant_components(event, feeder, weather, params, seed, window)
    rest = np.datetime64(event.restoration_time, "m")
    start = np.datetime64(event.start_time, "m")
    ks, _ = _baseline_lookbacks(event, window)
    t_lo = rest - np.timedelta64(int(ks[-1] * metrics.MINUTES_PER_DAY + 120), "m")
    t_hi = rest + np.timedelta64(360, "m")
    if t_lo < weather.start or t_hi > weather.end:
        raise ValueError(f"event {event.event_id} outside weather coverage")

    ts, _, ghi, _ = weather.slice(t_lo, t_hi)
    idx = pd.DatetimeIndex(ts)
    hours = idx.hour.to_numpy() + idx.minute.to_numpy() / 60.0
    wd = WEEKDAY_FACTORS[idx.dayofweek.to_numpy()]
    total, ev, hp = _base_rows(feeder, hours, wd)
    der = _der_profile_kw(feeder, ghi, params, plan.kappa_der)

    rel = (ts - rest) / np.timedelta64(1, "m")
    outage = (rel >= -(rest - start) / np.timedelta64(1, "m") - 1e-9) & (rel < -1e-9)
    total[outage] = 0.0
    ev[outage] = 0.0
    hp[outage] = 0.0

    obs = plan.observed
    d_ev = obs.s_ev * plan.p_base_tot_kw
    d_hp = obs.s_hp * plan.p_base_tot_kw
    d_tot = (obs.s_ev + obs.s_hp + obs.s_oth + obs.s_der) * plan.p_base_tot_kw
    in_window = (rel >= -1e-9) & (rel < window.length_min - 1e-9)
    total[in_window] = plan.p_base_tot_kw + d_tot
    ev[in_window] = plan.p_base_ev_kw + d_ev
    hp[in_window] = plan.p_base_hp_kw + d_hp

    tail = rel >= window.length_min - 1e-9
    decay = np.exp(-(rel[tail] - window.length_min) / 60.0)
    total[tail] += d_tot * decay
    ev[tail] += d_ev * decay
    hp[tail] += d_hp * decay

    return EventTraces(timestamps=ts, total_kw=total, ev_kw=ev, hp_kw=hp, der_kw=der)


def plant_surge(event, feeder, weather, params, seed, window=None):
    """Planted (pre-noise) components plus the emitted traces."""
    plan = plant_components(event, feeder, weather, params, seed, window)
    traces = build_event_traces(event, feeder, weather, params, seed, window)
    return plan.planted, traces


# ---------------------------------------------------------------------------
# city and outage sampling
# ---------------------------------------------------------------------------

PROFILE_SLOTS = 96


def gen_feeders(n_feeders, params, seed):
    feeders = []
    slot_hours = np.arange(PROFILE_SLOTS) * (STEP_MIN / 60.0)
    for i in range(n_feeders):
        rng = substream(seed, "feeder", i)
        n_sm = int(rng.integers(600, 2400))
        r_ev = rng.uniform(*params.ev_penetration_range)
        r_hp = rng.uniform(*params.hp_penetration_range)
        r_der = rng.uniform(*params.der_penetration_range)
        n_ev = int(round(r_ev * n_sm))
        n_hp = int(round(r_hp * n_sm))
        fid = f"F{i:04d}"
        feeder = FeederTemplate(fid, n_sm, n_ev, n_hp, 0.0, 1.0,
                                base_profile=np.zeros(PROFILE_SLOTS))
        profile = _base_rows(feeder, slot_hours, 1.0)[0]
        peak = float(np.max(profile))
        feeders.append(dataclasses.replace(
            feeder, der_capacity_kw=r_der * peak, daily_peak_kw=peak,
            base_profile=profile))
    return feeders


@dataclass(frozen=True)
class OutageWeighting:
    """Optional diurnal/seasonal weights for outage start times."""

    hour_weights: np.ndarray = None    # length 24
    month_weights: np.ndarray = None   # length 12, Jan..Dec


def sample_outages(n, feeders, weather, seed, weighting=None,
                   duration_mixture=((1.0, 1.5, 0.9),),
                   margin_lo_days=10, margin_hi_days=3):
    """Draw outage events over the weather horizon.

    duration_mixture: (weight, median_h, log_sd) components of a log-normal
    mixture; durations snap to the 15-min grid and clip to [0.25, 48] h.
    """
    if n < 1:
        raise ValueError("n >= 1 required")
    if not feeders:
        raise ValueError("feeder list is empty")
    rng = substream(seed, "outage")
    n_slots = len(weather.timestamps)
    lo = margin_lo_days * 24 * 60 // STEP_MIN
    hi = n_slots - margin_hi_days * 24 * 60 // STEP_MIN
    if lo >= hi:
        raise ValueError("weather horizon too short for outage sampling margins")

    if weighting is not None and (weighting.hour_weights is not None
                                  or weighting.month_weights is not None):
        idx = pd.DatetimeIndex(weather.timestamps[lo:hi])
        p = np.ones(hi - lo)
        if weighting.hour_weights is not None:
            p *= np.asarray(weighting.hour_weights, dtype=float)[idx.hour.to_numpy()]
        if weighting.month_weights is not None:
            p *= np.asarray(weighting.month_weights, dtype=float)[idx.month.to_numpy() - 1]
        slots = lo + rng.choice(hi - lo, size=n, p=p / p.sum())
    else:
        slots = rng.integers(lo, hi, size=n)

    mix = np.asarray([list(c) for c in duration_mixture], dtype=float)
    comp = rng.choice(len(mix), size=n, p=mix[:, 0] / mix[:, 0].sum())
    dur_h = np.exp(rng.normal(np.log(mix[comp, 1]), mix[comp, 2]))
    dur_slots = np.maximum(1, np.round(np.clip(dur_h, 0.25, 48.0) * 60.0 / STEP_MIN)).astype(int)

    feeder_idx = rng.integers(0, len(feeders), size=n)
    cust_frac = rng.uniform(0.92, 1.0, size=n)

    events = []
    for i in range(n):
        f = feeders[feeder_idx[i]]
        start = weather.timestamps[slots[i]]
        rest = start + np.timedelta64(int(dur_slots[i]) * STEP_MIN, "m")
        temp, ghi, pw = weather.at(rest)
        events.append(OutageEvent(
            event_id=f"E{i:06d}",
            feeder_id=f.feeder_id,
            start_time=start,
            duration_h=dur_slots[i] * STEP_MIN / 60.0,
            n_customers_affected=int(cust_frac[i] * f.n_smart_meters),
            restoration_time=rest,
            temp_c=temp, ghi_wm2=ghi, pw_mm=pw))
    return events


# ---------------------------------------------------------------------------
# dataset container and disk layout
# ---------------------------------------------------------------------------

@dataclass
class SyntheticDataset:
    feeders: list
    weather: WeatherTrace
    events: list
    params: GroundTruthParams
    seed: int
    ground_truth: pd.DataFrame
    traces_dir: Path = None   # set when loaded from disk

    def __post_init__(self):
        self.feeders_by_id = {f.feeder_id: f for f in self.feeders}
        self.events_by_id = {e.event_id: e for e in self.events}

    def traces(self, event_id):
        if self.traces_dir is not None:
            df = pd.read_csv(self.traces_dir / f"{event_id}.csv",
                             parse_dates=["timestamp"])
            return EventTraces.from_frame(df)
        ev = self.events_by_id[event_id]
        return build_event_traces(ev, self.feeders_by_id[ev.feeder_id],
                                  self.weather, self.params, self.seed)

    def surge_table(self, window=None):
        return metrics.compute_surge_table(
            self.events, self.feeders_by_id, self.traces,
            window=window, der_model=self.params.der_delay_model())

    def write(self, out_dir):
        out = Path(out_dir)
        (out / "traces").mkdir(parents=True, exist_ok=True)
        events_df = pd.DataFrame([{
            "event_id": e.event_id, "feeder_id": e.feeder_id,
            "start_time": pd.Timestamp(e.start_time).isoformat(),
            "duration_h": e.duration_h,
            "n_customers_affected": e.n_customers_affected,
            "restoration_time": pd.Timestamp(e.restoration_time).isoformat(),
            "temp_c": e.temp_c, "ghi_wm2": e.ghi_wm2, "pw_mm": e.pw_mm,
        } for e in self.events])
        events_df.to_csv(out / "events.csv", index=False, float_format=FLOAT_FMT,
                         lineterminator="\n")
        feeders_df = pd.DataFrame([{
            "feeder_id": f.feeder_id, "n_smart_meters": f.n_smart_meters,
            "n_ev_submeters": f.n_ev_submeters, "n_hp_submeters": f.n_hp_submeters,
            "der_capacity_kw": f.der_capacity_kw, "daily_peak_kw": f.daily_peak_kw,
            "base_profile": json.dumps([float(FLOAT_FMT % v) for v in f.base_profile]),
        } for f in self.feeders])
        feeders_df.to_csv(out / "feeders.csv", index=False, float_format=FLOAT_FMT,
                          lineterminator="\n")
        wdf = self.weather.to_frame()
        wdf["timestamp"] = wdf["timestamp"].map(lambda t: pd.Timestamp(t).isoformat())
        wdf.to_csv(out / "weather.csv", index=False, float_format=FLOAT_FMT,
                   lineterminator="\n")
        self.ground_truth.to_csv(out / "ground_truth.csv", index=False,
                                 float_format=FLOAT_FMT, lineterminator="\n")
        for e in self.events:
            tdf = self.traces(e.event_id).to_frame()
            tdf["timestamp"] = tdf["timestamp"].map(lambda t: pd.Timestamp(t).isoformat())
            tdf.to_csv(out / "traces" / f"{e.event_id}.csv", index=False,
                       float_format=FLOAT_FMT, lineterminator="\n")
        meta = {"seed": self.seed, "params": dataclasses.asdict(self.params)}
        (out / "params.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")

    @classmethod
    def load(cls, in_dir):
        src = Path(in_dir)
        meta = json.loads((src / "params.json").read_text(encoding="utf-8"))
        params_raw = {k: tuple(v) if isinstance(v, list) else v
                      for k, v in meta["params"].items()}
        params = GroundTruthParams(**params_raw)
        feeders = []
        for _, row in pd.read_csv(src / "feeders.csv").iterrows():
            feeders.append(FeederTemplate(
                feeder_id=row["feeder_id"],
                n_smart_meters=int(row["n_smart_meters"]),
                n_ev_submeters=int(row["n_ev_submeters"]),
                n_hp_submeters=int(row["n_hp_submeters"]),
                der_capacity_kw=float(row["der_capacity_kw"]),
                daily_peak_kw=float(row["daily_peak_kw"]),
                base_profile=np.asarray(json.loads(row["base_profile"]))))
        weather = WeatherTrace.from_frame(
            pd.read_csv(src / "weather.csv", parse_dates=["timestamp"]))
        events = []
        for _, row in pd.read_csv(src / "events.csv").iterrows():
            events.append(OutageEvent(
                event_id=row["event_id"], feeder_id=row["feeder_id"],
                start_time=np.datetime64(row["start_time"], "m"),
                duration_h=float(row["duration_h"]),
                n_customers_affected=int(row["n_customers_affected"]),
                restoration_time=np.datetime64(row["restoration_time"], "m"),
                temp_c=float(row["temp_c"]), ghi_wm2=float(row["ghi_wm2"]),
                pw_mm=float(row["pw_mm"])))
        gt = pd.read_csv(src / "ground_truth.csv")
        return cls(feeders=feeders, weather=weather, events=events,
                   params=params, seed=meta["seed"], ground_truth=gt,
                   traces_dir=src / "traces")


def gen_city(n_feeders, n_events, params=None, seed=0, weather_days=420,
             weather_start="2023-01-01T00:00", weighting=None,
             duration_mixture=((1.0, 1.5, 0.9),)):
    """Generate the full synthetic dataset (feeders, weather, events,
    planted ground truth); traces are built lazily per event."""
    if n_feeders < 1 or n_events < 1:
        raise ValueError("n_feeders and n_events must be >= 1")
    params = params or DEFAULT_PARAMS
    weather = gen_weather(seed, start=weather_start, n_days=weather_days)
    feeders = gen_feeders(n_feeders, params, seed)
    events = sample_outages(n_events, feeders, weather, seed,
                            weighting=weighting, duration_mixture=duration_mixture)
    by_id = {f.feeder_id: f for f in feeders}
    rows = []
    for e in events:
        plan = plant_components(e, by_id[e.feeder_id], weather, params, seed)
        p = plan.planted
        rows.append({"event_id": e.event_id, "s_tot": p.s_tot, "s_ev": p.s_ev,
                     "s_hp": p.s_hp, "s_der": p.s_der, "s_oth": p.s_oth,
                     "p_base_kw": plan.p_base_tot_kw})
    return SyntheticDataset(feeders=feeders, weather=weather, events=events,
                            params=params, seed=seed,
                            ground_truth=pd.DataFrame(rows))
