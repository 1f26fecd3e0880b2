"""Per-event surge metrics.

Computes, for one outage event, the incremental surge ratios of each asset
class (EV, heat pump, DER, residual) relative to the event's total baseline
demand, plus the penetration rates used to normalize across feeders.  The
DER term is the generation missing from the first post-restoration window
because inverters reconnect with a randomized delay.
"""

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import pandas as pd
from scipy.special import erf

MINUTES_PER_DAY = 1440.0


@dataclass(frozen=True)
class SurgeComponents:
    """Incremental surge ratios; s_oth is defined residually so the four
    components always sum to s_tot."""

    s_tot: float
    s_ev: float
    s_hp: float
    s_der: float
    s_oth: float

    def as_tuple(self):
        return (self.s_tot, self.s_ev, self.s_hp, self.s_der, self.s_oth)


@dataclass(frozen=True)
class PenetrationRates:
    r_ev: float
    r_hp: float
    r_der: float


@dataclass(frozen=True)
class SurgeWindow:
    """Post-restoration assessment window and baseline rule.

    The baseline for each channel is the mean demand over the same
    clock-time interval on the ``baseline_days`` days preceding the outage
    start (skipping days that would overlap the outage itself).
    """

    length_min: float = 15.0
    baseline_days: int = 7

    def __post_init__(self):
        if self.length_min <= 0:
            raise ValueError("window length must be > 0")
        if self.baseline_days < 1:
            raise ValueError("baseline_days must be >= 1")


def _norm_cdf(x):
    return 0.5 * (1.0 + erf(np.asarray(x, dtype=float) / math.sqrt(2.0)))


@dataclass(frozen=True)
class DerDelayModel:
    """Inverter reconnection delay: normal(mu, sigma) truncated to
    [tau_min, inf).  All parameters in minutes."""

    mu: float = 5.0
    sigma: float = 1.5
    tau_min: float = 1.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if self.tau_min < 0:
            raise ValueError("tau_min must be >= 0")

    @property
    def tau_max(self):
        return math.inf

    @cached_property
    def _tail_mass(self):
        # hot inside the quadrature loop; cache works despite frozen=True
        # because cached_property writes straight into __dict__
        return 1.0 - float(_norm_cdf((self.tau_min - self.mu) / self.sigma))

    def pdf(self, tau):
        tau = np.asarray(tau, dtype=float)
        z = (tau - self.mu) / self.sigma
        dens = np.exp(-0.5 * z * z) / (self.sigma * math.sqrt(2.0 * math.pi))
        dens = dens / self._tail_mass
        return np.where(tau >= self.tau_min, dens, 0.0)

    def mass(self, a, b):
        """P(a <= tau <= b), analytic."""
        a = max(a, self.tau_min)
        if b <= a:
            return 0.0
        hi = float(_norm_cdf((b - self.mu) / self.sigma))
        lo = float(_norm_cdf((a - self.mu) / self.sigma))
        return (hi - lo) / self._tail_mass


DEFAULT_DER_DELAY = DerDelayModel()


# ---------------------------------------------------------------------------
# quadrature engine
# ---------------------------------------------------------------------------

def adaptive_simpson(f, a, b, abs_tol, max_intervals=2 ** 16):
    """Adaptive Simpson integral of a scalar-vectorized callable.

    Classic interval-halving with the 1/15 Richardson error estimate; the
    subdivision budget caps pathological integrands.
    """
    if b <= a:
        return 0.0

    def simpson(lo, hi, flo, fmid, fhi):
        return (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi)

    m0 = 0.5 * (a + b)
    fa, fm, fb = (float(v) for v in f(np.array([a, m0, b])))
    stack = [(a, b, fa, fm, fb, simpson(a, b, fa, fm, fb), abs_tol)]
    total = 0.0
    budget = max_intervals
    while stack:
        lo, hi, flo, fmid, fhi, whole, tol = stack.pop()
        lm = 0.5 * (lo + 0.5 * (lo + hi))
        rm = 0.5 * (0.5 * (lo + hi) + hi)
        flm, frm = (float(v) for v in f(np.array([lm, rm])))
        mid = 0.5 * (lo + hi)
        left = simpson(lo, mid, flo, flm, fmid)
        right = simpson(mid, hi, fmid, frm, fhi)
        err = left + right - whole
        if abs(err) <= 15.0 * tol or budget <= 0:
            total += left + right + err / 15.0
        else:
            budget -= 2
            stack.append((lo, mid, flo, flm, fmid, left, tol / 2.0))
            stack.append((mid, hi, fmid, frm, fhi, right, tol / 2.0))
    return total


@dataclass(frozen=True)
class DerMissingDetail:
    value_kw: float
    gen_at_restoration_kw: float
    reconnect_integral_kw: float
    no_reconnect_in_window: bool


def der_missing_power(gen_times_min, gen_kw, model=DEFAULT_DER_DELAY,
                      window=None, t0_min=0.0, detail=False):
    """Generation missing from the post-restoration window.

    Evaluates ``C(t0) - integral over [tau_min, dT] of C(t0 + tau) p(tau)``
    where C is the piecewise-linear interpolation of the sampled generation
    profile, p the reconnection-delay density, and dT the window length.

    Parameters
    ----------
    gen_times_min, gen_kw : array-like
        Sampled potential-generation profile; times in minutes, increasing.
    model : delay density with .pdf, .tau_min, .tau_max (minutes).
    window : SurgeWindow, default 15 min.
    t0_min : restoration instant on the gen_times axis.
    detail : if True return a DerMissingDetail instead of a float.
    """
    window = window or SurgeWindow()
    times = np.asarray(gen_times_min, dtype=float)
    vals = np.asarray(gen_kw, dtype=float)
    if times.ndim != 1 or times.shape != vals.shape or times.size < 2:
        raise ValueError("generation profile needs matching 1-d times/values")
    if np.any(np.diff(times) <= 0):
        raise ValueError("generation profile times must be strictly increasing")
    dt = window.length_min
    sigma = getattr(model, "sigma", 0.0)
    need_hi = t0_min + dt + 3.0 * sigma
    if times[0] > t0_min or times[-1] < need_hi:
        raise ValueError(
            f"generation profile must cover [{t0_min}, {need_hi}] min, "
            f"got [{times[0]}, {times[-1]}]")

    c0 = float(np.interp(t0_min, times, vals))
    tau_lo = model.tau_min
    tau_hi = min(dt, model.tau_max)
    if tau_lo >= tau_hi:
        # no reconnection mass inside the window: the full generation is missing
        res = DerMissingDetail(c0, c0, 0.0, True)
        return res if detail else res.value_kw

    def integrand(tau):
        return np.interp(t0_min + np.asarray(tau, dtype=float), times, vals) * model.pdf(tau)

    # split at profile knots so each piece is smooth
    knots = times[(times > t0_min + tau_lo) & (times < t0_min + tau_hi)] - t0_min
    edges = np.concatenate(([tau_lo], knots, [tau_hi]))
    scale = max(1.0, float(np.max(np.abs(
        vals[(times >= t0_min) & (times <= t0_min + dt + 3.0 * sigma)]), initial=0.0)))
    abs_tol = 1e-8 * scale
    integral = 0.0
    span = tau_hi - tau_lo
    for lo, hi in zip(edges[:-1], edges[1:]):
        integral += adaptive_simpson(integrand, lo, hi, abs_tol * (hi - lo) / span)
    res = DerMissingDetail(c0 - integral, c0, integral, False)
    return res if detail else res.value_kw


# ---------------------------------------------------------------------------
# traces and ratios
# ---------------------------------------------------------------------------

@dataclass
class EventTraces:
    """15-min (or finer) meter traces around one event.

    ``der_kw`` holds the potential DER generation profile C_e(t), i.e. what
    the installed capacity would produce given irradiance, independent of
    reconnection state.
    """

    timestamps: np.ndarray        # datetime64[m], uniform grid
    total_kw: np.ndarray
    ev_kw: np.ndarray
    hp_kw: np.ndarray
    der_kw: np.ndarray

    def __post_init__(self):
        n = len(self.timestamps)
        for name in ("total_kw", "ev_kw", "hp_kw", "der_kw"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"trace channel {name} length mismatch")
        if n >= 2:
            steps = np.diff(self.timestamps).astype("timedelta64[m]").astype(int)
            if np.any(steps != steps[0]) or steps[0] <= 0:
                raise ValueError("trace timestamps must form a uniform increasing grid")

    @property
    def step_min(self):
        return int((self.timestamps[1] - self.timestamps[0]) // np.timedelta64(1, "m"))

    def minutes_since(self, t):
        return (self.timestamps - np.datetime64(t, "m")) / np.timedelta64(1, "m")

    def to_frame(self):
        return pd.DataFrame({
            "timestamp": self.timestamps,
            "total_kw": self.total_kw,
            "ev_kw": self.ev_kw,
            "hp_kw": self.hp_kw,
            "der_kw": self.der_kw,
        })

    @classmethod
    def from_frame(cls, df):
        return cls(
            timestamps=df["timestamp"].to_numpy(dtype="datetime64[m]"),
            total_kw=df["total_kw"].to_numpy(dtype=float),
            ev_kw=df["ev_kw"].to_numpy(dtype=float),
            hp_kw=df["hp_kw"].to_numpy(dtype=float),
            der_kw=df["der_kw"].to_numpy(dtype=float),
        )


def _window_rows(traces, t_start, window):
    step = traces.step_min
    n_rows = window.length_min / step
    if abs(n_rows - round(n_rows)) > 1e-9 or round(n_rows) < 1:
        raise ValueError("window length must be a positive multiple of the trace step")
    n_rows = int(round(n_rows))
    offs = traces.minutes_since(t_start)
    i0 = np.searchsorted(offs, -1e-9)
    if i0 >= len(offs) or abs(offs[i0]) > 1e-9:
        raise ValueError(f"trace rows missing at {t_start}")
    if i0 + n_rows > len(offs):
        raise ValueError(f"trace does not cover the full window starting {t_start}")
    return i0, n_rows


def window_mean(traces, values, t_start, window):
    """Mean of a channel over the window beginning at ``t_start``."""
    i0, n_rows = _window_rows(traces, t_start, window)
    return float(np.mean(values[i0:i0 + n_rows]))


def baseline_mean(traces, values, start_time, restoration_time, window):
    """Baseline: mean demand over the restoration-clock window on the
    ``window.baseline_days`` days that precede the outage start."""
    start = np.datetime64(start_time, "m")
    rest = np.datetime64(restoration_time, "m")
    dur_min = (rest - start) / np.timedelta64(1, "m")
    # first lookback day whose interval ends at or before the outage start
    k0 = max(1, math.ceil((dur_min + window.length_min) / MINUTES_PER_DAY))
    out = []
    for k in range(k0, k0 + window.baseline_days):
        t = rest - np.timedelta64(int(k * MINUTES_PER_DAY), "m")
        out.append(window_mean(traces, values, t, window))
    return float(np.mean(out))


def surge_ratios(event, traces, window=None, der_model=DEFAULT_DER_DELAY):
    """Incremental surge ratios for one event.

    s_i = (P_i_res - P_i_base) / P_tot_base for i in {tot, ev, hp}; the DER
    component comes from the missing-generation integral; s_oth closes the
    decomposition identity.  ``event`` needs .start_time and
    .restoration_time attributes.
    """
    window = window or SurgeWindow()
    start, rest = event.start_time, event.restoration_time
    p_base_tot = baseline_mean(traces, traces.total_kw, start, rest, window)
    if p_base_tot <= 0:
        raise ValueError("degenerate baseline: total baseline power must be > 0")

    def channel_surge(values):
        res = window_mean(traces, values, rest, window)
        base = baseline_mean(traces, values, start, rest, window)
        return (res - base) / p_base_tot

    s_tot = channel_surge(traces.total_kw)
    s_ev = channel_surge(traces.ev_kw)
    s_hp = channel_surge(traces.hp_kw)
    missing = der_missing_power(
        traces.minutes_since(rest), traces.der_kw, der_model, window, t0_min=0.0)
    s_der = missing / p_base_tot
    s_oth = s_tot - s_ev - s_hp - s_der
    return SurgeComponents(s_tot=s_tot, s_ev=s_ev, s_hp=s_hp, s_der=s_der, s_oth=s_oth)


def penetration(feeder):
    """Penetration rates of one feeder: submeter fractions for EV/HP and
    installed DER capacity over daily peak load."""
    if feeder.n_smart_meters <= 0:
        raise ValueError("feeder has zero smart meters")
    if feeder.daily_peak_kw <= 0:
        raise ValueError("feeder has zero daily peak load")
    return PenetrationRates(
        r_ev=feeder.n_ev_submeters / feeder.n_smart_meters,
        r_hp=feeder.n_hp_submeters / feeder.n_smart_meters,
        r_der=feeder.der_capacity_kw / feeder.daily_peak_kw,
    )


SURGE_TABLE_COLUMNS = [
    "event_id", "feeder_id", "s_tot", "s_ev", "s_hp", "s_der", "s_oth",
    "r_ev", "r_hp", "r_der", "p_base_kw", "start_time", "restoration_time",
    "restoration_hour", "duration_h", "n_customers", "temp_c", "ghi_wm2",
    "pw_mm", "month", "day_of_week",
]


def surge_table_row(event, feeder, components, window=None):
    """One surges-table row: components + penetrations + covariates."""
    window = window or SurgeWindow()
    rates = penetration(feeder)
    rest = pd.Timestamp(event.restoration_time)
    return {
        "event_id": event.event_id,
        "feeder_id": event.feeder_id,
        "s_tot": components.s_tot,
        "s_ev": components.s_ev,
        "s_hp": components.s_hp,
        "s_der": components.s_der,
        "s_oth": components.s_oth,
        "r_ev": rates.r_ev,
        "r_hp": rates.r_hp,
        "r_der": rates.r_der,
        "p_base_kw": event.p_base_kw,
        "start_time": pd.Timestamp(event.start_time),
        "restoration_time": rest,
        "restoration_hour": rest.hour + rest.minute / 60.0,
        "duration_h": event.duration_h,
        "n_customers": event.n_customers_affected,
        "temp_c": event.temp_c,
        "ghi_wm2": event.ghi_wm2,
        "pw_mm": event.pw_mm,
        "month": rest.month,
        "day_of_week": rest.dayofweek,
    }


def compute_surge_table(events, feeders_by_id, trace_loader, window=None,
                        der_model=DEFAULT_DER_DELAY):
    """Surge table for a list of events.

    ``trace_loader(event_id) -> EventTraces`` decouples this from any
    particular storage layout.  Each event must also carry p_base_kw,
    n_customers_affected and weather-at-restoration covariates.
    """
    window = window or SurgeWindow()
    rows = []
    for ev in events:
        traces = trace_loader(ev.event_id)
        comp = surge_ratios(ev, traces, window, der_model)
        ev = _with_p_base(ev, traces, window)
        rows.append(surge_table_row(ev, feeders_by_id[ev.feeder_id], comp, window))
    return pd.DataFrame(rows, columns=SURGE_TABLE_COLUMNS)


def _with_p_base(event, traces, window):
    if getattr(event, "p_base_kw", None) is None:
        import dataclasses
        base = baseline_mean(traces, traces.total_kw, event.start_time,
                             event.restoration_time, window)
        event = dataclasses.replace(event, p_base_kw=base)
    return event
