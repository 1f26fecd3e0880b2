"""Event covariate sequences for the surge estimator.

Each event becomes T trailing 15-minute steps ending at the restoration
instant.  Per-step features are calendar encodings, weather, and outage
state; per-event statics (penetrations, total duration) broadcast to every
step.  Histories that start before the weather record are left-padded with
zeros and a pad flag; the restoration step itself must be covered.

Values here are raw physical quantities (the hour-angle encodings are exact
trig of the timestamp).  Normalization happens inside the model using
training-set statistics stored with it, so features never depend on which
dataset a model was trained on.
"""

from dataclasses import dataclass

import numpy as np

STEP_MIN = 15

#: Per-step feature layout.  `pad` must stay last; padded steps are all
#: zero except that flag.
FEATURE_NAMES = (
    "hour_sin", "hour_cos",
    "dow_sin", "dow_cos",
    "month_sin", "month_cos",
    "temp_c", "ghi_wm2", "pw_mm",
    "outage_active", "dur_so_far_h",
    "r_ev", "r_hp", "r_der", "duration_h",
    "pad",
)
PAD_COL = len(FEATURE_NAMES) - 1

#: Prediction targets, in head order.
TARGET_NAMES = ("s_ev", "s_hp", "s_der", "s_oth")


@dataclass(frozen=True)
class EventFeatures:
    """One event's sequence: x is (T, d), pad marks synthetic prefix steps."""

    x: np.ndarray
    pad: np.ndarray

    def __post_init__(self):
        if self.x.ndim != 2 or self.pad.shape != (self.x.shape[0],):
            raise ValueError("x must be (T, d) with a length-T pad mask")
        if not np.isfinite(self.x).all():
            raise ValueError("features must be finite")


def _field(event, name):
    """Events may be dataclasses, mappings, or pandas rows."""
    try:
        return event[name]
    except (TypeError, KeyError, IndexError):
        return getattr(event, name)


def _calendar_block(times):
    ts = np.asarray(times, dtype="datetime64[m]")
    days = ts.astype("datetime64[D]")
    minute_of_day = (ts - days) / np.timedelta64(1, "m")
    hour = minute_of_day / 60.0
    # 1970-01-01 is a Thursday
    dow = (days.astype(np.int64) + 3) % 7
    month = ts.astype("datetime64[M]").astype(np.int64) % 12
    two_pi = 2.0 * np.pi
    return np.column_stack([
        np.sin(two_pi * hour / 24.0), np.cos(two_pi * hour / 24.0),
        np.sin(two_pi * dow / 7.0), np.cos(two_pi * dow / 7.0),
        np.sin(two_pi * month / 12.0), np.cos(two_pi * month / 12.0),
    ])


def featurize(event, weather, seq_len=32):
    """Build one event's feature sequence from the weather record.

    The sequence covers `seq_len` steps of 15 min ending at the restoration
    instant.  Steps before the weather record are padded; a restoration
    instant outside the record raises.
    """
    x, pad = featurize_events([event], weather, seq_len=seq_len)
    return EventFeatures(x=x[0], pad=pad[0])


def featurize_events(events, weather, seq_len=32):
    """Vectorized featurize over an iterable of events.

    Returns `(x, pad)` with shapes (n, T, d) and (n, T).  Events are rows of
    a surge table, outage events, or anything exposing start_time,
    restoration_time, duration_h, r_ev, r_hp, r_der.
    """
    events = list(events)
    n, T, d = len(events), int(seq_len), len(FEATURE_NAMES)
    if T < 1:
        raise ValueError("seq_len must be >= 1")
    rest = np.array(
        [np.datetime64(_field(e, "restoration_time"), "m") for e in events]
    )
    start = np.array([np.datetime64(_field(e, "start_time"), "m") for e in events])
    statics = np.array(
        [
            [
                float(_field(e, "r_ev")),
                float(_field(e, "r_hp")),
                float(_field(e, "r_der")),
                float(_field(e, "duration_h")),
            ]
            for e in events
        ]
    ).reshape(n, 4)

    w_times = weather.timestamps
    w_start, w_end = w_times[0], w_times[-1]
    if (rest < w_start).any() or (rest > w_end).any():
        bad = events[int(np.argmax((rest < w_start) | (rest > w_end)))]
        raise ValueError(
            f"missing weather for restoration at {_field(bad, 'restoration_time')}"
        )

    off = (rest - w_start) / np.timedelta64(STEP_MIN, "m")
    rest_idx = np.rint(off).astype(np.int64)
    if np.abs(off - rest_idx).max(initial=0.0) > 1e-9:
        bad = events[int(np.argmax(np.abs(off - rest_idx)))]
        raise ValueError(
            f"restoration at {_field(bad, 'restoration_time')} is off the weather grid"
        )

    # (n, T) step timestamps ending at restoration
    offsets = (np.arange(T) - (T - 1)) * np.timedelta64(STEP_MIN, "m")
    times = rest[:, None] + offsets[None, :]
    pad = times < w_start
    idx = np.maximum(rest_idx[:, None] + (np.arange(T) - (T - 1))[None, :], 0)

    x = np.zeros((n, T, d))
    x[:, :, 0:6] = _calendar_block(times.ravel()).reshape(n, T, 6)
    x[:, :, 6] = weather.temp_c[idx]
    x[:, :, 7] = weather.ghi_wm2[idx]
    x[:, :, 8] = weather.pw_mm[idx]
    x[:, :, 9] = ((times >= start[:, None]) & (times < rest[:, None])).astype(float)
    dur_so_far = (times - start[:, None]) / np.timedelta64(60, "m")
    x[:, :, 10] = np.maximum(dur_so_far, 0.0)
    x[:, :, 11:15] = statics[:, None, :]
    x[pad] = 0.0
    x[:, :, PAD_COL] = pad.astype(float)
    return x, pad
