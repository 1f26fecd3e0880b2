"""Tail statistics over the surge table.

Inputs are surge-table DataFrames (one row per event, components s_ev/s_hp/
s_der/s_oth plus penetrations and covariates).  Analyses: per-band medians
and 95th percentiles, exceedance curves with Wilson intervals, bootstrap
cross-band comparisons (optionally restricted to comparable subsets, with
irradiance-matched pairing for DER), one-sided adjacent-band Mann-Whitney
tests, and pooled percentile-threshold robustness checks.
"""

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from .rngtools import substream


@dataclass(frozen=True)
class PenetrationBands:
    """Four penetration bands per asset, edges in percent."""

    asset: str
    edges_pct: tuple

    def __post_init__(self):
        if len(self.edges_pct) != 5:
            raise ValueError("need 5 edges for 4 bands")
        if any(a >= b for a, b in zip(self.edges_pct, self.edges_pct[1:])):
            raise ValueError("band edges must be strictly increasing")

    @property
    def labels(self):
        return ["B1", "B2", "B3", "B4"]

    def band_of(self, rate_fraction):
        """Band index 0..3 of a penetration fraction, -1 if outside."""
        pct = np.asarray(rate_fraction, dtype=float) * 100.0
        idx = np.searchsorted(self.edges_pct, pct, side="right") - 1
        idx = np.where((pct >= self.edges_pct[0]) & (pct <= self.edges_pct[-1]),
                       np.minimum(idx, 3), -1)
        return idx


DEFAULT_BANDS = {
    "ev": PenetrationBands("ev", (5, 10, 20, 35, 50)),
    "hp": PenetrationBands("hp", (5, 25, 45, 65, 85)),
    "der": PenetrationBands("der", (5, 10, 15, 25, 35)),
}

RATE_COLUMN = {"ev": "r_ev", "hp": "r_hp", "der": "r_der"}
SURGE_COLUMN = {"ev": "s_ev", "hp": "s_hp", "der": "s_der"}

GHI_MATCH_BINS = ((200.0, 400.0), (400.0, 700.0), (700.0, 1000.0), (1000.0, 1400.0))


def _c_to_f(temp_c):
    return temp_c * 9.0 / 5.0 + 32.0


@dataclass(frozen=True)
class SubsetFilter:
    """Named predicate over restoration hour, duration, temperature and GHI;
    optionally carries irradiance bins for matched pair drawing."""

    name: str
    predicate: callable = None
    ghi_bins: tuple = None

    def mask(self, df):
        if self.predicate is None:
            return np.ones(len(df), dtype=bool)
        return self.predicate(df).to_numpy(dtype=bool)


UNCONDITIONAL = SubsetFilter("unconditional")

SUBSET_PRESETS = {
    "unconditional": UNCONDITIONAL,
    # EV comparisons: restoration timing x long outages
    "night_long": SubsetFilter(
        "night_long",
        lambda d: ((d.restoration_hour <= 6) | (d.restoration_hour >= 18))
                  & (d.duration_h >= 4)),
    "day_long": SubsetFilter(
        "day_long",
        lambda d: (d.restoration_hour >= 8) & (d.restoration_hour <= 16)
                  & (d.duration_h >= 4)),
    # HP comparisons: Fahrenheit cutoffs by convention
    "cold_long": SubsetFilter(
        "cold_long", lambda d: (_c_to_f(d.temp_c) <= 50) & (d.duration_h >= 4)),
    "hot_long": SubsetFilter(
        "hot_long", lambda d: (_c_to_f(d.temp_c) >= 80) & (d.duration_h >= 4)),
    # DER comparisons
    "daytime": SubsetFilter("daytime", lambda d: d.ghi_wm2 >= 200),
    "matched_irradiance": SubsetFilter(
        "matched_irradiance", lambda d: d.ghi_wm2 >= 200, ghi_bins=GHI_MATCH_BINS),
}


def nearest_rank(values, q):
    """Nearest-rank percentile (q in [0,100]) of a 1-d array."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("empty sample")
    rank = max(1, math.ceil(q / 100.0 * v.size))
    return float(v[rank - 1])


def wilson_interval(k, n, z=1.959963984540054):
    """95% Wilson score interval for a binomial proportion."""
    if n == 0:
        return (0.0, 1.0)
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


def _banded(df, asset, bands=None, subset=None):
    bands = bands or DEFAULT_BANDS[asset]
    sub = subset or UNCONDITIONAL
    keep = sub.mask(df)
    idx = bands.band_of(df[RATE_COLUMN[asset]].to_numpy())
    s = df[SURGE_COLUMN[asset]].to_numpy(dtype=float)
    ghi = df["ghi_wm2"].to_numpy(dtype=float) if "ghi_wm2" in df else np.zeros(len(df))
    out = []
    for b in range(4):
        m = keep & (idx == b)
        out.append((s[m], ghi[m]))
    return bands, out


def band_stats(df, asset, bands=None, subset=None):
    """Per-band count, median and 95th percentile (nearest-rank)."""
    bands, groups = _banded(df, asset, bands, subset)
    rows = []
    for label, (s, _) in zip(bands.labels, groups):
        if s.size == 0:
            rows.append({"band": label, "count": 0, "median": float("nan"),
                         "p95": float("nan"), "empty": True})
        else:
            rows.append({"band": label, "count": int(s.size),
                         "median": nearest_rank(s, 50), "p95": nearest_rank(s, 95),
                         "empty": False})
    return pd.DataFrame(rows)


def exceedance_curve(df, asset, threshold=None, grid_pct=None, subset=None):
    """Fraction of events with surge above a threshold, binned over
    penetration, with Wilson 95% intervals.

    ``threshold`` defaults to the pooled 80th percentile of the asset's
    surge values (configurable).  ``grid_pct`` gives bin edges in percent;
    defaults to eight equal bins spanning the default band range.
    """
    sub = subset or UNCONDITIONAL
    keep = sub.mask(df)
    r = df[RATE_COLUMN[asset]].to_numpy(dtype=float)[keep] * 100.0
    s = df[SURGE_COLUMN[asset]].to_numpy(dtype=float)[keep]
    if s.size == 0:
        raise ValueError("no events after subset filter")
    if threshold is None:
        threshold = nearest_rank(s, 80)
    if grid_pct is None:
        edges = DEFAULT_BANDS[asset].edges_pct
        grid_pct = np.linspace(edges[0], edges[-1], 9)
    grid_pct = np.asarray(grid_pct, dtype=float)
    rows = []
    for lo, hi in zip(grid_pct[:-1], grid_pct[1:]):
        m = (r >= lo) & (r < hi) if hi < grid_pct[-1] else (r >= lo) & (r <= hi)
        n = int(m.sum())
        k = int((s[m] > threshold).sum())
        ci_lo, ci_hi = wilson_interval(k, n)
        rows.append({"r_lo_pct": lo, "r_hi_pct": hi, "n": n,
                     "p_exceed": k / n if n else float("nan"),
                     "ci_lo": ci_lo, "ci_hi": ci_hi, "threshold": threshold})
    return pd.DataFrame(rows)


@dataclass(frozen=True)
class BootstrapResult:
    estimates: np.ndarray
    mean: float
    lo_band: str
    hi_band: str
    filter_name: str

    def __post_init__(self):
        if np.any((self.estimates < 0) | (self.estimates > 1)):
            raise ValueError("bootstrap estimates must lie in [0, 1]")


def _pair_fraction(s_hi, s_lo):
    return float(np.mean(np.where(s_hi > s_lo, 1.0, np.where(s_hi == s_lo, 0.5, 0.0))))


def bootstrap_band_compare(df, asset, lo_band, hi_band, subset=None,
                           bands=None, B=1000, pair_draws=2000, seed=0):
    """P(surge of a high-band event > surge of a low-band event).

    Each iteration resamples events with replacement within each band, then
    draws ``pair_draws`` cross-band pairs; ties count 0.5.  With a
    matched-irradiance subset, the two pair members are drawn from the same
    GHI bin (bins weighted by the smaller side's resampled count).
    """
    if B < 100:
        raise ValueError("B must be >= 100")
    bands = bands or DEFAULT_BANDS[asset]
    sub = subset or UNCONDITIONAL
    labels = bands.labels
    i_lo, i_hi = labels.index(lo_band), labels.index(hi_band)
    _, groups = _banded(df, asset, bands, sub)
    (s_lo, g_lo), (s_hi, g_hi) = groups[i_lo], groups[i_hi]
    for name, arr in ((lo_band, s_lo), (hi_band, s_hi)):
        if arr.size == 0:
            raise ValueError(
                f"band {name} is empty under filter '{sub.name}'")

    estimates = np.empty(B)
    for b in range(B):
        rng = substream(seed, "boot", b)
        ri_lo = rng.integers(0, s_lo.size, s_lo.size)
        ri_hi = rng.integers(0, s_hi.size, s_hi.size)
        rs_lo, rg_lo = s_lo[ri_lo], g_lo[ri_lo]
        rs_hi, rg_hi = s_hi[ri_hi], g_hi[ri_hi]
        if sub.ghi_bins:
            fracs = []
            weights = []
            for blo, bhi in sub.ghi_bins:
                m_lo = (rg_lo >= blo) & (rg_lo < bhi)
                m_hi = (rg_hi >= blo) & (rg_hi < bhi)
                n_min = min(int(m_lo.sum()), int(m_hi.sum()))
                if n_min == 0:
                    continue
                a, c = rs_hi[m_hi], rs_lo[m_lo]
                pi = rng.integers(0, a.size, pair_draws)
                pj = rng.integers(0, c.size, pair_draws)
                fracs.append(_pair_fraction(a[pi], c[pj]))
                weights.append(n_min)
            if not fracs:
                raise ValueError(
                    f"no GHI bin has events from both bands under '{sub.name}'")
            estimates[b] = float(np.average(fracs, weights=weights))
        else:
            pi = rng.integers(0, rs_hi.size, pair_draws)
            pj = rng.integers(0, rs_lo.size, pair_draws)
            estimates[b] = _pair_fraction(rs_hi[pi], rs_lo[pj])
    return BootstrapResult(estimates=estimates, mean=float(estimates.mean()),
                           lo_band=lo_band, hi_band=hi_band, filter_name=sub.name)


def adjacent_band_test(df, asset, bands=None, subset=None, min_per_band=20):
    """One-sided Mann-Whitney U for each adjacent band pair (higher band
    larger); pairs with a small band are flagged underpowered."""
    bands = bands or DEFAULT_BANDS[asset]
    _, groups = _banded(df, asset, bands, subset)
    rows = []
    for i in range(3):
        lo, hi = groups[i][0], groups[i + 1][0]
        row = {"pair": f"{bands.labels[i]}-{bands.labels[i+1]}",
               "n_lo": int(lo.size), "n_hi": int(hi.size),
               "underpowered": lo.size < min_per_band or hi.size < min_per_band}
        if lo.size and hi.size:
            res = stats.mannwhitneyu(hi, lo, alternative="greater")
            row["u_stat"] = float(res.statistic)
            row["p_value"] = float(res.pvalue)
        else:
            row["u_stat"] = float("nan")
            row["p_value"] = float("nan")
        rows.append(row)
    return pd.DataFrame(rows)


def percentile_threshold_analysis(df, asset, bands=None, subset=None,
                                  qs=(70, 80, 90)):
    """Per-band probability of staying below pooled percentile thresholds."""
    bands = bands or DEFAULT_BANDS[asset]
    _, groups = _banded(df, asset, bands, subset)
    pooled = np.concatenate([g[0] for g in groups])
    if pooled.size < 100:
        raise ValueError("pooled event count must be >= 100")
    rows = []
    for q in qs:
        thr = nearest_rank(pooled, q)
        degenerate = bool(np.all(pooled == pooled[0]))
        for label, (s, _) in zip(bands.labels, groups):
            rows.append({"q": q, "threshold": thr, "band": label,
                         "n": int(s.size),
                         "p_below": float(np.mean(s < thr)) if s.size else float("nan"),
                         "degenerate": degenerate})
    return pd.DataFrame(rows)
