"""Mitigation strategies and their surge reduction factors.

Three levers from the restoration playbook: staggering EV charger restarts
over a randomized window, a brief thermostat offset on heat pumps, and
accelerated DER reconnection.  Each lever yields a factor; `apply` scales
the surge components with them.

Sign conventions follow the source formulas rather than being unified:
gamma_ev and gamma_hp are reductions (1 = component fully eliminated)
while gamma_der is the remaining-missing-power ratio (1 = no change).
"""

import math
from dataclasses import dataclass

import numpy as np

from .metrics import SurgeComponents, SurgeWindow, der_missing_power
from .rngtools import substream


@dataclass(frozen=True)
class EvRestartPolicy:
    """Chargers restart after an independent uniform delay in [t1, t2] min."""

    t1: float = 0.0
    t2: float = 15.0
    trials: int = 1000

    def __post_init__(self):
        if not 0.0 <= self.t1 <= self.t2:
            raise ValueError("restart window needs 0 <= t1 <= t2")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


@dataclass(frozen=True)
class DerReconnectPolicy:
    """Soft-start reconnection delay, uniform on [tau_min, tau_max] minutes."""

    tau_min: float = 0.5
    tau_max: float = 15.0

    def __post_init__(self):
        if self.tau_min < 0.0 or not self.tau_max > self.tau_min:
            raise ValueError("need 0 <= tau_min < tau_max")

    def pdf(self, tau):
        tau = np.asarray(tau, dtype=float)
        dens = 1.0 / (self.tau_max - self.tau_min)
        return np.where((tau >= self.tau_min) & (tau <= self.tau_max), dens, 0.0)

    def mass(self, a, b):
        a = max(a, self.tau_min)
        b = min(b, self.tau_max)
        return max(0.0, b - a) / (self.tau_max - self.tau_min)


@dataclass(frozen=True)
class PiecewiseRegimeModel:
    """Per-regime linear fits f_r(dT) = alpha + beta*dT with breaks at +-5 C.

    `underpowered` lists regimes that had too few points and fell back to
    the pooled coefficients.
    """

    beta_cold: float
    alpha_cold: float
    beta_mild: float
    alpha_mild: float
    beta_hot: float
    alpha_hot: float
    underpowered: tuple = ()

    def __post_init__(self):
        for f in ("beta_cold", "alpha_cold", "beta_mild", "alpha_mild",
                  "beta_hot", "alpha_hot"):
            if not math.isfinite(getattr(self, f)):
                raise ValueError(f"{f} must be finite")

    def regime_of(self, delta_t):
        if delta_t < -5.0:
            return "cold"
        if delta_t > 5.0:
            return "hot"
        return "mild"

    def __call__(self, delta_t):
        reg = self.regime_of(float(delta_t))
        return getattr(self, f"alpha_{reg}") + getattr(self, f"beta_{reg}") * float(delta_t)


@dataclass(frozen=True)
class MitigationFactors:
    gamma_ev: float = 0.0
    gamma_hp: float = 0.0
    gamma_der: float = 1.0

    def __post_init__(self):
        for f in ("gamma_ev", "gamma_hp", "gamma_der"):
            v = getattr(self, f)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{f} must be in [0, 1]")


@dataclass(frozen=True)
class GammaResult:
    """A reduction factor plus any qualifications raised while computing it."""

    value: float
    flags: tuple = ()


def _cum_trapz(times, vals):
    seg = 0.5 * (vals[..., 1:] + vals[..., :-1]) * np.diff(times)
    zero = np.zeros(vals.shape[:-1] + (1,))
    return np.concatenate([zero, np.cumsum(seg, axis=-1)], axis=-1)


def _integral_to(times, vals, cum, upper):
    """Exact integral of the piecewise-linear profile from times[0] to upper.

    `vals` is (M, n) per-charger, `upper` broadcasts as (..., M); evaluation
    is the segment-exact quadratic, not a resampled sum, so window means
    carry no grid bias.
    """
    a = np.clip(upper, times[0], times[-1])
    i = np.clip(np.searchsorted(times, a, side="right") - 1, 0, len(times) - 2)
    m_idx = np.arange(vals.shape[0])
    v0 = vals[m_idx, i]
    v1 = vals[m_idx, i + 1]
    t0 = times[i]
    slope = (v1 - v0) / (times[i + 1] - t0)
    dt = a - t0
    va = v0 + slope * dt
    return cum[m_idx, i] + 0.5 * (v0 + va) * dt


def gamma_ev(times_min, profiles_kw, policy=None, seed=0, window=None):
    """EV surge reduction from staggered restarts.

    `profiles_kw` rows are per-charger restart profiles on the shared
    `times_min` grid, time zero = re-energization.  Each trial delays every
    charger by its own uniform draw; the delayed window average over the
    first `window` minutes, averaged over trials, is compared with the
    undelayed one.
    """
    policy = policy or EvRestartPolicy()
    window = window or SurgeWindow()
    times = np.asarray(times_min, dtype=float)
    profiles = np.atleast_2d(np.asarray(profiles_kw, dtype=float))
    if times.ndim != 1 or profiles.shape[-1] != times.size:
        raise ValueError("profiles must align with the time grid")
    if np.any(np.diff(times) <= 0):
        raise ValueError("time grid must be strictly increasing")
    if not np.isfinite(profiles).all():
        raise ValueError("profiles must be finite")
    need = policy.t2 + window.length_min
    if times[0] > 0.0 or times[-1] < need:
        raise ValueError(f"profiles must cover [0, {need}] minutes")

    dt = window.length_min
    cum = _cum_trapz(times, profiles)
    p_base = float(_integral_to(times, profiles, cum, dt).sum()) / dt
    if p_base <= 0.0:
        return GammaResult(0.0, ("zero_load",))

    m = profiles.shape[0]
    rng = substream(seed, "ev_restart")
    # shared uniforms keep gamma monotone in t1 across policies on one seed
    u = rng.random((policy.trials, m))
    delays = policy.t1 + (policy.t2 - policy.t1) * u
    shifted = _integral_to(times, profiles, cum, np.maximum(dt - delays, 0.0))
    p_delayed = float(shifted.sum(axis=1).mean()) / dt
    g = 1.0 - p_delayed / p_base
    clamped = min(1.0, max(0.0, g))
    # identity shifts can land a rounding ulp outside [0, 1]
    return GammaResult(clamped, () if abs(clamped - g) < 1e-9 else ("clamped",))


def fit_piecewise(delta_t, delta_hp, min_points=10):
    """Per-regime OLS of heat-pump surge response against temperature gap.

    Regimes with fewer than `min_points` samples inherit the pooled
    coefficients and are flagged underpowered.
    """
    x = np.asarray(delta_t, dtype=float)
    y = np.asarray(delta_hp, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("delta_t and delta_hp must be matching 1-d arrays")
    if x.size < 2:
        raise ValueError("need at least 2 points")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("points must be finite")

    pooled = np.polyfit(x, y, 1)
    masks = {"cold": x < -5.0, "mild": (x >= -5.0) & (x <= 5.0), "hot": x > 5.0}
    coeffs = {}
    flagged = []
    for name, mask in masks.items():
        if mask.sum() >= min_points:
            beta, alpha = np.polyfit(x[mask], y[mask], 1)
        else:
            beta, alpha = pooled
            flagged.append(name)
        coeffs[f"beta_{name}"] = float(beta)
        coeffs[f"alpha_{name}"] = float(alpha)
    return PiecewiseRegimeModel(underpowered=tuple(flagged), **coeffs)


def gamma_hp(delta_t, delta_t_set, model):
    """HP surge reduction from a thermostat offset: 1 - f_r(dT-dT_set)/f_r(dT)."""
    base = model(delta_t)
    if base <= 0.0:
        return GammaResult(0.0, ("degenerate_denominator",))
    g = 1.0 - model(delta_t - delta_t_set) / base
    if 0.0 <= g <= 1.0:
        return GammaResult(g)
    return GammaResult(min(1.0, max(0.0, g)), ("clamped",))


def gamma_der(gen_times_min, gen_kw, baseline_model, policy=None,
              window=None, t0_min=0.0):
    """Remaining missing DER power under an accelerated reconnect policy.

    Both numerator and denominator go through the same adaptive quadrature
    as the surge metrics, so an identity policy returns exactly 1.
    """
    policy = policy or DerReconnectPolicy()
    p_der = der_missing_power(gen_times_min, gen_kw, baseline_model,
                              window=window, t0_min=t0_min)
    if p_der <= 0.0:
        return GammaResult(1.0, ("zero_generation",))
    p_pol = der_missing_power(gen_times_min, gen_kw, policy,
                              window=window, t0_min=t0_min)
    g = p_pol / p_der
    if 0.0 <= g <= 1.0:
        return GammaResult(g)
    return GammaResult(min(1.0, max(0.0, g)), ("clamped",))


def apply(components, factors):
    """Mitigated components; the total is recomputed from the four parts."""
    s_ev = components.s_ev * (1.0 - factors.gamma_ev)
    s_hp = components.s_hp * (1.0 - factors.gamma_hp)
    s_der = components.s_der * factors.gamma_der
    s_oth = components.s_oth
    return SurgeComponents(
        s_tot=s_ev + s_hp + s_der + s_oth,
        s_ev=s_ev, s_hp=s_hp, s_der=s_der, s_oth=s_oth,
    )
