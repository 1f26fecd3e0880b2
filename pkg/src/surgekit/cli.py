"""Command-line pipeline driver.

One JSON run config feeds every subcommand; flags override config fields,
and two environment variables are honored: SURGEKIT_OUT_DIR (output
directory override) and SURGEKIT_THREADS (BLAS thread cap).  Exit codes:
0 success, 1 runtime or missing-artifact error, 2 config error.  Floats in
emitted artifacts carry 9 significant digits so reruns compare bytewise.
"""

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import replace

import jsonschema
import numpy as np
import pandas as pd

from . import __version__, causal, empirics, mitigation, projection, synth
from .estimator import (
    ModelConfig,
    TrainConfig,
    dataset_from_surges,
    load_estimator,
    save_estimator,
    train,
)
from .metrics import DerDelayModel
from .mitigation import (
    DerReconnectPolicy,
    EvRestartPolicy,
    MitigationFactors,
    fit_piecewise,
    gamma_der,
    gamma_ev,
    gamma_hp,
)
from .projection import TRAJECTORIES, WINDOWS, ScenarioConfig, make_templates, project
from .synth import DEFAULT_PARAMS, SyntheticDataset
from .weather import STEP_MIN, WeatherTrace


class ConfigError(Exception):
    """Bad config or policy file; maps to exit code 2."""


class ArtifactError(Exception):
    """Missing or unreadable upstream artifact; maps to exit code 1."""


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

_NUM = {"type": "number"}
_INT = {"type": "integer"}
_STR = {"type": "string"}


def _block(props, required=()):
    out = {"type": "object", "properties": props, "additionalProperties": False}
    if required:
        out["required"] = list(required)
    return out


CONFIG_SCHEMA = _block({
    "out_dir": _STR,
    "data_dir": _STR,
    "threads": {"type": "integer", "minimum": 1},
    "synth": _block({
        "n_feeders": {"type": "integer", "minimum": 1},
        "n_events": {"type": "integer", "minimum": 1},
        "seed": _INT,
        "weather_days": {"type": "integer", "minimum": 30},
        "weather_start": _STR,
        "der_delay_mu": _NUM,
        "der_delay_sigma": {"type": "number", "exclusiveMinimum": 0},
    }),
    "empirics": _block({
        "assets": {"type": "array", "items": {"enum": ["ev", "hp", "der"]}},
        "bootstrap_B": {"type": "integer", "minimum": 100},
        "seed": _INT,
    }),
    "causal": _block({
        "asset": {"enum": ["ev", "hp", "der"]},
        "scale": _NUM,
        "n_trees": {"type": "integer", "minimum": 1},
        "subsample_fraction": _NUM,
        "min_leaf": {"type": "integer", "minimum": 1},
        "honesty_fraction": _NUM,
        "n_folds": {"type": "integer", "minimum": 2},
        "max_depth": {"type": "integer", "minimum": 1},
        "mtry": {"type": "integer", "minimum": 1},
        "seed": _INT,
        "nuisance_trees": {"type": "integer", "minimum": 1},
        "nuisance_min_leaf": {"type": "integer", "minimum": 1},
    }),
    "estimator": _block({
        "model": _block({
            "seq_len": {"type": "integer", "minimum": 1},
            "d_model": {"type": "integer", "minimum": 1},
            "n_layers": {"type": "integer", "minimum": 0},
            "n_heads": {"type": "integer", "minimum": 1},
            "head_hidden": {"type": "integer", "minimum": 1},
            "ffn_hidden": {"type": "integer", "minimum": 0},
            "dropout": _NUM,
            "seed": _INT,
        }),
        "train": _block({
            "epochs": {"type": "integer", "minimum": 1},
            "batch_size": {"type": "integer", "minimum": 1},
            "lr": {"type": "number", "exclusiveMinimum": 0},
            "clip_norm": _NUM,
            "test_fraction": _NUM,
            "val_fraction": _NUM,
            "patience": {"type": "integer", "minimum": 0},
            "seed": _INT,
        }),
    }),
    "project": _block({
        "trajectory": {"enum": sorted(TRAJECTORIES)},
        "window": {"enum": sorted(WINDOWS)},
        "temp_bin": {"enum": list(projection.TEMP_BINS)},
        "duration_h": {"enum": [1, 2, 3]},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "alphas": {"type": "array", "minItems": 1,
                   "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}},
        "n_draws": {"type": "integer", "minimum": 100},
        "seed": _INT,
        "system_base_gw": {"type": "number", "exclusiveMinimum": 0},
    }),
    "report": _block({
        "trajectory": {"enum": sorted(TRAJECTORIES)},
        "temp_bin": {"enum": list(projection.TEMP_BINS)},
        "alphas": {"type": "array", "minItems": 1,
                   "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}},
        "n_draws": {"type": "integer", "minimum": 100},
        "seed": _INT,
        "system_base_gw": {"type": "number", "exclusiveMinimum": 0},
    }),
})

POLICY_SCHEMA = _block({
    "seed": _INT,
    "ev_restart": _block({
        "t1": {"type": "number", "minimum": 0},
        "t2": {"type": "number", "minimum": 0},
        "trials": {"type": "integer", "minimum": 1},
    }),
    "hp_setpoint": _block({
        "delta_t_set": _NUM,
        "t_ref": _NUM,
        "min_points": {"type": "integer", "minimum": 2},
    }),
    "der_reconnect": _block({
        "tau_min": {"type": "number", "minimum": 0},
        "tau_max": {"type": "number", "exclusiveMinimum": 0},
        "baseline": _block({
            "mu": _NUM,
            "sigma": {"type": "number", "exclusiveMinimum": 0},
            "tau_min": {"type": "number", "minimum": 0},
        }),
    }),
})

FACTORS_SCHEMA = _block({
    "gamma_ev": {"type": "number", "minimum": 0, "maximum": 1},
    "gamma_hp": {"type": "number", "minimum": 0, "maximum": 1},
    "gamma_der": {"type": "number", "minimum": 0, "maximum": 1},
})


def _pointer(err):
    """JSON pointer to the offending field, drilling into unexpected keys."""
    path = list(err.absolute_path)
    if err.validator == "additionalProperties":
        schema_keys = set(err.schema.get("properties", {}))
        extras = sorted(set(err.instance) - schema_keys)
        if extras:
            path.append(extras[0])
    return "/" + "/".join(str(p) for p in path)


def _validate(doc, schema, what):
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as e:
        raise ConfigError(f"{what} invalid at {_pointer(e)}: {e.message}") from e


def _read_json(path, what):
    if not os.path.exists(path):
        raise ArtifactError(f"missing {what}: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{what} {path} is not valid JSON: {e}") from e


def load_config(path):
    """Parse and schema-check a run config; None path means empty config."""
    if path is None:
        return {}
    cfg = _read_json(path, "config")
    _validate(cfg, CONFIG_SCHEMA, "config")
    return cfg


def config_hash(cfg):
    """Hash of the semantic fields only; plumbing knobs don't change it."""
    semantic = {k: v for k, v in cfg.items()
                if k not in ("out_dir", "data_dir", "threads")}
    blob = json.dumps(semantic, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def collect_seeds(cfg):
    seeds = {}
    for block, val in cfg.items():
        if isinstance(val, dict):
            if "seed" in val:
                seeds[block] = val["seed"]
            for sub, sval in val.items():
                if isinstance(sval, dict) and "seed" in sval:
                    seeds[f"{block}.{sub}"] = sval["seed"]
    return seeds


def _fmt9(x):
    if isinstance(x, float):
        if math.isnan(x):
            return ""
        return f"{x + 0.0:.9g}"    # +0.0 folds -0.0 into 0
    return str(x)


def _round9(obj):
    """Round floats to 9 significant digits, recursively, for JSON output.

    Also strips numpy scalar types and turns non-finite values into null so
    the artifact stays strict JSON.
    """
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float):
        return float(f"{obj:.9g}") if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _round9(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round9(v) for v in obj]
    return obj


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_round9(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt9(v) for v in row) + "\n")


def _out_dir(args, cfg):
    out = getattr(args, "out_dir", None) or os.environ.get("SURGEKIT_OUT_DIR") \
        or cfg.get("out_dir") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _thread_cap(args, cfg):
    cap = getattr(args, "threads", None) or os.environ.get("SURGEKIT_THREADS") \
        or cfg.get("threads")
    if cap is None:
        return
    cap = str(int(cap))
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = cap


def _need_file(path, what):
    if path is None:
        raise ConfigError(f"{what} not given (flag or config)")
    if not os.path.exists(path):
        raise ArtifactError(f"missing {what}: {path}")
    return path


def _load_dataset(args, cfg):
    data_dir = getattr(args, "data", None) or cfg.get("data_dir")
    _need_file(data_dir, "dataset directory")
    return SyntheticDataset.load(data_dir)


def _load_surges(args, cfg):
    """Surge table from --in (csv) or from the dataset directory."""
    path = getattr(args, "infile", None)
    if path is not None:
        _need_file(path, "surge table")
        return pd.read_csv(path)
    return _load_dataset(args, cfg).surge_table()


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args):
    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    blk = cfg.get("synth", {})
    params = DEFAULT_PARAMS
    overrides = {k: blk[k] for k in ("der_delay_mu", "der_delay_sigma") if k in blk}
    if overrides:
        params = replace(params, **overrides)
    ds = synth.gen_city(
        n_feeders=blk.get("n_feeders", 10),
        n_events=blk.get("n_events", 500),
        params=params,
        seed=blk.get("seed", 0),
        weather_days=blk.get("weather_days", 420),
        weather_start=blk.get("weather_start", "2023-01-01T00:00"),
    )
    target = os.path.join(out, "dataset")
    ds.write(target)
    print(f"wrote {target} ({len(ds.events)} events, {len(ds.feeders)} feeders)")
    return 0


def cmd_metrics(args):
    cfg = load_config(args.config)
    ds = _load_dataset(args, cfg)
    surges = ds.surge_table()
    out = args.out or os.path.join(_out_dir(args, cfg), "surges.csv")
    surges.to_csv(out, index=False, float_format="%.9g")
    print(f"wrote {out} ({len(surges)} events)")
    return 0


def cmd_empirics(args):
    cfg = load_config(args.config)
    blk = cfg.get("empirics", {})
    surges = _load_surges(args, cfg)
    assets = [args.asset] if args.asset else blk.get("assets", ["ev", "hp", "der"])
    b = blk.get("bootstrap_B", 300)
    seed = blk.get("seed", 0)
    doc = {}
    for asset in assets:
        entry = {
            "band_stats": empirics.band_stats(surges, asset).to_dict("records"),
            "adjacent_tests": empirics.adjacent_band_test(surges, asset).to_dict("records"),
            "threshold_analysis": empirics.percentile_threshold_analysis(
                surges, asset).to_dict("records"),
        }
        try:
            boot = empirics.bootstrap_band_compare(
                surges, asset, "B1", "B4", B=b, seed=seed)
            lo, hi = np.percentile(boot.estimates, [2.5, 97.5])
            entry["bootstrap_b1_vs_b4"] = {
                "mean": boot.mean, "lo": float(lo), "hi": float(hi), "B": b,
            }
        except ValueError as e:
            entry["bootstrap_b1_vs_b4"] = {"skipped": str(e)}
        doc[asset] = entry
    out = args.out or os.path.join(_out_dir(args, cfg), "empirics.json")
    _write_json(out, doc)
    print(f"wrote {out}")
    return 0


def cmd_causal_fit(args):
    cfg = load_config(args.config)
    blk = dict(cfg.get("causal", {}))
    asset = args.asset or blk.get("asset")
    if asset is None:
        raise ConfigError("asset not given (flag or config)")
    blk.pop("asset", None)
    blk.pop("scale", None)
    surges = _load_surges(args, cfg)
    data = causal.CausalData.from_surge_table(surges, asset)
    model = causal.fit(data, causal.ForestConfig(**blk))
    causal.save_forest(model, args.out)
    print(f"wrote {args.out} ({model.config.n_trees} trees, {model.n_train} events)")
    return 0


def cmd_causal_ate(args):
    cfg = load_config(args.config)
    scale = args.scale if args.scale is not None else cfg.get("causal", {}).get("scale", 0.1)
    _need_file(args.model, "forest model")
    model = causal.load_forest(args.model)
    samples = None
    if args.infile is not None:
        asset = args.asset or cfg.get("causal", {}).get("asset")
        if asset is None:
            raise ConfigError("asset needed to score a surge table")
        samples = causal.CausalData.from_surge_table(
            pd.read_csv(_need_file(args.infile, "surge table")), asset)
    res = causal.ate(model, samples, scale=scale)
    doc = {
        "scale": res.scale,
        "ate_mean": res.ate_mean,
        "ci_lo": res.ci_lo,
        "ci_hi": res.ci_hi,
        "n_events": int(res.local_effects.size),
    }
    _write_json(args.out, doc)
    print(f"wrote {args.out} (ate {res.ate_mean:.9g})")
    return 0


def cmd_train(args):
    cfg = load_config(args.config)
    blk = cfg.get("estimator", {})
    ds = _load_dataset(args, cfg)
    surges = ds.surge_table()
    mc = ModelConfig(**blk.get("model", {}))
    tc = TrainConfig(**blk.get("train", {}))
    data = dataset_from_surges(surges, ds.weather, seq_len=mc.seq_len)
    model, report = train(data, mc, tc)
    save_estimator(model, args.out)
    _write_json(args.out + ".report.json", {
        "r2": report.r2, "rmse": report.rmse, "mae": report.mae,
        "degenerate": report.degenerate, "best_epoch": report.best_epoch,
        "epochs_run": report.epochs_run, "aborted": report.aborted,
        "n_train": report.n_train, "n_val": report.n_val, "n_test": report.n_test,
    })
    summary = " ".join(f"{k}={v:.3f}" for k, v in report.r2.items())
    print(f"wrote {args.out} ({summary})")
    return 0


SWEEP_DEFAULTS = {
    "hour": 18.0, "duration": 2.0, "temp": 10.0, "ghi": 300.0, "pw": 10.0,
    "r_ev": 0.2, "r_hp": 0.3, "r_der": 0.1,
}

SWEEP_GRIDS = {
    "duration": np.arange(0.5, 3.51, 0.25),
    "hour": np.arange(0.0, 24.0, 1.0),
    "temp": np.arange(-15.0, 35.1, 2.5),
    "ghi": np.arange(0.0, 1201.0, 100.0),
    "pw": np.arange(0.0, 41.0, 4.0),
    "r_ev": np.arange(0.05, 0.86, 0.05),
    "r_hp": np.arange(0.05, 0.86, 0.05),
    "r_der": np.arange(0.05, 0.86, 0.05),
}


def _flat_weather(temp, ghi, pw, days=5):
    n = days * 24 * 60 // STEP_MIN
    ts = (np.datetime64("2023-06-01T00:00", "m")
          + np.arange(n) * np.timedelta64(STEP_MIN, "m"))
    return WeatherTrace(
        timestamps=ts,
        temp_c=np.full(n, float(temp)),
        ghi_wm2=np.full(n, float(ghi)),
        pw_mm=np.full(n, float(pw)),
    )


def cmd_sweep(args):
    if args.vary not in SWEEP_GRIDS:
        raise ConfigError(f"cannot vary {args.vary!r}; one of {sorted(SWEEP_GRIDS)}")
    fixes = {}
    for spec in args.fix or ():
        key, _, val = spec.partition("=")
        if key not in SWEEP_DEFAULTS:
            raise ConfigError(f"unknown --fix key {key!r}; one of {sorted(SWEEP_DEFAULTS)}")
        try:
            fixes[key] = float(val)
        except ValueError as e:
            raise ConfigError(f"--fix {spec!r} is not numeric") from e
    if args.vary in fixes:
        raise ConfigError(f"{args.vary!r} is both varied and fixed")
    _need_file(args.model, "estimator model")
    model = load_estimator(args.model)

    rows = []
    for v in SWEEP_GRIDS[args.vary]:
        s = dict(SWEEP_DEFAULTS)
        s.update(fixes)
        s[args.vary] = float(v)
        if (s["hour"] * 60.0) % STEP_MIN:
            raise ConfigError(f"hour {s['hour']} is off the {STEP_MIN}-minute grid")
        weather = _flat_weather(s["temp"], s["ghi"], s["pw"])
        rest = (np.datetime64("2023-06-03T00:00", "m")
                + np.timedelta64(int(round(s["hour"] * 60)), "m"))
        event = {
            "start_time": rest - np.timedelta64(int(round(s["duration"] * 60)), "m"),
            "restoration_time": rest,
            "duration_h": s["duration"],
            "r_ev": s["r_ev"], "r_hp": s["r_hp"], "r_der": s["r_der"],
        }
        pred = model.predict_events([event], weather)
        ev, hp, der, oth = (float(a[0]) for a in
                            (pred.s_ev, pred.s_hp, pred.s_der, pred.s_oth))
        rows.append([float(v), ev, hp, der, oth, ev + hp + der + oth])
    _write_csv(args.out, [args.vary, "s_ev", "s_hp", "s_der", "s_oth", "s_tot"], rows)
    print(f"wrote {args.out} ({len(rows)} points)")
    return 0


def _load_factors(path):
    if path is None:
        return None
    doc = _read_json(path, "factors file")
    _validate(doc, FACTORS_SCHEMA, "factors file")
    return MitigationFactors(**doc)


def _policy_obj(ctor, kwargs, what):
    """Build a policy dataclass, mapping cross-field violations to exit 2."""
    try:
        return ctor(**kwargs)
    except ValueError as e:
        raise ConfigError(f"{what}: {e}") from e


def _scenario_from(blk, window_name, duration_h, alpha):
    return ScenarioConfig(
        trajectory=TRAJECTORIES[blk.get("trajectory", "baseline")],
        window=WINDOWS[window_name],
        temp_bin=blk.get("temp_bin", "mild"),
        duration_h=duration_h,
        alpha=alpha,
        n_draws=blk.get("n_draws", 5000),
        seed=blk.get("seed", 0),
    )


def _grid_cells(blk, templates, model, weather, factors):
    alphas = blk.get("alphas", [0.05, 0.10, 0.15, 0.20, 0.25, 0.30])
    base = blk.get("system_base_gw")
    cells = []
    for wname in WINDOWS:
        for dur in (1, 2, 3):
            for alpha in alphas:
                sc = _scenario_from(blk, wname, dur, float(alpha))
                try:
                    r = project(sc, templates, model, weather,
                                system_base_gw=base, factors=factors)
                except ValueError as e:
                    if "no templates" not in str(e):
                        raise
                    cells.append({"window": wname, "duration_h": dur,
                                  "alpha": float(alpha), "status": "no_data"})
                    continue
                cells.append({
                    "window": wname, "duration_h": dur, "alpha": float(alpha),
                    "status": "ok", "low_gw": r.lo_gw, "mean_gw": r.mean_gw,
                    "high_gw": r.hi_gw, "exceedance_prob": r.exceedance_prob,
                    "n_templates": r.n_templates,
                })
    return cells


def _cells_to_csv(path, cells):
    header = ["window", "duration_h", "alpha", "low_gw", "mean_gw", "high_gw",
              "exceedance_prob", "n_templates", "status"]
    rows = [[c.get("window"), c.get("duration_h"), c.get("alpha"),
             c.get("low_gw", float("nan")), c.get("mean_gw", float("nan")),
             c.get("high_gw", float("nan")),
             c.get("exceedance_prob", float("nan")),
             c.get("n_templates", ""), c.get("status")] for c in cells]
    _write_csv(path, header, rows)


def cmd_project(args):
    cfg = load_config(args.config)
    blk = dict(cfg.get("project", {}))
    for key in ("trajectory", "window", "temp_bin", "alpha", "n_draws",
                "seed", "system_base_gw"):
        v = getattr(args, key, None)
        if v is not None:
            blk[key] = v
    if args.duration is not None:
        blk["duration_h"] = args.duration
    _validate(blk, CONFIG_SCHEMA["properties"]["project"], "project config")
    ds = _load_dataset(args, cfg)
    surges = _load_surges(args, cfg) if args.infile else ds.surge_table()
    templates = make_templates(surges)
    _need_file(args.model, "estimator model")
    model = load_estimator(args.model)
    factors = _load_factors(args.factors)

    if args.grid:
        cells = _grid_cells(blk, templates, model, ds.weather, factors)
        out = args.out or os.path.join(_out_dir(args, cfg), "projection_table.csv")
        _cells_to_csv(out, cells)
        print(f"wrote {out} ({sum(c['status'] == 'ok' for c in cells)} populated cells)")
        return 0

    sc = _scenario_from(blk, blk.get("window", "evening"),
                        blk.get("duration_h", 2), blk.get("alpha", 0.2))
    res = project(sc, templates, model, ds.weather,
                  system_base_gw=blk.get("system_base_gw"), factors=factors)
    out = args.out or os.path.join(_out_dir(args, cfg), "projection.json")
    _write_json(out, {
        "scenario": {
            "trajectory": sc.trajectory.name, "window": sc.window.name,
            "temp_bin": sc.temp_bin, "duration_h": sc.duration_h,
            "alpha": sc.alpha, "n_draws": sc.n_draws, "seed": sc.seed,
        },
        "mean_gw": res.mean_gw, "low_gw": res.lo_gw, "high_gw": res.hi_gw,
        "exceedance_prob": res.exceedance_prob, "headroom_gw": res.headroom_gw,
        "n_templates": res.n_templates, "n_clipped_rates": res.n_clipped_rates,
    })
    print(f"wrote {out} (mean {res.mean_gw:.9g} GW)")
    return 0


def cmd_mitigate(args):
    cfg = load_config(args.config)
    policy = _read_json(_need_file(args.policy, "policy file"), "policy file")
    _validate(policy, POLICY_SCHEMA, "policy file")
    surges = _load_surges(args, cfg)
    seed = policy.get("seed", 0)

    flags = set()
    if "ev_restart" in policy:
        pol = _policy_obj(EvRestartPolicy, policy["ev_restart"], "ev_restart policy")
        times = np.arange(0.0, pol.t2 + 16.0, 1.0)
        res = gamma_ev(times, np.ones((1, times.size)), pol, seed=seed)
        g_ev = res.value
        flags.update(res.flags)
    else:
        g_ev = 0.0

    hp_blk = policy.get("hp_setpoint")
    hp_model = None
    if hp_blk is not None:
        t_ref = hp_blk.get("t_ref", 18.0)
        delta_t = surges["temp_c"].to_numpy(dtype=float) - t_ref
        hp_model = fit_piecewise(delta_t, surges["s_hp"].to_numpy(dtype=float),
                                 min_points=hp_blk.get("min_points", 10))
        flags.update(f"hp_underpowered_{r}" for r in hp_model.underpowered)

    if "der_reconnect" in policy:
        der_blk = dict(policy["der_reconnect"])
        base_blk = der_blk.pop("baseline", {})
        baseline = DerDelayModel(
            mu=base_blk.get("mu", 12.0), sigma=base_blk.get("sigma", 5.0),
            tau_min=base_blk.get("tau_min", 1.0))
        times = np.arange(0.0, 61.0, 5.0)
        res = gamma_der(times, np.full(times.size, 1.0), baseline,
                        policy=_policy_obj(DerReconnectPolicy, der_blk,
                                           "der_reconnect policy"))
        g_der = res.value
        flags.update(res.flags)
    else:
        g_der = 1.0

    rows = []
    for row in surges.itertuples(index=False):
        if hp_model is not None:
            hp_res = gamma_hp(float(row.temp_c) - hp_blk.get("t_ref", 18.0),
                              hp_blk.get("delta_t_set", 0.0), hp_model)
            g_hp = hp_res.value
            row_flags = ";".join(sorted(flags | set(hp_res.flags)))
        else:
            g_hp = 0.0
            row_flags = ";".join(sorted(flags))
        factors = MitigationFactors(g_ev, g_hp, g_der)
        s_ev = row.s_ev * (1.0 - g_ev)
        s_hp = row.s_hp * (1.0 - g_hp)
        s_der = row.s_der * g_der
        rows.append([
            row.event_id, factors.gamma_ev, factors.gamma_hp, factors.gamma_der,
            row.s_ev, row.s_hp, row.s_der, row.s_oth, row.s_tot,
            s_ev, s_hp, s_der, row.s_oth, s_ev + s_hp + s_der + row.s_oth,
            row_flags,
        ])
    header = ["event_id", "gamma_ev", "gamma_hp", "gamma_der",
              "s_ev", "s_hp", "s_der", "s_oth", "s_tot",
              "s_ev_mit", "s_hp_mit", "s_der_mit", "s_oth_mit", "s_tot_mit",
              "flags"]
    _write_csv(args.out, header, rows)
    print(f"wrote {args.out} ({len(rows)} events)")
    return 0


def cmd_report(args):
    cfg = load_config(args.config)
    blk = cfg.get("report", {})
    ds = _load_dataset(args, cfg)
    surges = _load_surges(args, cfg) if args.infile else ds.surge_table()
    templates = make_templates(surges)
    _need_file(args.model, "estimator model")
    model = load_estimator(args.model)
    factors = _load_factors(args.factors)

    out = os.path.join(_out_dir(args, cfg), "report")
    os.makedirs(out, exist_ok=True)
    cells = _grid_cells(blk, templates, model, ds.weather, factors)
    _cells_to_csv(os.path.join(out, "projection_table.csv"), cells)
    _write_json(os.path.join(out, "projection_table.json"), {
        "trajectory": blk.get("trajectory", "baseline"),
        "temp_bin": blk.get("temp_bin", "mild"),
        "cells": cells,
    })
    _write_json(os.path.join(out, "manifest.json"), {
        "tool": "surgekit",
        "version": __version__,
        "config_hash": config_hash(cfg),
        "seeds": collect_seeds(cfg),
    })
    print(f"wrote {out}/projection_table.csv, projection_table.json, manifest.json")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--out-dir", dest="out_dir", help="output directory")
    p.add_argument("--threads", type=int, help="BLAS thread cap")


def _add_train(sub, name):
    p = sub.add_parser(name, help="fit the surge estimator")
    _add_common(p)
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--out", required=True, help="model file to write")
    p.set_defaults(func=cmd_train)


def _add_sweep(sub, name):
    p = sub.add_parser(name, help="one-factor prediction sweep as CSV")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--vary", required=True)
    p.add_argument("--fix", action="append", metavar="KEY=VAL")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)


def build_parser():
    ap = argparse.ArgumentParser(
        prog="surgekit",
        description="post-outage load-surge pipeline",
    )
    ap.add_argument("--version", action="version", version=f"surgekit {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic city dataset")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("metrics", help="compute the per-event surge table")
    _add_common(p)
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--out", help="surge table CSV to write")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("empirics", help="tail statistics over the surge table")
    _add_common(p)
    p.add_argument("--in", dest="infile", help="surge table CSV")
    p.add_argument("--data", help="dataset directory (alternative to --in)")
    p.add_argument("--asset", choices=["ev", "hp", "der"])
    p.add_argument("--out", help="JSON report to write")
    p.set_defaults(func=cmd_empirics)

    p = sub.add_parser("causal", help="honest causal forest")
    csub = p.add_subparsers(dest="causal_command", required=True)
    pf = csub.add_parser("fit", help="fit a forest for one asset")
    _add_common(pf)
    pf.add_argument("--asset", choices=["ev", "hp", "der"])
    pf.add_argument("--in", dest="infile", help="surge table CSV")
    pf.add_argument("--data", help="dataset directory (alternative to --in)")
    pf.add_argument("--out", required=True, help="forest file to write")
    pf.set_defaults(func=cmd_causal_fit)
    pa = csub.add_parser("ate", help="average effect of a penetration step")
    _add_common(pa)
    pa.add_argument("--model", required=True, help="forest file")
    pa.add_argument("--scale", type=float, help="penetration step")
    pa.add_argument("--in", dest="infile", help="score fresh events from this CSV")
    pa.add_argument("--asset", choices=["ev", "hp", "der"])
    pa.add_argument("--out", required=True, help="JSON result to write")
    pa.set_defaults(func=cmd_causal_ate)

    _add_train(sub, "train")
    _add_sweep(sub, "sweep")

    p = sub.add_parser("estimator", help="estimator subcommands")
    esub = p.add_subparsers(dest="estimator_command", required=True)
    _add_train(esub, "train")
    _add_sweep(esub, "sweep")

    p = sub.add_parser("project", help="Monte Carlo restoration projection")
    _add_common(p)
    p.add_argument("--model", required=True, help="estimator model file")
    p.add_argument("--data", help="dataset directory (weather + events)")
    p.add_argument("--in", dest="infile", help="surge table CSV override")
    p.add_argument("--trajectory", choices=sorted(TRAJECTORIES))
    p.add_argument("--window", choices=sorted(WINDOWS))
    p.add_argument("--temp-bin", dest="temp_bin", choices=list(projection.TEMP_BINS))
    p.add_argument("--duration", type=int, choices=[1, 2, 3])
    p.add_argument("--alpha", type=float)
    p.add_argument("--draws", dest="n_draws", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--system-base-gw", dest="system_base_gw", type=float)
    p.add_argument("--factors", help="mitigation factors JSON")
    p.add_argument("--grid", action="store_true",
                   help="all windows x durations x alphas as CSV")
    p.add_argument("--out", help="output file")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("mitigate", help="apply mitigation policies to a surge table")
    _add_common(p)
    p.add_argument("--policy", required=True, help="policy JSON")
    p.add_argument("--in", dest="infile", help="surge table CSV")
    p.add_argument("--data", help="dataset directory (alternative to --in)")
    p.add_argument("--out", required=True, help="per-event factor CSV")
    p.set_defaults(func=cmd_mitigate)

    p = sub.add_parser("report", help="windows x durations x alpha projection grid")
    _add_common(p)
    p.add_argument("--model", required=True, help="estimator model file")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--in", dest="infile", help="surge table CSV override")
    p.add_argument("--factors", help="mitigation factors JSON")
    p.set_defaults(func=cmd_report)

    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else {}
        _thread_cap(args, cfg)
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except ArtifactError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
