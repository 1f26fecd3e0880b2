import json
import os

import numpy as np
import pandas as pd
import pytest

from surgekit import causal, cli
from surgekit.estimator import load_estimator


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    """One full pipeline pass; tests assert on the artifacts."""
    root = tmp_path_factory.mktemp("cli")
    out = root / "out"
    cfg = {
        "out_dir": str(out),
        "data_dir": str(out / "dataset"),
        "synth": {"n_feeders": 8, "n_events": 300, "seed": 11},
        "empirics": {"bootstrap_B": 120, "seed": 3},
        "causal": {"asset": "ev", "n_trees": 40, "seed": 1, "scale": 0.1},
        "estimator": {
            "model": {"d_model": 16, "n_layers": 1, "n_heads": 2,
                      "head_hidden": 8, "ffn_hidden": 32},
            "train": {"epochs": 2, "seed": 2},
        },
        "project": {"trajectory": "policy", "temp_bin": "cool",
                    "n_draws": 120, "seed": 0},
        "report": {"trajectory": "policy", "temp_bin": "cool",
                   "alphas": [0.1, 0.2, 0.3], "n_draws": 120, "seed": 0},
    }
    cfg_path = root / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    policy = {
        "seed": 0,
        "ev_restart": {"t1": 0.0, "t2": 15.0, "trials": 500},
        "hp_setpoint": {"delta_t_set": 2.0, "t_ref": 18.0},
        "der_reconnect": {"tau_min": 0.5, "tau_max": 15.0,
                          "baseline": {"mu": 12.0, "sigma": 5.0, "tau_min": 1.0}},
    }
    pol_path = root / "policies.json"
    pol_path.write_text(json.dumps(policy))

    c = ["--config", str(cfg_path)]
    assert cli.main(["synth", *c]) == 0
    assert cli.main(["metrics", *c]) == 0
    assert cli.main(["empirics", *c]) == 0
    assert cli.main(["causal", "fit", *c, "--in", str(out / "surges.csv"),
                     "--out", str(out / "forest.bin")]) == 0
    assert cli.main(["causal", "ate", "--model", str(out / "forest.bin"),
                     "--scale", "0.1", "--out", str(out / "ate.json")]) == 0
    assert cli.main(["train", *c, "--out", str(out / "model.bin")]) == 0
    assert cli.main(["sweep", "--model", str(out / "model.bin"),
                     "--vary", "duration", "--fix", "hour=20",
                     "--out", str(out / "sweep.csv")]) == 0
    assert cli.main(["project", *c, "--model", str(out / "model.bin"),
                     "--window", "night", "--duration", "2", "--alpha", "0.3",
                     "--out", str(out / "proj.json")]) == 0
    assert cli.main(["project", *c, "--model", str(out / "model.bin"),
                     "--grid", "--out", str(out / "projection_table.csv")]) == 0
    assert cli.main(["mitigate", "--policy", str(pol_path),
                     "--in", str(out / "surges.csv"),
                     "--out", str(out / "mitigated.csv")]) == 0
    assert cli.main(["report", *c, "--model", str(out / "model.bin")]) == 0
    return {"root": root, "out": out, "cfg": cfg, "cfg_path": cfg_path,
            "pol_path": pol_path}


class TestArtifacts:
    def test_synth_and_metrics(self, run):
        out = run["out"]
        assert (out / "dataset").is_dir()
        surges = pd.read_csv(out / "surges.csv")
        assert len(surges) == 300
        assert {"event_id", "s_tot", "s_ev", "r_ev", "p_base_kw"} <= set(surges.columns)

    def test_empirics_document(self, run):
        doc = json.loads((run["out"] / "empirics.json").read_text())
        assert set(doc) == {"ev", "hp", "der"}
        for asset in doc.values():
            assert len(asset["band_stats"]) == 4
            assert len(asset["adjacent_tests"]) == 3

    def test_causal_artifacts(self, run):
        out = run["out"]
        model = causal.load_forest(out / "forest.bin")
        assert model.config.n_trees == 40
        ate = json.loads((out / "ate.json").read_text())
        assert ate["scale"] == 0.1
        assert ate["ci_lo"] <= ate["ate_mean"] <= ate["ci_hi"]
        assert ate["n_events"] == 300

    def test_estimator_artifacts(self, run):
        out = run["out"]
        model = load_estimator(out / "model.bin")
        assert model.config.d_model == 16
        rep = json.loads((out / "model.bin.report.json").read_text())
        assert set(rep["r2"]) == {"s_ev", "s_hp", "s_der", "s_oth"}
        assert rep["epochs_run"] >= 1

    def test_sweep_table(self, run):
        df = pd.read_csv(run["out"] / "sweep.csv")
        assert list(df.columns) == ["duration", "s_ev", "s_hp", "s_der", "s_oth", "s_tot"]
        assert len(df) == 13
        assert np.allclose(df["s_tot"],
                           df[["s_ev", "s_hp", "s_der", "s_oth"]].sum(axis=1),
                           atol=1e-8)

    def test_projection_json(self, run):
        doc = json.loads((run["out"] / "proj.json").read_text())
        assert doc["scenario"]["window"] == "night"
        assert doc["scenario"]["alpha"] == 0.3
        assert doc["low_gw"] <= doc["mean_gw"] <= doc["high_gw"]
        assert 0.0 <= doc["exceedance_prob"] <= 1.0

    def test_projection_grid(self, run):
        df = pd.read_csv(run["out"] / "projection_table.csv")
        assert len(df) == 4 * 3 * 6      # windows x durations x default alphas
        assert set(df["status"]) <= {"ok", "no_data"}
        ok = df[df["status"] == "ok"]
        assert len(ok) > 0
        assert (ok["low_gw"] <= ok["mean_gw"]).all()
        assert (ok["mean_gw"] <= ok["high_gw"]).all()

    def test_mitigated_factors_logged_per_event(self, run):
        df = pd.read_csv(run["out"] / "mitigated.csv")
        assert len(df) == 300
        assert df["gamma_ev"].nunique() == 1           # fleet-level policy
        assert df["gamma_hp"].nunique() > 1            # depends on event dT
        assert (df["s_ev_mit"].abs() <= df["s_ev"].abs() + 1e-12).all()
        got = df["s_tot_mit"]
        want = df[["s_ev_mit", "s_hp_mit", "s_der_mit", "s_oth_mit"]].sum(axis=1)
        assert np.allclose(got, want, atol=1e-8)

    def test_report_bundle_and_manifest(self, run):
        rep = run["out"] / "report"
        man = json.loads((rep / "manifest.json").read_text())
        assert man["tool"] == "surgekit"
        assert len(man["config_hash"]) == 64
        assert man["seeds"]["synth"] == 11
        cells = json.loads((rep / "projection_table.json").read_text())["cells"]
        assert len(cells) == 4 * 3 * 3

    def test_report_rerun_is_byte_identical(self, run):
        rep = run["out"] / "report"
        before = {p.name: p.read_bytes() for p in rep.iterdir()}
        assert cli.main(["report", "--config", str(run["cfg_path"]),
                         "--model", str(run["out"] / "model.bin")]) == 0
        after = {p.name: p.read_bytes() for p in rep.iterdir()}
        assert before == after


class TestConfigHash:
    def test_semantic_fields_move_the_hash(self, run):
        cfg = dict(run["cfg"])
        h0 = cli.config_hash(cfg)
        bumped = {**cfg, "synth": {**cfg["synth"], "seed": 12}}
        assert cli.config_hash(bumped) != h0

    def test_plumbing_fields_do_not(self, run):
        cfg = dict(run["cfg"])
        h0 = cli.config_hash(cfg)
        moved = {**cfg, "out_dir": "/elsewhere", "threads": 4}
        assert cli.config_hash(moved) == h0


class TestErrors:
    def test_unknown_config_key_exits_2_with_pointer(self, run, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"synth": {"n_events": 50, "bogus": 1}}')
        assert cli.main(["synth", "--config", str(bad)]) == 2
        assert "/synth/bogus" in capsys.readouterr().err

    def test_alpha_out_of_range_exits_2(self, run, tmp_path, capsys):
        bad = tmp_path / "bad2.json"
        bad.write_text('{"project": {"alpha": 1.7}}')
        rc = cli.main(["project", "--config", str(bad),
                       "--model", str(run["out"] / "model.bin"),
                       "--out", str(tmp_path / "x.json")])
        assert rc == 2
        assert "/project/alpha" in capsys.readouterr().err

    def test_missing_artifact_exits_1_naming_it(self, run, tmp_path, capsys):
        missing = run["out"] / "nope.bin"
        rc = cli.main(["project", "--config", str(run["cfg_path"]),
                       "--model", str(missing),
                       "--out", str(tmp_path / "x.json")])
        assert rc == 1
        assert str(missing) in capsys.readouterr().err

    def test_missing_dataset_dir_exits_1(self, tmp_path, capsys):
        rc = cli.main(["metrics", "--data", str(tmp_path / "absent"),
                       "--out", str(tmp_path / "s.csv")])
        assert rc == 1
        assert "absent" in capsys.readouterr().err

    def test_cross_field_policy_violation_exits_2(self, run, tmp_path, capsys):
        bad = tmp_path / "pol.json"
        bad.write_text('{"ev_restart": {"t1": 9.0, "t2": 2.0}}')
        rc = cli.main(["mitigate", "--policy", str(bad),
                       "--in", str(run["out"] / "surges.csv"),
                       "--out", str(tmp_path / "m.csv")])
        assert rc == 2
        assert "t1" in capsys.readouterr().err

    def test_sweep_rejects_unknown_keys(self, run, tmp_path, capsys):
        rc = cli.main(["sweep", "--model", str(run["out"] / "model.bin"),
                       "--vary", "nonsense", "--out", str(tmp_path / "s.csv")])
        assert rc == 2
        rc = cli.main(["sweep", "--model", str(run["out"] / "model.bin"),
                       "--vary", "duration", "--fix", "duration=2",
                       "--out", str(tmp_path / "s.csv")])
        assert rc == 2

    def test_no_subcommand_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            cli.main([])
        assert exc.value.code == 2

    def test_out_dir_env_override(self, run, tmp_path, monkeypatch):
        monkeypatch.setenv("SURGEKIT_OUT_DIR", str(tmp_path))
        rc = cli.main(["metrics", "--data", str(run["out"] / "dataset")])
        assert rc == 0
        assert (tmp_path / "surges.csv").exists()
