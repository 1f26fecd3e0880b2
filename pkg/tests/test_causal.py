"""Honest causal forest: kernels, recovery, hygiene, serialization."""

import importlib
import os

import numpy as np
import pytest

from surgekit.causal import (
    AteResult,
    CausalData,
    CausalSample,
    ForestConfig,
    ate,
    dumps_forest,
    fit,
    loads_forest,
    local_effect,
)
from surgekit.causal import forest as forest_mod
from surgekit.causal import kernels
from surgekit.causal._split_py import scan_feature as scan_py
from surgekit.rngtools import substream


def _planted(seed, n, effect=1.5, hetero=False):
    """Confounded treatment, additive covariate signal, optional step
    heterogeneity in temperature."""
    rng = np.random.default_rng(seed)
    z = np.column_stack([
        rng.normal(8, 10, n),                       # temp
        rng.uniform(0.5, 24, n),                    # duration
        rng.integers(600, 2400, n).astype(float),   # customers
        rng.uniform(0, 24, n),                      # hour
    ])
    x = np.clip(
        0.25 + 0.02 * (z[:, 0] - 8) / 10 + 0.015 * (z[:, 1] - 12) / 12
        + 0.1 * rng.normal(size=n),
        0.0, 1.0,
    )
    tau = np.where(z[:, 0] < 0.0, 1.0, 0.2) if hetero else np.full(n, effect)
    g = 0.05 * np.sin(z[:, 3] / 24 * 2 * np.pi) + 0.01 * z[:, 1] + 0.02 * (z[:, 0] > 15)
    y = tau * x + g + 0.3 * rng.normal(size=n)
    return CausalData(x=x, y=y, z=z, feature_names=("temp", "dur", "cust", "hour"))


_SMALL_CFG = ForestConfig(n_trees=60, seed=3, nuisance_trees=30)


@pytest.fixture(scope="module")
def small_fit():
    data = _planted(11, 1200)
    return data, fit(data, _SMALL_CFG)


class TestKernel:
    def test_finds_planted_break(self):
        rng = np.random.default_rng(0)
        n = 200
        v = np.sort(rng.normal(size=n))
        w = rng.normal(size=n)
        y = w * np.where(np.arange(n) < n // 2, 2.0, -2.0) + 0.01 * rng.normal(size=n)
        gain, cut = kernels.scan_feature(v, w, y, 5, 1e-10)
        assert gain > 0
        assert abs(cut - (n // 2 - 1)) <= 2

    def test_min_leaf_bounds(self):
        rng = np.random.default_rng(1)
        n = 40
        v = np.sort(rng.normal(size=n))
        w = rng.normal(size=n)
        y = rng.normal(size=n)
        for min_leaf in (1, 5, 15):
            gain, cut = kernels.scan_feature(v, w, y, min_leaf, 1e-10)
            if cut >= 0:
                assert min_leaf - 1 <= cut <= n - min_leaf - 1

    def test_constant_feature_unsplittable(self):
        w = np.random.default_rng(2).normal(size=30)
        y = np.random.default_rng(3).normal(size=30)
        gain, cut = kernels.scan_feature(np.ones(30), w, y, 2, 1e-10)
        assert cut == -1 and gain == float("-inf")

    def test_too_small_node(self):
        gain, cut = kernels.scan_feature(
            np.arange(5.0), np.ones(5), np.ones(5), 3, 1e-10
        )
        assert cut == -1

    def test_backend_parity_bitexact(self):
        cy = pytest.importorskip("surgekit.causal._splitkern")
        rng = np.random.default_rng(4)
        for trial in range(300):
            n = int(rng.integers(4, 180))
            v = np.sort(rng.normal(size=n))
            if trial % 3 == 0:
                v = np.sort(np.round(v, 1))  # tie-heavy grids
            w = rng.normal(size=n)
            y = 1.5 * w + rng.normal(size=n)
            eps = 1e-10 * max(1.0, float(np.dot(w, w)))
            ml = int(rng.integers(1, 8))
            a = scan_py(v, w, y, ml, eps)
            b = cy.scan_feature(v, w, y, ml, eps)
            assert a[1] == b[1]
            assert a[0] == b[0] or (np.isneginf(a[0]) and np.isneginf(b[0]))


class TestValidation:
    def test_too_few_samples(self):
        data = _planted(0, 49)
        with pytest.raises(ValueError, match="at least 50"):
            fit(data, _SMALL_CFG)

    def test_constant_treatment(self):
        rng = np.random.default_rng(5)
        data = CausalData(
            x=np.full(100, 0.3),
            y=rng.normal(size=100),
            z=rng.normal(size=(100, 3)),
            feature_names=("a", "b", "c"),
        )
        with pytest.raises(ValueError, match="no treatment variation"):
            fit(data, _SMALL_CFG)

    def test_treatment_must_be_fraction(self):
        with pytest.raises(ValueError, match="fraction"):
            CausalSample(x=1.4, y=0.0, z=np.zeros(2))

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            CausalData(
                x=np.array([0.1, 0.2]),
                y=np.array([np.nan, 0.0]),
                z=np.zeros((2, 2)),
                feature_names=("a", "b"),
            )

    def test_config_bounds(self):
        with pytest.raises(ValueError):
            ForestConfig(n_trees=0)
        with pytest.raises(ValueError):
            ForestConfig(subsample_fraction=1.0)
        with pytest.raises(ValueError):
            ForestConfig(n_folds=1)

    def test_ci_must_bracket_mean(self):
        with pytest.raises(ValueError, match="bracket"):
            AteResult(
                local_effects=np.zeros(3), ate_mean=0.5, ci_lo=0.6, ci_hi=0.7,
                scale=0.1,
            )


class TestRecovery:
    def test_constant_effect_clusters(self, small_fit):
        data, model = small_fit
        tau = model.train_tau
        assert abs(tau.mean() - 1.5) < 0.25
        # constant planted effect: spread across z stays well below the
        # effect size
        assert tau.std() < 0.15 * 1.5 * 2.5

    def test_ate_recovers_planted(self, small_fit):
        data, model = small_fit
        res = ate(model, scale=0.1)
        assert abs(res.ate_mean - 0.15) < 0.05
        assert res.ci_lo <= res.ate_mean <= res.ci_hi
        assert res.local_effects.shape == (len(data),)

    def test_heterogeneous_sign_pattern(self):
        data = _planted(21, 2200, hetero=True)
        model = fit(data, ForestConfig(n_trees=80, seed=5, nuisance_trees=30))
        cold = data.z[:, 0] < 0.0
        tau = model.train_tau
        assert tau[cold].mean() > tau[~cold].mean() + 0.3
        assert tau[cold].mean() > 0.5
        assert tau[~cold].mean() < 0.7


class TestInvariants:
    def test_outcome_shift_leaves_effects(self):
        data = _planted(31, 800)
        shifted = CausalData(
            x=data.x, y=data.y + 3.7, z=data.z, feature_names=data.feature_names
        )
        cfg = ForestConfig(n_trees=30, seed=7, nuisance_trees=30)
        m1 = fit(data, cfg)
        m2 = fit(shifted, cfg)
        assert np.max(np.abs(m1.train_tau - m2.train_tau)) < 1e-10

    def test_ate_scale_linearity_exact(self, small_fit):
        _, model = small_fit
        r1 = ate(model, scale=0.1)
        r2 = ate(model, scale=0.2)
        assert r2.ate_mean == 2.0 * r1.ate_mean
        assert r2.ci_lo == 2.0 * r1.ci_lo
        assert r2.ci_hi == 2.0 * r1.ci_hi
        assert np.array_equal(r2.local_effects, 2.0 * r1.local_effects)

    def test_cross_fit_hygiene(self, small_fit):
        """A fold's predictions come only from trees that never saw it."""
        _, model = small_fit
        for t, f in zip(model.trees, model.tree_fold):
            in_fold = np.flatnonzero(model.fold_of == f)
            assert not np.isin(in_fold, t.train_idx).any()

    def test_honesty_dataflow(self):
        """Corrupting estimation-half outcomes cannot move any split."""
        rng = np.random.default_rng(41)
        n, d = 400, 3
        z = rng.normal(size=(n, d))
        w = rng.normal(size=n)
        y = 1.2 * w * (z[:, 0] > 0) + rng.normal(size=n)
        idx = rng.permutation(n)
        struct, est = idx[:200], idx[200:]
        cfg = ForestConfig(n_trees=2, seed=0, min_leaf=5)

        y2 = y.copy()
        y2[est] = rng.normal(size=est.shape[0]) * 10.0
        t1 = forest_mod._grow_tree(z, w, y, struct, est, cfg, 3, substream(0, "h"))
        t2 = forest_mod._grow_tree(z, w, y2, struct, est, cfg, 3, substream(0, "h"))
        assert np.array_equal(t1.feature, t2.feature)
        assert np.array_equal(t1.threshold, t2.threshold)
        leaves = t1.feature < 0
        assert not np.allclose(t1.beta[leaves], t2.beta[leaves])

    def test_extrapolation_flag(self, small_fit):
        data, model = small_fit
        inside = np.median(data.z, axis=0)
        le = local_effect(model, inside)
        assert not le.extrapolated
        outside = inside.copy()
        outside[1] = data.z[:, 1].max() * 10
        assert local_effect(model, outside).extrapolated

    def test_training_fold_restriction(self, small_fit):
        data, model = small_fit
        q = int(model.fold_of[0])
        rows = np.flatnonzero(model.fold_of == q)
        le = local_effect(model, data.z[rows], training_fold=q)
        assert np.allclose(le.tau, model.train_tau[rows], atol=1e-12)

    def test_dimension_mismatch(self, small_fit):
        _, model = small_fit
        with pytest.raises(ValueError, match="width"):
            local_effect(model, np.zeros(7))


class TestSerialization:
    def test_round_trip(self, small_fit):
        data, model = small_fit
        blob = dumps_forest(model)
        back = loads_forest(blob)
        assert back.feature_names == model.feature_names
        assert np.array_equal(back.train_tau, model.train_tau)
        probe = data.z[:50]
        assert np.array_equal(
            local_effect(back, probe).tau, local_effect(model, probe).tau
        )
        r1, r2 = ate(model), ate(back)
        assert r1.ate_mean == r2.ate_mean and r1.ci_lo == r2.ci_lo

    def test_deterministic_bytes(self):
        data = _planted(51, 400)
        cfg = ForestConfig(n_trees=10, seed=9, nuisance_trees=20)
        b1 = dumps_forest(fit(data, cfg))
        b2 = dumps_forest(fit(data, cfg))
        assert b1 == b2

    def test_seed_changes_forest(self):
        data = _planted(51, 400)
        b1 = dumps_forest(fit(data, ForestConfig(n_trees=10, seed=9, nuisance_trees=20)))
        b2 = dumps_forest(fit(data, ForestConfig(n_trees=10, seed=10, nuisance_trees=20)))
        assert b1 != b2

    def test_bad_magic(self):
        with pytest.raises(ValueError, match="magic"):
            loads_forest(b"NOTAFOREST" + b"\x00" * 40)


class TestBackendSwitch:
    def test_env_override_forces_python(self):
        pytest.importorskip("surgekit.causal._splitkern")
        os.environ["SURGEKIT_PURE_PYTHON"] = "1"
        try:
            importlib.reload(kernels)
            assert kernels.BACKEND == "python"
        finally:
            del os.environ["SURGEKIT_PURE_PYTHON"]
            importlib.reload(kernels)
        assert kernels.BACKEND == "cython"

    def test_forest_bitexact_across_backends(self):
        pytest.importorskip("surgekit.causal._splitkern")
        data = _planted(61, 400)
        cfg = ForestConfig(n_trees=8, seed=2, nuisance_trees=20)
        blob_cy = dumps_forest(fit(data, cfg))
        os.environ["SURGEKIT_PURE_PYTHON"] = "1"
        try:
            importlib.reload(kernels)
            blob_py = dumps_forest(fit(data, cfg))
        finally:
            del os.environ["SURGEKIT_PURE_PYTHON"]
            importlib.reload(kernels)
        assert blob_cy == blob_py


class TestSurgeTableAdapter:
    def test_from_surge_table(self):
        from surgekit.synth import gen_city

        city = gen_city(4, 60, seed=8)
        table = city.surge_table()
        data = CausalData.from_surge_table(table, "hp")
        assert data.feature_names[-1] == "hour"
        assert len(data) == len(table)
        der = CausalData.from_surge_table(table, "der")
        assert der.feature_names[-1] == "ghi_wm2"
        hours = table["restoration_hour"].to_numpy()
        assert np.allclose(data.z[:, 3], np.sin(2 * np.pi * hours / 24))

    def test_unknown_asset(self):
        import pandas as pd

        with pytest.raises(ValueError, match="unknown asset"):
            CausalData.from_surge_table(pd.DataFrame(), "gas")
