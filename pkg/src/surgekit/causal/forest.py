"""Honest causal forest for continuous-treatment effect estimation.

Estimates how asset penetration (treatment, a fraction) shifts the surge
ratio (outcome), controlling for event covariates.  The design follows the
generalized-random-forest recipe:

* Local centering: outcome and treatment are residualized against the
  covariates with out-of-fold random-forest regressions, so leaf slopes
  estimate partial effects rather than confounded associations.
* Cross-fitting: every tree belongs to a held-out fold and trains only on
  the other folds; a training event's own effect comes exclusively from
  trees that never saw it.
* Honesty: within a tree the subsample splits into a structure half that
  chooses splits and an estimation half that fits leaf slopes, so split
  selection never reads the outcomes used for estimation.
* Confidence intervals: trees come in bags of two sharing a half-sample of
  the fold universe; the between-bag minus within-bag variance isolates the
  sampling noise of the forest average (bootstrap-of-little-bags style), and
  a plug-in term adds the evaluation-set variance.  The combination is
  deliberately conservative.

Split search itself lives in a swappable kernel (see kernels.py) with a
compiled and a pure-numpy backend that agree bit for bit.
"""

import io
import json
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.ensemble import RandomForestRegressor

from ..empirics import RATE_COLUMN, SURGE_COLUMN
from ..rngtools import stream_key, substream
from . import kernels

Z95 = 1.959963984540054

#: Confounders used when building samples from a surge table.  Hour of day
#: enters both as a (sin, cos) pair and raw, so trees can pick either a
#: cyclic or a monotone representation.
BASE_FEATURES = ("temp_c", "duration_h", "n_customers", "hour_sin", "hour_cos", "hour")


@dataclass(frozen=True)
class CausalSample:
    """One event: treatment (penetration fraction), outcome (surge ratio),
    confounder vector."""

    x: float
    y: float
    z: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        object.__setattr__(self, "z", z)
        if not (np.isfinite(self.x) and np.isfinite(self.y) and np.isfinite(z).all()):
            raise ValueError("sample fields must be finite")
        if not 0.0 <= self.x <= 1.0:
            raise ValueError(f"treatment must be a fraction in [0, 1], got {self.x}")


@dataclass(frozen=True)
class CausalData:
    """Column container for a set of causal samples."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    feature_names: tuple

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        z = np.asarray(self.z, dtype=float)
        if z.ndim != 2:
            raise ValueError("confounders must be a 2-d array")
        if not (x.shape[0] == y.shape[0] == z.shape[0]):
            raise ValueError("treatment, outcome, confounders must share length")
        if len(self.feature_names) != z.shape[1]:
            raise ValueError("feature_names must match confounder width")
        if not (np.isfinite(x).all() and np.isfinite(y).all() and np.isfinite(z).all()):
            raise ValueError("sample fields must be finite")
        if x.min(initial=0.0) < 0.0 or x.max(initial=0.0) > 1.0:
            raise ValueError("treatment must be a fraction in [0, 1]")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    def __len__(self):
        return self.x.shape[0]

    @classmethod
    def from_samples(cls, samples):
        samples = list(samples)
        if not samples:
            raise ValueError("empty sample list")
        z = np.stack([s.z for s in samples])
        names = tuple(f"z{i}" for i in range(z.shape[1]))
        return cls(
            x=np.array([s.x for s in samples]),
            y=np.array([s.y for s in samples]),
            z=z,
            feature_names=names,
        )

    @classmethod
    def from_surge_table(cls, df, asset):
        """Build samples for one asset from a surge table.

        Treatment is the asset's penetration, outcome its surge component.
        DER adds irradiance to the confounders because its surge mechanism
        only exists in daylight.
        """
        if asset not in RATE_COLUMN:
            raise ValueError(f"unknown asset {asset!r}")
        names = BASE_FEATURES + (("ghi_wm2",) if asset == "der" else ())
        hour = df["restoration_hour"].to_numpy(dtype=float)
        cols = {
            "hour_sin": np.sin(2.0 * np.pi * hour / 24.0),
            "hour_cos": np.cos(2.0 * np.pi * hour / 24.0),
            "hour": hour,
        }
        z = np.column_stack(
            [cols[n] if n in cols else df[n].to_numpy(dtype=float) for n in names]
        )
        return cls(
            x=df[RATE_COLUMN[asset]].to_numpy(dtype=float),
            y=df[SURGE_COLUMN[asset]].to_numpy(dtype=float),
            z=z,
            feature_names=names,
        )


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 500
    subsample_fraction: float = 0.5
    min_leaf: int = 10
    honesty_fraction: float = 0.5
    n_folds: int = 5
    max_depth: int = 25
    mtry: int = None
    seed: int = 0
    # Nuisance regressions for local centering (out-of-fold conditional
    # means of Y and X given Z).
    nuisance_trees: int = 100
    nuisance_min_leaf: int = 5

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        for name in ("subsample_fraction", "honesty_fraction"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must be in (0, 1)")
        if self.n_folds < 2:
            raise ValueError("n_folds must be >= 2")
        if self.min_leaf < 1 or self.max_depth < 1:
            raise ValueError("min_leaf and max_depth must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1 when given")


@dataclass(frozen=True)
class AteResult:
    """Average treatment effect at the requested penetration step."""

    local_effects: np.ndarray
    ate_mean: float
    ci_lo: float
    ci_hi: float
    scale: float

    def __post_init__(self):
        if not self.ci_lo <= self.ate_mean <= self.ci_hi:
            raise ValueError("confidence interval must bracket the mean")


@dataclass(frozen=True)
class LocalEffects:
    """Per-unit-treatment effects with out-of-hull flags."""

    tau: np.ndarray
    extrapolated: np.ndarray


class _Tree:
    """Flat-array regression-slope tree.  feature < 0 marks a leaf.

    Leaves carry the estimation-half centered moments (sxy, sxx) alongside
    the slope beta = sxy/sxx.  Forest predictions pool the moments across
    trees and divide once (a leaf-variance-weighted slope average), which is
    far less noisy than averaging the per-leaf ratios.
    """

    __slots__ = ("feature", "threshold", "left", "right", "beta",
                 "sxy", "sxx", "train_idx")

    def __init__(self, feature, threshold, left, right, beta, sxy, sxx,
                 train_idx=None):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.beta = beta
        self.sxy = sxy
        self.sxx = sxx
        # Subsample the tree was grown on; kept for hygiene audits, not
        # needed for prediction and not serialized.
        self.train_idx = train_idx

    def leaf_of(self, z):
        idx = np.zeros(z.shape[0], dtype=np.int64)
        rows = np.arange(z.shape[0])
        for _ in range(self.feature.shape[0] + 1):
            feat = self.feature[idx]
            at_leaf = feat < 0
            if at_leaf.all():
                break
            go_left = z[rows, np.maximum(feat, 0)] <= self.threshold[idx]
            nxt = np.where(go_left, self.left[idx], self.right[idx])
            idx = np.where(at_leaf, idx, nxt)
        return idx

    def predict(self, z):
        """Per-point leaf slope (single-tree estimate)."""
        return self.beta[self.leaf_of(z)]

    def moments(self, z):
        idx = self.leaf_of(z)
        return self.sxy[idx], self.sxx[idx]


def _pooled_tau(trees, z):
    """Forest effect estimate: leaf moments pooled over trees, one ratio."""
    num = np.zeros(z.shape[0])
    den = np.zeros(z.shape[0])
    for t in trees:
        sxy, sxx = t.moments(z)
        num += sxy
        den += sxx
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0.0)


@dataclass
class ForestModel:
    """Fitted honest causal forest.  Immutable after fit; safe to share."""

    config: ForestConfig
    feature_names: tuple
    trees: list
    tree_fold: np.ndarray
    bag_fold: np.ndarray
    bag_tree_means: np.ndarray
    bag_mean: np.ndarray
    fold_of: np.ndarray
    train_tau: np.ndarray
    hull_lo: np.ndarray
    hull_hi: np.ndarray

    @property
    def n_train(self):
        return self.fold_of.shape[0]


def _leaf_moments(w, y):
    """Centered moments (sxy, sxx) of y on w, or None when degenerate."""
    if w.shape[0] < 2:
        return None
    dw = w - w.mean()
    sxx = float(np.dot(dw, dw))
    if sxx <= 1e-12:
        return None
    return float(np.dot(dw, y - y.mean())), sxx


def _grow_tree(z, w, y, struct_idx, est_idx, cfg, mtry, rng, keep_idx=None):
    """Grow one honest tree.

    `struct_idx` rows drive split search, `est_idx` rows fit leaf slopes.
    Split search maintains one index array per feature, presorted once at
    the root and stable-partitioned at every split, so both kernel backends
    see identical input orderings.  Degenerate estimation leaves inherit
    the parent's moments (and hence its slope).
    """
    d = z.shape[1]
    n_all = z.shape[0]
    feature, threshold, left, right = [], [], [], []
    beta, msxy, msxx = [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        beta.append(0.0)
        msxy.append(0.0)
        msxx.append(0.0)
        return len(feature) - 1

    root_mom = _leaf_moments(w[est_idx], y[est_idx])
    if root_mom is None:
        root_mom = _leaf_moments(w[struct_idx], y[struct_idx])
    if root_mom is None:
        root_mom = (0.0, 0.0)

    root_ord = [struct_idx[np.argsort(z[struct_idx, f], kind="stable")] for f in range(d)]
    stack = [(new_node(), root_ord, est_idx, 0, root_mom)]
    while stack:
        nid, ords, est, depth, parent_mom = stack.pop()
        mom = _leaf_moments(w[est], y[est])
        if mom is None:
            mom = parent_mom
        msxy[nid], msxx[nid] = mom
        beta[nid] = mom[0] / mom[1] if mom[1] > 0.0 else 0.0

        m = ords[0].shape[0]
        if (
            depth >= cfg.max_depth
            or m < 2 * cfg.min_leaf
            or est.shape[0] < 2 * cfg.min_leaf
        ):
            continue

        wc = w[ords[0]]
        eps = 1e-10 * max(1.0, float(np.dot(wc, wc)))
        cand = np.sort(rng.choice(d, size=min(mtry, d), replace=False))
        best_gain, best_cut, best_f, best_ord = float("-inf"), -1, -1, None
        for f in cand:
            o = ords[f]
            gain, cut = kernels.scan_feature(z[o, f], w[o], y[o], cfg.min_leaf, eps)
            if gain > best_gain:
                best_gain, best_cut, best_f, best_ord = gain, cut, int(f), o
        if best_cut < 0 or not best_gain > 0.0:
            continue

        v = z[best_ord, best_f]
        thr = 0.5 * (v[best_cut] + v[best_cut + 1])
        if thr >= v[best_cut + 1]:
            # Adjacent floats: pin the threshold so `<= thr` reproduces the
            # positional cut exactly.
            thr = float(v[best_cut])
        go_left = np.zeros(n_all, dtype=bool)
        go_left[best_ord[: best_cut + 1]] = True

        ords_l = [o[go_left[o]] for o in ords]
        ords_r = [o[~go_left[o]] for o in ords]
        est_mask = z[est, best_f] <= thr
        lid, rid = new_node(), new_node()
        feature[nid] = best_f
        threshold[nid] = float(thr)
        left[nid] = lid
        right[nid] = rid
        stack.append((rid, ords_r, est[~est_mask], depth + 1, mom))
        stack.append((lid, ords_l, est[est_mask], depth + 1, mom))

    return _Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(beta, dtype=float),
        np.asarray(msxy, dtype=float),
        np.asarray(msxx, dtype=float),
        train_idx=keep_idx,
    )


def _as_data(samples):
    if isinstance(samples, CausalData):
        return samples
    return CausalData.from_samples(samples)


def _nuisance_seed(seed, fold, which):
    return int(stream_key(seed, "nuisance", fold, which)[0] % np.uint64(2**31))


class _LeafMeanSmoother:
    """Random-forest conditional-mean smoother with target-shift stability.

    Tree structure is learned on a copy of the target quantized to a
    power-of-two grid about 1e-6 of its spread; predictions are per-tree
    leaf means of the raw target, averaged over trees.  Adding a constant
    to the target then cannot flip any split (float-rounding perturbations
    stay far inside a quantization cell), so downstream residuals shift
    benignly instead of jumping when a near-tied split flips.
    """

    def __init__(self, n_estimators, min_samples_leaf, random_state):
        self._rf = RandomForestRegressor(
            n_estimators=n_estimators,
            min_samples_leaf=min_samples_leaf,
            random_state=random_state,
            n_jobs=1,
        )
        self._tables = None

    @staticmethod
    def _quantum(t):
        s = float(np.std(t))
        if s <= 0.0 or not np.isfinite(s):
            return 0.0
        return 2.0 ** round(math.log2(s * 1e-6))

    def fit(self, z, t):
        q = self._quantum(t)
        tq = np.round(t / q) * q if q > 0.0 else t
        self._rf.fit(z, tq)
        leaves = self._rf.apply(z)
        self._tables = []
        for k, est in enumerate(self._rf.estimators_):
            nc = est.tree_.node_count
            counts = np.bincount(leaves[:, k], minlength=nc)
            sums = np.bincount(leaves[:, k], weights=t, minlength=nc)
            self._tables.append(sums / np.maximum(counts, 1))
        return self

    def predict(self, z):
        leaves = self._rf.apply(z)
        out = np.zeros(z.shape[0])
        for k, table in enumerate(self._tables):
            out += table[leaves[:, k]]
        return out / len(self._tables)


def fit(samples, config=None):
    """Fit the honest causal forest.  See the module docstring for the
    estimation protocol."""
    data = _as_data(samples)
    cfg = config if config is not None else ForestConfig()
    n = len(data)
    if n < 50:
        raise ValueError(f"need at least 50 samples, got {n}")
    if n < 2 * cfg.min_leaf:
        raise ValueError(f"need at least {2 * cfg.min_leaf} samples for min_leaf={cfg.min_leaf}")
    if np.ptp(data.x) == 0.0:
        raise ValueError("no treatment variation")

    d = data.z.shape[1]
    mtry = cfg.mtry if cfg.mtry is not None else math.ceil(math.sqrt(d))

    # Demean once so slope arithmetic runs near the origin; slopes are
    # analytically shift-invariant so the offsets are not stored.
    y0 = data.y - data.y.mean()
    w0 = data.x - data.x.mean()
    z = data.z

    perm = substream(cfg.seed, "folds").permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[perm] = np.arange(n) % cfg.n_folds

    # Local centering: per fold, nuisance forests trained out-of-fold
    # predict each sample's conditional mean, leaving orthogonalized
    # residuals.
    y_res = np.empty(n)
    w_res = np.empty(n)
    for q in range(cfg.n_folds):
        hold = fold_of == q
        sm_y = _LeafMeanSmoother(
            cfg.nuisance_trees, cfg.nuisance_min_leaf,
            _nuisance_seed(cfg.seed, q, "y"),
        ).fit(z[~hold], y0[~hold])
        sm_w = _LeafMeanSmoother(
            cfg.nuisance_trees, cfg.nuisance_min_leaf,
            _nuisance_seed(cfg.seed, q, "x"),
        ).fit(z[~hold], w0[~hold])
        y_res[hold] = y0[hold] - sm_y.predict(z[hold])
        w_res[hold] = w0[hold] - sm_w.predict(z[hold])

    # Trees per held-out fold, rounded up to whole bags of two.
    per_fold = 2 * math.ceil(cfg.n_trees / (2 * cfg.n_folds))
    trees, tree_fold, bag_fold = [], [], []
    for f in range(cfg.n_folds):
        universe = np.flatnonzero(fold_of != f)
        ssize = min(int(cfg.subsample_fraction * universe.shape[0]), universe.shape[0] // 2)
        ssize = max(ssize, 2)
        for g in range(per_fold // 2):
            half = substream(cfg.seed, "bag", f, g).permutation(universe)[
                : universe.shape[0] // 2
            ]
            for t in range(2):
                rng = substream(cfg.seed, "tree", f, g, t)
                sub = rng.choice(half, size=min(ssize, half.shape[0]), replace=False)
                order = rng.permutation(sub.shape[0])
                n_struct = max(1, int(cfg.honesty_fraction * sub.shape[0]))
                struct_idx = sub[order[:n_struct]]
                est_idx = sub[order[n_struct:]]
                trees.append(
                    _grow_tree(z, w_res, y_res, struct_idx, est_idx, cfg, mtry, rng,
                               keep_idx=sub)
                )
                tree_fold.append(f)
            bag_fold.append(f)
    tree_fold = np.asarray(tree_fold, dtype=np.int64)
    bag_fold = np.asarray(bag_fold, dtype=np.int64)

    # Cross-fit training effects plus the per-bag means the CI needs: each
    # fold's samples are predicted only by that fold's held-out trees.
    train_tau = np.empty(n)
    bag_tree_means = np.zeros((bag_fold.shape[0], 2))
    bag_mean = np.zeros(bag_fold.shape[0])
    for f in range(cfg.n_folds):
        rows = np.flatnonzero(fold_of == f)
        tids = np.flatnonzero(tree_fold == f)
        pairs = [trees[t].moments(z[rows]) for t in tids]
        sxy = np.stack([p[0] for p in pairs])
        sxx = np.stack([p[1] for p in pairs])
        num, den = sxy.sum(axis=0), sxx.sum(axis=0)
        train_tau[rows] = np.divide(num, den, out=np.zeros_like(num), where=den > 0.0)
        # CI statistics: pooled-over-points slope per tree and per bag.
        # Pooling before the ratio keeps the tree-level statistic stable
        # enough that the within-bag subtraction below it is not noise.
        tn, td = sxy.sum(axis=1), sxx.sum(axis=1)
        r_tree = np.divide(tn, td, out=np.zeros_like(tn), where=td > 0.0)
        bids = np.flatnonzero(bag_fold == f)
        for k, b in enumerate(bids):
            a, c = 2 * k, 2 * k + 1
            bag_tree_means[b, 0] = r_tree[a]
            bag_tree_means[b, 1] = r_tree[c]
            bn, bd = tn[a] + tn[c], td[a] + td[c]
            bag_mean[b] = bn / bd if bd > 0.0 else 0.0

    return ForestModel(
        config=cfg,
        feature_names=data.feature_names,
        trees=trees,
        tree_fold=tree_fold,
        bag_fold=bag_fold,
        bag_tree_means=bag_tree_means,
        bag_mean=bag_mean,
        fold_of=fold_of,
        train_tau=train_tau,
        hull_lo=z.min(axis=0),
        hull_hi=z.max(axis=0),
    )


def _check_z(model, z):
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    if single:
        z = z.reshape(1, -1)
    if z.ndim != 2 or z.shape[1] != len(model.feature_names):
        raise ValueError(
            f"confounder width {z.shape[-1]} does not match training width "
            f"{len(model.feature_names)}"
        )
    return z, single


def local_effect(model, z, training_fold=None):
    """Effect per unit treatment at covariates `z`.

    Fresh points aggregate every tree and carry an `extrapolated` flag when
    any coordinate leaves the training hull.  For a training point pass its
    fold as `training_fold` (or use `model.train_tau`, computed at fit time
    under the same discipline): only trees holding that fold out contribute.
    """
    zq, single = _check_z(model, z)
    if training_fold is None:
        tids = range(len(model.trees))
    else:
        tids = np.flatnonzero(model.tree_fold == training_fold)
        if tids.size == 0:
            raise ValueError(f"no trees hold out fold {training_fold}")
    tau = _pooled_tau([model.trees[t] for t in tids], zq)
    outside = (zq < model.hull_lo) | (zq > model.hull_hi)
    flags = outside.any(axis=1)
    if single:
        return LocalEffects(tau=float(tau[0]), extrapolated=bool(flags[0]))
    return LocalEffects(tau=tau, extrapolated=flags)


def _bag_variance(bag_mean, bag_tree_means, bag_fold, fold_weights):
    """Half-sample bag variance of the forest average.

    Within each fold, between-bag variance minus half the within-bag
    (tree-randomization) variance isolates the half-sample data noise.  The
    fold terms combine with first-power weights: fold forests share most of
    their training data, so their errors are treated as fully correlated,
    the conservative end.
    """
    total = 0.0
    for f, wgt in enumerate(fold_weights):
        rows = np.flatnonzero(bag_fold == f)
        if rows.shape[0] < 2:
            continue
        within = bag_tree_means[rows].var(axis=1, ddof=1)
        v = bag_mean[rows].var(ddof=1) - within.mean() / 2.0
        total += wgt * max(0.0, v)
    return total


def ate(model, samples=None, scale=0.1):
    """Average effect of a `scale` penetration increase (default +10 pp).

    With `samples=None` the training events are used with their stored
    cross-fit effects.  Fresh samples are scored by the whole forest.  The
    95% interval combines the little-bags forest variance with the
    evaluation-sample variance of the local effects.
    """
    if samples is None:
        tau = model.train_tau
        sizes = np.bincount(model.fold_of, minlength=model.config.n_folds).astype(float)
        weights = sizes / sizes.sum()
        v_forest = _bag_variance(
            model.bag_mean, model.bag_tree_means, model.bag_fold, weights
        )
    else:
        if isinstance(samples, CausalData):
            zq = samples.z
        else:
            zq = np.asarray(samples, dtype=float)
        zq, _ = _check_z(model, zq)
        pairs = [t.moments(zq) for t in model.trees]
        sxy = np.stack([p[0] for p in pairs])
        sxx = np.stack([p[1] for p in pairs])
        num, den = sxy.sum(axis=0), sxx.sum(axis=0)
        tau = np.divide(num, den, out=np.zeros_like(num), where=den > 0.0)
        # All bags score the same points here, so pool them into a single
        # group; cross-fold spread lands in the between-bag term, which
        # only widens the interval.
        tn, td = sxy.sum(axis=1), sxx.sum(axis=1)
        r_tree = np.divide(tn, td, out=np.zeros_like(tn), where=td > 0.0)
        btm = np.column_stack([r_tree[0::2], r_tree[1::2]])
        bn, bd = tn[0::2] + tn[1::2], td[0::2] + td[1::2]
        bmean = np.divide(bn, bd, out=np.zeros_like(bn), where=bd > 0.0)
        v_forest = _bag_variance(
            bmean, btm, np.zeros(btm.shape[0], dtype=np.int64), [1.0]
        )

    n = tau.shape[0]
    v_eval = float(tau.var(ddof=1)) / n if n >= 2 else 0.0
    halfwidth = Z95 * math.sqrt(v_forest + v_eval)
    mean_tau = float(tau.mean())
    # Keep every output a plain `scale * <unscaled>` product so doubling the
    # scale doubles the result exactly.
    ate_mean = scale * mean_tau
    half = scale * halfwidth
    return AteResult(
        local_effects=scale * tau,
        ate_mean=ate_mean,
        ci_lo=ate_mean - half,
        ci_hi=ate_mean + half,
        scale=scale,
    )


# ---------------------------------------------------------------------------
# Serialization: versioned binary container, magic "SGCF1".

_MAGIC = b"SGCF1\x00"

_CONFIG_FIELDS = (
    "n_trees", "subsample_fraction", "min_leaf", "honesty_fraction",
    "n_folds", "max_depth", "mtry", "seed", "nuisance_trees",
    "nuisance_min_leaf",
)


def _pack_arrays(model):
    offsets = np.zeros(len(model.trees) + 1, dtype=np.int64)
    for i, t in enumerate(model.trees):
        offsets[i + 1] = offsets[i] + t.feature.shape[0]
    return {
        "fold_of": model.fold_of.astype("<i8"),
        "train_tau": model.train_tau.astype("<f8"),
        "tree_fold": model.tree_fold.astype("<i8"),
        "bag_fold": model.bag_fold.astype("<i8"),
        "bag_tree_means": model.bag_tree_means.astype("<f8"),
        "bag_mean": model.bag_mean.astype("<f8"),
        "hull_lo": model.hull_lo.astype("<f8"),
        "hull_hi": model.hull_hi.astype("<f8"),
        "tree_offsets": offsets.astype("<i8"),
        "node_feature": np.concatenate([t.feature for t in model.trees]).astype("<i8"),
        "node_threshold": np.concatenate([t.threshold for t in model.trees]).astype("<f8"),
        "node_left": np.concatenate([t.left for t in model.trees]).astype("<i8"),
        "node_right": np.concatenate([t.right for t in model.trees]).astype("<i8"),
        "node_beta": np.concatenate([t.beta for t in model.trees]).astype("<f8"),
        "node_sxy": np.concatenate([t.sxy for t in model.trees]).astype("<f8"),
        "node_sxx": np.concatenate([t.sxx for t in model.trees]).astype("<f8"),
    }


def dumps_forest(model):
    """Serialize a fitted model to bytes (deterministic for a fixed fit)."""
    arrays = _pack_arrays(model)
    header = {
        "version": 1,
        "config": {k: getattr(model.config, k) for k in _CONFIG_FIELDS},
        "feature_names": list(model.feature_names),
        "arrays": [[k, str(v.dtype), list(v.shape)] for k, v in arrays.items()],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = io.BytesIO()
    out.write(_MAGIC)
    out.write(struct.pack("<I", len(head)))
    out.write(head)
    for v in arrays.values():
        out.write(v.tobytes(order="C"))
    return out.getvalue()


def loads_forest(blob):
    """Inverse of dumps_forest."""
    if blob[: len(_MAGIC)] != _MAGIC:
        raise ValueError("not a forest container (bad magic)")
    pos = len(_MAGIC)
    (hlen,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    header = json.loads(blob[pos : pos + hlen].decode("utf-8"))
    pos += hlen
    if header["version"] != 1:
        raise ValueError(f"unsupported container version {header['version']}")
    arrays = {}
    for name, dtype, shape in header["arrays"]:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        a = np.frombuffer(blob, dtype=np.dtype(dtype), count=count, offset=pos)
        arrays[name] = a.reshape(shape).copy()
        pos += a.nbytes

    offs = arrays["tree_offsets"]
    trees = [
        _Tree(
            arrays["node_feature"][offs[i] : offs[i + 1]].astype(np.int64),
            arrays["node_threshold"][offs[i] : offs[i + 1]].astype(float),
            arrays["node_left"][offs[i] : offs[i + 1]].astype(np.int64),
            arrays["node_right"][offs[i] : offs[i + 1]].astype(np.int64),
            arrays["node_beta"][offs[i] : offs[i + 1]].astype(float),
            arrays["node_sxy"][offs[i] : offs[i + 1]].astype(float),
            arrays["node_sxx"][offs[i] : offs[i + 1]].astype(float),
        )
        for i in range(offs.shape[0] - 1)
    ]
    cfg = ForestConfig(**header["config"])
    return ForestModel(
        config=cfg,
        feature_names=tuple(header["feature_names"]),
        trees=trees,
        tree_fold=arrays["tree_fold"].astype(np.int64),
        bag_fold=arrays["bag_fold"].astype(np.int64),
        bag_tree_means=arrays["bag_tree_means"],
        bag_mean=arrays["bag_mean"],
        fold_of=arrays["fold_of"].astype(np.int64),
        train_tau=arrays["train_tau"],
        hull_lo=arrays["hull_lo"],
        hull_hi=arrays["hull_hi"],
    )


def save_forest(model, path):
    with open(path, "wb") as fh:
        fh.write(dumps_forest(model))


def load_forest(path):
    with open(path, "rb") as fh:
        return loads_forest(fh.read())
