"""Training loop and evaluation metrics for the surge estimator.

The optimizer is Adam with global-norm gradient clipping.  Targets are
standardized per head during optimization so the small DER component gets
a gradient on the same scale as the others; the standardization constants
ride along in the saved model and predictions come back in raw units.

Splits are seeded and disjoint: a test fraction is held out first for
reported metrics, then a slice of the remaining training rows serves as
the early-stopping validation set.  A non-finite batch loss aborts the
run and restores the best checkpoint seen so far.
"""

from dataclasses import dataclass, field

import numpy as np

from ..rngtools import substream
from .features import TARGET_NAMES, featurize_events
from .model import (
    ModelConfig,
    SurgeEstimator,
    backward,
    clip_grads,
    forward,
    init_params,
    loss,
    make_drop_masks,
)

MIN_EVENTS = 200


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 1.0
    test_fraction: float = 0.2
    val_fraction: float = 0.1
    patience: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 0:
            raise ValueError("epochs and batch_size must be >= 1, patience >= 0")
        if not 0.0 < self.lr:
            raise ValueError("lr must be positive")
        if not 0.0 < self.test_fraction < 1.0 or not 0.0 < self.val_fraction < 1.0:
            raise ValueError("split fractions must be in (0, 1)")


@dataclass(frozen=True)
class EstimatorDataset:
    """Featurized events: x (n, T, d), pad (n, T), targets y (n, 4)."""

    x: np.ndarray
    pad: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        n = len(self.x)
        if self.pad.shape != self.x.shape[:2] or self.y.shape != (n, len(TARGET_NAMES)):
            raise ValueError("dataset arrays disagree on event count or layout")
        if not (np.isfinite(self.x).all() and np.isfinite(self.y).all()):
            raise ValueError("dataset must be finite")

    def __len__(self):
        return len(self.x)


def dataset_from_surges(surges, weather, seq_len=32):
    """Featurize a surge table against its weather record."""
    rows = [row for _, row in surges.iterrows()]
    x, pad = featurize_events(rows, weather, seq_len=seq_len)
    y = surges[list(TARGET_NAMES)].to_numpy(dtype=float)
    return EstimatorDataset(x=x, pad=pad, y=y)


@dataclass
class TrainReport:
    r2: dict
    rmse: dict
    mae: dict
    degenerate: dict
    best_epoch: int
    epochs_run: int
    aborted: bool
    n_train: int
    n_val: int
    n_test: int
    history: list = field(repr=False, default_factory=list)


def r_squared(y_true, y_pred):
    """1 - SSE/SST about the evaluation mean; 0.0 when the target is flat."""
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    sst = float(((y_true - y_true.mean()) ** 2).sum())
    if sst <= 0.0:
        return 0.0
    return 1.0 - float(((y_true - y_pred) ** 2).sum()) / sst


def _masked_stats(x, pad):
    """Per-feature mean/sd over real steps only; flat features get sd 1."""
    real = ~pad
    flat = x[real]
    mean = flat.mean(axis=0)
    sd = flat.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    # leave the pad flag column untouched so padded zeros stay exact zeros
    mean[-1], sd[-1] = 0.0, 1.0
    return mean, sd


def _copy(params):
    return {k: np.array(v, copy=True) for k, v in params.items()}


def train(data, model_config=None, train_config=None):
    """Fit the estimator; returns (SurgeEstimator, TrainReport)."""
    cfg = model_config or ModelConfig()
    tc = train_config or TrainConfig()
    n = len(data)
    if n < MIN_EVENTS:
        raise ValueError(f"need at least {MIN_EVENTS} events, got {n}")
    if data.x.shape[2] != cfg.n_features or data.x.shape[1] > cfg.seq_len:
        raise ValueError(
            f"dataset features {data.x.shape[1:]} do not fit model "
            f"({cfg.seq_len}, {cfg.n_features})"
        )

    order = substream(tc.seed, "split").permutation(n)
    n_test = max(1, int(round(tc.test_fraction * n)))
    test_idx = order[:n_test]
    rest = order[n_test:]
    n_val = max(1, int(round(tc.val_fraction * len(rest))))
    val_idx, fit_idx = rest[:n_val], rest[n_val:]
    if len(fit_idx) < 1:
        raise ValueError("splits leave no training rows")

    feat_mean, feat_sd = _masked_stats(data.x[fit_idx], data.pad[fit_idx])
    xn = (data.x - feat_mean) / feat_sd
    xn[data.pad] = 0.0
    t_mean = data.y[fit_idx].mean(axis=0)
    t_sd = data.y[fit_idx].std(axis=0)
    t_sd = np.where(t_sd > 1e-12, t_sd, 1.0)
    ys = (data.y - t_mean) / t_sd

    params = init_params(cfg)
    adam_m = {k: np.zeros_like(np.asarray(v)) for k, v in params.items()}
    adam_v = {k: np.zeros_like(np.asarray(v)) for k, v in params.items()}
    step = 0

    best_params = _copy(params)
    best_val = np.inf
    best_epoch = -1
    bad_epochs = 0
    aborted = False
    history = []
    epochs_run = 0

    for epoch in range(tc.epochs):
        perm = substream(tc.seed, "order", epoch).permutation(len(fit_idx))
        batch_losses = []
        for lo in range(0, len(fit_idx), tc.batch_size):
            bidx = fit_idx[perm[lo : lo + tc.batch_size]]
            masks = make_drop_masks(
                cfg, len(bidx), data.x.shape[1], substream(tc.seed, "drop", epoch, lo)
            )
            pred, cache = forward(params, cfg, xn[bidx], data.pad[bidx], drop_masks=masks)
            batch_loss = loss(pred, ys[bidx])
            if not np.isfinite(batch_loss):
                aborted = True
                break
            batch_losses.append(batch_loss)
            grads = backward(params, cfg, cache, pred, ys[bidx])
            clip_grads(grads, tc.clip_norm)
            step += 1
            b1c = 1.0 - tc.beta1**step
            b2c = 1.0 - tc.beta2**step
            for k, g in grads.items():
                adam_m[k] = tc.beta1 * adam_m[k] + (1.0 - tc.beta1) * g
                adam_v[k] = tc.beta2 * adam_v[k] + (1.0 - tc.beta2) * g * g
                params[k] = params[k] - tc.lr * (adam_m[k] / b1c) / (
                    np.sqrt(adam_v[k] / b2c) + tc.adam_eps
                )
        if aborted:
            break
        epochs_run = epoch + 1
        val_pred, _ = forward(params, cfg, xn[val_idx], data.pad[val_idx])
        val_loss = loss(val_pred, ys[val_idx])
        history.append(
            {"epoch": epoch, "train_loss": float(np.mean(batch_losses)),
             "val_loss": val_loss}
        )
        if not np.isfinite(val_loss):
            aborted = True
            break
        if val_loss < best_val:
            best_val = val_loss
            best_params = _copy(params)
            best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= tc.patience > 0:
                break

    model = SurgeEstimator(
        config=cfg,
        params=best_params,
        feat_mean=feat_mean,
        feat_sd=feat_sd,
        target_mean=t_mean,
        target_sd=t_sd,
    )

    test_pred = model.predict(data.x[test_idx], data.pad[test_idx]).as_array()
    y_test = data.y[test_idx]
    r2, rmse, mae, degen = {}, {}, {}, {}
    for j, name in enumerate(TARGET_NAMES):
        err = test_pred[:, j] - y_test[:, j]
        rmse[name] = float(np.sqrt((err**2).mean()))
        mae[name] = float(np.abs(err).mean())
        sst = float(((y_test[:, j] - y_test[:, j].mean()) ** 2).sum())
        degen[name] = sst <= 0.0
        r2[name] = r_squared(y_test[:, j], test_pred[:, j])
    report = TrainReport(
        r2=r2, rmse=rmse, mae=mae, degenerate=degen,
        best_epoch=best_epoch, epochs_run=epochs_run, aborted=aborted,
        n_train=len(fit_idx), n_val=len(val_idx), n_test=len(test_idx),
        history=history,
    )
    return model, report
