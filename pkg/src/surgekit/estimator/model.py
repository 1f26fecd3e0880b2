"""Multi-task sequence regressor for post-restoration surge components.

A small pre-norm Transformer over the trailing covariate window: input
projection, learned additive positional embedding, L blocks of masked
self-attention plus a position-wise feed-forward net, masked mean-pooling
over real (non-pad) steps, then four parallel MLP heads, one per surge
component.  Forward and backward passes are written out against plain
numpy arrays in float64; there is no autograd underneath, which keeps the
gradient checks in `gradcheck` meaningful.

Parameters live in a flat name -> array dict with a fixed layout so that
clipping, the optimizer, serialization, and finite-difference probing all
walk them in the same order.
"""

import io
import json
import struct
from dataclasses import dataclass, asdict

import numpy as np

from ..rngtools import substream
from .features import FEATURE_NAMES, TARGET_NAMES, featurize_events

LN_EPS = 1e-8
MASK_BIAS = -1e30
HEAD_IDS = ("ev", "hp", "der", "oth")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters. d_model must split evenly across heads."""

    seq_len: int = 32
    n_features: int = len(FEATURE_NAMES)
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    head_hidden: int = 64
    ffn_hidden: int = 0          # 0 means 4 * d_model
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("seq_len", "n_features", "d_model", "n_heads", "head_hidden"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.n_layers < 0:
            raise ValueError("n_layers must be >= 0")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model={self.d_model} must be divisible by n_heads={self.n_heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def ffn_dim(self):
        return self.ffn_hidden if self.ffn_hidden else 4 * self.d_model


@dataclass(frozen=True)
class HeadOutputs:
    """Per-component predictions, aligned with TARGET_NAMES order."""

    s_ev: np.ndarray
    s_hp: np.ndarray
    s_der: np.ndarray
    s_oth: np.ndarray

    def as_array(self):
        return np.column_stack([self.s_ev, self.s_hp, self.s_der, self.s_oth])

    @classmethod
    def from_array(cls, y):
        y = np.asarray(y, dtype=float)
        return cls(s_ev=y[:, 0], s_hp=y[:, 1], s_der=y[:, 2], s_oth=y[:, 3])


def params_layout(cfg):
    """Ordered (name, shape) pairs; the canonical walk order everywhere."""
    d, dm, ff, hh = cfg.n_features, cfg.d_model, cfg.ffn_dim, cfg.head_hidden
    out = [("w_in", (d, dm)), ("b_in", (dm,)), ("pos", (cfg.seq_len, dm))]
    for i in range(cfg.n_layers):
        p = f"blk{i}."
        out += [
            (p + "ln1_g", (dm,)), (p + "ln1_b", (dm,)),
            # no key bias: softmax cancels a constant shift across keys,
            # so the parameter would have an identically zero gradient
            (p + "wq", (dm, dm)), (p + "bq", (dm,)),
            (p + "wk", (dm, dm)),
            (p + "wv", (dm, dm)), (p + "bv", (dm,)),
            (p + "wo", (dm, dm)), (p + "bo", (dm,)),
            (p + "ln2_g", (dm,)), (p + "ln2_b", (dm,)),
            (p + "w1", (dm, ff)), (p + "b1", (ff,)),
            (p + "w2", (ff, dm)), (p + "b2", (dm,)),
        ]
    for h in HEAD_IDS:
        p = f"head_{h}."
        out += [(p + "w1", (dm, hh)), (p + "b1", (hh,)),
                (p + "w2", (hh,)), (p + "b2", ())]
    return out


def init_params(cfg):
    """He init for the MLP stacks, scaled-uniform for the projections."""
    rng = substream(cfg.seed, "init")
    params = {}
    for name, shape in params_layout(cfg):
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("b_in", "bq", "bv", "bo", "b1", "b2", "ln1_b", "ln2_b"):
            params[name] = np.zeros(shape)
        elif leaf in ("ln1_g", "ln2_g"):
            params[name] = np.ones(shape)
        elif leaf == "pos":
            params[name] = rng.normal(0.0, 0.02, shape)
        elif leaf in ("wq", "wk", "wv", "wo", "w_in"):
            a = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-a, a, shape)
        else:  # FFN / head weights
            fan_in = shape[0] if len(shape) > 1 else shape[0]
            params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)
    return params


def make_drop_masks(cfg, n, t, rng):
    """Binary keep masks for one forward pass; scaling happens in forward."""
    if cfg.dropout <= 0.0:
        return None
    keep = 1.0 - cfg.dropout
    masks = {}
    for i in range(cfg.n_layers):
        masks[f"blk{i}.attn"] = (rng.random((n, t, cfg.d_model)) < keep).astype(float)
        masks[f"blk{i}.ffn"] = (rng.random((n, t, cfg.d_model)) < keep).astype(float)
    for h in HEAD_IDS:
        masks[f"head_{h}"] = (rng.random((n, cfg.head_hidden)) < keep).astype(float)
    return masks


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return g * xhat + b, (xhat, inv, g)


def _layer_norm_back(dout, ctx):
    xhat, inv, g = ctx
    dxhat = dout * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    axes = tuple(range(dout.ndim - 1))
    return dx, (dout * xhat).sum(axis=axes), dout.sum(axis=axes)


def _split_heads(x, n_heads):
    n, t, dm = x.shape
    return x.reshape(n, t, n_heads, dm // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    n, nh, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(n, t, nh * dh)


def forward(params, cfg, x, pad=None, drop_masks=None):
    """Run the network; returns (predictions (n, 4), cache for backward).

    `x` is (n, t, d) with t <= seq_len; `pad` marks synthetic steps that
    must neither attend as keys nor enter the pooled mean.  Trailing pad
    steps therefore never change the outputs.  Pass `drop_masks` from
    `make_drop_masks` to train; None runs in eval mode.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 3:
        raise ValueError("x must be (batch, steps, features)")
    n, t, d = x.shape
    if d != cfg.n_features:
        raise ValueError(f"expected {cfg.n_features} features per step, got {d}")
    if t > cfg.seq_len:
        raise ValueError(f"sequence length {t} exceeds model horizon {cfg.seq_len}")
    if pad is None:
        pad = np.zeros((n, t), dtype=bool)
    pad = np.asarray(pad, dtype=bool)
    if pad.shape != (n, t):
        raise ValueError(f"pad mask must have shape {(n, t)}, got {pad.shape}")
    real = ~pad
    counts = real.sum(axis=1)
    if (counts == 0).any():
        raise ValueError("every sequence needs at least one real step")

    keep = 1.0 - cfg.dropout
    dh = cfg.d_model // cfg.n_heads
    scale = 1.0 / np.sqrt(dh)
    bias = np.where(pad, MASK_BIAS, 0.0)[:, None, None, :]

    h = x @ params["w_in"] + params["b_in"] + params["pos"][:t]
    blocks = []
    for i in range(cfg.n_layers):
        p = f"blk{i}."
        a, ln1 = _layer_norm(h, params[p + "ln1_g"], params[p + "ln1_b"])
        q = _split_heads(a @ params[p + "wq"] + params[p + "bq"], cfg.n_heads)
        k = _split_heads(a @ params[p + "wk"], cfg.n_heads)
        v = _split_heads(a @ params[p + "wv"] + params[p + "bv"], cfg.n_heads)
        scores = q @ k.transpose(0, 1, 3, 2) * scale + bias
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        attn = e / e.sum(axis=-1, keepdims=True)
        ctx = _merge_heads(attn @ v)
        out = ctx @ params[p + "wo"] + params[p + "bo"]
        m1 = None if drop_masks is None else drop_masks[p + "attn"]
        if m1 is not None:
            out = out * m1 / keep
        h1 = h + out
        a2, ln2 = _layer_norm(h1, params[p + "ln2_g"], params[p + "ln2_b"])
        z1 = a2 @ params[p + "w1"] + params[p + "b1"]
        r = np.maximum(z1, 0.0)
        f = r @ params[p + "w2"] + params[p + "b2"]
        m2 = None if drop_masks is None else drop_masks[p + "ffn"]
        if m2 is not None:
            f = f * m2 / keep
        blocks.append((h, a, ln1, q, k, v, attn, ctx, m1, h1, a2, ln2, z1, r, m2))
        h = h1 + f

    wts = real / counts[:, None]
    pooled = (h * wts[:, :, None]).sum(axis=1)
    heads = []
    cols = []
    for hid in HEAD_IDS:
        p = f"head_{hid}."
        z = pooled @ params[p + "w1"] + params[p + "b1"]
        u = np.maximum(z, 0.0)
        m3 = None if drop_masks is None else drop_masks[f"head_{hid}"]
        ud = u if m3 is None else u * m3 / keep
        cols.append(ud @ params[p + "w2"] + params[p + "b2"])
        heads.append((z, ud, m3))
    pred = np.column_stack(cols)
    cache = (x, pad, wts, h, blocks, pooled, heads, scale, keep)
    return pred, cache


def loss(pred, target):
    """Summed per-head MSE: sum over the four heads of the batch mean."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return float(((pred - target) ** 2).mean(axis=0).sum())


def backward(params, cfg, cache, pred, target):
    """Gradients of `loss(pred, target)` for every parameter."""
    x, pad, wts, h_final, blocks, pooled, heads, scale, keep = cache
    n, t, _ = x.shape
    grads = {name: np.zeros(shape) for name, shape in params_layout(cfg)}

    dpred = 2.0 * (pred - np.asarray(target, dtype=float)) / n
    dpool = np.zeros_like(pooled)
    for j, hid in enumerate(HEAD_IDS):
        p = f"head_{hid}."
        z, ud, m3 = heads[j]
        dy = dpred[:, j]
        grads[p + "b2"] = dy.sum()
        grads[p + "w2"] = ud.T @ dy
        dud = dy[:, None] * params[p + "w2"][None, :]
        du = dud if m3 is None else dud * m3 / keep
        dz = du * (z > 0.0)
        grads[p + "w1"] = pooled.T @ dz
        grads[p + "b1"] = dz.sum(axis=0)
        dpool += dz @ params[p + "w1"].T

    dh = dpool[:, None, :] * wts[:, :, None]
    for i in range(cfg.n_layers - 1, -1, -1):
        p = f"blk{i}."
        h0, a, ln1, q, k, v, attn, ctx, m1, h1, a2, ln2, z1, r, m2 = blocks[i]
        df = dh if m2 is None else dh * m2 / keep
        grads[p + "b2"] = df.sum(axis=(0, 1))
        grads[p + "w2"] = r.reshape(-1, r.shape[-1]).T @ df.reshape(-1, cfg.d_model)
        dr = df @ params[p + "w2"].T
        dz1 = dr * (z1 > 0.0)
        grads[p + "w1"] = a2.reshape(-1, cfg.d_model).T @ dz1.reshape(-1, dz1.shape[-1])
        grads[p + "b1"] = dz1.sum(axis=(0, 1))
        da2 = dz1 @ params[p + "w1"].T
        dh1, grads[p + "ln2_g"], grads[p + "ln2_b"] = _layer_norm_back(da2, ln2)
        dh1 = dh1 + dh

        dout = dh1 if m1 is None else dh1 * m1 / keep
        grads[p + "bo"] = dout.sum(axis=(0, 1))
        grads[p + "wo"] = ctx.reshape(-1, cfg.d_model).T @ dout.reshape(-1, cfg.d_model)
        dctx = _split_heads(dout @ params[p + "wo"].T, cfg.n_heads)
        dattn = dctx @ v.transpose(0, 1, 3, 2)
        dv = attn.transpose(0, 1, 3, 2) @ dctx
        ds = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        dq = ds @ k * scale
        dk = ds.transpose(0, 1, 3, 2) @ q * scale
        da = np.zeros_like(a)
        aflat = a.reshape(-1, cfg.d_model)
        for w_name, b_name, g in (("wq", "bq", dq), ("wk", None, dk), ("wv", "bv", dv)):
            gm = _merge_heads(g)
            grads[p + w_name] = aflat.T @ gm.reshape(-1, cfg.d_model)
            if b_name is not None:
                grads[p + b_name] = gm.sum(axis=(0, 1))
            da += gm @ params[p + w_name].T
        dh0, grads[p + "ln1_g"], grads[p + "ln1_b"] = _layer_norm_back(da, ln1)
        dh = dh1 + dh0

    grads["pos"][:t] = dh.sum(axis=0)
    grads["b_in"] = dh.sum(axis=(0, 1))
    grads["w_in"] = x.reshape(-1, cfg.n_features).T @ dh.reshape(-1, cfg.d_model)
    return grads


def global_norm(grads):
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))


def clip_grads(grads, max_norm):
    """Rescale gradients so the global norm is at most max_norm."""
    norm = global_norm(grads)
    if norm > max_norm and norm > 0.0:
        s = max_norm / norm
        for name in grads:
            grads[name] = grads[name] * s
    return norm


@dataclass
class SurgeEstimator:
    """Trained network plus the normalization state needed to apply it.

    Features are standardized with training-set statistics before the
    network sees them, and head outputs are mapped back from standardized
    target units, so predictions are plain surge ratios.
    """

    config: ModelConfig
    params: dict
    feat_mean: np.ndarray
    feat_sd: np.ndarray
    target_mean: np.ndarray
    target_sd: np.ndarray
    feature_names: tuple = FEATURE_NAMES
    target_names: tuple = TARGET_NAMES

    def normalize(self, x, pad=None):
        xn = (np.asarray(x, dtype=float) - self.feat_mean) / self.feat_sd
        if pad is not None:
            xn[np.asarray(pad, dtype=bool)] = 0.0
        return xn

    def predict(self, x, pad=None):
        """Eval-mode predictions for featurized sequences, raw target units."""
        out, _ = forward(self.params, self.config, self.normalize(x, pad), pad)
        return HeadOutputs.from_array(out * self.target_sd + self.target_mean)

    def predict_events(self, events, weather):
        x, pad = featurize_events(events, weather, seq_len=self.config.seq_len)
        return self.predict(x, pad)


_MAGIC = b"SGTX1\x00"


def dumps_estimator(model):
    """Deterministic binary container: JSON header + little-endian blobs."""
    layout = [("feat_mean", model.feat_mean), ("feat_sd", model.feat_sd),
              ("target_mean", model.target_mean), ("target_sd", model.target_sd)]
    layout += [(name, model.params[name]) for name, _ in params_layout(model.config)]
    header = {
        "version": 1,
        "config": asdict(model.config),
        "feature_names": list(model.feature_names),
        "target_names": list(model.target_names),
        "arrays": [[name, list(np.shape(a))] for name, a in layout],
    }
    buf = io.BytesIO()
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    for _, a in layout:
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return buf.getvalue()


def loads_estimator(data):
    if data[: len(_MAGIC)] != _MAGIC:
        raise ValueError("not an estimator container (bad magic)")
    off = len(_MAGIC)
    (hlen,) = struct.unpack_from("<I", data, off)
    off += 4
    header = json.loads(data[off : off + hlen].decode())
    off += hlen
    if header["version"] != 1:
        raise ValueError(f"unsupported container version {header['version']}")
    cfg = ModelConfig(**header["config"])
    arrays = {}
    for name, shape in header["arrays"]:
        size = int(np.prod(shape)) if shape else 1
        a = np.frombuffer(data, dtype="<f8", count=size, offset=off).astype(float)
        arrays[name] = a.reshape(shape) if shape else a.reshape(())
        off += size * 8
    fixed = ("feat_mean", "feat_sd", "target_mean", "target_sd")
    return SurgeEstimator(
        config=cfg,
        params={n: arrays[n] for n, _ in params_layout(cfg)},
        feature_names=tuple(header["feature_names"]),
        target_names=tuple(header["target_names"]),
        **{n: arrays[n] for n in fixed},
    )


def save_estimator(model, path):
    with open(path, "wb") as fh:
        fh.write(dumps_estimator(model))


def load_estimator(path):
    with open(path, "rb") as fh:
        return loads_estimator(fh.read())
