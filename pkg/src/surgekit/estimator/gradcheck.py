"""Finite-difference verification of the hand-written backward pass.

Central differences around random parameter coordinates, on a model small
enough that two forward passes per probe are cheap.  Dropout masks are
drawn once and held fixed so the probed loss surface is deterministic;
given a fixed mask, dropout is linear and does not perturb the check.

Caveat inherent to finite differences on ReLU networks: when a probe seed
lands a hidden preactivation within ~h of zero, the secant straddles the
kink and the reported error spikes even though the analytic gradient is
right.  The h-sweep makes such cases obvious (the error fails to shrink
with h); rerunning with another seed resolves them.
"""

from dataclasses import dataclass

import numpy as np

from ..rngtools import substream
from .features import TARGET_NAMES
from .model import ModelConfig, backward, forward, init_params, loss, make_drop_masks, params_layout


@dataclass(frozen=True)
class Probe:
    name: str
    analytic: float
    numeric: float
    rel_err: float


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_err: float
    h: float
    probes: tuple


def small_config(n_layers=2, seed=0):
    """Default probe architecture: 8 steps, 16-dim model."""
    return ModelConfig(
        seq_len=8, n_features=6, d_model=16, n_layers=n_layers,
        n_heads=4, head_hidden=8, ffn_hidden=32, dropout=0.1, seed=seed,
    )


def _probe_setup(cfg, seed, batch):
    rng = substream(seed, "data")
    x = rng.normal(0.0, 1.0, (batch, cfg.seq_len, cfg.n_features))
    pad = np.zeros((batch, cfg.seq_len), dtype=bool)
    pad[-1, : max(1, cfg.seq_len // 3)] = True  # exercise key masking
    x[pad] = 0.0
    y = rng.normal(0.0, 1.0, (batch, len(TARGET_NAMES)))
    masks = make_drop_masks(cfg, batch, cfg.seq_len, substream(seed, "mask"))
    return x, pad, y, masks


def grad_check(config=None, n_probes=20, h=1e-5, seed=0, batch=5):
    """Compare backward() to central differences, one parameter tensor at a time.

    Each probe perturbs a whole tensor along a random unit direction and
    checks the analytic directional derivative against (L(θ+hu) - L(θ-hu))/2h.
    Probing directions rather than lone coordinates keeps the comparison
    above the float64 cancellation floor of the two loss evaluations.  With
    n_probes >= the number of tensors, every tensor is covered.
    """
    cfg = config or small_config()
    x, pad, y, masks = _probe_setup(cfg, seed, batch)
    params = init_params(cfg)
    pred, cache = forward(params, cfg, x, pad, drop_masks=masks)
    grads = backward(params, cfg, cache, pred, y)

    layout = params_layout(cfg)
    rng = substream(seed, "probe")
    tensor_order = rng.permutation(len(layout))
    probes = []
    for i in range(n_probes):
        name, shape = layout[int(tensor_order[i % len(layout)])]
        u = rng.normal(0.0, 1.0, shape if shape else ())
        u = u / np.sqrt((u * u).sum())
        base = np.array(params[name], copy=True)
        vals = []
        for sign in (1.0, -1.0):
            params[name] = base + sign * h * u
            p, _ = forward(params, cfg, x, pad, drop_masks=masks)
            vals.append(loss(p, y))
        params[name] = base
        numeric = (vals[0] - vals[1]) / (2.0 * h)
        analytic = float((np.asarray(grads[name]) * u).sum())
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        probes.append(Probe(name, analytic, numeric, rel))
    return GradCheckResult(
        max_rel_err=max(p.rel_err for p in probes), h=h, probes=tuple(probes)
    )


def h_sweep(hs=(1e-2, 1e-3, 1e-4, 1e-5), config=None, n_probes=20, seed=0):
    """Max relative error per step size; truncation should shrink with h."""
    return [grad_check(config, n_probes=n_probes, h=h, seed=seed).max_rel_err for h in hs]
