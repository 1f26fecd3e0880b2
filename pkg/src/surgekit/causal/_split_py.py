"""Pure-numpy split-search kernel for the honest causal forest.

The kernel scans one candidate feature at a time.  Inputs are the node's
samples sorted ascending by that feature: `v` the feature values, `w` the
(residualized) treatment, `y` the (residualized) outcome.  For every cut
position it fits a within-child regression-through-the-moments slope

    beta = (Swy - Sw*Sy/n) / (Sww - Sw^2/n)

and scores the cut by `n_L*beta_L^2 + n_R*beta_R^2`, the amount of
treatment-effect signal the children explain.  The compiled kernel in
_splitkern.pyx evaluates the identical expression sequence; bit-for-bit
agreement between the two is a tested invariant, which is why the cumulative
sums below must stay plain sequential np.cumsum and the arithmetic must not
be reassociated.
"""

import numpy as np

NEG_INF = float("-inf")


def scan_feature(v, w, y, min_leaf, eps):
    """Best cut of one presorted feature.

    Returns `(gain, cut_index)` where the cut places samples `[0..i]` left
    and `(i..n)` right, or `(-inf, -1)` when no admissible cut exists.  A cut
    is admissible when both children hold at least `min_leaf` samples, the
    feature strictly increases across the cut, and both child treatment
    second moments clear `eps` (degenerate slopes are never scored).
    Ties keep the lowest cut index.
    """
    n = v.shape[0]
    if n < 2 * min_leaf:
        return NEG_INF, -1

    cw = np.cumsum(w)
    cy = np.cumsum(y)
    cww = np.cumsum(w * w)
    cwy = np.cumsum(w * y)
    tw = cw[n - 1]
    ty = cy[n - 1]
    tww = cww[n - 1]
    twy = cwy[n - 1]

    nl = np.arange(1.0, float(n))
    nr = float(n) - nl
    lw = cw[:-1]
    ly = cy[:-1]

    den_l = cww[:-1] - lw * lw / nl
    num_l = cwy[:-1] - lw * ly / nl
    den_r = (tww - cww[:-1]) - (tw - lw) * (tw - lw) / nr
    num_r = (twy - cwy[:-1]) - (tw - lw) * (ty - ly) / nr

    valid = (
        (nl >= min_leaf)
        & (nr >= min_leaf)
        & (v[1:] > v[:-1])
        & (den_l > eps)
        & (den_r > eps)
    )
    if not valid.any():
        return NEG_INF, -1

    with np.errstate(divide="ignore", invalid="ignore"):
        beta_l = num_l / den_l
        beta_r = num_r / den_r
        gain = nl * (beta_l * beta_l) + nr * (beta_r * beta_r)
    gains = np.where(valid, gain, NEG_INF)
    i = int(np.argmax(gains))
    return float(gains[i]), i
