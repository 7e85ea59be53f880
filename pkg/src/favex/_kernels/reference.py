"""NumPy reference implementation of the hot numeric kernels.

The compiled extension in ``_native.pyx`` mirrors these signatures
exactly; either backend can serve the rest of the engine.  Results may
differ between backends in the last ulp (BLAS vs. scalar accumulation
order) but each backend is individually deterministic.
"""

from __future__ import annotations

import numpy as np

BACKEND = "reference"


def affine_interval(w, b, lo, hi):
    """Interval image of an affine map: bounds of W x + b for x in [lo, hi]."""
    mid = (hi + lo) * 0.5
    rad = (hi - lo) * 0.5
    center = w @ mid + b
    dev = np.abs(w) @ rad
    return center - dev, center + dev


def relu_backward_lower(a, bias, lo, hi):
    """One backward step of the linear relaxation through a ReLU layer.

    ``a`` holds per-row coefficients on the post-activation vector
    z = relu(h) with proven pre-activation bounds h in [lo, hi] (already
    clipped by any phase constraints).  Returns coefficients on h plus
    the per-row bias accumulated from the upper-relaxation intercepts,
    such that  a·z >= a_out·h + bias_out  over the box.

    Stable neurons (lo >= 0 / hi <= 0) pass through as the identity /
    zero map.  Ambiguous neurons use the chord upper relaxation
    hi(h - lo)/(hi - lo) for negative coefficients and an adaptive
    {0, 1} lower slope (1 iff hi >= -lo) for non-negative coefficients.
    """
    active = lo >= 0.0
    inactive = (hi <= 0.0) & ~active
    ambiguous = ~active & ~inactive

    upper_slope = np.zeros_like(lo)
    upper_icpt = np.zeros_like(lo)
    lower_slope = np.zeros_like(lo)
    if np.any(ambiguous):
        l_a = lo[ambiguous]
        u_a = hi[ambiguous]
        s = u_a / (u_a - l_a)
        upper_slope[ambiguous] = s
        upper_icpt[ambiguous] = -s * l_a
        lower_slope[ambiguous] = (u_a >= -l_a).astype(np.float64)
    upper_slope[active] = 1.0
    lower_slope[active] = 1.0

    pos = np.maximum(a, 0.0)
    neg = np.minimum(a, 0.0)
    a_out = pos * lower_slope + neg * upper_slope
    bias_out = bias + neg @ upper_icpt
    return a_out, bias_out


def linear_box_lower(a, bias, lo, hi, prefer):
    """Exact per-row minimum of a·x + bias over the box [lo, hi].

    Also returns, per row, the minimising corner: lo where the
    coefficient is positive, hi where negative, and the ``prefer``
    value (clamped into the box) where it is exactly zero.
    """
    vals = np.minimum(a, 0.0) @ hi + np.maximum(a, 0.0) @ lo + bias
    base = np.clip(prefer, lo, hi)
    corners = np.where(a > 0.0, lo, np.where(a < 0.0, hi, base))
    return vals, corners


def forward_batch(weights, biases, xs):
    """Logits for a batch of inputs, shape (n, d) -> (n, k)."""
    v = np.asarray(xs, dtype=np.float64)
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        v = v @ w.T + b
        if i != last:
            v = np.maximum(v, 0.0)
    return v


def margin_grad_batch(weights, biases, xs, y):
    """Worst-case logit margin and its input gradient for a batch.

    loss_j = min_{i != y}(f(x_j)_y - f(x_j)_i); the gradient follows the
    arg-min competitor (lowest index on ties) with ReLU subgradient 0 at
    exactly 0.  Returns (loss (n,), grad (n, d)).
    """
    xs = np.asarray(xs, dtype=np.float64)
    n = xs.shape[0]
    k = weights[-1].shape[0]
    if k < 2:  # no competing class: the margin is unbounded
        return np.full(n, np.inf), np.zeros_like(xs)
    last = len(weights) - 1
    pre = []
    v = xs
    for i, (w, b) in enumerate(zip(weights, biases)):
        v = v @ w.T + b
        if i != last:
            pre.append(v)
            v = np.maximum(v, 0.0)
    logits = v
    others = np.array([i for i in range(k) if i != y], dtype=np.intp)
    diffs = logits[:, y][:, None] - logits[:, others]
    comp_pos = np.argmin(diffs, axis=1)
    loss = diffs[np.arange(n), comp_pos]
    comp = others[comp_pos]

    g = np.zeros((n, k))
    g[np.arange(n), y] = 1.0
    g[np.arange(n), comp] -= 1.0
    for i in range(last, -1, -1):
        g = g @ weights[i]
        if i > 0:
            g = g * (pre[i - 1] > 0.0)
    return loss, g
