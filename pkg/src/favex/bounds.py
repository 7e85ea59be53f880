"""Incomplete analyzers: interval propagation and backward linear relaxation.

Both methods produce sound outer bounds on pre-activations and a lower
bound on the worst-case logit difference over a restricted perturbation
box, optionally under ReLU phase constraints.  The linear relaxation is
a backward substitution with the chord upper bound and an adaptive
{0,1} lower slope; its result is floored at the interval bound, so it
is never looser than plain interval propagation on the same instance.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import ConflictError, ShapeError
from .model import Network, predict


class BoundMethod(enum.Enum):
    IBP = "ibp"
    LINEAR_RELAXATION = "linear-relaxation"


class Sign(enum.Enum):
    NON_NEGATIVE = "non-negative"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class PhaseConstraint:
    """Fixes the sign of one ReLU pre-activation (layer = ReLU ordinal)."""

    layer: int
    neuron: int
    sign: Sign

    def sort_key(self):
        return (self.layer, self.neuron, self.sign.value)


@dataclass(frozen=True)
class PerturbationBox:
    """Axis-aligned perturbation region around x, restricted to ``active``.

    Active features range over [x_i - eps, x_i + eps] intersected with
    the network's input box; frozen features are pinned at x_i.
    """

    x: np.ndarray
    active: frozenset[int]
    epsilon: float
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def build(cls, net: Network, x, active, epsilon: float) -> "PerturbationBox":
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (net.input_dim,):
            raise ShapeError(f"input length {x.shape} != ({net.input_dim},)")
        if epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        active = frozenset(int(i) for i in active)
        if active and (min(active) < 0 or max(active) >= net.input_dim):
            raise ShapeError("active indices out of range")
        if np.any(x < net.input_lower) or np.any(x > net.input_upper):
            raise ValueError("x lies outside the network input box")
        lower = x.copy()
        upper = x.copy()
        idx = sorted(active)
        if idx:
            lower[idx] = np.maximum(x[idx] - epsilon, net.input_lower[idx])
            upper[idx] = np.minimum(x[idx] + epsilon, net.input_upper[idx])
        lower.setflags(write=False)
        upper.setflags(write=False)
        x = x.copy()
        x.setflags(write=False)
        return cls(x=x, active=active, epsilon=float(epsilon), lower=lower, upper=upper)


@dataclass(frozen=True)
class LayerBounds:
    """Per-ReLU-layer pre-activation bounds (already constraint-clipped)."""

    lower: tuple[np.ndarray, ...]
    upper: tuple[np.ndarray, ...]

    def clipped(self, constraints) -> "LayerBounds":
        """Intersect with the sign regions of ``constraints``.

        Raises ConflictError when a constraint demands a sign the proven
        interval excludes (empty subproblem).
        """
        if not constraints:
            return self
        lower = [l.copy() for l in self.lower]
        upper = [u.copy() for u in self.upper]
        for c in constraints:
            if c.layer >= len(lower) or c.neuron >= lower[c.layer].shape[0]:
                raise ShapeError(f"constraint references missing neuron {c}")
            if c.sign is Sign.NON_NEGATIVE:
                lower[c.layer][c.neuron] = max(lower[c.layer][c.neuron], 0.0)
            else:
                upper[c.layer][c.neuron] = min(upper[c.layer][c.neuron], 0.0)
            if lower[c.layer][c.neuron] > upper[c.layer][c.neuron]:
                raise ConflictError(f"constraint {c} contradicts proven bounds")
        return LayerBounds(lower=tuple(lower), upper=tuple(upper))


def _fix_float_crossing(l, u):
    """Repair inverted intervals caused by intersecting two sound bounds.

    Two independently computed outer bounds of the same non-empty set can
    cross by accumulation noise (typically at degenerate intervals);
    swapping the endpoints keeps a sound interval of noise width.  A set
    proven empty elsewhere stays covered: any interval outer-bounds it.
    """
    cross = l > u
    if np.any(cross):
        l = l.copy()
        u = u.copy()
        l[cross], u[cross] = u[cross], l[cross]
    return l, u


def _constraint_clip_arrays(net: Network, constraints):
    """Per-ReLU-layer (clip_lo, clip_hi) arrays encoding the constraints."""
    widths = net.relu_widths
    clip_lo = [np.full(w, -np.inf) for w in widths]
    clip_hi = [np.full(w, np.inf) for w in widths]
    for c in constraints:
        if c.layer >= len(widths) or not (0 <= c.neuron < widths[c.layer]):
            raise ShapeError(f"constraint references missing neuron {c}")
        if c.sign is Sign.NON_NEGATIVE:
            clip_lo[c.layer][c.neuron] = 0.0
        else:
            clip_hi[c.layer][c.neuron] = 0.0
    return clip_lo, clip_hi


def _backward_lower(weights, biases, rows, row_bias, relu_bounds, box, prefer, upto):
    """Lower-bound rows·(output of affine layer ``upto``) over the box.

    relu_bounds holds the clipped pre-activation intervals of the ReLU
    layers below ``upto``.  Returns (per-row values, per-row minimising
    corners).
    """
    a = rows @ weights[upto]
    d = rows @ biases[upto] + row_bias
    for t in range(upto - 1, -1, -1):
        lo_t, hi_t = relu_bounds[t]
        a, d = K.relu_backward_lower(a, d, lo_t, hi_t)
        d = d + a @ biases[t]
        a = a @ weights[t]
    return K.linear_box_lower(a, d, box[0], box[1], prefer)


def _preactivation_bounds(net: Network, box: PerturbationBox, constraints, method):
    """Clipped pre-activation bounds for every ReLU layer, in order."""
    weights, biases = net.affine
    clip_lo, clip_hi = _constraint_clip_arrays(net, constraints)
    use_lr = method is BoundMethod.LINEAR_RELAXATION

    bounds: list[tuple[np.ndarray, np.ndarray]] = []
    cur_lo, cur_hi = box.lower, box.upper
    for r in range(net.num_relu_layers):
        l, u = K.affine_interval(weights[r], biases[r], cur_lo, cur_hi)
        if use_lr and r > 0:
            eye = np.eye(weights[r].shape[0])
            lo_vals, _ = _backward_lower(
                weights, biases, eye, 0.0, bounds, (box.lower, box.upper), box.x, r
            )
            hi_vals, _ = _backward_lower(
                weights, biases, -eye, 0.0, bounds, (box.lower, box.upper), box.x, r
            )
            l = np.maximum(l, lo_vals)
            u = np.minimum(u, -hi_vals)
            l, u = _fix_float_crossing(l, u)
        l = np.maximum(l, clip_lo[r])
        u = np.minimum(u, clip_hi[r])
        if np.any(l > u):
            j = int(np.argmax(l > u))
            raise ConflictError(
                f"relu layer {r} neuron {j}: constrained sign excluded by bounds"
            )
        bounds.append((l, u))
        cur_lo = np.maximum(l, 0.0)
        cur_hi = np.maximum(u, 0.0)
    return bounds, (cur_lo, cur_hi)


def preactivation_bounds(net, box, constraints=frozenset(), method=BoundMethod.IBP) -> LayerBounds:
    """Sound pre-activation bounds under the box and phase constraints."""
    bounds, _ = _preactivation_bounds(net, box, constraints, method)
    return LayerBounds(
        lower=tuple(l for l, _ in bounds), upper=tuple(u for _, u in bounds)
    )


def _difference_rows(k: int, y: int) -> np.ndarray:
    """Rows e_y - e_i for every competitor i != y."""
    rows = np.zeros((k - 1, k))
    others = [i for i in range(k) if i != y]
    rows[np.arange(k - 1), y] = 1.0
    rows[np.arange(k - 1), others] = -1.0
    return rows


def _diff_lower_from_state(net, box, relu_bounds, post, y, method, rows=None):
    """min-row lower bound of the logit differences, plus a primal candidate."""
    weights, biases = net.affine
    k = net.output_dim
    if k < 2:
        return np.inf, box.x.copy()
    if rows is None:
        rows = _difference_rows(k, y)
    last = len(weights) - 1

    if last == 0:
        ivals, icorners = K.linear_box_lower(
            rows @ weights[0], rows @ biases[0], box.lower, box.upper, box.x
        )
    else:
        eff_w = rows @ weights[last]
        eff_b = rows @ biases[last]
        ivals, _ = K.affine_interval(eff_w, eff_b, post[0], post[1])
        icorners = None

    if method is BoundMethod.LINEAR_RELAXATION and last > 0:
        cvals, ccorners = _backward_lower(
            weights, biases, rows, 0.0, relu_bounds, (box.lower, box.upper), box.x, last
        )
        vals = np.maximum(ivals, cvals)
        corner = ccorners[int(np.argmin(vals))]
    elif icorners is not None:
        vals = ivals
        corner = icorners[int(np.argmin(vals))]
    else:
        vals = ivals
        # Interval propagation yields no primal point; fall back to the
        # corner that locally decreases the worst margin at the centre.
        center = np.clip(box.x, box.lower, box.upper)
        _, grad = K.margin_grad_batch(weights, biases, center[None, :], y)
        g = grad[0]
        corner = np.where(g > 0.0, box.lower, np.where(g < 0.0, box.upper, center))
    return float(np.min(vals)), corner


def worst_logit_diff_lb(net, box, constraints=frozenset(), method=BoundMethod.IBP, y=None) -> float:
    """Lower bound on min_{i != y}(f(x')_y - f(x')_i) over the box.

    Strictly positive means the subproblem is verified.  ConflictError
    propagates from the pre-activation pass; callers treat it as an
    empty region (vacuously verified, i.e. +inf).
    """
    if y is None:
        y = predict(net, box.x)
    relu_bounds, post = _preactivation_bounds(net, box, constraints, method)
    lb, _ = _diff_lower_from_state(net, box, relu_bounds, post, y, method)
    return lb


def feature_scores(net, x, epsilon, method=BoundMethod.IBP) -> np.ndarray:
    """Per-feature worst-case logit-difference lower bounds (A = {i})."""
    x = np.asarray(x, dtype=np.float64)
    y = predict(net, x)
    scores = np.empty(net.input_dim)
    for i in range(net.input_dim):
        box = PerturbationBox.build(net, x, frozenset({i}), epsilon)
        scores[i] = worst_logit_diff_lb(net, box, frozenset(), method, y=y)
    return scores


def class_logit_lb(net, box, y, method=BoundMethod.LINEAR_RELAXATION) -> float:
    """Lower bound on the logit of class y over the box."""
    weights, biases = net.affine
    relu_bounds, post = _preactivation_bounds(net, box, frozenset(), method)
    row = np.zeros((1, net.output_dim))
    row[0, y] = 1.0
    last = len(weights) - 1
    if last == 0:
        vals, _ = K.linear_box_lower(
            row @ weights[0], row @ biases[0], box.lower, box.upper, box.x
        )
        return float(vals[0])
    ivals, _ = K.affine_interval(row @ weights[last], row @ biases[last], post[0], post[1])
    if method is BoundMethod.LINEAR_RELAXATION:
        cvals, _ = _backward_lower(
            weights, biases, row, 0.0, relu_bounds, (box.lower, box.upper), box.x, last
        )
        return float(max(ivals[0], cvals[0]))
    return float(ivals[0])


class BoundEngine:
    """Per-query bounding state for branch-and-bound.

    Pre-activation bounds are computed once at the root; per subproblem
    they are only clipped by the phase constraints before the bounding
    pass, which combines an interval sweep with (for the linear
    relaxation) a backward pass over the difference rows.
    """

    def __init__(self, net: Network, box: PerturbationBox, method: BoundMethod, y: int):
        self.net = net
        self.box = box
        self.method = method
        self.y = y
        self.weights, self.biases = net.affine
        bounds, _ = _preactivation_bounds(net, box, frozenset(), method)
        self.root = LayerBounds(
            lower=tuple(l for l, _ in bounds), upper=tuple(u for _, u in bounds)
        )
        self.rows = _difference_rows(net.output_dim, y) if net.output_dim > 1 else None
        self.bound_calls = 1

    def clipped(self, constraints) -> LayerBounds:
        return self.root.clipped(constraints)

    def diff_lower(self, constraints):
        """(lower bound, primal candidate corner, clipped bounds) for a
        subproblem.  Raises ConflictError for infeasible constraint sets.
        """
        self.bound_calls += 1
        clipped = self.root.clipped(constraints)
        relu_bounds = list(zip(clipped.lower, clipped.upper))
        # Interval sweep re-propagated under the clipped root intervals.
        cur_lo, cur_hi = self.box.lower, self.box.upper
        for r, (l_r, u_r) in enumerate(relu_bounds):
            l, u = K.affine_interval(self.weights[r], self.biases[r], cur_lo, cur_hi)
            l = np.maximum(l, l_r)
            u = np.minimum(u, u_r)
            l, u = _fix_float_crossing(l, u)
            cur_lo = np.maximum(l, 0.0)
            cur_hi = np.maximum(u, 0.0)
        lb, corner = _diff_lower_from_state(
            self.net, self.box, relu_bounds, (cur_lo, cur_hi), self.y, self.method,
            rows=self.rows,
        )
        return lb, corner, clipped
