"""Gradient-based counterfactual search.

Two entry points: a full-space projected-gradient attack used as the
preliminary check of every verification call, and a multi-start search
over a restricted slice of the perturbation region anchored at the best
point of a previous search (its fixed coordinates keep that point's
values; only the newly freed coordinates move).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .bounds import PerturbationBox
from .model import Network

RESTRICTED_STARTS = 128


@dataclass(frozen=True)
class AttackBudget:
    steps: int = 10
    starts: int = 1
    step_size: float | None = None  # defaults to epsilon / 4
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.starts < 1:
            raise ValueError("steps and starts must be >= 1")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be positive")


@dataclass(frozen=True)
class RestrictedSpace:
    """Search slice: ``free`` coordinates range over the original
    [x_i - eps, x_i + eps] (intersected with the input box); all other
    coordinates are pinned to the previous search output ``base``."""

    x: np.ndarray
    base: np.ndarray
    free: frozenset[int]
    epsilon: float
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def build(cls, net: Network, x, base, free, epsilon: float) -> "RestrictedSpace":
        x = np.asarray(x, dtype=np.float64)
        z = np.asarray(base, dtype=np.float64)
        free = frozenset(int(i) for i in free)
        tol = 1e-9
        if np.max(np.abs(z - x)) > epsilon + tol:
            raise ValueError("base point leaves the original perturbation ball")
        if np.any(z < net.input_lower - tol) or np.any(z > net.input_upper + tol):
            raise ValueError("base point leaves the input box")
        lower = z.copy()
        upper = z.copy()
        idx = sorted(free)
        if idx:
            lower[idx] = np.maximum(x[idx] - epsilon, net.input_lower[idx])
            upper[idx] = np.minimum(x[idx] + epsilon, net.input_upper[idx])
        return cls(
            x=x, base=z, free=free, epsilon=float(epsilon), lower=lower, upper=upper
        )


def _lockstep_pgd(weights, biases, y, points, lower, upper, move, steps, step_size):
    """Run PGD on a batch of start points in lockstep.

    Returns (witness or None, best point, best loss).  A witness is the
    first point observed with loss < 0 in evaluation order: earliest
    step, then lowest start index (so a start point that already flips
    the class is returned unchanged).
    """
    pts = np.clip(points, lower, upper)
    best_loss = np.inf
    best_point = None
    for step in range(steps + 1):
        loss, grad = K.margin_grad_batch(weights, biases, pts, y)
        hit = loss < 0.0
        if np.any(hit):
            winner = int(np.flatnonzero(hit)[0])
            return pts[winner].copy(), pts[winner].copy(), float(loss[winner])
        i = int(np.argmin(loss))
        if best_point is None or loss[i] < best_loss:
            best_loss = float(loss[i])
            best_point = pts[i].copy()
        if step == steps:
            break
        pts = pts - step_size * np.sign(grad) * move
        pts = np.clip(pts, lower, upper)
    return None, best_point, best_loss


def pgd(net: Network, x, active, epsilon: float, y: int, budget: AttackBudget):
    """Signed-gradient descent on the worst-case margin over B^eps_active(x).

    Returns (witness or None, best visited point).  Frozen coordinates
    never move; every iterate stays inside the feasible box.
    """
    x = np.asarray(x, dtype=np.float64)
    active = frozenset(int(i) for i in active)
    if not active:
        return None, x.copy()
    box = PerturbationBox.build(net, x, active, epsilon)
    move = np.zeros(net.input_dim)
    move[sorted(active)] = 1.0
    step_size = budget.step_size if budget.step_size is not None else epsilon / 4.0

    starts = [x]
    if budget.starts > 1:
        rng = np.random.default_rng(budget.seed)
        extra = rng.uniform(box.lower, box.upper, size=(budget.starts - 1, net.input_dim))
        starts.extend(extra)
    weights, biases = net.affine
    witness, best, _ = _lockstep_pgd(
        weights, biases, y, np.stack(starts), box.lower, box.upper, move,
        budget.steps, step_size,
    )
    return witness, best


def restricted_search(net: Network, space: RestrictedSpace, y: int, budget: AttackBudget):
    """Multi-start PGD over the restricted slice.

    Start points: the base point itself, the two extrema corners of the
    slice, and uniform samples filling the remaining budget.  Both
    extrema are always evaluated before any gradient step, so an
    adversarial extreme point is found unconditionally.
    """
    weights, biases = net.affine
    if not space.free:
        loss, _ = K.margin_grad_batch(weights, biases, space.base[None, :], y)
        w = space.base.copy() if loss[0] < 0 else None
        return w, space.base.copy()

    move = np.zeros(space.x.shape[0])
    move[sorted(space.free)] = 1.0
    step_size = budget.step_size if budget.step_size is not None else space.epsilon / 4.0

    starts = [space.base, space.lower, space.upper]
    if budget.starts > len(starts):
        rng = np.random.default_rng(budget.seed)
        extra = rng.uniform(
            space.lower, space.upper, size=(budget.starts - len(starts), space.x.shape[0])
        )
        starts.extend(extra)
    witness, best, _ = _lockstep_pgd(
        weights, biases, y, np.stack(starts[: max(budget.starts, 3)]),
        space.lower, space.upper, move, budget.steps, step_size,
    )
    return witness, best
