"""Branch-and-bound robustness verifier with ReLU splitting.

A verify call alternates counterexample checks and bounding steps over a
best-first queue of phase-constrained subproblems, splitting ambiguous
ReLUs until every leaf is verified, a counterfactual is found, or the
timeout elapses.  Leaf constraint sets are cached and can seed later
calls on similar queries; the cached leaves always form a disjoint cover
of the sign-assignment space under the root.
"""

from __future__ import annotations

import enum
import heapq
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linprog

from . import _kernels as K
from .attack import RESTRICTED_STARTS, AttackBudget, RestrictedSpace, pgd, restricted_search
from .bounds import (
    BoundEngine,
    BoundMethod,
    LayerBounds,
    PerturbationBox,
    PhaseConstraint,
    Sign,
)
from .errors import ConflictError, NoAmbiguousNeuron
from .model import Network, predict


class Status(enum.IntEnum):
    COUNTEREXAMPLE = -1
    UNKNOWN = 0
    VERIFIED = 1


class LeafOrigin(enum.Enum):
    EMPTY = "empty"
    FULL_VERIFICATION = "full-verification"
    TIMEOUT = "timeout"
    COUNTEREXAMPLE = "counterexample"


@dataclass(frozen=True)
class LeafCache:
    """Constraint sets at the leaves of a (possibly partial) split tree."""

    leaves: tuple[frozenset[PhaseConstraint], ...]
    origin: LeafOrigin
    limit: int | None = None  # None = unbounded

    @classmethod
    def empty(cls) -> "LeafCache":
        return cls(leaves=(), origin=LeafOrigin.EMPTY, limit=None)


@dataclass(frozen=True)
class RobustnessQuery:
    x: np.ndarray
    active: frozenset[int]
    epsilon: float
    y: int

    @classmethod
    def from_input(cls, net: Network, x, active, epsilon: float) -> "RobustnessQuery":
        x = np.asarray(x, dtype=np.float64).copy()
        x.setflags(write=False)
        active = frozenset(int(i) for i in active)
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if active and (min(active) < 0 or max(active) >= net.input_dim):
            raise ValueError("active indices out of range")
        return cls(x=x, active=active, epsilon=float(epsilon), y=predict(net, x))


@dataclass
class Subproblem:
    query: RobustnessQuery
    constraints: frozenset[PhaseConstraint]
    priority: float  # last known lower bound; lowest first in the queue


@dataclass
class VerifyStats:
    nodes_expanded: int = 0
    bound_calls: int = 0
    attack_calls: int = 0
    wall_time: float = 0.0
    inherited_leaves: int = 0


@dataclass
class Verdict:
    status: Status
    witness: np.ndarray | None
    near_miss: np.ndarray
    leaves: LeafCache
    stats: VerifyStats = field(default_factory=VerifyStats)


def _margin(net: Network, point, y: int) -> float:
    weights, biases = net.affine
    loss, _ = K.margin_grad_batch(weights, biases, np.asarray(point)[None, :], y)
    return float(loss[0])


def witness_is_valid(net: Network, q: RobustnessQuery, w, tol: float = 1e-9) -> bool:
    """Class flips and the point stays inside B^eps_active(x) and the box."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != q.x.shape or predict(net, w) == q.y:
        return False
    frozen = np.ones(q.x.shape[0], dtype=bool)
    frozen[sorted(q.active)] = False
    if np.any(w[frozen] != q.x[frozen]):
        return False
    if np.max(np.abs(w - q.x)) > q.epsilon + tol:
        return False
    return bool(
        np.all(w >= net.input_lower - tol) and np.all(w <= net.input_upper + tol)
    )


def split(net: Network, sub: Subproblem, root_bounds: LayerBounds, _clipped=None):
    """Split on the ambiguous ReLU with the largest relaxation-triangle area.

    Children extend the constraint set with the two signs of the chosen
    neuron.  Raises NoAmbiguousNeuron when every ReLU is sign-fixed
    under the subproblem's clipped bounds.
    """
    clipped = _clipped if _clipped is not None else root_bounds.clipped(sub.constraints)
    constrained = {(c.layer, c.neuron) for c in sub.constraints}
    best_score = -np.inf
    best = None
    for r, (l, u) in enumerate(zip(clipped.lower, clipped.upper)):
        amb = (l < 0.0) & (u > 0.0)
        if not np.any(amb):
            continue
        scores = np.where(amb, (-l * u) / (u - l), -np.inf)
        j = int(np.argmax(scores))
        if scores[j] > best_score and (r, j) not in constrained:
            best_score = float(scores[j])
            best = (r, j)
    if best is None:
        raise NoAmbiguousNeuron("all ReLU phases are fixed")
    r, j = best
    c_pos = sub.constraints | {PhaseConstraint(r, j, Sign.NON_NEGATIVE)}
    c_neg = sub.constraints | {PhaseConstraint(r, j, Sign.NEGATIVE)}
    return (
        Subproblem(sub.query, frozenset(c_pos), sub.priority),
        Subproblem(sub.query, frozenset(c_neg), sub.priority),
    )


def _cex_search(net, q, warm_start, budget):
    """(witness or None, best point, attack calls)."""
    if not q.active:
        return None, q.x.copy(), 0
    w, z1 = pgd(net, q.x, q.active, q.epsilon, q.y, budget)
    calls = 1
    if w is not None:
        return w, w, calls
    best, best_loss = z1, _margin(net, z1, q.y)
    if warm_start is not None:
        z0 = q.x.copy()
        idx = sorted(q.active)
        z0[idx] = np.clip(
            np.asarray(warm_start, dtype=np.float64)[idx],
            q.x[idx] - q.epsilon,
            q.x[idx] + q.epsilon,
        )
        z0 = np.clip(z0, net.input_lower, net.input_upper)
        moved = {i for i in idx if z0[i] != q.x[i]}
        free = q.active - moved
        space = RestrictedSpace.build(net, q.x, z0, free, q.epsilon)
        rbudget = replace(budget, starts=max(budget.starts, RESTRICTED_STARTS))
        w2, z2 = restricted_search(net, space, q.y, rbudget)
        calls += 1
        if w2 is not None:
            return w2, w2, calls
        loss2 = _margin(net, z2, q.y)
        if loss2 < best_loss:
            best, best_loss = z2, loss2
    return None, best, calls


def cex_search(net: Network, q: RobustnessQuery, warm_start=None, budget: AttackBudget | None = None):
    """Counterfactual search: preliminary PGD over the full active set,
    then (when a warm start is given) restricted-space multi-start PGD
    around it.  Returns (witness or None, best point seen)."""
    w, z, _ = _cex_search(net, q, warm_start, budget or AttackBudget())
    return w, z


def _fixed_phases(clipped: LayerBounds):
    """Active/inactive mask per ReLU layer; None if any neuron is ambiguous."""
    phases = []
    for l, u in zip(clipped.lower, clipped.upper):
        if np.any((l < 0.0) & (u > 0.0)):
            return None
        phases.append(l >= 0.0)
    return phases


def _composed_affine(net: Network, phases):
    """Affine form of the network under fixed ReLU phases.

    Returns (per-layer pre-activation affine maps [(A, b), ...],
    final logits affine map (A, b)); everything is affine in the input
    once the phases are fixed.
    """
    weights, biases = net.affine
    pre_maps = []
    a_cur = None
    b_cur = None
    for r in range(len(weights)):
        if a_cur is None:
            a_pre = weights[r].copy()
            b_pre = biases[r].copy()
        else:
            a_pre = weights[r] @ a_cur
            b_pre = weights[r] @ b_cur + biases[r]
        if r < len(phases):
            pre_maps.append((a_pre, b_pre))
            mask = phases[r].astype(np.float64)
            a_cur = a_pre * mask[:, None]
            b_cur = b_pre * mask
        else:
            return pre_maps, (a_pre, b_pre)
    raise AssertionError("network must end with an affine layer")


_LEAF_TOL = 1e-9


def _resolve_fixed_leaf(net, q, box, clipped, rows):
    """Decide a subproblem whose ReLU phases are all fixed.

    The network is affine on the subproblem's region.  First bound the
    exact affine minimum over the whole box (cheap corner selection);
    if inconclusive, solve the region exactly as a small LP.  Returns
    ("verified", None), ("cex", witness) or ("stuck", None).
    """
    phases = _fixed_phases(clipped)
    assert phases is not None
    pre_maps, (a_out, b_out) = _composed_affine(net, phases)
    diff_a = rows @ a_out
    diff_b = rows @ b_out
    vals, corners = K.linear_box_lower(diff_a, diff_b, box.lower, box.upper, box.x)
    if np.min(vals) > 0.0:
        return "verified", None
    corner = corners[int(np.argmin(vals))]
    if witness_is_valid(net, q, corner):
        return "cex", corner

    # Cheap emptiness test before the LP: a single phase row whose exact
    # affine range over the box excludes its sign empties the region.
    for (a_pre, b_pre), mask in zip(pre_maps, phases):
        row_min, _ = K.linear_box_lower(a_pre, b_pre, box.lower, box.upper, box.x)
        row_max, _ = K.linear_box_lower(-a_pre, -b_pre, box.lower, box.upper, box.x)
        row_max = -row_max
        if np.any(row_max[mask] < 0.0) or np.any(row_min[~mask] > 0.0):
            return "verified", None

    # The box minimiser violated a fixed phase; solve the exact region.
    a_ub = []
    b_ub = []
    for (a_pre, b_pre), mask in zip(pre_maps, phases):
        act = np.flatnonzero(mask)
        inact = np.flatnonzero(~mask)
        if act.size:
            a_ub.append(-a_pre[act])
            b_ub.append(b_pre[act])
        if inact.size:
            a_ub.append(a_pre[inact])
            b_ub.append(-b_pre[inact])
    a_ub = np.concatenate(a_ub) if a_ub else None
    b_ub = np.concatenate(b_ub) if b_ub else None
    var_bounds = list(zip(box.lower, box.upper))

    for i in range(diff_a.shape[0]):
        res = linprog(diff_a[i], A_ub=a_ub, b_ub=b_ub, bounds=var_bounds, method="highs")
        if res.status == 2:  # infeasible: empty region, vacuously safe
            return "verified", None
        if not res.success:
            return "stuck", None
        mval = float(res.fun) + float(diff_b[i])
        if mval < -_LEAF_TOL:
            w = np.asarray(res.x, dtype=np.float64)
            # Frozen coordinates must be bit-exact.
            frozen = np.ones(w.shape[0], dtype=bool)
            frozen[sorted(q.active)] = False
            w[frozen] = q.x[frozen]
            if witness_is_valid(net, q, w):
                return "cex", w
            return "stuck", None
        if mval <= _LEAF_TOL:
            return "stuck", None
    return "verified", None


def verify(
    net: Network,
    q: RobustnessQuery,
    timeout: float,
    method: BoundMethod = BoundMethod.LINEAR_RELAXATION,
    inherited: LeafCache | None = None,
    attack_warm_start=None,
    budget: AttackBudget | None = None,
    clock=time.monotonic,
) -> Verdict:
    """Run branch-and-bound on one robustness query.

    Verified means every leaf's bound was strictly positive (or its
    region empty); Counterexample carries a validated witness; Unknown
    means the timeout elapsed (or an exactly-degenerate leaf could not
    be decided).  Cached leaves from ``inherited`` seed the queue when
    the cache is non-empty and within its own size limit.
    """
    if timeout <= 0:
        raise ValueError("timeout must be positive")
    t0 = clock()
    budget = budget or AttackBudget()
    stats = VerifyStats()

    def finish(status, witness, near, leaves, origin, limit):
        stats.wall_time = clock() - t0
        cache = LeafCache(leaves=tuple(leaves), origin=origin, limit=limit)
        return Verdict(status=status, witness=witness, near_miss=near, leaves=cache, stats=stats)

    if not q.active:
        # Degenerate region {x}: the prediction is invariant by definition.
        return finish(
            Status.VERIFIED, None, q.x.copy(), [frozenset()],
            LeafOrigin.FULL_VERIFICATION, None,
        )

    box = PerturbationBox.build(net, q.x, q.active, q.epsilon)
    engine = BoundEngine(net, box, method, q.y)
    stats.bound_calls = engine.bound_calls
    rows = engine.rows

    accept = (
        inherited is not None
        and len(inherited.leaves) > 0
        and (inherited.limit is None or len(inherited.leaves) <= inherited.limit)
    )
    limit = inherited.limit if inherited is not None else None
    seeds = list(inherited.leaves) if accept else [frozenset()]
    if accept:
        stats.inherited_leaves = len(inherited.leaves)

    queue: list[tuple[float, int, frozenset]] = []
    counter = 0
    for cons in seeds:
        heapq.heappush(queue, (-np.inf, counter, cons))
        counter += 1

    witness, near, calls = _cex_search(net, q, attack_warm_start, budget)
    stats.attack_calls += calls
    near_loss = _margin(net, near, q.y)
    if witness is not None:
        return finish(
            Status.COUNTEREXAMPLE, witness, near,
            [c for _, _, c in queue], LeafOrigin.COUNTEREXAMPLE, limit,
        )

    verified_leaves: list[frozenset] = []
    stuck: list[frozenset] = []

    def pending(extra=()):
        return verified_leaves + list(extra) + [c for _, _, c in queue] + stuck

    while queue:
        _, _, cons = heapq.heappop(queue)
        stats.nodes_expanded += 1
        try:
            lb, corner, clipped = engine.diff_lower(cons)
        except ConflictError:
            verified_leaves.append(cons)
            continue
        finally:
            stats.bound_calls = engine.bound_calls

        # Cheap counterexample check on the bound's primal candidate.
        corner_loss = _margin(net, corner, q.y)
        if corner_loss < near_loss:
            near_loss, near = corner_loss, corner.copy()
        if corner_loss < 0.0 and witness_is_valid(net, q, corner):
            return finish(
                Status.COUNTEREXAMPLE, corner, near,
                pending(extra=[cons]), LeafOrigin.COUNTEREXAMPLE, limit,
            )

        if lb > 0.0:
            verified_leaves.append(cons)
            continue

        if clock() - t0 >= timeout:
            return finish(
                Status.UNKNOWN, None, near,
                pending(extra=[cons]), LeafOrigin.TIMEOUT, limit,
            )

        sub = Subproblem(q, cons, lb)
        try:
            child_a, child_b = split(net, sub, engine.root, _clipped=clipped)
        except NoAmbiguousNeuron:
            outcome, w = _resolve_fixed_leaf(net, q, box, clipped, rows)
            if outcome == "verified":
                verified_leaves.append(cons)
            elif outcome == "cex":
                w_loss = _margin(net, w, q.y)
                if w_loss < near_loss:
                    near_loss, near = w_loss, w.copy()
                return finish(
                    Status.COUNTEREXAMPLE, w, near,
                    pending(extra=[cons]), LeafOrigin.COUNTEREXAMPLE, limit,
                )
            else:
                stuck.append(cons)
            continue
        for child in (child_a, child_b):
            heapq.heappush(queue, (lb, counter, child.constraints))
            counter += 1

    if stuck:
        return finish(Status.UNKNOWN, None, near, pending(), LeafOrigin.TIMEOUT, limit)
    return finish(
        Status.VERIFIED, None, near, verified_leaves, LeafOrigin.FULL_VERIFICATION, limit
    )
