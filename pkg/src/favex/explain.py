"""Explanation drivers: batched binary search with sequential fallback,
plus the pure-sequential and pure-binary-search baselines, and the
feature traversal strategies that order the work.

All drivers classify every feature index into invariants (robustness
proved), counterfactuals (witness found) or unknowns (verifier timed
out), querying a verifier oracle with active sets that grow according
to the chosen mode: "standard" perturbs invariants only, "v-optimal"
also perturbs the accumulated unknowns.
"""

from __future__ import annotations

import enum
import time
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Protocol

import numpy as np

from .attack import AttackBudget
from .bab import LeafCache, RobustnessQuery, Status, Verdict, verify
from .bounds import (
    BoundMethod,
    PerturbationBox,
    class_logit_lb,
    feature_scores,
)
from .model import Network, forward, predict


class Mode(enum.Enum):
    STANDARD = "standard"
    V_OPTIMAL = "v-optimal"


class TraversalStrategy(enum.Enum):
    INDEX_ORDER = "index-order"
    FAVEX_ALPHA = "favex-alpha"
    FAVEX_IBP = "favex-ibp"
    VERIX_PLUS = "verix-plus"
    VERIX_SENSITIVITY = "verix-sensitivity"


class VerifierOracle(Protocol):
    def __call__(
        self,
        query: RobustnessQuery,
        timeout: float,
        inherited: LeafCache | None,
        warm_start: np.ndarray | None,
    ) -> Verdict: ...


@dataclass
class ExplanationStats:
    queries: int = 0
    batch_queries: int = 0
    single_queries: int = 0
    timeouts: int = 0
    leaf_reuse_accepts: int = 0
    total_time: float = 0.0


@dataclass
class Explanation:
    mode: Mode
    epsilon: float
    x: np.ndarray
    predicted_class: int
    order: tuple[int, ...]
    invariants: frozenset[int]
    unknowns: frozenset[int]
    counterfactuals: frozenset[int]
    witnesses: dict[int, np.ndarray]
    stats: ExplanationStats = field(default_factory=ExplanationStats)

    @property
    def explanation(self) -> frozenset[int]:
        """The explanation proper: counterfactuals plus unknowns."""
        return self.counterfactuals | self.unknowns

    def to_json_dict(self) -> dict:
        """Deterministic JSON form; wall time stays out on purpose so
        repeated runs with the same seed are byte-identical."""
        return {
            "mode": self.mode.value,
            "epsilon": self.epsilon,
            "input": self.x.tolist(),
            "predicted_class": self.predicted_class,
            "order": list(self.order),
            "invariants": sorted(self.invariants),
            "unknowns": sorted(self.unknowns),
            "counterfactuals": sorted(self.counterfactuals),
            "witnesses": {str(i): w.tolist() for i, w in sorted(self.witnesses.items())},
            "stats": {
                "queries": self.stats.queries,
                "batch_queries": self.stats.batch_queries,
                "single_queries": self.stats.single_queries,
                "timeouts": self.stats.timeouts,
                "leaf_reuse_accepts": self.stats.leaf_reuse_accepts,
            },
        }


class BabVerifier:
    """VerifierOracle backed by the branch-and-bound module."""

    def __init__(
        self,
        net: Network,
        method: BoundMethod = BoundMethod.LINEAR_RELAXATION,
        budget: AttackBudget | None = None,
        seed: int = 0,
        clock=time.monotonic,
    ):
        self.net = net
        self.method = method
        self.budget = budget or AttackBudget(seed=seed)
        self.seed = seed
        self.clock = clock
        self.calls = 0

    def __call__(self, query, timeout, inherited=None, warm_start=None) -> Verdict:
        # Each call gets its own derived attack seed so repeated runs
        # reproduce the exact query sequence.
        budget = replace(self.budget, seed=self.seed + self.calls)
        self.calls += 1
        return verify(
            self.net,
            query,
            timeout,
            method=self.method,
            inherited=inherited,
            attack_warm_start=warm_start,
            budget=budget,
            clock=self.clock,
        )


def _halve(seq: tuple[int, ...]):
    mid = (len(seq) + 1) // 2
    return seq[:mid], seq[mid:]


MIN_BATCH_TIMEOUT = 0.1


class _Driver:
    """Shared state machine for the three explanation strategies."""

    def __init__(self, net, x, epsilon, mode, timeout, oracle, leaf_limit=None):
        self.net = net
        self.x = np.asarray(x, dtype=np.float64)
        self.epsilon = float(epsilon)
        self.mode = mode
        self.timeout = float(timeout)
        self.oracle = oracle
        self.leaf_limit = leaf_limit
        self.invariants: set[int] = set()
        self.unknowns: set[int] = set()
        self.counterfactuals: set[int] = set()
        self.witnesses: dict[int, np.ndarray] = {}
        self.stats = ExplanationStats()
        self.warm: np.ndarray | None = None
        self.cache: LeafCache | None = None

    def _active(self, batch) -> frozenset[int]:
        base = self.invariants | set(batch)
        if self.mode is Mode.V_OPTIMAL:
            base |= self.unknowns
        return frozenset(base)

    def _ask(self, batch, timeout, is_batch) -> Verdict:
        query = RobustnessQuery.from_input(
            self.net, self.x, self._active(batch), self.epsilon
        )
        inherited = None
        if self.cache is not None and len(self.cache.leaves) > 0:
            inherited = replace(self.cache, limit=self.leaf_limit)
        verdict = self.oracle(query, timeout, inherited, self.warm)
        self.stats.queries += 1
        if is_batch:
            self.stats.batch_queries += 1
        else:
            self.stats.single_queries += 1
        if verdict.status is Status.UNKNOWN:
            self.stats.timeouts += 1
            # Sequential processing restarts from scratch after a
            # timeout; batch processing keeps the last cache that
            # preceded it.
            if not is_batch:
                self.cache = None
        else:
            self.cache = verdict.leaves
        if verdict.stats.inherited_leaves > 0:
            self.stats.leaf_reuse_accepts += 1
        if verdict.witness is not None:
            self.warm = verdict.witness
        elif verdict.near_miss is not None:
            self.warm = verdict.near_miss
        return verdict

    def single(self, i: int) -> Status:
        verdict = self._ask((i,), self.timeout, is_batch=False)
        if verdict.status is Status.VERIFIED:
            self.invariants.add(i)
        elif verdict.status is Status.COUNTEREXAMPLE:
            self.counterfactuals.add(i)
            if verdict.witness is not None:
                self.witnesses[i] = np.asarray(verdict.witness, dtype=np.float64)
        else:
            self.unknowns.add(i)
        return verdict.status

    def batch(self, batch: tuple[int, ...]) -> bool:
        """One batch query with the reduced timeout; True iff verified."""
        timeout = max(self.timeout / 10.0, MIN_BATCH_TIMEOUT)
        verdict = self._ask(batch, timeout, is_batch=True)
        if verdict.status is Status.VERIFIED:
            self.invariants.update(batch)
            return True
        return False

    def finish(self, order, t0) -> Explanation:
        d = self.net.input_dim
        all_idx = set(range(d))
        assert self.invariants | self.unknowns | self.counterfactuals == all_idx
        self.stats.total_time = time.monotonic() - t0
        return Explanation(
            mode=self.mode,
            epsilon=self.epsilon,
            x=self.x,
            predicted_class=predict(self.net, self.x),
            order=tuple(order),
            invariants=frozenset(self.invariants),
            unknowns=frozenset(self.unknowns),
            counterfactuals=frozenset(self.counterfactuals),
            witnesses=self.witnesses,
            stats=self.stats,
        )


def _check_order(net, order):
    order = tuple(int(i) for i in order)
    if sorted(order) != list(range(net.input_dim)):
        raise ValueError("order must be a permutation of the feature indices")
    return order


def favex(net, x, epsilon, mode, order, timeout, leaf_limit=500, oracle=None) -> Explanation:
    """Batched explanation with binary-search halving and a permanent
    fallback to sequential processing after the first failed single
    query."""
    order = _check_order(net, order)
    oracle = oracle or BabVerifier(net)
    t0 = time.monotonic()
    drv = _Driver(net, x, epsilon, mode, timeout, oracle, leaf_limit=leaf_limit)
    batches = deque([order])
    fallback = False
    while batches:
        b = batches.popleft()
        if len(b) > 1:
            if fallback:
                for i in b:
                    drv.single(i)
            elif not drv.batch(b):
                first, second = _halve(b)
                batches.appendleft(second)
                batches.appendleft(first)
        else:
            if drv.single(b[0]) is not Status.VERIFIED:
                fallback = True
    return drv.finish(order, t0)


def sequential_explain(net, x, epsilon, mode, order, timeout, oracle=None) -> Explanation:
    """Deletion-style baseline: one full-timeout query per feature."""
    order = _check_order(net, order)
    oracle = oracle or BabVerifier(net)
    t0 = time.monotonic()
    drv = _Driver(net, x, epsilon, mode, timeout, oracle)
    for i in order:
        drv.single(i)
    return drv.finish(order, t0)


def binary_search_explain(net, x, epsilon, mode, order, timeout, oracle=None) -> Explanation:
    """Pure binary-search batching: single-query failures never switch
    the driver to sequential processing."""
    order = _check_order(net, order)
    oracle = oracle or BabVerifier(net)
    t0 = time.monotonic()
    drv = _Driver(net, x, epsilon, mode, timeout, oracle)
    batches = deque([order])
    while batches:
        b = batches.popleft()
        if len(b) > 1:
            if not drv.batch(b):
                first, second = _halve(b)
                batches.appendleft(second)
                batches.appendleft(first)
        else:
            drv.single(b[0])
    return drv.finish(order, t0)


def traversal_order(net, x, epsilon, strategy: TraversalStrategy) -> tuple[int, ...]:
    """Feature permutation for the chosen strategy (descending score,
    ties to the lower index)."""
    x = np.asarray(x, dtype=np.float64)
    d = net.input_dim
    if strategy is TraversalStrategy.INDEX_ORDER:
        return tuple(range(d))
    scores = traversal_scores(net, x, epsilon, strategy)
    return tuple(int(i) for i in np.argsort(-scores, kind="stable"))


def traversal_scores(net, x, epsilon, strategy: TraversalStrategy) -> np.ndarray:
    """Per-feature scores backing traversal_order (identity order scores 0)."""
    x = np.asarray(x, dtype=np.float64)
    d = net.input_dim
    if strategy is TraversalStrategy.INDEX_ORDER:
        return np.zeros(d)
    if strategy is TraversalStrategy.FAVEX_ALPHA:
        return feature_scores(net, x, epsilon, BoundMethod.LINEAR_RELAXATION)
    if strategy is TraversalStrategy.FAVEX_IBP:
        return feature_scores(net, x, epsilon, BoundMethod.IBP)
    if strategy is TraversalStrategy.VERIX_PLUS:
        y = predict(net, x)
        scores = np.empty(d)
        for i in range(d):
            box = PerturbationBox.build(net, x, frozenset({i}), epsilon)
            scores[i] = class_logit_lb(net, box, y)
        return scores
    if strategy is TraversalStrategy.VERIX_SENSITIVITY:
        y = predict(net, x)
        base = forward(net, x)[y]
        scores = np.empty(d)
        for i in range(d):
            up = x.copy()
            up[i] += epsilon
            dn = x.copy()
            dn[i] -= epsilon
            scores[i] = -max(
                abs(forward(net, up)[y] - base), abs(forward(net, dn)[y] - base)
            )
        return scores
    raise ValueError(f"unknown strategy {strategy!r}")
