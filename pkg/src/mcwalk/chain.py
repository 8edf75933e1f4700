"""Finite-state Markov chains on strongly connected graphs.

Builds random-walk transition matrices, computes stationary distributions
and mixing times, and samples walks deterministically from a seed.  All
node indices are 0-based in Python; the JSON interchange format is 1-based
(see ``load_schedule``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ROW_SUM_TOL = 1e-12
STATIONARY_TOL = 1e-10
DENSE_STATE_CAP = 4096


class NonMixingError(RuntimeError):
    """The chain has no verifiable mixing time (periodic, reducible, or
    the horizon was too short)."""


class Graph:
    """Directed graph on nodes 0..n-1, strongly connected by construction.

    ``self_loops_allowed`` controls whether walk policies may place mass on
    staying in place; explicit (i, i) edges are not required for that.
    """

    def __init__(self, n, edges, self_loops_allowed=True):
        if n < 1:
            raise ValueError("graph needs at least one node")
        if n > DENSE_STATE_CAP:
            raise ValueError(f"dense representation capped at {DENSE_STATE_CAP} nodes")
        self.n = int(n)
        self.self_loops_allowed = bool(self_loops_allowed)
        self.edges = set()
        for i, j in edges:
            i, j = int(i), int(j)
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i},{j}) out of range for {n} nodes")
            self.edges.add((i, j))
        self._out = [sorted(j for (a, j) in self.edges if a == i and j != i)
                     for i in range(self.n)]
        if not self._strongly_connected():
            raise ValueError("graph is not strongly connected")

    def neighbors(self, i):
        """Out-neighbors of ``i``, excluding ``i`` itself."""
        return self._out[i]

    def degree(self, i):
        return len(self._out[i])

    def has_edge(self, i, j):
        return (i, j) in self.edges

    def _reaches_all(self, adj):
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == self.n

    def _strongly_connected(self):
        if self.n == 1:
            return True
        fwd = [[j for (a, j) in self.edges if a == i] for i in range(self.n)]
        rev = [[a for (a, j) in self.edges if j == i] for i in range(self.n)]
        return self._reaches_all(fwd) and self._reaches_all(rev)

    @staticmethod
    def ring(n, self_loops_allowed=True):
        """Undirected ring (cycle) graph."""
        edges = []
        for i in range(n):
            j = (i + 1) % n
            edges.append((i, j))
            edges.append((j, i))
        return Graph(n, edges, self_loops_allowed)

    @staticmethod
    def complete(n, self_loops_allowed=True):
        edges = [(i, j) for i in range(n) for j in range(n) if i != j]
        return Graph(n, edges, self_loops_allowed)

    @staticmethod
    def path(n, self_loops_allowed=True):
        edges = []
        for i in range(n - 1):
            edges.append((i, i + 1))
            edges.append((i + 1, i))
        return Graph(n, edges, self_loops_allowed)


def _check_row_stochastic(P, what="matrix"):
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError(f"{what} must be square, got shape {P.shape}")
    if np.any(P < 0):
        raise ValueError(f"{what} has negative entries")
    rows = P.sum(axis=1)
    if np.max(np.abs(rows - 1.0)) > ROW_SUM_TOL:
        raise ValueError(f"{what} rows must sum to 1 within {ROW_SUM_TOL}")
    return P


class TransitionSchedule:
    """Row-stochastic transition matrices P(k), homogeneous or time-varying.

    Time-varying schedules store a finite matrix list plus a repetition
    rule: ``cycle`` restarts the list, ``hold_last`` repeats its tail
    forever.  When a support graph is given, every off-diagonal positive
    entry must sit on one of its edges.
    """

    def __init__(self, matrices, repeat="cycle", support_graph=None):
        mats = [_check_row_stochastic(P, f"P({k})") for k, P in enumerate(matrices)]
        if not mats:
            raise ValueError("schedule needs at least one matrix")
        n = mats[0].shape[0]
        if any(P.shape[0] != n for P in mats):
            raise ValueError("all matrices must share one state count")
        if repeat not in ("cycle", "hold_last"):
            raise ValueError("repeat must be 'cycle' or 'hold_last'")
        if support_graph is not None:
            if support_graph.n != n:
                raise ValueError("support graph size mismatch")
            for P in mats:
                for i, j in zip(*np.nonzero(P)):
                    if i != j and not support_graph.has_edge(int(i), int(j)):
                        raise ValueError(
                            f"positive entry ({i},{j}) not supported by graph")
        self.matrices = mats
        self.repeat = repeat
        self.support_graph = support_graph
        self.n = n
        # per-matrix cumulative rows for inverse-CDF sampling
        self._cum = [np.cumsum(P, axis=1) for P in mats]
        for c in self._cum:
            c[:, -1] = 1.0

    @staticmethod
    def homogeneous(P, support_graph=None):
        return TransitionSchedule([P], repeat="cycle", support_graph=support_graph)

    @property
    def is_homogeneous(self):
        return len(self.matrices) == 1

    def matrix_at(self, k):
        """The transition matrix P(k) used in step k."""
        if self.is_homogeneous:
            return self.matrices[0]
        if self.repeat == "cycle":
            return self.matrices[k % len(self.matrices)]
        return self.matrices[min(k, len(self.matrices) - 1)]

    def _cum_at(self, k):
        if self.is_homogeneous:
            return self._cum[0]
        if self.repeat == "cycle":
            return self._cum[k % len(self._cum)]
        return self._cum[min(k, len(self._cum) - 1)]

    def distinct_start_period(self, horizon):
        """Start offsets m that produce distinct products Phi(m, .) up to
        ``horizon``; collapses the m-loop for homogeneous/cyclic schedules."""
        if self.is_homogeneous:
            return 1
        return min(len(self.matrices), horizon + 1)


@dataclass
class StationaryDistribution:
    """Row vector pi with pi P = pi; pi_min is its smallest entry."""
    pi: np.ndarray
    pi_min: float

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=float)
        if np.any(self.pi <= 0):
            raise ValueError("stationary distribution must be strictly positive")
        if abs(self.pi.sum() - 1.0) > ROW_SUM_TOL:
            raise ValueError("stationary distribution must sum to 1")
        self.pi_min = float(self.pi.min())


@dataclass
class MixingProfile:
    """Smallest tau such that every checked product Phi(m, n) with
    n >= tau - 1 is within ``epsilon`` of the rank-one stationary matrix."""
    epsilon: float
    tau: int
    horizon: int
    internal_tau: int | None = None


def build_random_walk(graph, policy="simple", target=None):
    """Transition schedule for a random walk on ``graph``.

    ``simple`` moves uniformly over the out-neighbors (plus staying put
    when the graph allows self-loops); its stationary distribution is
    proportional to degree (self-loop included).  ``lazy_metropolis``
    targets an arbitrary strictly positive distribution: propose uniformly
    over neighbors-plus-self, accept with the Metropolis ratio, and fold
    every rejection into the self-loop.
    """
    n = graph.n
    P = np.zeros((n, n))
    if policy == "simple":
        for i in range(n):
            opts = list(graph.neighbors(i))
            if graph.self_loops_allowed:
                opts.append(i)
            if not opts:
                raise ValueError(f"node {i} has no moves")
            for j in opts:
                P[i, j] = 1.0 / len(opts)
    elif policy == "lazy_metropolis":
        if target is None:
            target = np.full(n, 1.0 / n)
        target = np.asarray(target, dtype=float)
        if target.shape != (n,) or np.any(target <= 0):
            raise ValueError("lazy_metropolis target must be strictly positive")
        if not graph.self_loops_allowed:
            raise ValueError("lazy_metropolis needs self-loops for laziness")
        target = target / target.sum()
        weight = np.array([target[i] / (graph.degree(i) + 1) for i in range(n)])
        for i in range(n):
            prop = 1.0 / (graph.degree(i) + 1)
            for j in graph.neighbors(i):
                P[i, j] = prop * min(1.0, weight[j] / weight[i])
            P[i, i] = 1.0 - P[i].sum()
    else:
        raise ValueError(f"unknown walk policy {policy!r}")
    return TransitionSchedule.homogeneous(P, support_graph=graph)


def stationary_distribution(schedule, candidate=None, max_iters=10**6, tol=1e-12):
    """Stationary distribution of a schedule.

    Homogeneous chains: power iteration on the transpose from the uniform
    vector, stopping when the l1 residual ||pi P - pi||_1 drops below
    ``tol``.  Time-varying chains require a caller-supplied candidate,
    which is verified against every matrix in the schedule.
    """
    if candidate is not None:
        pi = np.asarray(candidate, dtype=float)
        for k, P in enumerate(schedule.matrices):
            if np.abs(pi @ P - pi).sum() > STATIONARY_TOL:
                raise NonMixingError(f"candidate is not stationary for P({k})")
        return StationaryDistribution(pi, float(pi.min()))
    if not schedule.is_homogeneous:
        raise ValueError("time-varying schedule needs a candidate to verify")
    P = schedule.matrices[0]
    n = schedule.n
    pi = np.full(n, 1.0 / n)
    for _ in range(max_iters):
        nxt = pi @ P
        if np.abs(nxt - pi).sum() <= tol:
            pi = nxt / nxt.sum()
            if np.any(pi <= 0):
                raise NonMixingError("limit vector has zero mass (reducible chain)")
            return StationaryDistribution(pi, float(pi.min()))
        pi = nxt
    raise NonMixingError(
        "power iteration did not converge (periodic or reducible chain)")


def phi_product(schedule, m, n):
    """The product P(m) P(m+1) ... P(m+n); for homogeneous schedules this
    is the (n+1)-th matrix power."""
    if m < 0 or n < 0:
        raise ValueError("m and n must be nonnegative")
    if schedule.is_homogeneous:
        return np.linalg.matrix_power(schedule.matrices[0], n + 1)
    out = schedule.matrix_at(m).copy()
    for k in range(m + 1, m + n + 1):
        out = out @ schedule.matrix_at(k)
    return out


def _spectral_norms_from(schedule, m, horizon, target):
    """||Phi(m, n) - target||_2 for n = 0..horizon, computed incrementally."""
    mats = np.empty((horizon + 1, schedule.n, schedule.n))
    acc = schedule.matrix_at(m).copy()
    mats[0] = acc
    for n in range(1, horizon + 1):
        acc = acc @ schedule.matrix_at(m + n)
        mats[n] = acc
    # batched SVD: largest singular value of each deviation
    return np.linalg.svd(mats - target[None, :, :], compute_uv=False)[:, 0]


def mixing_time(schedule, epsilon, horizon=None, stationary=None):
    """Smallest tau such that ||Phi(m, n) - Pi*||_2 < epsilon for every
    start m and every n in [tau - 1, horizon].

    The search is exhaustive over a finite window: m runs over the
    schedule's distinct start offsets and n over [0, horizon].  Raises
    NonMixingError when no tau works up to the horizon.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if horizon is None:
        horizon = 10 * schedule.n ** 2
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if stationary is None:
        stationary = stationary_distribution(schedule)
    pi_star = np.tile(stationary.pi, (schedule.n, 1))
    # ok[n] == True when the bound holds at offset n for every checked m
    ok = np.ones(horizon + 1, dtype=bool)
    for m in range(schedule.distinct_start_period(horizon)):
        ok &= _spectral_norms_from(schedule, m, horizon, pi_star) < epsilon
    if not ok[horizon]:
        raise NonMixingError(
            f"chain does not mix to epsilon={epsilon} within horizon={horizon}")
    # smallest tau with ok[n] for all n >= tau - 1
    bad = np.nonzero(~ok)[0]
    tau = int(bad[-1]) + 2 if bad.size else 1
    return MixingProfile(epsilon=float(epsilon), tau=tau, horizon=int(horizon))


def internal_tau(schedule, horizon=None, stationary=None):
    """Mixing time at epsilon = pi_min / 2, with the entrywise floor
    [Phi(m, n)]_{i,j} >= pi_min / 2 verified for the checked n >= tau - 1."""
    if stationary is None:
        stationary = stationary_distribution(schedule)
    profile = mixing_time(schedule, stationary.pi_min / 2.0, horizon=horizon,
                          stationary=stationary)
    floor = stationary.pi_min / 2.0
    checks = range(schedule.distinct_start_period(profile.horizon))
    for m in checks:
        for n in (profile.tau - 1, profile.horizon):
            phi = phi_product(schedule, m, n)
            if phi.min() < floor - 1e-12:
                raise NonMixingError(
                    f"entry floor pi_min/2 violated at Phi({m},{n})")
    profile.internal_tau = profile.tau
    return profile.tau


def spectral_mixing_bound(P, epsilon):
    """Mixing-time upper bound from the second-largest eigenvalue modulus:
    (1 + 3 ln N / (2 ln(1/l2))) * log_{1/l2}(1/epsilon).

    Returns 1.0 in the degenerate l2 = 0 case; raises for l2 >= 1.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    P = _check_row_stochastic(P, "P")
    n = P.shape[0]
    eig = np.sort(np.abs(np.linalg.eigvals(P)))[::-1]
    lam2 = float(eig[1]) if n > 1 else 0.0
    if lam2 >= 1.0 - 1e-12:
        raise NonMixingError("second eigenvalue modulus >= 1: chain does not mix")
    if lam2 < 1e-14:
        return 1.0
    log_ratio = np.log(1.0 / lam2)
    return float((1.0 + 3.0 * np.log(n) / (2.0 * log_ratio))
                 * np.log(1.0 / epsilon) / log_ratio)


class WalkSampler:
    """Single-owner walk over a schedule; deterministic given its seed.

    Each step reads the current step's matrix row at the current state and
    inverts one uniform draw through the row's CDF, so zero-probability
    transitions are never selected.
    """

    def __init__(self, schedule, start_state, seed=0, step_index=0):
        if not (0 <= start_state < schedule.n):
            raise ValueError("start state out of range")
        self.schedule = schedule
        self.current_state = int(start_state)
        self.step_index = int(step_index)
        self.rng = seed if isinstance(seed, np.random.Generator) \
            else np.random.default_rng(seed)

    def next_state(self):
        """Advance one step and return the new state."""
        cum = self.schedule._cum_at(self.step_index)[self.current_state]
        u = self.rng.random()
        self.current_state = int(np.searchsorted(cum, u, side="right"))
        self.step_index += 1
        return self.current_state

    # alias used by the solver's selection-rule protocol
    def next_index(self):
        return self.next_state()


def empirical_visit_frequencies(sampler, steps):
    """Visit frequencies over ``steps`` draws (excluding the start state)."""
    counts = np.zeros(sampler.schedule.n)
    for _ in range(steps):
        counts[sampler.next_state()] += 1
    return counts / steps


def schedule_to_json(schedule, policy=None):
    """JSON description of a schedule; node indices are 1-based on disk."""
    doc = {"n": schedule.n}
    if schedule.support_graph is not None:
        doc["edges"] = sorted([i + 1, j + 1] for i, j in schedule.support_graph.edges)
        doc["self_loops"] = schedule.support_graph.self_loops_allowed
    if policy is not None:
        doc["policy"] = policy
    doc["matrices"] = [P.tolist() for P in schedule.matrices]
    if not schedule.is_homogeneous:
        doc["repeat"] = schedule.repeat
    return doc


def load_schedule(source):
    """Schedule from a JSON document (dict, JSON string, or file path).

    Accepted keys: n, edges (1-based pairs), self_loops, policy, target,
    matrices, repeat.  Explicit matrices win over a policy.
    """
    if isinstance(source, dict):
        doc = source
    else:
        text = None
        try:
            with open(source) as fh:
                text = fh.read()
        except (OSError, TypeError):
            text = source
        doc = json.loads(text)
    n = int(doc["n"])
    graph = None
    if "edges" in doc:
        edges = [(int(i) - 1, int(j) - 1) for i, j in doc["edges"]]
        graph = Graph(n, edges, self_loops_allowed=doc.get("self_loops", True))
    if "matrices" in doc:
        return TransitionSchedule(
            [np.asarray(P, dtype=float) for P in doc["matrices"]],
            repeat=doc.get("repeat", "cycle"), support_graph=graph)
    if graph is None:
        raise ValueError("schedule JSON needs 'edges' or 'matrices'")
    target = np.asarray(doc["target"], dtype=float) if "target" in doc else None
    return build_random_walk(graph, doc.get("policy", "simple"), target=target)
