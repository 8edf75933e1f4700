"""Dual coordinate ascent with walk-driven index selection.

Covers the regularized-loss dual minimized through per-sample conjugate
gradients with an incrementally maintained product cache, plus the
empirical variant that replaces unknown sample masses by running visit
frequencies (and the fixed-mass baseline it is compared against).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .objective import BlockObjective
from .solver import SolverError

W_CACHE_TOL = 1e-8


class SquaredLosses:
    """Per-sample losses (u - b_i)^2 / 2 with closed-form conjugates
    v^2/2 + b_i v; conjugate gradients are 1-Lipschitz."""

    conj_grad_lipschitz = 1.0

    def __init__(self, b):
        self.b = np.asarray(b, dtype=float)

    def __len__(self):
        return len(self.b)

    def value(self, u):
        return 0.5 * (u - self.b) ** 2

    def conj_value(self, v):
        return 0.5 * v ** 2 + self.b * v

    def conj_grad(self, v):
        return v + self.b

    def conj_grad_at(self, i, v):
        return v + float(self.b[i])


class DcaDualObjective(BlockObjective):
    """Dual of the column-regularized loss-sum problem.

    D(alpha) = lam/2 ||A alpha||^2 + (1/N) sum_i conj_i(-alpha_i), where
    column A_i = a_i / (lam N) holds the i-th data vector.  The product
    w = A alpha is a solver-owned cache updated in O(d) per step.
    ``sample_weights`` carries true probability masses for the empirical
    (running-frequency) variant.
    """

    def __init__(self, a_vectors, lam, losses, sample_weights=None):
        a = np.asarray(a_vectors, dtype=float)
        if a.ndim != 2:
            raise ValueError("a_vectors must be a d x N matrix of columns")
        if lam <= 0:
            raise ValueError("regularization weight must be positive")
        d, n = a.shape
        if len(losses) != n:
            raise ValueError("need one loss per data column")
        super().__init__(n)
        self.a = a
        self.lam = float(lam)
        self.losses = losses
        self.A = a / (self.lam * n)
        self._col_sq = (self.A * self.A).sum(axis=0)
        lip = losses.conj_grad_lipschitz
        per_block = self.lam * self._col_sq + lip / n
        self.lipschitz_block = float(per_block.max())
        hess = self.lam * (self.A.T @ self.A) + np.eye(n) * (lip / n)
        self.lipschitz_full = float(np.linalg.eigvalsh(hess)[-1])
        if sample_weights is not None:
            sample_weights = np.asarray(sample_weights, dtype=float)
            if sample_weights.shape != (n,) or np.any(sample_weights <= 0):
                raise ValueError("sample weights must be strictly positive")
            if abs(sample_weights.sum() - 1.0) > 1e-9:
                raise ValueError("sample weights must sum to 1")
        self.sample_weights = sample_weights

    # --- dual form ---

    def eval(self, alpha):
        w = self.A @ alpha
        return float(0.5 * self.lam * w @ w
                     + self.losses.conj_value(-alpha).sum() / self.n_blocks)

    def block_grad(self, alpha, i, caches=None):
        w = caches["w"] if caches is not None else self.A @ alpha
        return float(self.lam * (self.A[:, i] @ w)
                     - self.losses.conj_grad_at(i, -float(alpha[i])) / self.n_blocks)

    def full_grad(self, alpha):
        w = self.A @ alpha
        return self.lam * (self.A.T @ w) - self.losses.conj_grad(-alpha) / self.n_blocks

    def init_caches(self, alpha):
        return {"w": self.A @ alpha}

    def update_caches(self, caches, alpha, i, delta):
        caches["w"] += self.A[:, i] * delta

    def cache_error(self, alpha, caches):
        return float(np.abs(caches["w"] - self.A @ alpha).max())

    def primal_value(self, w):
        """Objective of the regularized primal at w."""
        margins = self.a.T @ w
        return float(0.5 * self.lam * w @ w
                     + self.losses.value(margins).sum() / self.n_blocks)

    def gap(self, alpha, w=None):
        """P(A alpha) + D(alpha); nonnegative for convex losses, zero at
        the primal-dual optimum."""
        if w is None:
            w = self.A @ alpha
        return self.primal_value(w) + self.eval(alpha)

    def describe(self):
        return {"d": self.a.shape[0], "n": self.n_blocks, "lam": self.lam}


def make_dca_dual(a_vectors, lam, conjugates, sample_weights=None):
    return DcaDualObjective(a_vectors, lam, conjugates, sample_weights)


@dataclass
class DcaState:
    """Dual iterate, the cached matrix-vector product, and a counter."""
    alpha: np.ndarray
    w_cache: np.ndarray
    k: int = 0

    @staticmethod
    def zero(prob):
        return DcaState(np.zeros(prob.n_blocks), np.zeros(prob.a.shape[0]))

    def audit(self, matrix):
        """Cached product versus a dense recomputation."""
        return float(np.abs(self.w_cache - matrix @ self.alpha).max())


def mcdca_step(prob, state, sampler, cfg):
    """One dual coordinate step: move block i_k along its dual gradient
    built from the cached w = A alpha, then repair the cache in O(d)."""
    i = sampler.next_index()
    grad = (prob.lam * (prob.A[:, i] @ state.w_cache)
            - prob.losses.conj_grad_at(i, -float(state.alpha[i])) / prob.n_blocks)
    if not np.isfinite(grad):
        raise SolverError(f"non-finite conjugate gradient at index {i}")
    delta = -cfg.gamma * grad
    state.alpha[i] += delta
    state.w_cache += prob.A[:, i] * delta
    state.k += 1
    return state


def primal_from_dual(prob, state):
    """The primal point associated with a dual iterate: w(alpha) = A alpha
    (the cached vector)."""
    return state.w_cache.copy()


def duality_gap(prob, state):
    """P(w(alpha)) + D(alpha) at the current iterate."""
    return prob.gap(state.alpha, state.w_cache)


def run_mcdca(prob, source, cfg):
    """Dual coordinate descent through the generic engine, recording the
    duality gap at every record point; deterministic given cfg.seed."""
    from .solver import run
    metrics = {"duality_gap": lambda alpha: prob.gap(alpha)}
    return run(prob, source, cfg, extra_metrics=metrics)


class FrequencyCounter:
    """Visit counts per sample index with a strictly positive floor on the
    emitted frequency estimates."""

    def __init__(self, n, floor):
        if not (0 < floor < 1):
            raise ValueError("floor must be in (0, 1)")
        self.counts = np.zeros(n, dtype=int)
        self.total = 0
        self.floor = float(floor)

    def observe(self, xi):
        self.counts[xi] += 1
        self.total += 1

    def estimate(self, xi):
        return max(self.counts[xi] / self.total, self.floor)

    def frequencies(self):
        return self.counts / max(self.total, 1)

    def check_conservation(self):
        return int(self.counts.sum()) == self.total


class ErmDualProblem:
    """Mass-weighted dual used by the frequency-driven variant.

    D(alpha; q) = 1/(2 lam) ||sum_xi alpha_xi xi||^2
                  + sum_xi q_xi conj(-alpha_xi / q_xi), with the cache
    v = (1/lam) sum_xi alpha_xi xi acting as the traveling primal point.
    ``true_masses`` are held for gap and noise verification only.
    """

    def __init__(self, samples, lam, losses, true_masses):
        self.samples = np.asarray(samples, dtype=float)  # (n, d) rows
        if self.samples.ndim != 2:
            raise ValueError("samples must be an n x d matrix of rows")
        self.n, self.d = self.samples.shape
        if lam <= 0:
            raise ValueError("regularization weight must be positive")
        self.lam = float(lam)
        self.losses = losses
        p = np.asarray(true_masses, dtype=float)
        if p.shape != (self.n,) or np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("true masses must be a strictly positive distribution")
        self.true_masses = p
        self._row_sq = (self.samples * self.samples).sum(axis=1)

    def block_lipschitz(self, mass_floor):
        """Uniform bound on the dual block curvature when every emitted
        mass is at least ``mass_floor``."""
        return float(self._row_sq.max() / self.lam
                     + self.losses.conj_grad_lipschitz / mass_floor)

    def primal_point(self, alpha):
        return (alpha @ self.samples) / self.lam

    def dual_value(self, alpha, masses=None):
        q = self.true_masses if masses is None else masses
        v = self.primal_point(alpha)
        return float(0.5 * self.lam * v @ v
                     + (q * self.losses.conj_value(-alpha / q)).sum())

    def primal_value(self, v, masses=None):
        q = self.true_masses if masses is None else masses
        margins = self.samples @ v
        return float((q * self.losses.value(margins)).sum()
                     + 0.5 * self.lam * v @ v)

    def gap(self, alpha, v=None):
        """Duality gap under the true masses."""
        if v is None:
            v = self.primal_point(alpha)
        return self.primal_value(v) + self.dual_value(alpha)

    def full_grad(self, alpha, masses=None):
        q = self.true_masses if masses is None else masses
        v = self.primal_point(alpha)
        return self.samples @ v - self.losses.conj_grad(-alpha / q)

    def minimizer(self):
        """Dense solve of the true-mass dual optimality system (squared
        losses only): (X X'/lam + diag(1/p)) alpha = b."""
        M = self.samples @ self.samples.T / self.lam + np.diag(1.0 / self.true_masses)
        return np.linalg.solve(M, self.losses.b)


def empirical_mcdca_step(prob, state, freq, sampler, cfg):
    """One frequency-driven dual step.

    Observes the sampled index, floors its running frequency, steps the
    dual coordinate using the conjugate gradient at -alpha/estimate, and
    repairs the cache v <- v + (delta alpha) xi / lam.  Returns the implied
    gradient noise against the true masses (nan when they are unknown).
    """
    xi = sampler.next_index()
    freq.observe(xi)
    p_bar = freq.estimate(xi)
    row = prob.samples[xi]
    a_old = float(state.alpha[xi])
    grad = float(row @ state.w_cache) - prob.losses.conj_grad_at(xi, -a_old / p_bar)
    if not np.isfinite(grad):
        raise SolverError(f"non-finite conjugate gradient at sample {xi}")
    delta = -cfg.gamma * grad
    state.alpha[xi] += delta
    state.w_cache += row * (delta / prob.lam)
    state.k += 1
    noise = np.nan
    if prob.true_masses is not None:
        p_true = float(prob.true_masses[xi])
        noise = (prob.losses.conj_grad_at(xi, -a_old / p_true)
                 - prob.losses.conj_grad_at(xi, -a_old / p_bar))
    return state, xi, noise


def run_empirical_mcdca(prob, schedule, cfg, grid, start_state=0, floor=None):
    """Frequency-driven dual run over a walk, recording at ``grid``.

    Records the true-mass duality gap, dual gradient norm, implied noise
    magnitude, and the worst frequency estimation error.  Deterministic
    given cfg.seed.
    """
    from .chain import WalkSampler
    ss = np.random.SeedSequence(cfg.seed)
    walk_seq, _ = ss.spawn(2)
    sampler = WalkSampler(schedule, start_state, seed=np.random.default_rng(walk_seq))
    if floor is None:
        floor = float(prob.true_masses.min()) / 2.0
    freq = FrequencyCounter(prob.n, floor)
    state = DcaState(np.zeros(prob.n), np.zeros(prob.d))
    grid = sorted(set(int(k) for k in grid))
    if grid and grid[0] < 1:
        raise ValueError("grid entries must be >= 1")
    rec = {"k": [], "gap": [], "grad_norm": [], "noise_norm": [],
           "freq_error": [], "dual": []}
    targets = iter(grid)
    nxt = next(targets, None)
    last_noise = 0.0
    for k in range(1, (grid[-1] if grid else cfg.max_iters) + 1):
        state, xi, noise = empirical_mcdca_step(prob, state, freq, sampler, cfg)
        last_noise = noise
        if nxt is not None and k == nxt:
            rec["k"].append(k)
            rec["gap"].append(prob.gap(state.alpha, state.w_cache))
            rec["grad_norm"].append(float(np.linalg.norm(prob.full_grad(state.alpha))))
            rec["noise_norm"].append(abs(last_noise))
            rec["freq_error"].append(
                float(np.abs(freq.frequencies() - prob.true_masses).max()))
            rec["dual"].append(prob.dual_value(state.alpha))
            nxt = next(targets, None)
    if state.audit(prob.samples.T / prob.lam) > \
            W_CACHE_TOL * (1.0 + float(np.abs(state.alpha).max())):
        raise SolverError("dual product cache drifted")
    return {name: np.asarray(col) for name, col in rec.items()}, state, freq


def sdca_baseline(prob, estimated_masses, cfg, grid=None):
    """Fixed-mass baseline: i.i.d. uniform index draws, masses estimated
    once and frozen.  Records the true-mass duality gap on ``grid``."""
    q = np.asarray(estimated_masses, dtype=float)
    if np.any(q <= 0):
        raise ValueError("estimated masses must be strictly positive")
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    state = DcaState(np.zeros(prob.n), np.zeros(prob.d))
    grid = sorted(set(int(k) for k in (grid if grid is not None
                                       else range(1, cfg.max_iters + 1))))
    rec = {"k": [], "gap": [], "grad_norm": [], "dual": []}
    targets = iter(grid)
    nxt = next(targets, None)
    total = grid[-1] if grid else cfg.max_iters
    for k in range(1, total + 1):
        xi = int(rng.integers(prob.n))
        row = prob.samples[xi]
        a_old = float(state.alpha[xi])
        grad = float(row @ state.w_cache) \
            - prob.losses.conj_grad_at(xi, -a_old / float(q[xi]))
        delta = -cfg.gamma * grad
        state.alpha[xi] += delta
        state.w_cache += row * (delta / prob.lam)
        state.k += 1
        if nxt is not None and k == nxt:
            rec["k"].append(k)
            rec["gap"].append(prob.gap(state.alpha, state.w_cache))
            rec["grad_norm"].append(float(np.linalg.norm(prob.full_grad(state.alpha))))
            rec["dual"].append(prob.dual_value(state.alpha))
            nxt = next(targets, None)
    return {name: np.asarray(col) for name, col in rec.items()}, state
