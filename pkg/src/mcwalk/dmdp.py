"""Policy evaluation for finite-state discounted MDPs.

The future-reward vector solves v = r + discount * P v.  Besides a dense
direct solve (the test oracle), the value vector can be estimated by
walk-driven coordinate updates on the regularized least-squares objective
||(I - discount P) v - r||^2 / (2N) + lam/2 ||v||^2, maintaining the
residual u = A v - r incrementally.  The per-iteration algebra needs
matrix *columns*; Monte-Carlo simulation estimates *rows*, so the
simulation oracle either rescales rows through reversibility or falls
back to exact columns (audit mode) while the row noise is recorded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .chain import TransitionSchedule, WalkSampler, _check_row_stochastic
from .solver import SolverError, Trace

CACHE_AUDIT_EVERY = 1000
CACHE_AUDIT_TOL = 1e-8


class DmdpModel:
    """Transition matrix under a fixed policy, rewards, and a discount
    strictly inside (0, 1)."""

    def __init__(self, P, r, discount):
        self.P = _check_row_stochastic(P, "P")
        self.r = np.asarray(r, dtype=float)
        n = self.P.shape[0]
        if self.r.shape != (n,):
            raise ValueError("rewards must match the state count")
        if not (0.0 < discount < 1.0):
            raise ValueError("discount must lie strictly inside (0, 1)")
        self.discount = float(discount)
        self.n = n

    def to_json(self):
        return {"P": self.P.tolist(), "r": self.r.tolist(),
                "discount": self.discount}

    @staticmethod
    def from_json(source):
        if isinstance(source, dict):
            doc = source
        else:
            try:
                with open(source) as fh:
                    doc = json.load(fh)
            except (OSError, TypeError):
                doc = json.loads(source)
        return DmdpModel(np.asarray(doc["P"], dtype=float),
                         np.asarray(doc["r"], dtype=float),
                         float(doc["discount"]))


@dataclass
class ValueEstimate:
    v: np.ndarray
    residual: float

    def to_json(self):
        return {"v": self.v.tolist(), "bellman_residual": self.residual}


def bellman_residual(model, v):
    """Sup-norm fixed-point violation ||v - r - discount * P v||_inf."""
    v = np.asarray(v, dtype=float)
    return float(np.abs(v - model.r - model.discount * (model.P @ v)).max())


def direct_solve(model):
    """Dense solve of (I - discount P) v = r; the evaluation oracle."""
    A = np.eye(model.n) - model.discount * model.P
    v = np.linalg.solve(A, model.r)
    return ValueEstimate(v=v, residual=bellman_residual(model, v))


def monte_carlo_row(model, i, samples, rng):
    """Empirical frequencies of ``samples`` transitions out of state i,
    plus the ell_inf error level 3/sqrt(samples)."""
    if samples < 1:
        raise ValueError("need at least one simulated transition")
    cum = np.cumsum(model.P[i])
    cum[-1] = 1.0
    draws = np.searchsorted(cum, rng.random(samples), side="right")
    freqs = np.bincount(draws, minlength=model.n) / samples
    return freqs, 3.0 / np.sqrt(samples)


class ExactOracle:
    """Row and column access to the dense transition matrix."""

    kind = "exact"

    def __init__(self, model):
        self.model = model

    def row(self, i):
        return self.model.P[i]

    def column(self, i):
        return self.model.P[:, i]


class MonteCarloOracle:
    """Simulation-backed access: rows are empirical frequencies of
    ``samples_per_query`` transitions.

    column_mode "reversible" rescales an estimated row through detailed
    balance (valid for reversible models only); "exact" reads the stored
    matrix, so only the solver's gradient audit sees the sampling noise.
    """

    kind = "monte_carlo"

    def __init__(self, model, samples_per_query, seed=0, column_mode="exact"):
        if column_mode not in ("exact", "reversible"):
            raise ValueError("column_mode must be 'exact' or 'reversible'")
        self.model = model
        self.samples_per_query = int(samples_per_query)
        self.rng = seed if isinstance(seed, np.random.Generator) \
            else np.random.default_rng(seed)
        self.column_mode = column_mode
        self._pi = None
        if column_mode == "reversible":
            from .chain import stationary_distribution
            sd = stationary_distribution(TransitionSchedule.homogeneous(model.P))
            flow = sd.pi[:, None] * model.P
            if np.abs(flow - flow.T).max() > 1e-8:
                raise ValueError("reversible column mode needs a reversible model")
            self._pi = sd.pi

    def row(self, i):
        freqs, _ = monte_carlo_row(self.model, i, self.samples_per_query, self.rng)
        return freqs

    def column(self, i):
        if self.column_mode == "exact":
            return self.model.P[:, i]
        return self._pi[i] * self.row(i) / self._pi


def _ls_matrix(model):
    return np.eye(model.n) - model.discount * model.P


def ls_objective_value(model, lam, v, u=None):
    """(1/2N)||A v - r||^2 + lam/2 ||v||^2 with A = I - discount P."""
    if u is None:
        u = _ls_matrix(model) @ v - model.r
    return float(0.5 * (u @ u) / model.n + 0.5 * lam * (v @ v))


def ls_full_grad(model, lam, v, u=None):
    A = _ls_matrix(model)
    if u is None:
        u = A @ v - model.r
    return A.T @ u / model.n + lam * v


def ls_lipschitz(model, lam):
    """(uniform block constant, full constant) of the regularized
    least-squares objective."""
    A = _ls_matrix(model)
    col_sq = (A * A).sum(axis=0)
    L_block = float(col_sq.max() / model.n + lam)
    L_full = float(np.linalg.norm(A, 2) ** 2 / model.n + lam)
    return L_block, L_full


def normal_equation_solve(model, lam):
    """Minimizer of the regularized least-squares objective (test oracle);
    equals the fixed point only when lam = 0."""
    A = _ls_matrix(model)
    n = model.n
    return np.linalg.solve(A.T @ A / n + lam * np.eye(n), A.T @ model.r / n)


def evaluate_policy_mcbcd(model, oracle, cfg, lam=0.0, chain_from_model=True,
                          schedule=None, v0=None):
    """Coordinate-update policy evaluation.

    The selection walk is the system's own trajectory (``chain_from_model``)
    or a caller-supplied schedule over states.  Each step moves coordinate
    i along (1/N)(u_i - discount <P_col_i, u>) + lam v_i using the oracle's
    column, then repairs the residual cache with the exact column; when the
    oracle is simulation-backed, the gradient error against the exact
    column is recorded as the step's noise.  Returns the estimate and a
    trace with the Bellman residual as an extra metric.
    """
    if lam < 0:
        raise ValueError("regularization weight must be nonnegative")
    n = model.n
    L_block, L_full = ls_lipschitz(model, lam)
    if not (0.0 < cfg.gamma < 2.0 / L_block):
        raise ValueError(f"step size must lie in (0, {2.0 / L_block:.6g})")
    if chain_from_model:
        schedule = TransitionSchedule.homogeneous(model.P)
    elif schedule is None:
        raise ValueError("need a schedule when not walking the model chain")

    ss = np.random.SeedSequence(cfg.seed)
    walk_seq, init_seq = ss.spawn(2)
    init_rng = np.random.default_rng(init_seq)
    start = int(init_rng.integers(n))
    sampler = WalkSampler(schedule, start, seed=np.random.default_rng(walk_seq))

    v = np.zeros(n) if v0 is None else np.array(v0, dtype=float)
    A = _ls_matrix(model)
    u = A @ v - model.r
    discount, gamma = model.discount, cfg.gamma

    max_records = 2 + cfg.max_iters // cfg.record_every
    rec = {name: np.empty(max_records) for name in
           ("k", "block", "f", "grad_norm", "step_norm", "noise_norm", "bellman")}
    count = 0

    def record(k, block, step_norm, noise_norm):
        nonlocal count
        rec["k"][count] = k
        rec["block"][count] = block
        rec["f"][count] = ls_objective_value(model, lam, v, u)
        rec["grad_norm"][count] = float(np.linalg.norm(ls_full_grad(model, lam, v, u)))
        rec["step_norm"][count] = step_norm
        rec["noise_norm"][count] = noise_norm
        rec["bellman"][count] = bellman_residual(model, v)
        count += 1

    record(0, -1, 0.0, 0.0)
    stop_kind, stop_tol = cfg.stop[0], cfg.stop[1]
    stop_reason = "iter_cap"
    exact_cols = oracle.kind == "exact"
    i = sampler.current_state
    for k in range(cfg.max_iters):
        if k > 0:
            i = sampler.next_state()
        col = oracle.column(i)
        grad = (u[i] - discount * float(col @ u)) / n + lam * v[i]
        if not np.isfinite(grad):
            raise SolverError(f"non-finite gradient at state {i}")
        noise = 0.0
        if not exact_cols:
            exact = (u[i] - discount * float(model.P[:, i] @ u)) / n + lam * v[i]
            noise = abs(grad - exact)
        delta = -gamma * grad
        v[i] += delta
        # cache repair uses the exact column so u tracks A v - r itself:
        # u += delta * (e_i - discount * P[:, i])
        u[i] += delta
        u -= (delta * discount) * model.P[:, i]
        if (k + 1) % CACHE_AUDIT_EVERY == 0:
            err = float(np.abs(u - (A @ v - model.r)).max())
            if err > CACHE_AUDIT_TOL * (1.0 + float(np.abs(v).max())):
                raise SolverError(f"residual cache drifted by {err:.3g}")
        if (k + 1) % cfg.record_every == 0 or k + 1 == cfg.max_iters:
            record(k + 1, i, abs(delta), noise)
            if stop_kind == "grad_norm" and rec["grad_norm"][count - 1] <= stop_tol:
                stop_reason = "grad_norm"
                break

    meta = {"gamma": gamma, "L": L_block, "L_r": L_full, "seed": cfg.seed,
            "lam": lam, "oracle": oracle.kind, "stop_reason": stop_reason,
            "regularized_biased": lam > 0}
    trace = Trace(rec["k"][:count].astype(int), rec["block"][:count].astype(int),
                  rec["f"][:count], rec["grad_norm"][:count],
                  rec["step_norm"][:count], rec["noise_norm"][:count],
                  {"bellman_residual": rec["bellman"][:count]}, None, meta)
    return ValueEstimate(v=v, residual=bellman_residual(model, v)), trace
