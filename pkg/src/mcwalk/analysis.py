"""Convergence-rate constants, bound envelopes, and empirical rate fits.

The envelope checks compare seed-averaged curves against the theoretical
bounds (the guarantees are on expectations, never on single paths), with
a normal-approximation Monte-Carlo band as the only allowed slack.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .chain import phi_product


@dataclass
class RateConstants:
    """C1, C2 (step-energy to gradient-energy transfer) and C_tau (the
    convex-rate constant) for given step size, Lipschitz constants,
    mixing time, and minimal stationary mass."""
    c1: float
    c2: float
    c_tau: float
    inputs: dict

    def to_json(self):
        return {"c1": self.c1, "c2": self.c2, "c_tau": self.c_tau,
                "inputs": self.inputs}


def rate_constants(gamma, L, L_r, tau, pi_min):
    if not (0.0 < gamma < 2.0 / L):
        raise ValueError("step size must lie in (0, 2/L)")
    if tau < 1 or not (0.0 < pi_min <= 1.0):
        raise ValueError("need tau >= 1 and pi_min in (0, 1]")
    factor = 2.0 * L_r ** 2 * (tau - 1) ** 2 + 4.0 / gamma ** 2
    c1 = 4.0 * gamma / (2.0 - L * gamma) * factor
    c2 = 4.0 * gamma ** 2 / (2.0 - L * gamma) ** 2 * factor
    c_tau = max(4.0 * L_r ** 2 * (tau - 1), 4.0 / gamma ** 2) \
        / ((1.0 / gamma - L / 2.0) * pi_min)
    return RateConstants(float(c1), float(c2), float(c_tau),
                         {"gamma": gamma, "L": L, "L_r": L_r,
                          "tau": int(tau), "pi_min": pi_min})


def envelope_sublinear(F0, c_tau, R, tau, k_grid):
    """Convex-case bound F0 C R^2 / (F0 floor(k/tau) + C R^2)."""
    if min(F0, c_tau, R, tau) <= 0:
        raise ValueError("all inputs must be positive")
    k = np.asarray(k_grid, dtype=float)
    blocks = np.floor(k / tau)
    return F0 * c_tau * R ** 2 / (F0 * blocks + c_tau * R ** 2)


def envelope_linear(F0, c_tau, nu, tau, k_grid):
    """Restricted-strong-convexity bound F0 (1 - nu/C)^{floor(k/tau)}."""
    if min(F0, c_tau, tau) <= 0 or nu <= 0:
        raise ValueError("all inputs must be positive")
    rho = 1.0 - nu / c_tau
    if rho < 0.0:
        warnings.warn("nu >= C_tau: contraction factor clamped at 0")
        rho = 0.0
    k = np.asarray(k_grid, dtype=float)
    return F0 * rho ** np.floor(k / tau)


def bound_square_summable(k_grid, F0, constants, total_energy, pi_min):
    """Nonconvex bound for square-summable noise with total energy E:
    2 [C1 F0 + (C2 + 4) E] / ((k+1) pi_min)."""
    k = np.asarray(k_grid, dtype=float)
    top = constants.c1 * F0 + (constants.c2 + 4.0) * total_energy
    return 2.0 * top / ((k + 1.0) * pi_min)


def bound_bounded_noise(k_grid, F0, constants, level, pi_min, tau):
    """Nonconvex bound for per-step noise energy at most S: a 1/(k+1)
    transient plus the plateau 2 (C2 (k+tau)/(k+1) + 4) S / pi_min."""
    k = np.asarray(k_grid, dtype=float)
    transient = 2.0 * constants.c1 * F0 / ((k + 1.0) * pi_min)
    plateau = 2.0 / pi_min * (constants.c2 * (k + tau) / (k + 1.0) + 4.0) * level
    return transient + plateau


def bounded_noise_floor(constants, level, pi_min):
    """k-independent part of the bounded-noise bound: 2 (C2 + 4) S / pi_min."""
    return 2.0 * (constants.c2 + 4.0) * level / pi_min


@dataclass
class EnvelopeReport:
    """Pointwise comparison of a bound curve against a seed-averaged
    empirical curve on a shared k-grid.

    ``violations`` counts grid points where the mean exceeds the bound at
    all; ``violations_beyond_band`` counts those exceeding it by more than
    the Monte-Carlo band.  A report passes when nothing violates beyond
    the band and at most ``tolerated_fraction`` of the grid violates
    within it.
    """
    kind: str
    k_grid: np.ndarray
    bound: np.ndarray
    empirical: np.ndarray
    band: np.ndarray
    violations: int
    violations_beyond_band: int
    slack_min: float
    tolerated_fraction: float = 0.01

    @property
    def passed(self):
        limit = math.floor(self.tolerated_fraction * len(self.k_grid))
        return self.violations_beyond_band == 0 and self.violations <= limit

    def summary(self):
        verdict = "PASS" if self.passed else "FAIL"
        return (f"[{verdict}] {self.kind}: {len(self.k_grid)} grid points, "
                f"{self.violations} above bound "
                f"({self.violations_beyond_band} beyond band), "
                f"min slack {self.slack_min:.3e}")

    def to_json(self):
        return {"kind": self.kind, "k": self.k_grid.tolist(),
                "bound": self.bound.tolist(),
                "empirical": self.empirical.tolist(),
                "band": self.band.tolist(), "violations": self.violations,
                "violations_beyond_band": self.violations_beyond_band,
                "slack_min": self.slack_min, "passed": self.passed}

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, sort_keys=True, indent=1)


def check_dominance(kind, k_grid, bound, empirical, band=None,
                    tolerated_fraction=0.01, rel_eps=1e-12):
    """Pointwise bound-vs-mean comparison; ``rel_eps`` absorbs pure
    floating-point rounding of otherwise equal values."""
    k_grid = np.asarray(k_grid)
    bound = np.asarray(bound, dtype=float)
    empirical = np.asarray(empirical, dtype=float)
    if band is None:
        band = np.zeros_like(empirical)
    band = np.asarray(band, dtype=float)
    if not (len(k_grid) == len(bound) == len(empirical) == len(band)):
        raise ValueError("curves must share one k-grid")
    slack = bound - empirical
    float_tol = rel_eps * np.abs(bound)
    return EnvelopeReport(
        kind=kind, k_grid=k_grid, bound=bound, empirical=empirical, band=band,
        violations=int(np.sum(slack < -float_tol)),
        violations_beyond_band=int(np.sum(slack < -(band + float_tol))),
        slack_min=float(slack.min()), tolerated_fraction=tolerated_fraction)


def mean_and_band(curves, confidence_z=1.96):
    """Seed-average of stacked per-seed curves plus the normal-
    approximation band z * std / sqrt(R)."""
    stacked = np.vstack(curves)
    mean = stacked.mean(axis=0)
    band = confidence_z * stacked.std(axis=0, ddof=1) / math.sqrt(stacked.shape[0])
    return mean, band


def running_min_grad_sq(grad_norms):
    """min over 1 <= t <= k of ||grad f(x^t)||^2 from a per-iteration
    gradient-norm column (entry 0 is the initial point and is excluded)."""
    g = np.asarray(grad_norms, dtype=float)
    if len(g) < 2:
        raise ValueError("need at least one post-initial record")
    return np.minimum.accumulate(g[1:] ** 2)


def envelope_nonconvex(grad_norm_family, constants, noise_kind, F0, pi_min,
                       tau, total_energy=None, level=None, k_grid=None,
                       min_seeds=30):
    """Dominance report for the nonconvex guarantee.

    ``grad_norm_family`` holds one per-iteration gradient-norm column per
    seed (record_every = 1).  The empirical curve is the seed average of
    the running minimum of squared gradient norms; the bound depends on
    the noise kind ("none" and "square_summable" share the total-energy
    form, "bounded" adds the plateau).
    """
    if len(grad_norm_family) < min_seeds:
        raise ValueError(f"need at least {min_seeds} seeds")
    mins = [running_min_grad_sq(g) for g in grad_norm_family]
    mean, band = mean_and_band(mins)
    ks = np.arange(1, len(mean) + 1)
    if k_grid is not None:
        k_grid = np.asarray(k_grid, dtype=int)
        idx = k_grid - 1
        mean, band, ks = mean[idx], band[idx], k_grid
    if noise_kind in ("none", "square_summable"):
        energy = 0.0 if noise_kind == "none" else float(total_energy)
        bound = bound_square_summable(ks, F0, constants, energy, pi_min)
        kind = f"nonconvex_{noise_kind}"
    elif noise_kind == "bounded":
        bound = bound_bounded_noise(ks, F0, constants, float(level), pi_min, tau)
        kind = "nonconvex_bounded"
    else:
        raise ValueError(f"unknown noise kind {noise_kind!r}")
    return check_dominance(kind, ks, bound, mean, band)


def fit_rate(curve, k_grid, mode="loglog"):
    """Least-squares fit of log(curve) against log(k) (``loglog``) or
    against k (``semilog``); returns (slope, r_squared)."""
    curve = np.asarray(curve, dtype=float)
    k = np.asarray(k_grid, dtype=float)
    if np.any(curve <= 0):
        raise ValueError("curve must be strictly positive on the fit range")
    if mode == "loglog":
        xs = np.log(k)
    elif mode == "semilog":
        xs = k
    else:
        raise ValueError("mode must be 'loglog' or 'semilog'")
    ys = np.log(curve)
    slope, intercept = np.polyfit(xs, ys, 1)
    pred = slope * xs + intercept
    ss_res = float(np.sum((ys - pred) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(slope), float(r2)


@dataclass
class ConditionalBoundReport:
    checked: int
    violations: int
    slack_min: float

    @property
    def passed(self):
        return self.violations == 0

    def summary(self):
        verdict = "PASS" if self.passed else "FAIL"
        return (f"[{verdict}] conditional lower bound: {self.checked} cases, "
                f"{self.violations} violations, min slack {self.slack_min:.3e}")


def conditional_bound_check(obj, x_frozen, schedule, tau, m_range=range(21),
                            tol=1e-10):
    """Exact matrix form of the conditional gradient lower bound.

    For every start state i and offset m, the chain-weighted sum
    sum_j [Phi(m, tau-1)]_{i,j} ||grad_j f(x)||^2 must be at least
    (pi_min / 2) ||grad f(x)||^2.  No sampling: evaluated densely.
    """
    from .chain import stationary_distribution
    pi = stationary_distribution(schedule).pi
    pi_min = float(pi.min())
    grad = obj.full_grad(np.asarray(x_frozen, dtype=float))
    gsq = np.array([float(np.sum(np.square(grad[obj.block_slice(i)])))
                    for i in range(obj.n_blocks)])
    rhs = 0.5 * pi_min * gsq.sum()
    scale = max(1.0, rhs)
    checked = 0
    violations = 0
    slack_min = math.inf
    for m in m_range:
        phi = phi_product(schedule, int(m), tau - 1)
        lhs = phi @ gsq
        slack = lhs - rhs
        checked += len(lhs)
        violations += int(np.sum(slack < -tol * scale))
        slack_min = min(slack_min, float(slack.min()))
    return ConditionalBoundReport(checked, violations, slack_min)
