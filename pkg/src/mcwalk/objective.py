"""Block-structured smooth objectives and separable nonsmooth terms.

Every objective exposes per-block gradients plus the Lipschitz constants
the step-size rules need: a uniform per-block constant L and a full-
gradient constant L_r (so the condition number is L_r / L).  Residual-type
caches are declared here but owned by solver state.
"""

from __future__ import annotations

import numpy as np


class BlockObjective:
    """Smooth function of N blocks (scalar blocks unless dims are given).

    Subclasses implement ``eval``, ``block_grad`` and ``full_grad``;
    ``block_grad`` returns a float for scalar blocks.  ``init_caches`` may
    return named residual vectors that the solver keeps in its state and
    updates through ``update_caches`` after each block change.
    """

    convex = True

    def __init__(self, n_blocks, block_dims=None, lipschitz_block=None,
                 lipschitz_full=None, strong_convexity=None, known_min=None):
        self.n_blocks = int(n_blocks)
        if block_dims is None:
            block_dims = np.ones(self.n_blocks, dtype=int)
        self.block_dims = np.asarray(block_dims, dtype=int)
        if len(self.block_dims) != self.n_blocks or np.any(self.block_dims < 1):
            raise ValueError("block_dims must give a positive size per block")
        self.offsets = np.concatenate([[0], np.cumsum(self.block_dims)])
        self.dim = int(self.offsets[-1])
        self.scalar_blocks = bool(np.all(self.block_dims == 1))
        self.lipschitz_block = lipschitz_block
        self.lipschitz_full = lipschitz_full
        self.strong_convexity = strong_convexity
        self.known_min = known_min
        if lipschitz_block is not None and lipschitz_full is not None:
            if lipschitz_full < lipschitz_block - 1e-12:
                raise ValueError("full-gradient constant must dominate the block one")

    @property
    def condition_number(self):
        return self.lipschitz_full / self.lipschitz_block

    def block_slice(self, i):
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    def eval(self, x):
        raise NotImplementedError

    def block_grad(self, x, i, caches=None):
        raise NotImplementedError

    def full_grad(self, x):
        raise NotImplementedError

    # --- optional incremental caches (solver-owned state) ---

    def init_caches(self, x):
        return None

    def update_caches(self, caches, x, i, delta):
        pass

    def cache_error(self, x, caches):
        """Max deviation between cached vectors and a fresh recomputation."""
        return 0.0


class QuadraticObjective(BlockObjective):
    """f(x) = x'Qx/2 + c'x with symmetric positive semidefinite Q."""

    def __init__(self, Q, c=None, block_dims=None):
        Q = np.asarray(Q, dtype=float)
        n = Q.shape[0]
        scale = max(1.0, np.abs(Q).max())
        if Q.shape != (n, n) or np.abs(Q - Q.T).max() > 1e-10 * scale:
            raise ValueError("Q must be square and symmetric")
        c = np.zeros(n) if c is None else np.asarray(c, dtype=float)
        eigs = np.linalg.eigvalsh(Q)
        if eigs[0] < -1e-10 * scale:
            raise ValueError("Q must be positive semidefinite")
        eigs = np.clip(eigs, 0.0, None)
        if block_dims is None:
            n_blocks = n
        else:
            n_blocks = len(block_dims)
        super().__init__(n_blocks, block_dims)
        if self.dim != n:
            raise ValueError("block_dims must sum to the dimension of Q")
        self.Q = Q
        self.c = c
        if self.scalar_blocks:
            L = float(np.max(np.diag(Q)))
        else:
            L = max(float(np.linalg.norm(Q[self.block_slice(i), self.block_slice(i)], 2))
                    for i in range(self.n_blocks))
        self.lipschitz_full = float(eigs[-1])
        self.lipschitz_block = max(L, 1e-300)
        self.strong_convexity = float(eigs[0]) if eigs[0] > 1e-12 * scale else None
        self._eigs = eigs
        # minimizer via least squares; consistent iff c lies in range(Q)
        xstar, *_ = np.linalg.lstsq(Q, -c, rcond=None)
        if np.abs(Q @ xstar + c).max() <= 1e-8 * max(scale, np.abs(c).max(), 1.0):
            self.minimizer = xstar
            self.known_min = float(self.eval(xstar))
        else:
            self.minimizer = None
            self.known_min = None

    def eval(self, x):
        return float(0.5 * x @ (self.Q @ x) + self.c @ x)

    def block_grad(self, x, i, caches=None):
        if self.scalar_blocks:
            return float(self.Q[i] @ x + self.c[i])
        s = self.block_slice(i)
        return self.Q[s] @ x + self.c[s]

    def full_grad(self, x):
        return self.Q @ x + self.c

    def restricted_growth_modulus(self):
        """Largest nu with f(x) - min f >= nu * dist(x, argmin)^2: half the
        smallest positive eigenvalue."""
        positive = self._eigs[self._eigs > 1e-12 * max(1.0, self._eigs[-1])]
        if positive.size == 0:
            raise ValueError("Q has no positive eigenvalues")
        return float(positive[0] / 2.0)


def make_quadratic(Q, c=None, block_dims=None):
    return QuadraticObjective(Q, c, block_dims)


class LeastSquaresObjective(BlockObjective):
    """f(x) = ||Ax - b||^2 / 2 over scalar blocks, with an incrementally
    maintained residual r = Ax - b."""

    def __init__(self, A, b):
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float)
        m, n = A.shape
        if b.shape != (m,):
            raise ValueError("b must match the row count of A")
        super().__init__(n)
        self.A = A
        self.b = b
        col_sq = (A * A).sum(axis=0)
        self.lipschitz_block = float(col_sq.max())
        self.lipschitz_full = float(np.linalg.norm(A, 2) ** 2)
        sv = np.linalg.svd(A, compute_uv=False)
        smin = float(sv[-1]) if m >= n else 0.0
        self.strong_convexity = smin ** 2 if smin > 1e-10 else None
        xstar, *_ = np.linalg.lstsq(A, b, rcond=None)
        self.minimizer = xstar
        self.known_min = float(self.eval(xstar))

    def eval(self, x):
        r = self.A @ x - self.b
        return float(0.5 * r @ r)

    def block_grad(self, x, i, caches=None):
        if caches is not None:
            return float(self.A[:, i] @ caches["residual"])
        return float(self.A[:, i] @ (self.A @ x - self.b))

    def full_grad(self, x):
        return self.A.T @ (self.A @ x - self.b)

    def init_caches(self, x):
        return {"residual": self.A @ x - self.b}

    def update_caches(self, caches, x, i, delta):
        caches["residual"] += self.A[:, i] * delta

    def cache_error(self, x, caches):
        return float(np.abs(caches["residual"] - (self.A @ x - self.b)).max())


def make_least_squares(A, b):
    return LeastSquaresObjective(A, b)


class DoubleWellObjective(BlockObjective):
    """Separable nonconvex test function sum_i (x_i^2 - 1)^2 / 4.

    The gradient is only locally Lipschitz, so constants are declared on
    the box |x_i| <= halfwidth; ``eval`` guards the box so a run that
    escapes it fails loudly instead of invalidating the constants.
    """

    convex = False

    def __init__(self, n, halfwidth=3.0):
        super().__init__(n)
        if halfwidth <= 1.0:
            raise ValueError("halfwidth must exceed 1 to contain the wells")
        self.halfwidth = float(halfwidth)
        L = 3.0 * halfwidth ** 2 - 1.0
        self.lipschitz_block = L
        self.lipschitz_full = L
        self.known_min = 0.0

    def eval(self, x):
        if np.abs(x).max() > self.halfwidth + 1e-9:
            raise FloatingPointError(
                "iterate left the box where the Lipschitz constants hold")
        q = x * x - 1.0
        return float(0.25 * (q * q).sum())

    def block_grad(self, x, i, caches=None):
        xi = x[i]
        return float(xi * xi * xi - xi)

    def full_grad(self, x):
        return x ** 3 - x


class MultiAgentPenaltyObjective(BlockObjective):
    """Per-agent smooth costs plus a quadratic penalty on resource overuse:
    sum_i f_i(x_i) + beta/2 * ||max(Ax - b, 0)||^2.

    ``parts`` is one (value, grad, lipschitz) triple per agent.  The
    resource residual v = Ax - b is kept as a solver cache.
    """

    def __init__(self, parts, A, b, beta):
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float)
        if beta <= 0:
            raise ValueError("beta must be positive")
        m, n = A.shape
        if len(parts) != n or b.shape != (m,):
            raise ValueError("A, b, and parts disagree on sizes")
        super().__init__(n)
        self.parts = list(parts)
        self.A = A
        self.b = b
        self.beta = float(beta)
        col_sq = (A * A).sum(axis=0)
        part_lips = np.array([p[2] for p in parts], dtype=float)
        self.lipschitz_block = float((part_lips + beta * col_sq).max())
        # conservative full constant: the kink makes the exact one unavailable
        self.lipschitz_full = float(part_lips.max()
                                    + beta * np.linalg.norm(A, 2) ** 2)

    def eval(self, x):
        v = np.maximum(self.A @ x - self.b, 0.0)
        return float(sum(p[0](x[i]) for i, p in enumerate(self.parts))
                     + 0.5 * self.beta * v @ v)

    def block_grad(self, x, i, caches=None):
        v = caches["resource"] if caches is not None else self.A @ x - self.b
        pen = self.A[:, i] @ np.maximum(v, 0.0)
        return float(self.parts[i][1](x[i]) + self.beta * pen)

    def full_grad(self, x):
        v = np.maximum(self.A @ x - self.b, 0.0)
        g = np.array([p[1](x[i]) for i, p in enumerate(self.parts)])
        return g + self.beta * (self.A.T @ v)

    def init_caches(self, x):
        return {"resource": self.A @ x - self.b}

    def update_caches(self, caches, x, i, delta):
        caches["resource"] += self.A[:, i] * delta

    def cache_error(self, x, caches):
        return float(np.abs(caches["resource"] - (self.A @ x - self.b)).max())


def make_multi_agent(parts, A, b, beta):
    return MultiAgentPenaltyObjective(parts, A, b, beta)


def quadratic_part(a, t):
    """Agent cost a (x - t)^2 / 2 as a (value, grad, lipschitz) triple."""
    if a <= 0:
        raise ValueError("curvature must be positive")
    return (lambda u: 0.5 * a * (u - t) ** 2, lambda u: a * (u - t), a)


# --- separable nonsmooth terms and their proximal mappings ---


class ProxOp:
    """Closed scalar function with a closed-form proximal mapping."""

    def value(self, v):
        raise NotImplementedError

    def prox(self, v, gamma):
        raise NotImplementedError


class ZeroProx(ProxOp):
    def value(self, v):
        return 0.0

    def prox(self, v, gamma):
        return v


class L1Prox(ProxOp):
    def __init__(self, weight=1.0):
        if weight < 0:
            raise ValueError("l1 weight must be nonnegative")
        self.weight = float(weight)

    def value(self, v):
        return self.weight * abs(v)

    def prox(self, v, gamma):
        t = gamma * self.weight
        if v > t:
            return v - t
        if v < -t:
            return v + t
        return 0.0


class BoxProx(ProxOp):
    def __init__(self, lo, hi):
        if lo > hi:
            raise ValueError("box needs lo <= hi")
        self.lo = float(lo)
        self.hi = float(hi)

    def value(self, v):
        return 0.0 if self.lo - 1e-12 <= v <= self.hi + 1e-12 else np.inf

    def prox(self, v, gamma):
        return min(max(v, self.lo), self.hi)


def prox_catalog(name, **params):
    """Named proximal operators: zero, l1(weight), box(lo, hi)."""
    if name == "zero":
        return ZeroProx()
    if name == "l1":
        return L1Prox(params.get("weight", 1.0))
    if name == "box":
        return BoxProx(params["lo"], params["hi"])
    raise ValueError(f"unknown prox {name!r}")


class SeparableNonsmooth:
    """One closed scalar function per block, g(x) = sum_i g_i(x_i)."""

    def __init__(self, proxes):
        self.proxes = list(proxes)

    @staticmethod
    def uniform(prox_op, n):
        return SeparableNonsmooth([prox_op] * n)

    def __len__(self):
        return len(self.proxes)

    def value(self, x):
        return float(sum(p.value(x[i]) for i, p in enumerate(self.proxes)))

    def block_value(self, i, v):
        return self.proxes[i].value(v)

    def prox(self, i, v, gamma):
        if gamma <= 0:
            raise ValueError("prox step must be positive")
        return self.proxes[i].prox(v, gamma)


# --- finite-difference probes used by the test suite ---


def fd_block_grad(obj, x, i, h=1e-6):
    """Central-difference partial gradient over block i."""
    s = obj.block_slice(i)
    out = np.empty(s.stop - s.start)
    for local, j in enumerate(range(s.start, s.stop)):
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        out[local] = (obj.eval(xp) - obj.eval(xm)) / (2 * h)
    return out if out.size > 1 else float(out[0])


def fd_full_grad(obj, x, h=1e-6):
    out = np.empty(obj.dim)
    for j in range(obj.dim):
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        out[j] = (obj.eval(xp) - obj.eval(xm)) / (2 * h)
    return out
