"""Block coordinate descent driven by an arbitrary block-selection source.

One iteration samples a block, steps that block along its (possibly
noisy) partial gradient, and optionally applies a per-block proximal
mapping.  Runs are fully deterministic given the config seed; traces
record per-iteration objective, gradient, step, and noise magnitudes, and
can retain iterates for the pathwise inequality audits.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .chain import TransitionSchedule, WalkSampler, NonMixingError, \
    stationary_distribution

CACHE_AUDIT_EVERY = 1000
CACHE_AUDIT_TOL = 1e-8


class SolverError(RuntimeError):
    pass


class NoiseModel:
    """Additive error applied to the selected block's partial gradient.

    kinds: ``none``; ``square_summable`` with schedule sigma_k =
    sigma0 / (k + 1), whose total energy sum sigma_k^2 = sigma0^2 pi^2/6 is
    known in closed form; ``bounded`` drawing from the uniform ball with
    ||eps||^2 <= level; ``custom`` with a callback (k, rng, dim) -> eps.
    """

    def __init__(self, kind="none", sigma0=None, level=None, callback=None):
        if kind not in ("none", "square_summable", "bounded", "custom"):
            raise ValueError(f"unknown noise kind {kind!r}")
        self.kind = kind
        self.sigma0 = sigma0
        self.level = level
        self.callback = callback

    @staticmethod
    def none():
        return NoiseModel("none")

    @staticmethod
    def square_summable(sigma0=0.1):
        if sigma0 <= 0:
            raise ValueError("sigma0 must be positive")
        return NoiseModel("square_summable", sigma0=float(sigma0))

    @staticmethod
    def bounded(level):
        if level <= 0:
            raise ValueError("level must be positive")
        return NoiseModel("bounded", level=float(level))

    @staticmethod
    def custom(callback):
        return NoiseModel("custom", callback=callback)

    def total_energy(self):
        """Sum over all k of ||eps^k||^2 (exact for built-in schedules)."""
        if self.kind == "none":
            return 0.0
        if self.kind == "square_summable":
            return self.sigma0 ** 2 * math.pi ** 2 / 6.0
        raise ValueError(f"noise kind {self.kind!r} has no finite total energy")

    def draw(self, k, rng, dim=1):
        if self.kind == "none":
            return 0.0
        if self.kind == "square_summable":
            radius = self.sigma0 / (k + 1)
        elif self.kind == "bounded":
            radius = math.sqrt(self.level)
        else:
            return self.callback(k, rng, dim)
        if dim == 1:
            return radius * (2.0 * rng.random() - 1.0)
        direction = rng.standard_normal(dim)
        direction /= np.linalg.norm(direction)
        return radius * rng.random() ** (1.0 / dim) * direction

    def describe(self):
        out = {"kind": self.kind}
        if self.sigma0 is not None:
            out["sigma0"] = self.sigma0
        if self.level is not None:
            out["level"] = self.level
        return out


@dataclass
class SolverConfig:
    """Step size, iteration budget, seed, noise, stop rule, and recording.

    ``stop`` is ("iter_cap", None), ("grad_norm", tol) or
    ("objective_gap", tol); the latter two are checked at record points.
    ``init_block`` is "stationary", "uniform", or a fixed block index.
    """

    gamma: float
    max_iters: int
    seed: int = 0
    noise: NoiseModel = field(default_factory=NoiseModel.none)
    stop: tuple = ("iter_cap", None)
    record_every: int = 1
    store_iterates: bool = False
    record_grad: bool = True
    init_block: object = "stationary"
    x0: object = None
    target_value: float | None = None

    def validate(self, obj, composite=False):
        L = obj.lipschitz_block
        cap = 1.0 / L if composite else 2.0 / L
        if not (0.0 < self.gamma < cap):
            kind = "proximal" if composite else "smooth"
            raise ValueError(
                f"{kind} mode needs step size in (0, {cap:.6g}), got {self.gamma}")
        if self.max_iters < 0 or self.record_every < 1:
            raise ValueError("bad iteration or recording counts")
        if self.stop[0] not in ("iter_cap", "grad_norm", "objective_gap"):
            raise ValueError(f"unknown stop rule {self.stop[0]!r}")


@dataclass
class IterateState:
    """Current iterate, its index, the last updated block, and any named
    residual caches owned by the run."""
    x: np.ndarray
    k: int = 0
    last_block: int = -1
    caches: dict | None = None


@dataclass
class TraceRecord:
    k: int
    block: int
    f: float
    grad_norm: float
    step_norm: float
    noise_norm: float
    extra: dict = field(default_factory=dict)


class Trace:
    """Columnar per-iteration record with deterministic serialization."""

    def __init__(self, k, block, f, grad_norm, step_norm, noise_norm,
                 extras=None, iterates=None, meta=None):
        self.k = np.asarray(k, dtype=int)
        self.block = np.asarray(block, dtype=int)
        self.f = np.asarray(f, dtype=float)
        self.grad_norm = np.asarray(grad_norm, dtype=float)
        self.step_norm = np.asarray(step_norm, dtype=float)
        self.noise_norm = np.asarray(noise_norm, dtype=float)
        self.extras = {name: np.asarray(col, dtype=float)
                       for name, col in (extras or {}).items()}
        self.iterates = iterates
        self.meta = dict(meta or {})

    def __len__(self):
        return len(self.k)

    @property
    def final_f(self):
        return float(self.f[-1])

    def records(self):
        for idx in range(len(self.k)):
            yield TraceRecord(
                int(self.k[idx]), int(self.block[idx]), float(self.f[idx]),
                float(self.grad_norm[idx]), float(self.step_norm[idx]),
                float(self.noise_norm[idx]),
                {name: float(col[idx]) for name, col in self.extras.items()})

    def columns(self):
        cols = [("k", self.k), ("block", self.block), ("f", self.f),
                ("grad_norm", self.grad_norm), ("step_norm", self.step_norm),
                ("noise_norm", self.noise_norm)]
        cols.extend(sorted(self.extras.items()))
        return cols

    def to_csv(self, path):
        cols = self.columns()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([name for name, _ in cols])
            for idx in range(len(self.k)):
                writer.writerow([repr(col[idx]) if col.dtype.kind == "f"
                                 else int(col[idx]) for _, col in cols])

    def to_jsonl(self, path):
        cols = self.columns()
        with open(path, "w") as fh:
            for idx in range(len(self.k)):
                row = {name: (float(col[idx]) if col.dtype.kind == "f"
                              else int(col[idx])) for name, col in cols}
                fh.write(json.dumps(row, sort_keys=True) + "\n")

    def save(self, directory):
        """Write trace.csv, meta.json, and iterates.npy when retained."""
        from pathlib import Path
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.to_csv(directory / "trace.csv")
        with open(directory / "meta.json", "w") as fh:
            json.dump(self.meta, fh, sort_keys=True, indent=1)
        if self.iterates is not None:
            np.save(directory / "iterates.npy", self.iterates)

    @staticmethod
    def load(directory):
        from pathlib import Path
        directory = Path(directory)
        with open(directory / "trace.csv") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [row for row in reader]
        data = {name: np.array([row[j] for row in rows], dtype=float)
                for j, name in enumerate(header)}
        meta_path = directory / "meta.json"
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        it_path = directory / "iterates.npy"
        iterates = np.load(it_path) if it_path.exists() else None
        extras = {name: data[name] for name in header
                  if name not in ("k", "block", "f", "grad_norm",
                                  "step_norm", "noise_norm")}
        return Trace(data["k"].astype(int), data["block"].astype(int),
                     data["f"], data["grad_norm"], data["step_norm"],
                     data["noise_norm"], extras, iterates, meta)


@dataclass
class RunResult:
    trace: Trace
    state: IterateState
    stop_reason: str

    @property
    def x(self):
        return self.state.x


# --- block selection sources (anything with .next_index() works) ---


class ChainSelector:
    """Adapts a WalkSampler: emits its start state first, then walks."""

    def __init__(self, sampler):
        self.sampler = sampler
        self._fresh = True

    def next_index(self):
        if self._fresh:
            self._fresh = False
            return self.sampler.current_state
        return self.sampler.next_state()


class IidSampler:
    """Independent draws from a fixed probability vector."""

    def __init__(self, probabilities, rng):
        p = np.asarray(probabilities, dtype=float)
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("probabilities must be nonnegative and sum to 1")
        self._cum = np.cumsum(p)
        self._cum[-1] = 1.0
        self.rng = rng

    def next_index(self):
        return int(np.searchsorted(self._cum, self.rng.random(), side="right"))


class CyclicSampler:
    """Deterministic repetition of a fixed permutation."""

    def __init__(self, order):
        order = [int(i) for i in order]
        if sorted(order) != list(range(len(order))):
            raise ValueError("order must be a permutation of all blocks")
        self.order = order
        self._pos = 0

    def next_index(self):
        i = self.order[self._pos]
        self._pos = (self._pos + 1) % len(self.order)
        return i


class EssentiallyCyclicSampler:
    """Every window of ``period`` draws contains all blocks at least once:
    a shuffled permutation padded with uniform extras, renewed per window."""

    def __init__(self, n, period, rng):
        if period < n:
            raise ValueError("period must be at least the block count")
        self.n = int(n)
        self.period = int(period)
        self.rng = rng
        self._queue = []

    def next_index(self):
        if not self._queue:
            block = list(range(self.n))
            block += [int(self.rng.integers(self.n))
                      for _ in range(self.period - self.n)]
            self.rng.shuffle(block)
            self._queue = block
        return self._queue.pop()


class ReplaySampler:
    """Replays a prerecorded index stream."""

    def __init__(self, indices):
        self.indices = [int(i) for i in indices]
        self._pos = 0

    def next_index(self):
        i = self.indices[self._pos]
        self._pos += 1
        return i


def _make_selector(source, cfg, obj, walk_rng, init_rng):
    """Resolve a schedule or a ready selector into a next_index() source."""
    if not isinstance(source, TransitionSchedule):
        return source
    schedule = source
    pi = None
    try:
        pi = stationary_distribution(schedule)
    except NonMixingError as exc:
        warnings.warn(f"chain may not mix ({exc}); the run proceeds anyway")
    if isinstance(cfg.init_block, (int, np.integer)):
        start = int(cfg.init_block)
    elif cfg.init_block == "stationary" and pi is not None:
        cum = np.cumsum(pi.pi)
        cum[-1] = 1.0
        start = int(np.searchsorted(cum, init_rng.random(), side="right"))
    else:
        start = int(np.searchsorted(np.linspace(0, 1, schedule.n + 1)[1:],
                                    init_rng.random(), side="right"))
    return ChainSelector(WalkSampler(schedule, start, seed=walk_rng))


# --- single iteration core ---


def _advance(obj, x, i, gamma, eps, g, caches):
    """Update block i of x in place; returns (step_norm, noise_norm)."""
    if obj.scalar_blocks:
        gi = obj.block_grad(x, i, caches)
        if not math.isfinite(gi):
            raise SolverError(f"non-finite partial gradient at block {i}")
        target = x[i] - gamma * (gi + eps)
        new = g.prox(i, target, gamma) if g is not None else target
        delta = new - x[i]
        x[i] = new
        if caches is not None and delta != 0.0:
            obj.update_caches(caches, x, i, delta)
        return abs(delta), abs(eps)
    gi = obj.block_grad(x, i, caches)
    if not np.all(np.isfinite(gi)):
        raise SolverError(f"non-finite partial gradient at block {i}")
    s = obj.block_slice(i)
    target = x[s] - gamma * (gi + eps)
    if g is not None:
        target = g.prox(i, target, gamma)
    delta = target - x[s]
    x[s] = target
    if caches is not None:
        obj.update_caches(caches, x, i, delta)
    return float(np.linalg.norm(delta)), float(np.linalg.norm(np.atleast_1d(eps)))


def mcbcd_step(obj, state, sampler, cfg, noise_rng=None):
    """One smooth coordinate step; returns the state and its TraceRecord."""
    return mcpbcd_step(obj, None, state, sampler, cfg, noise_rng)


def mcpbcd_step(obj, g, state, sampler, cfg, noise_rng=None):
    """One (proximal) coordinate step driven by the sampler."""
    cfg.validate(obj, composite=g is not None)
    i = sampler.next_index()
    dim = int(obj.block_dims[i])
    if cfg.noise.kind == "none":
        eps = 0.0
    else:
        if noise_rng is None:
            raise ValueError("noisy steps need an explicit noise rng")
        eps = cfg.noise.draw(state.k, noise_rng, dim)
    step_norm, noise_norm = _advance(obj, state.x, i, cfg.gamma, eps, g,
                                     state.caches)
    state.k += 1
    state.last_block = i
    f_val = obj.eval(state.x)
    if g is not None:
        f_val += g.value(state.x)
        grad_metric = prox_grad_residual(obj, g, state.x, cfg.gamma)
    else:
        grad_metric = float(np.linalg.norm(obj.full_grad(state.x)))
    record = TraceRecord(state.k, i, f_val, grad_metric, step_norm, noise_norm)
    return state, record


def run(obj, source, cfg, g=None, extra_metrics=None):
    """Drive coordinate steps until a stop rule fires.

    ``source`` is a TransitionSchedule (a walk sampler is derived from the
    config seed) or any object with next_index().  ``extra_metrics`` maps
    column names to callables x -> float evaluated at record points.
    Deterministic given cfg.seed.
    """
    cfg.validate(obj, composite=g is not None)
    ss = np.random.SeedSequence(cfg.seed)
    walk_seq, noise_seq, init_seq = ss.spawn(3)
    walk_rng = np.random.default_rng(walk_seq)
    noise_rng = np.random.default_rng(noise_seq)
    init_rng = np.random.default_rng(init_seq)
    selector = _make_selector(source, cfg, obj, walk_rng, init_rng)

    x = np.zeros(obj.dim) if cfg.x0 is None else np.array(cfg.x0, dtype=float)
    if x.shape != (obj.dim,):
        raise ValueError("x0 has the wrong dimension")
    caches = obj.init_caches(x)
    extra_metrics = extra_metrics or {}

    max_records = 2 + cfg.max_iters // cfg.record_every
    rec_k = np.empty(max_records, dtype=int)
    rec_block = np.empty(max_records, dtype=int)
    rec_f = np.empty(max_records)
    rec_grad = np.empty(max_records)
    rec_step = np.empty(max_records)
    rec_noise = np.empty(max_records)
    rec_extras = {name: np.empty(max_records) for name in extra_metrics}
    iterates = np.empty((max_records, obj.dim)) if cfg.store_iterates else None

    def composite_value():
        val = obj.eval(x)
        if g is not None:
            val += g.value(x)
        return val

    need_grad = cfg.record_grad or cfg.stop[0] == "grad_norm"

    def grad_norm_now():
        if not need_grad:
            return math.nan
        if g is None:
            return float(np.linalg.norm(obj.full_grad(x)))
        return prox_grad_residual(obj, g, x, cfg.gamma)

    count = 0

    def record(k, block, step_norm, noise_norm):
        nonlocal count
        rec_k[count] = k
        rec_block[count] = block
        rec_f[count] = composite_value()
        rec_grad[count] = grad_norm_now()
        rec_step[count] = step_norm
        rec_noise[count] = noise_norm
        for name, fn in extra_metrics.items():
            rec_extras[name][count] = fn(x)
        if iterates is not None:
            iterates[count] = x
        count += 1

    record(0, -1, 0.0, 0.0)
    stop_reason = "iter_cap"
    stop_kind, stop_tol = cfg.stop[0], cfg.stop[1]
    target = cfg.target_value if cfg.target_value is not None else obj.known_min
    noisy = cfg.noise.kind != "none"
    noise = cfg.noise
    gamma = cfg.gamma
    next_index = selector.next_index
    last_block = -1

    for k in range(cfg.max_iters):
        i = next_index()
        eps = noise.draw(k, noise_rng, int(obj.block_dims[i])) if noisy else 0.0
        step_norm, noise_norm = _advance(obj, x, i, gamma, eps, g, caches)
        last_block = i
        if caches is not None and (k + 1) % CACHE_AUDIT_EVERY == 0:
            err = obj.cache_error(x, caches)
            if err > CACHE_AUDIT_TOL * (1.0 + float(np.abs(x).max())):
                raise SolverError(f"residual cache drifted by {err:.3g} at k={k + 1}")
        if (k + 1) % cfg.record_every == 0 or k + 1 == cfg.max_iters:
            record(k + 1, i, step_norm, noise_norm)
            if stop_kind == "grad_norm" and rec_grad[count - 1] <= stop_tol:
                stop_reason = "grad_norm"
                break
            if stop_kind == "objective_gap":
                if target is None:
                    raise SolverError("objective_gap stop needs a known minimum")
                if rec_f[count - 1] - target <= stop_tol:
                    stop_reason = "objective_gap"
                    break

    meta = {"gamma": cfg.gamma, "L": obj.lipschitz_block,
            "L_r": obj.lipschitz_full, "seed": cfg.seed,
            "noise": cfg.noise.describe(), "record_every": cfg.record_every,
            "composite": g is not None}
    trace = Trace(rec_k[:count], rec_block[:count], rec_f[:count],
                  rec_grad[:count], rec_step[:count], rec_noise[:count],
                  {name: col[:count] for name, col in rec_extras.items()},
                  iterates[:count] if iterates is not None else None, meta)
    state = IterateState(x=x, k=int(rec_k[count - 1]), last_block=last_block,
                         caches=caches)
    return RunResult(trace=trace, state=state, stop_reason=stop_reason)


def prox_grad_residual(obj, g, x, gamma):
    """Stationarity measure for F = f + sum_i g_i: the largest over blocks
    of ||x_i - prox_{gamma g_i}(x_i - gamma grad_i f(x))|| / gamma."""
    if not (0 < gamma):
        raise ValueError("gamma must be positive")
    grad = obj.full_grad(x)
    worst = 0.0
    for i in range(obj.n_blocks):
        s = obj.block_slice(i)
        if obj.scalar_blocks:
            target = x[i] - gamma * grad[i]
            moved = g.prox(i, target, gamma) if g is not None else target
            worst = max(worst, abs(x[i] - moved) / gamma)
        else:
            target = x[s] - gamma * grad[s]
            if g is not None:
                target = g.prox(i, target, gamma)
            worst = max(worst, float(np.linalg.norm(x[s] - target)) / gamma)
    return worst


# --- pathwise inequality audits ---


@dataclass
class LemmaAuditReport:
    checked_steps: int
    sum_dx_min_slack: float
    sum_dx_violations: int
    partial_grad_min_slack: float
    partial_grad_violations: int

    @property
    def passed(self):
        return self.sum_dx_violations == 0 and self.partial_grad_violations == 0


def _require_dense_trace(trace):
    if trace.iterates is None:
        raise ValueError("audit needs a trace with stored iterates")
    if not np.array_equal(trace.k, np.arange(len(trace.k))):
        raise ValueError("audit needs record_every = 1")


def pathwise_lemma_audit(trace, obj, tau, rel_tol=1e-9):
    """Check two per-path inequalities at every recorded iteration.

    (a) cumulative step energy: for every k,
        sum_{t<=k} ||dx^t||^2 <= 4 gamma/(2-L gamma) (f(x^0) - min f)
                                 + 4 gamma^2/(2-L gamma)^2 sum_{t<=k} ||eps^t||^2;
    (b) for every k >= tau, the selected block's gradient at the tau-old
        iterate is controlled by recent steps (with the factor 2/gamma^2 in
        the noise-free case, else 4/gamma^2 plus a 4||eps^k||^2 term).
    """
    _require_dense_trace(trace)
    gamma = trace.meta["gamma"]
    L = trace.meta["L"]
    L_r = trace.meta["L_r"]
    if obj.known_min is None:
        raise ValueError("audit needs an objective with a known minimum")
    steps = len(trace.k) - 1
    dx_sq = trace.step_norm[1:] ** 2
    eps_sq = trace.noise_norm[1:] ** 2
    noise_free = bool(np.all(eps_sq == 0.0))

    f0_gap = trace.f[0] - obj.known_min
    a = 4.0 * gamma / (2.0 - L * gamma)
    b = 4.0 * gamma ** 2 / (2.0 - L * gamma) ** 2
    lhs = np.cumsum(dx_sq)
    rhs = a * f0_gap + b * np.cumsum(eps_sq)
    slack = rhs - lhs
    tol = rel_tol * (1.0 + np.abs(rhs))
    sum_dx_violations = int(np.sum(slack < -tol))
    sum_dx_min_slack = float(slack.min()) if steps else math.inf

    pg_min_slack = math.inf
    pg_violations = 0
    checked = 0
    coef = 2.0 if noise_free else 4.0
    for k in range(tau, steps):
        i_k = int(trace.block[k + 1])
        past = trace.iterates[k - tau + 1]
        gi = obj.block_grad(past, i_k)
        lhs_k = float(np.sum(np.square(gi)))
        rhs_k = (2.0 * L_r ** 2 * (tau - 1) * float(dx_sq[k - tau + 1:k].sum())
                 + coef / gamma ** 2 * float(dx_sq[k]))
        if not noise_free:
            rhs_k += 4.0 * float(eps_sq[k])
        s = rhs_k - lhs_k
        if s < -rel_tol * (1.0 + abs(rhs_k)):
            pg_violations += 1
        pg_min_slack = min(pg_min_slack, s)
        checked += 1
    return LemmaAuditReport(checked, sum_dx_min_slack, sum_dx_violations,
                            pg_min_slack if checked else math.inf,
                            pg_violations)


@dataclass
class ProxDescentReport:
    checked_steps: int
    min_slack: float
    violations: int

    @property
    def passed(self):
        return self.violations == 0


def prox_descent_audit(trace, rel_tol=1e-9):
    """Per-step composite descent for proximal runs: F(x^{k+1}) +
    (1/gamma - L)/4 ||dx^k||^2 <= F(x^k) + ||eps^k||^2 / (1/gamma - L)."""
    if not np.array_equal(trace.k, np.arange(len(trace.k))):
        raise ValueError("audit needs record_every = 1")
    gamma = trace.meta["gamma"]
    L = trace.meta["L"]
    margin = 1.0 / gamma - L
    if margin <= 0:
        raise ValueError("descent audit needs gamma < 1/L")
    lhs = trace.f[1:] + 0.25 * margin * trace.step_norm[1:] ** 2
    rhs = trace.f[:-1] + trace.noise_norm[1:] ** 2 / margin
    slack = rhs - lhs
    tol = rel_tol * (1.0 + np.abs(rhs))
    return ProxDescentReport(len(slack), float(slack.min()) if len(slack) else math.inf,
                             int(np.sum(slack < -tol)))
