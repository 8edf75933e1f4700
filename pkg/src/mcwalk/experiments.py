"""Experiment registry and multi-seed orchestration.

Every experiment is reproducible from its config alone: instances are
generated from a fixed instance seed, per-seed randomness is derived from
(base_seed, seed_index), and output files carry no timestamps, so a rerun
of the same config is byte-identical.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (check_dominance, envelope_linear, envelope_nonconvex,
                       envelope_sublinear, mean_and_band, rate_constants)
from .chain import (Graph, TransitionSchedule, build_random_walk,
                    internal_tau, stationary_distribution)
from .dca import ErmDualProblem, SquaredLosses, run_empirical_mcdca, \
    sdca_baseline
from .dmdp import DmdpModel, ExactOracle, direct_solve, evaluate_policy_mcbcd
from .objective import (DoubleWellObjective, SeparableNonsmooth,
                        make_least_squares, make_multi_agent, make_quadratic,
                        prox_catalog, quadratic_part)
from .solver import (CyclicSampler, EssentiallyCyclicSampler, IidSampler,
                     NoiseModel, ReplaySampler, SolverConfig, run)


class ExperimentError(RuntimeError):
    pass


# --- block selection rules (baselines for the walk-driven default) ---


@dataclass
class SelectionRule:
    """markov(chain) | iid(probabilities) | cyclic(order) |
    essentially_cyclic(period)."""
    kind: str
    probabilities: object = None
    order: object = None
    period: int | None = None

    def make_source(self, schedule, n, rng):
        if self.kind == "markov":
            return schedule
        if self.kind == "iid":
            p = self.probabilities
            p = np.full(n, 1.0 / n) if p is None else np.asarray(p, dtype=float)
            return IidSampler(p, rng)
        if self.kind == "cyclic":
            order = self.order if self.order is not None else range(n)
            return CyclicSampler(order)
        if self.kind == "essentially_cyclic":
            period = self.period if self.period is not None else n
            return EssentiallyCyclicSampler(n, period, rng)
        raise ValueError(f"unknown selection rule {self.kind!r}")

    @property
    def is_deterministic(self):
        return self.kind == "cyclic"


@dataclass
class CommStats:
    """Message accounting for the token walk versus full-update schemes."""
    total_messages: int
    edge_counts: dict
    all_reduce_comparator: int

    @staticmethod
    def from_blocks(blocks, n):
        """One token hop per iteration; the comparator charges O(N)
        messages per full-vector update round."""
        blocks = [int(b) for b in blocks if b >= 0]
        edges = {}
        for a, b in zip(blocks[:-1], blocks[1:]):
            edges[(a, b)] = edges.get((a, b), 0) + 1
        total = max(len(blocks) - 1, 0)
        return CommStats(total_messages=total, edge_counts=edges,
                         all_reduce_comparator=total * n)

    def to_json(self):
        return {"total_messages": self.total_messages,
                "all_reduce_comparator": self.all_reduce_comparator,
                "edge_counts": {f"{a}->{b}": c for (a, b), c
                                in sorted(self.edge_counts.items())}}


# --- configuration ---


@dataclass
class ExperimentConfig:
    """Round-trippable experiment description (JSON on disk)."""
    experiment: str
    seeds: dict = field(default_factory=lambda: {"count": 1, "base": 12345})
    iters: int | None = None
    record_every: int | None = None
    gamma_scale: float | None = None
    noise: dict | None = None
    problem: dict = field(default_factory=dict)
    output: dict = field(default_factory=lambda: {"formats": ["csv", "json"]})
    store_traces: bool = False

    def to_json(self):
        return {"experiment": self.experiment, "seeds": dict(self.seeds),
                "iters": self.iters, "record_every": self.record_every,
                "gamma_scale": self.gamma_scale, "noise": self.noise,
                "problem": dict(self.problem), "output": dict(self.output),
                "store_traces": self.store_traces}

    @staticmethod
    def from_json(doc):
        if not isinstance(doc, dict):
            with open(doc) as fh:
                doc = json.load(fh)
        known = {"experiment", "seeds", "iters", "record_every", "gamma_scale",
                 "noise", "problem", "output", "store_traces"}
        unknown = set(doc) - known
        if unknown:
            raise ExperimentError(f"unknown config keys: {sorted(unknown)}")
        if "experiment" not in doc:
            raise ExperimentError("config needs an 'experiment' name")
        cfg = ExperimentConfig(experiment=doc["experiment"])
        for key in known - {"experiment"}:
            if key in doc and doc[key] is not None:
                setattr(cfg, key, doc[key])
        return cfg


def _noise_from_dict(doc):
    doc = doc or {"kind": "none"}
    kind = doc.get("kind", "none")
    if kind == "none":
        return NoiseModel.none()
    if kind == "square_summable":
        return NoiseModel.square_summable(doc.get("sigma0", 0.1))
    if kind == "bounded":
        return NoiseModel.bounded(doc["level"])
    raise ExperimentError(f"unknown noise kind {kind!r}")


def seed_for(base, index, stream=0):
    """Deterministic per-replica seed material."""
    return np.random.SeedSequence((int(base), int(index), int(stream)))


# --- instance builders (fixed instance seeds make them reproducible) ---


def _rotation(dim, rng):
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    return q


def _quadratic_error_metric(Q, xstar):
    """f(x) - min f evaluated through the quadratic form in x - x*, which
    stays accurate far below the cancellation floor of f itself."""
    def metric(x):
        d = x - xstar
        return float(0.5 * d @ (Q @ d))
    return metric


def build_quadratic_ring(params):
    """Strongly convex quadratic over a ring-graph walk.

    One stiff coordinate pins the step size while the remaining block is a
    narrow, weakly ring-coupled band, so the expected error decays at an
    almost pure geometric rate and the semilog fit is nearly exact.  The
    minimizer is placed so the zero start loads every eigendirection with
    the same initial error.
    """
    n = int(params.get("n", 20))
    slow = float(params.get("slow_curvature", 0.021))
    band = float(params.get("band_ratio", 1.15))
    coupling = float(params.get("coupling", 0.1)) * slow
    Q = np.diag(np.concatenate([[1.0], np.linspace(slow, band * slow, n - 1)]))
    for i in range(1, n):
        j = 1 + (i % (n - 1))
        Q[i, j] += coupling
        Q[j, i] += coupling
    eigs, V = np.linalg.eigh(Q)
    energy = float(params.get("initial_error", 2.0))
    # equal per-direction error shares: f(0) - min f = energy
    shares = np.sqrt(2.0 * energy / n / eigs)
    xstar = -(V @ shares)
    obj = make_quadratic(Q, -(Q @ xstar))
    graph = Graph.ring(n)
    schedule = build_random_walk(graph, "lazy_metropolis")
    return {"obj": obj, "schedule": schedule, "envelope": "linear",
            "nu": obj.restricted_growth_modulus(),
            "error_metric": _quadratic_error_metric(Q, xstar)}


def build_quadratic_singular(params):
    """Convex quadratic with a singular Hessian.

    Positive eigenvalues form a uniform ladder reaching close to zero and
    the start point loads them equally, so the expected error follows the
    1/k profile of a uniform-density spectrum over the measured window.
    """
    n = int(params.get("n", 20))
    n_zero = int(params.get("n_zero", 2))
    eig_hi = float(params.get("eig_hi", 1.0))
    eig_lo = float(params.get("eig_lo", 0.006 * eig_hi))
    instance_seed = int(params.get("instance_seed", 42))
    rng = np.random.default_rng(np.random.SeedSequence((instance_seed, 2)))
    positive = np.linspace(eig_lo, eig_hi, n - n_zero)
    eigs = np.concatenate([np.zeros(n_zero), positive])
    V = _rotation(n, rng)
    Q = V @ np.diag(eigs) @ V.T
    Q = 0.5 * (Q + Q.T)
    energy = float(params.get("initial_error", 2.0))
    shares = np.zeros(n)
    shares[n_zero:] = np.sqrt(2.0 * energy / (n - n_zero) / positive)
    xstar = -(V @ shares)
    obj = make_quadratic(Q, -(Q @ xstar))
    graph = Graph.ring(n)
    schedule = build_random_walk(graph, "lazy_metropolis")
    return {"obj": obj, "schedule": schedule, "envelope": "sublinear",
            "nu": obj.restricted_growth_modulus(),
            "error_metric": _quadratic_error_metric(Q, xstar)}


def build_quartic_nonconvex(params):
    """Separable double-well objective started between the wells."""
    n = int(params.get("n", 20))
    halfwidth = float(params.get("halfwidth", 3.0))
    instance_seed = int(params.get("instance_seed", 42))
    rng = np.random.default_rng(np.random.SeedSequence((instance_seed, 3)))
    obj = DoubleWellObjective(n, halfwidth=halfwidth)
    x0 = rng.uniform(1.2, 2.0, size=n) * rng.choice([-1.0, 1.0], size=n)
    graph = Graph.ring(n)
    schedule = build_random_walk(graph, "lazy_metropolis")
    return {"obj": obj, "schedule": schedule, "x0": x0, "envelope": "nonconvex"}


def build_lasso(params):
    """Least squares plus an l1 term, solved by proximal coordinate steps."""
    n = int(params.get("n", 50))
    m = int(params.get("m", 80))
    weight = float(params.get("l1_weight", 0.02))
    instance_seed = int(params.get("instance_seed", 42))
    rng = np.random.default_rng(np.random.SeedSequence((instance_seed, 4)))
    A = rng.normal(size=(m, n)) / math.sqrt(m)
    x_true = np.zeros(n)
    support = rng.choice(n, size=n // 5, replace=False)
    x_true[support] = rng.choice([-1.0, 1.0], size=len(support))
    b = A @ x_true + 0.01 * rng.normal(size=m)
    obj = make_least_squares(A, b)
    g = SeparableNonsmooth.uniform(prox_catalog("l1", weight=weight), n)
    graph = Graph.ring(n)
    schedule = build_random_walk(graph, "lazy_metropolis")
    return {"obj": obj, "schedule": schedule, "g": g, "envelope": None,
            "gamma_cap": "prox"}


def build_multi_agent(params):
    """Quadratic agent costs coupled by a shared-resource penalty.

    The agent graph connects pairs sharing a resource, closed into a ring
    so the walk always has a connected support.
    """
    n = int(params.get("n", 8))
    m = int(params.get("resources", 4))
    beta = float(params.get("beta", 5.0))
    instance_seed = int(params.get("instance_seed", 42))
    rng = np.random.default_rng(np.random.SeedSequence((instance_seed, 5)))
    A = np.where(rng.random((m, n)) < 0.5, rng.uniform(0.5, 1.5, (m, n)), 0.0)
    curvatures = rng.uniform(1.0, 2.0, n)
    targets = rng.uniform(0.5, 2.0, n)
    b = A @ (0.5 * targets)  # unconstrained optimum overuses resources
    parts = [quadratic_part(curvatures[i], targets[i]) for i in range(n)]
    obj = make_multi_agent(parts, A, b, beta)
    edges = set()
    for r in range(m):
        users = np.nonzero(A[r])[0]
        for a in users:
            for c in users:
                if a != c:
                    edges.add((int(a), int(c)))
    for i in range(n):
        edges.add((i, (i + 1) % n))
        edges.add(((i + 1) % n, i))
    graph = Graph(n, edges)
    schedule = build_random_walk(graph, "lazy_metropolis")
    from scipy.optimize import minimize
    ref = minimize(obj.eval, np.zeros(n), jac=obj.full_grad, method="L-BFGS-B",
                   tol=1e-14)
    obj.known_min = float(ref.fun)
    obj.minimizer = ref.x
    return {"obj": obj, "schedule": schedule, "envelope": None}


def build_dmdp_eval(params):
    """Random dense discounted MDP evaluated along its own trajectory."""
    n = int(params.get("n", 10))
    discount = float(params.get("discount", 0.9))
    lam = float(params.get("lam", 0.0))
    instance_seed = int(params.get("instance_seed", 42))
    rng = np.random.default_rng(np.random.SeedSequence((instance_seed, 6)))
    P = rng.uniform(0.1, 1.0, size=(n, n))
    P /= P.sum(axis=1, keepdims=True)
    r = rng.uniform(0.0, 1.0, size=n)
    model = DmdpModel(P, r, discount)
    return {"model": model, "lam": lam}


def build_figure1(params):
    """Frequency-driven dual ascent instance: a 40-state walk with a
    non-uniform stationary distribution over 20-dimensional samples."""
    n = int(params.get("n", 40))
    d = int(params.get("d", 20))
    lam = float(params.get("lam", 0.1))
    instance_seed = int(params.get("instance_seed", 42))
    rng = np.random.default_rng(np.random.SeedSequence((instance_seed, 7)))
    x_gen = rng.normal(size=d)
    samples = rng.normal(size=(n, d))
    b = samples @ x_gen
    masses = np.exp(rng.normal(scale=0.5, size=n))
    masses /= masses.sum()
    edges = set()
    for i in range(n):
        edges.add((i, (i + 1) % n))
        edges.add(((i + 1) % n, i))
    extra = rng.integers(0, n, size=(n, 2))
    for a, c in extra:
        if a != c:
            edges.add((int(a), int(c)))
            edges.add((int(c), int(a)))
    graph = Graph(n, edges)
    schedule = build_random_walk(graph, "lazy_metropolis", target=masses)
    prob = ErmDualProblem(samples, lam, SquaredLosses(b), masses)
    floor = float(masses.min()) / 2.0
    return {"prob": prob, "schedule": schedule, "floor": floor}


REGISTRY = {
    "quadratic-ring": {
        "build": build_quadratic_ring,
        "defaults": {"seeds": {"count": 100, "base": 12345}, "iters": 10000,
                     "record_every": 1, "gamma_scale": 1.0,
                     "noise": {"kind": "none"}},
        "runner": "bcd",
    },
    "quadratic-singular": {
        "build": build_quadratic_singular,
        "defaults": {"seeds": {"count": 100, "base": 12345}, "iters": 10000,
                     "record_every": 1, "gamma_scale": 1.0,
                     "noise": {"kind": "none"}},
        "runner": "bcd",
    },
    "quartic-nonconvex": {
        "build": build_quartic_nonconvex,
        "defaults": {"seeds": {"count": 100, "base": 12345}, "iters": 10000,
                     "record_every": 1, "gamma_scale": 1.0,
                     "noise": {"kind": "none"}},
        "runner": "bcd",
    },
    "lasso-mcpbcd": {
        "build": build_lasso,
        "defaults": {"seeds": {"count": 3, "base": 12345}, "iters": 150000,
                     "record_every": 1, "gamma_scale": 0.9,
                     "noise": {"kind": "none"}},
        "runner": "bcd",
    },
    "multi-agent": {
        "build": build_multi_agent,
        "defaults": {"seeds": {"count": 20, "base": 12345}, "iters": 20000,
                     "record_every": 1, "gamma_scale": 1.0,
                     "noise": {"kind": "none"}},
        "runner": "bcd",
    },
    "dmdp-eval": {
        "build": build_dmdp_eval,
        "defaults": {"seeds": {"count": 1, "base": 12345}, "iters": 1000000,
                     "record_every": 200, "gamma_scale": 1.0,
                     "noise": {"kind": "none"}},
        "runner": "dmdp",
    },
    "figure1-empirical-dca": {
        "build": build_figure1,
        "defaults": {"seeds": {"count": 100, "base": 12345}, "iters": 10000,
                     "record_every": 1, "gamma_scale": 1.0,
                     "noise": {"kind": "none"}},
        "runner": "figure1",
    },
}


def registry():
    """Names and default configs of all runnable experiments."""
    return {name: dict(entry["defaults"]) for name, entry in REGISTRY.items()}


def _resolve(cfg):
    if cfg.experiment not in REGISTRY:
        raise ExperimentError(f"unknown experiment {cfg.experiment!r}")
    entry = REGISTRY[cfg.experiment]
    merged = json.loads(json.dumps(entry["defaults"]))
    for key in ("seeds", "iters", "record_every", "gamma_scale", "noise"):
        val = getattr(cfg, key)
        if val is not None:
            merged[key] = val
    merged["problem"] = dict(cfg.problem)
    merged["store_traces"] = cfg.store_traces
    return entry, merged


def _bcd_solver_config(parts, merged, seed_value, store=False):
    obj = parts["obj"]
    cap = 1.0 if parts.get("gamma_cap") == "prox" else 2.0
    gamma = merged["gamma_scale"] / obj.lipschitz_block
    if gamma >= cap / obj.lipschitz_block:
        raise ExperimentError("gamma_scale too large for this mode")
    return SolverConfig(
        gamma=gamma, max_iters=int(merged["iters"]), seed=seed_value,
        noise=_noise_from_dict(merged["noise"]),
        record_every=int(merged["record_every"]),
        record_grad=parts.get("envelope") == "nonconvex",
        store_iterates=store, x0=parts.get("x0"))


def _bcd_seed_job(args):
    name, merged, seed_index = args
    entry = REGISTRY[name]
    parts = entry["build"](merged["problem"])
    seed_value = int(seed_for(merged["seeds"]["base"], seed_index)
                     .generate_state(1)[0])
    cfg = _bcd_solver_config(parts, merged, seed_value,
                             store=merged.get("store_traces", False))
    metrics = {}
    if "error_metric" in parts:
        metrics["f_error"] = parts["error_metric"]
    res = run(parts["obj"], parts["schedule"], cfg, g=parts.get("g"),
              extra_metrics=metrics)
    out = {"k": res.trace.k, "f": res.trace.f, "blocks": res.trace.block,
           "grad_norm": res.trace.grad_norm, "x_final": res.x,
           "stop": res.stop_reason}
    if "f_error" in res.trace.extras:
        out["f_error"] = res.trace.extras["f_error"]
    if merged.get("store_traces"):
        out["trace"] = res.trace
    return out


def _dmdp_seed_job(args):
    name, merged, seed_index = args
    parts = REGISTRY[name]["build"](merged["problem"])
    model, lam = parts["model"], parts["lam"]
    from .dmdp import ls_lipschitz
    L_block, _ = ls_lipschitz(model, lam)
    seed_value = int(seed_for(merged["seeds"]["base"], seed_index)
                     .generate_state(1)[0])
    cfg = SolverConfig(gamma=merged["gamma_scale"] / L_block,
                       max_iters=int(merged["iters"]), seed=seed_value,
                       record_every=int(merged["record_every"]),
                       stop=("grad_norm", merged["problem"].get("grad_tol", 1e-11)))
    estimate, trace = evaluate_policy_mcbcd(model, ExactOracle(model), cfg,
                                            lam=lam, chain_from_model=True)
    return {"k": trace.k, "f": trace.f, "grad_norm": trace.grad_norm,
            "bellman": trace.extras["bellman_residual"], "v": estimate.v,
            "blocks": trace.block, "residual": estimate.residual}


def _figure1_grid(iters):
    if iters < 1:
        return []
    grid = np.unique(np.round(np.logspace(0, math.log10(iters), 25)).astype(int))
    return [int(k) for k in grid]


def _figure1_seed_job(args):
    name, merged, seed_index = args
    parts = REGISTRY[name]["build"](merged["problem"])
    prob, schedule, floor = parts["prob"], parts["schedule"], parts["floor"]
    gamma = merged["gamma_scale"] / prob.block_lipschitz(floor)
    grid = _figure1_grid(int(merged["iters"]))
    base = merged["seeds"]["base"]
    seed_value = int(seed_for(base, seed_index).generate_state(1)[0])
    cfg = SolverConfig(gamma=gamma, max_iters=int(merged["iters"]),
                       seed=seed_value)
    start = int(np.random.default_rng(seed_for(base, seed_index, 1))
                .integers(prob.n))
    rec, state, freq = run_empirical_mcdca(prob, schedule, cfg, grid,
                                           start_state=start, floor=floor)
    # baseline protocol per grid point k: estimate masses from k walk
    # samples, then run k fixed-mass iterations with uniform draws
    est_walk_rng = np.random.default_rng(seed_for(base, seed_index, 2))
    from .chain import WalkSampler
    est_sampler = WalkSampler(schedule, start,
                              seed=np.random.default_rng(
                                  seed_for(base, seed_index, 3)))
    counts = np.zeros(prob.n)
    sdca_gaps = []
    pos = 0
    for j, kk in enumerate(grid):
        while pos < kk:
            counts[est_sampler.next_state()] += 1
            pos += 1
        est = np.maximum(counts / pos, floor)
        sub_cfg = SolverConfig(gamma=gamma, max_iters=kk,
                               seed=int(seed_for(base, seed_index, 10 + j)
                                        .generate_state(1)[0]))
        sub_rec, _ = sdca_baseline(prob, est, sub_cfg, grid=[kk])
        sdca_gaps.append(float(sub_rec["gap"][0]))
    return {"grid": np.asarray(grid), "mc_gap": rec["gap"],
            "mc_grad": rec["grad_norm"], "mc_noise": rec["noise_norm"],
            "mc_freq_err": rec["freq_error"], "sdca_gap": np.asarray(sdca_gaps)}


_JOB_FUNCS = {"bcd": _bcd_seed_job, "dmdp": _dmdp_seed_job,
              "figure1": _figure1_seed_job}


def _run_seeds(entry, name, merged, workers):
    count = int(merged["seeds"]["count"])
    jobs = [(name, merged, idx) for idx in range(count)]
    func = _JOB_FUNCS[entry["runner"]]
    failures = []
    results = [None] * count
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for idx, res in enumerate(pool.map(func, jobs)):
                results[idx] = res
    else:
        for idx, job in enumerate(jobs):
            try:
                results[idx] = func(job)
            except Exception as exc:  # noqa: BLE001 - recorded per seed
                failures.append({"seed_index": idx, "error": repr(exc)})
    return results, failures


def _write_csv(path, header, columns):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating))
                             else int(v) for v in row])


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def run_experiment(cfg, out_dir, workers=1):
    """Execute every seed of a registry experiment and write the artifact
    directory: manifest, seed-averaged curves, envelope reports, comm
    stats, and a pass/fail summary.  Deterministic given the config."""
    entry, merged = _resolve(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results, failures = _run_seeds(entry, cfg.experiment, merged, workers)
    manifest = {"experiment": cfg.experiment, "config": merged,
                "package_version": __version__, "numpy_version": np.__version__}
    _write_json(out / "manifest.json", manifest)
    if failures:
        _write_json(out / "failures.json", failures)
        raise ExperimentError(
            f"{len(failures)} seed(s) failed; see {out / 'failures.json'}")

    summary_lines = [f"experiment: {cfg.experiment}",
                     f"seeds: {merged['seeds']['count']}",
                     f"iterations: {merged['iters']}"]
    if entry["runner"] == "bcd":
        summary_lines += _finish_bcd(cfg.experiment, merged, results, out)
    elif entry["runner"] == "dmdp":
        summary_lines += _finish_dmdp(merged, results, out)
    else:
        summary_lines += _finish_figure1(merged, results, out)
    with open(out / "summary.txt", "w") as fh:
        fh.write("\n".join(summary_lines) + "\n")
    return out


def _finish_bcd(name, merged, results, out):
    parts = REGISTRY[name]["build"](merged["problem"])
    obj, schedule = parts["obj"], parts["schedule"]
    lines = []
    ks = results[0]["k"]
    if merged.get("store_traces"):
        for idx, res in enumerate(results):
            res["trace"].save(out / "per_seed" / f"seed_{idx:04d}")
    errors = _error_curves(obj, results)
    if errors is not None:
        mean, band = mean_and_band(errors) if len(errors) > 1 else \
            (errors[0], np.zeros_like(errors[0]))
        _write_csv(out / "mean_curve.csv", ["k", "mean_f_error", "band"],
                   [ks, mean, band])
        lines.append(f"final mean objective error: {mean[-1]!r}")
    if int(merged["record_every"]) == 1 and merged["iters"] > 0:
        comm = CommStats.from_blocks(results[0]["blocks"], schedule.n)
        _write_json(out / "comm_stats.json", comm.to_json())
        lines.append(f"token messages: {comm.total_messages}")
    envelope = parts.get("envelope")
    if envelope and merged["iters"] > 0 and len(results) >= 30:
        report = _bcd_envelope_report(parts, merged, results)
        report.save(out / f"envelope_{report.kind}.json")
        lines.append(report.summary())
    return lines


def _error_curves(obj, results):
    if "f_error" in results[0]:
        return [res["f_error"] for res in results]
    if obj.known_min is not None:
        return [res["f"] - obj.known_min for res in results]
    return None


def _bcd_envelope_report(parts, merged, results):
    obj, schedule = parts["obj"], parts["schedule"]
    sd = stationary_distribution(schedule)
    tau = internal_tau(schedule, stationary=sd)
    gamma = merged["gamma_scale"] / obj.lipschitz_block
    constants = rate_constants(gamma, obj.lipschitz_block, obj.lipschitz_full,
                               tau, sd.pi_min)
    ks = results[0]["k"]
    kind = parts["envelope"]
    if kind == "nonconvex":
        noise = _noise_from_dict(merged["noise"])
        x0 = parts.get("x0")
        F0 = obj.eval(x0 if x0 is not None else np.zeros(obj.dim)) - obj.known_min
        extra = {}
        if noise.kind == "bounded":
            extra["level"] = noise.level
        elif noise.kind == "square_summable":
            extra["total_energy"] = noise.total_energy()
        return envelope_nonconvex([res["grad_norm"] for res in results],
                                  constants, noise.kind, F0, sd.pi_min, tau,
                                  min_seeds=min(30, len(results)), **extra)
    errors = _error_curves(obj, results)
    mean, band = mean_and_band(errors)
    F0 = float(errors[0][0])
    if kind == "linear":
        bound = envelope_linear(F0, constants.c_tau, parts["nu"], tau, ks)
        return check_dominance("linear", ks, bound, mean, band)
    R = 2.0 * math.sqrt(F0 / parts["nu"])
    bound = envelope_sublinear(F0, constants.c_tau, R, tau, ks)
    return check_dominance("sublinear", ks, bound, mean, band)


def _finish_dmdp(merged, results, out):
    parts = REGISTRY["dmdp-eval"]["build"](merged["problem"])
    model = parts["model"]
    oracle_solution = direct_solve(model)
    lines = []
    res = results[0]
    _write_csv(out / "mean_curve.csv", ["k", "f", "grad_norm", "bellman_residual"],
               [res["k"], res["f"], res["grad_norm"], res["bellman"]])
    gap = float(np.abs(res["v"] - oracle_solution.v).max())
    _write_json(out / "value.json",
                {"v": res["v"].tolist(), "bellman_residual": res["residual"],
                 "direct_solve_gap": gap,
                 "regularized_biased": parts["lam"] > 0})
    lines.append(f"sup distance to direct solve: {gap!r}")
    lines.append(f"final bellman residual: {res['residual']!r}")
    return lines


def _finish_figure1(merged, results, out):
    grid = results[0]["grid"]
    if len(grid) == 0:
        _write_csv(out / "empirical-mcdca.csv", ["k", "duality_gap"], [[], []])
        _write_csv(out / "sdca.csv", ["k", "duality_gap"], [[], []])
        return ["empty run (no iterations)"]
    mc_mean, mc_band = mean_and_band([res["mc_gap"] for res in results])
    sd_mean, sd_band = mean_and_band([res["sdca_gap"] for res in results])
    _write_csv(out / "empirical-mcdca.csv", ["k", "duality_gap"],
               [grid, mc_mean])
    _write_csv(out / "sdca.csv", ["k", "duality_gap"], [grid, sd_mean])
    grad_sq_mean, _ = mean_and_band(
        [np.minimum.accumulate(res["mc_grad"] ** 2) for res in results])
    ratio = grad_sq_mean * grid / np.log(np.maximum(grid, 2)) ** 2
    _write_csv(out / "corollary_ratio.csv", ["k", "min_grad_sq_times_k_over_ln2k"],
               [grid, ratio])
    noise_mean, _ = mean_and_band([res["mc_noise"] ** 2 for res in results])
    freq_mean, _ = mean_and_band([res["mc_freq_err"] for res in results])
    _write_csv(out / "noise_decay.csv", ["k", "mean_noise_sq", "mean_freq_error"],
               [grid, noise_mean, freq_mean])
    final_ratio = mc_mean[-1] / sd_mean[-1]
    return [f"final mean gap (walk-driven): {mc_mean[-1]!r}",
            f"final mean gap (fixed-mass baseline): {sd_mean[-1]!r}",
            f"final gap ratio: {final_ratio!r}"]


def compare_rules(cfg, rules, out_dir=None, tolerance=1e-6):
    """Mean objective-error curves for several block-selection rules on
    one experiment, plus an iterations-to-tolerance table."""
    entry, merged = _resolve(cfg)
    if entry["runner"] != "bcd":
        raise ExperimentError("rule comparison is defined for solver experiments")
    parts = entry["build"](merged["problem"])
    obj, schedule = parts["obj"], parts["schedule"]
    if obj.known_min is None:
        raise ExperimentError("rule comparison needs a known minimum")
    count = int(merged["seeds"]["count"])
    base = merged["seeds"]["base"]
    table = []
    curves = {}
    ks = None
    for rule in rules:
        errs = []
        for idx in range(count):
            seed_value = int(seed_for(base, idx).generate_state(1)[0])
            cfg_run = _bcd_solver_config(parts, merged, seed_value)
            rng = np.random.default_rng(seed_for(base, idx, 4))
            source = rule.make_source(schedule, obj.n_blocks, rng)
            res = run(obj, source, cfg_run, g=parts.get("g"))
            errs.append(res.trace.f - obj.known_min)
            ks = res.trace.k
            if rule.is_deterministic:
                errs = errs * count  # identical replicas: zero variance
                break
        mean, band = mean_and_band(errs) if len(errs) > 1 else \
            (errs[0], np.zeros_like(errs[0]))
        hit = np.nonzero(mean <= tolerance)[0]
        table.append({"rule": rule.kind,
                      "final_error": float(mean[-1]),
                      "iters_to_tol": int(ks[hit[0]]) if hit.size else -1,
                      "variance_free": rule.is_deterministic})
        curves[rule.kind] = (ks, mean, band)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for kind, (kcol, mean, band) in curves.items():
            _write_csv(out / f"rule_{kind}.csv", ["k", "mean_f_error", "band"],
                       [kcol, mean, band])
        _write_json(out / "comparison.json", table)
    return table, curves
