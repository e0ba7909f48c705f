"""Monte Carlo comparison harness for the duality identities.

Each check estimates its two sides (or one side against a closed form) with
independent replica streams and reports a z-score.  Equality checks pass at
|z| <= 3; inequality checks pass when the lower-bounded side clears the bound
minus three pooled standard errors.  Every check is deterministic given
(config, seed): replica batch i draws from a generator keyed by
(seed, stream, i), so thread counts and scheduling cannot change results.

Boundary-free ensembles are evaluated in batches: the replicas of one batch
evolve as a single flat particle system with replicas shifted apart by a huge
offset, which leaves them exactly independent (the pair-merge probability
between replicas underflows to zero) while amortizing the per-step cost.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import partial

import numpy as np
from scipy.stats import norm

from .branching import BranchingParams, cumulant, cumulant_limit, sample_entrance_mass, sample_transition
from .engine import MeasureSpec, atomize_measure, evolve_scbm, init_atoms, occupation_time, window_mass
from .flow import FlowBoundary, StepFunction, sample_coalescing_paths, step_integral_lebesgue, step_positions

__all__ = [
    "MCEstimate",
    "ComparisonReport",
    "mc_estimate",
    "hybrid_grid",
    "reflected_gap_vacancy_exact",
    "LaplaceDualityConfig",
    "laplace_duality_check",
    "AbsorbingExtinctionConfig",
    "absorbing_extinction_check",
    "OccupationDualityConfig",
    "occupation_duality_check",
    "VacancyBoundConfig",
    "interval_vacancy_bound_check",
    "ReflectedLaplaceConfig",
    "reflected_laplace_smoke",
]

_REPLICA_OFFSET = 1e6  # spatial separation between batched replicas
_BATCH = 64


@dataclass(frozen=True)
class MCEstimate:
    """Replica mean with its standard error (sample sd / sqrt(n))."""

    mean: float
    stderr: float
    n: int
    seed: int


@dataclass(frozen=True)
class ComparisonReport:
    """Outcome of one identity check."""

    label: str
    lhs: MCEstimate
    rhs: MCEstimate | float
    z_score: float
    verdict: str  # consistent | inconsistent | one_sided_ok
    approx: bool = False

    @property
    def rhs_mean(self) -> float:
        return self.rhs.mean if isinstance(self.rhs, MCEstimate) else float(self.rhs)

    @property
    def rhs_stderr(self) -> float:
        return self.rhs.stderr if isinstance(self.rhs, MCEstimate) else 0.0

    @property
    def passed(self) -> bool:
        return self.verdict in ("consistent", "one_sided_ok")


def _replica_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(stream, index)))


def _chunk(functional, seed: int, stream: int, lo: int, hi: int) -> np.ndarray:
    return np.array([functional(_replica_rng(seed, stream, i)) for i in range(lo, hi)])


def mc_estimate(functional, n: int, seed: int, stream: int = 0, threads: int = 1) -> MCEstimate:
    """Estimate E[functional(rng)] over ``n`` independent replicas.

    Replica i uses a generator derived from (seed, stream, i); results are
    assembled in replica order, so the estimate is identical for any thread
    count.
    """
    if n < 2:
        raise ValueError("need at least two replicas")
    if threads <= 1:
        values = _chunk(functional, seed, stream, 0, n)
    else:
        bounds = np.linspace(0, n, threads * 2 + 1).astype(int)
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(partial(_chunk, functional, seed, stream), bounds[:-1], bounds[1:]))
        values = np.concatenate(parts)
    return _estimate_from(values, n, seed)


def _estimate_from(values: np.ndarray, n: int, seed: int) -> MCEstimate:
    return MCEstimate(
        mean=float(values.mean()),
        stderr=float(values.std(ddof=1) / math.sqrt(n)),
        n=n,
        seed=seed,
    )


def _batch_run(batch_fn, seed: int, stream: int, index: int, count: int) -> np.ndarray:
    return batch_fn(_replica_rng(seed, stream, index), count)


def _mc_batched(batch_fn, n: int, seed: int, stream: int, threads: int = 1, batch: int = _BATCH) -> MCEstimate:
    """Like :func:`mc_estimate` for functionals that evaluate a whole batch at once.

    Batch i (fixed composition, independent of thread count) uses the stream
    (seed, stream, i); values are concatenated in batch order.
    """
    if n < 2:
        raise ValueError("need at least two replicas")
    counts = [batch] * (n // batch)
    if n % batch:
        counts.append(n % batch)
    runner = partial(_batch_run, batch_fn, seed, stream)
    if threads <= 1:
        parts = [runner(i, c) for i, c in enumerate(counts)]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(runner, range(len(counts)), counts))
    values = np.concatenate(parts)
    return _estimate_from(values, n, seed)



def _effective_t0(t0: float, first_time: float) -> float:
    # burn-in default: never later than a tenth of the first observation time
    return min(t0, first_time / 10.0)

def hybrid_grid(t0: float, t_end: float, dt: float, ratio: float = 1.25) -> np.ndarray:
    """Geometric refinement near ``t0`` easing into uniform steps of ``dt``."""
    if not (0 <= t0 < t_end):
        raise ValueError("need 0 <= t0 < t_end")
    times = [t0]
    current = t0
    while current < t_end:
        step = min(dt, max(current * (ratio - 1.0), 1e-9 + t0 * (ratio - 1.0)))
        current = min(current + step, t_end)
        times.append(current)
    return np.asarray(times)


def _uniform_grid(t_end: float, dt: float) -> np.ndarray:
    return np.linspace(0.0, t_end, max(2, int(round(t_end / dt)) + 1))


def _equality_report(label, lhs, rhs, approx=False) -> ComparisonReport:
    rhs_mean = rhs.mean if isinstance(rhs, MCEstimate) else float(rhs)
    spread = math.sqrt(lhs.stderr**2 + (rhs.stderr**2 if isinstance(rhs, MCEstimate) else 0.0))
    diff = lhs.mean - rhs_mean
    z = 0.0 if diff == 0 else (math.inf if spread == 0 else diff / spread)
    verdict = "consistent" if abs(z) <= 3.0 else "inconsistent"
    return ComparisonReport(label=label, lhs=lhs, rhs=rhs, z_score=z, verdict=verdict, approx=approx)


def _one_sided_report(label, lhs, rhs, approx=False) -> ComparisonReport:
    rhs_mean = rhs.mean if isinstance(rhs, MCEstimate) else float(rhs)
    spread = math.sqrt(lhs.stderr**2 + (rhs.stderr**2 if isinstance(rhs, MCEstimate) else 0.0))
    diff = lhs.mean - rhs_mean
    z = 0.0 if diff == 0 else (math.inf if spread == 0 else diff / spread)
    verdict = "one_sided_ok" if diff >= -3.0 * spread else "inconsistent"
    return ComparisonReport(label=label, lhs=lhs, rhs=rhs, z_score=z, verdict=verdict, approx=approx)


# ---------------------------------------------------------------------------
# Batched boundary-free ensembles
# ---------------------------------------------------------------------------


class _FlatEnsemble:
    """Replicated atom systems evolved as one flat coalescing system.

    Replica r lives around r * _REPLICA_OFFSET; merges never cross replicas.
    """

    def __init__(self, cfg_mu: MeasureSpec, t0: float, params: BranchingParams, rng: np.random.Generator, count: int):
        self.params = params
        self.count = count
        theta = cumulant_limit(params, t0)
        per = rng.poisson(cfg_mu.total_mass * theta, count)
        total = int(per.sum())
        rep = np.repeat(np.arange(count), per)
        if total:
            locs = cfg_mu.sample(rng, total)
            pos = locs + rep * _REPLICA_OFFSET
            order = np.argsort(pos, kind="stable")
            self.pos = pos[order]
            self.rep = rep[order]
            self.mass = np.asarray(sample_entrance_mass(params, t0, rng, size=total))[order]
        else:
            self.pos = np.empty(0)
            self.rep = np.empty(0, dtype=np.int64)
            self.mass = np.empty(0)
        self.frozen = np.full(len(self.pos), np.nan)

    def step(self, dt: float, rng: np.random.Generator) -> None:
        if not len(self.pos):
            return
        self.pos, self.frozen, ids = step_positions(self.pos, self.frozen, dt, rng, boundary=None)
        self.mass = np.bincount(ids, weights=self.mass)
        firsts = np.unique(ids, return_index=True)[1]
        self.rep = self.rep[firsts]
        if self.params.gamma > 0:
            self.mass = sample_transition(self.params, dt, self.mass, rng)
        keep = self.mass > 0
        self.pos, self.frozen, self.mass, self.rep = (
            self.pos[keep],
            self.frozen[keep],
            self.mass[keep],
            self.rep[keep],
        )

    def local_positions(self) -> np.ndarray:
        return self.pos - self.rep * _REPLICA_OFFSET

    def replica_sums(self, per_atom: np.ndarray) -> np.ndarray:
        return np.bincount(self.rep, weights=per_atom, minlength=self.count)


class _FlatPaths:
    """Replicated finite path systems (free flow) evolved as one flat bundle."""

    def __init__(self, starts: np.ndarray, rng: np.random.Generator, count: int):
        self.count = count
        self.k = len(starts)
        base = np.concatenate([np.asarray(starts) + r * _REPLICA_OFFSET for r in range(count)])
        vals, member = np.unique(base, return_inverse=True)
        self.member = member
        self.vals = vals.astype(float)
        self.frozen = np.full(len(self.vals), np.nan)

    def step(self, dt: float, rng: np.random.Generator) -> None:
        self.vals, self.frozen, ids = step_positions(self.vals, self.frozen, dt, rng, boundary=None)
        self.member = ids[self.member]

    def finals(self) -> np.ndarray:
        """Per-replica path values, shape (count, paths-per-replica)."""
        flat = self.vals[self.member]
        out = flat.reshape(self.count, self.k)
        return out - np.arange(self.count)[:, None] * _REPLICA_OFFSET


# ---------------------------------------------------------------------------
# Laplace-functional duality (free flow)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LaplaceDualityConfig:
    """Two independent pathways for the same Laplace functional.

    Left: evolve the measure-valued process to ``t`` and average
    exp(-<X_t, h0>).  Right: evolve the level paths, push the evolved step
    function through the cumulant, integrate against the initial measure and
    average the exponential.  ``rhs_gamma_scale`` perturbs the right side's
    branching rate (negative control).
    """

    params: BranchingParams
    t: float
    mu: MeasureSpec
    pairs: tuple[tuple[float, float], ...]
    coefficients: tuple[float, ...]
    n: int
    t0: float = 0.01
    dt: float = 0.01
    rhs_gamma_scale: float = 1.0


def _laplace_lhs_batch(cfg: LaplaceDualityConfig, rng: np.random.Generator, count: int) -> np.ndarray:
    h0 = StepFunction(pairs=cfg.pairs, coefficients=cfg.coefficients)
    t0 = _effective_t0(cfg.t0, cfg.t)
    system = _FlatEnsemble(cfg.mu, t0, cfg.params, rng, count)
    grid = hybrid_grid(t0, cfg.t, cfg.dt)
    for dt in np.diff(grid):
        system.step(float(dt), rng)
    sums = system.replica_sums(system.mass * h0(system.local_positions()))
    return np.exp(-sums)


def _laplace_rhs_batch(cfg: LaplaceDualityConfig, rng: np.random.Generator, count: int) -> np.ndarray:
    params = replace(cfg.params, gamma=cfg.params.gamma * cfg.rhs_gamma_scale)
    starts = np.array(sorted(v for pair in cfg.pairs for v in pair))
    grid = _uniform_grid(cfg.t, cfg.dt)
    paths = _FlatPaths(starts, rng, count)
    for dt in np.diff(grid):
        paths.step(float(dt), rng)
    finals = paths.finals()
    out = np.empty(count)
    for r in range(count):
        row = finals[r]
        pairs_t = tuple((float(row[2 * j]), float(row[2 * j + 1])) for j in range(len(cfg.pairs)))
        sf_t = StepFunction(pairs=pairs_t, coefficients=cfg.coefficients)
        total = step_integral_lebesgue(params, cfg.t, sf_t, cfg.mu.intervals)
        for loc, m in cfg.mu.atoms:
            total += m * cumulant(params, cfg.t, sf_t(loc))
        out[r] = math.exp(-total)
    return out


def laplace_duality_check(cfg: LaplaceDualityConfig, seed: int, threads: int = 1) -> ComparisonReport:
    lhs = _mc_batched(partial(_laplace_lhs_batch, cfg), cfg.n, seed, stream=0, threads=threads)
    rhs = _mc_batched(partial(_laplace_rhs_batch, cfg), cfg.n, seed, stream=1, threads=threads)
    return _equality_report("laplace_duality", lhs, rhs, approx=cfg.params.beta < 1.0)


# ---------------------------------------------------------------------------
# Window extinction against reflected endpoints (absorbing flow, no branching)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AbsorbingExtinctionConfig:
    """Vacancy of the barrier window at time t, dual to two one-sided reflections.

    The initial measure is Lebesgue outside [a - c, b + c], truncated
    ``margin`` beyond the gap edges; mass enters [a, b] only by absorption at
    a or b, so the left side is the probability that no extremal path is
    absorbed.  The dual reading has no branching, making the closed form
    (2 Phi(c / sqrt(t)) - 1)^2 exact.
    """

    barriers: tuple[float, float]
    c: float
    t: float
    n: int
    margin: float = 6.0
    spacing: float = 0.5
    dt: float = 0.01

    def measure(self) -> MeasureSpec:
        a, b = self.barriers
        return MeasureSpec(
            intervals=((a - self.c - self.margin, a - self.c), (b + self.c, b + self.c + self.margin))
        )


def _absorbing_lhs(cfg: AbsorbingExtinctionConfig, rng: np.random.Generator) -> float:
    atoms = atomize_measure(cfg.measure(), cfg.spacing)
    grid = _uniform_grid(cfg.t, cfg.dt)
    boundary = FlowBoundary("absorbing", cfg.barriers)
    final = evolve_scbm(atoms, grid, BranchingParams(gamma=0.0), rng, flow_boundary=boundary)[-1]
    return 1.0 if window_mass(final, cfg.barriers) == 0.0 else 0.0


def reflected_gap_vacancy_exact(c: float, t: float) -> float:
    """P(both one-sided reflections stay within c of their anchors up to t)."""
    if c < 0:
        raise ValueError("gap half-width must be >= 0")
    return float((2.0 * norm.cdf(c / math.sqrt(t)) - 1.0) ** 2)


def truncation_escape_bound(margin: float, t: float) -> float:
    """Bound on the chance an extremal path outruns the measure truncation by t.

    A Brownian path started at the far edge reaches past the margin with
    probability 2 (1 - Phi(margin / sqrt(t))); below this bound the truncation
    cannot influence window events.
    """
    if margin < 0 or t <= 0:
        raise ValueError("need margin >= 0 and t > 0")
    return float(2.0 * (1.0 - norm.cdf(margin / math.sqrt(t))))


def absorbing_extinction_check(cfg: AbsorbingExtinctionConfig, seed: int, threads: int = 1) -> ComparisonReport:
    lhs = mc_estimate(partial(_absorbing_lhs, cfg), cfg.n, seed, stream=0, threads=threads)
    rhs = reflected_gap_vacancy_exact(cfg.c, cfg.t)
    return _equality_report("absorbing_extinction", lhs, rhs)


# ---------------------------------------------------------------------------
# Occupation-time vacancy bound (equality without branching)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OccupationDualityConfig:
    """Zero occupation of [y1, y2] up to t against the reflected-endpoint form.

    Without branching the two sides agree exactly and the left side runs the
    absorbed system (ever occupying equals being absorbed by t, which the
    bridge-corrected hits capture without grid bias).  With branching the
    relation is an inequality and the left side is the plain process with the
    grid occupation indicator.
    """

    params: BranchingParams
    window: tuple[float, float]
    c: float
    t: float
    n: int
    margin: float = 6.0
    spacing: float = 0.5
    t0: float = 0.01
    dt: float = 0.01

    def measure(self) -> MeasureSpec:
        y1, y2 = self.window
        return MeasureSpec(
            intervals=((y1 - self.c - self.margin, y1 - self.c), (y2 + self.c, y2 + self.c + self.margin))
        )


def _occupation_lhs_no_branching(cfg: OccupationDualityConfig, rng: np.random.Generator) -> float:
    atoms = atomize_measure(cfg.measure(), cfg.spacing)
    grid = _uniform_grid(cfg.t, cfg.dt)
    boundary = FlowBoundary("absorbing", cfg.window)
    snaps = evolve_scbm(atoms, grid, BranchingParams(gamma=0.0), rng, flow_boundary=boundary)
    _, never = occupation_time(snaps, grid, cfg.window)
    return 1.0 if never else 0.0


def _occupation_lhs_branch_batch(cfg: OccupationDualityConfig, rng: np.random.Generator, count: int) -> np.ndarray:
    y1, y2 = cfg.window
    t0 = _effective_t0(cfg.t0, cfg.t)
    system = _FlatEnsemble(cfg.measure(), t0, cfg.params, rng, count)
    grid = hybrid_grid(t0, cfg.t, cfg.dt)
    charged = np.zeros(count, dtype=bool)

    def mark():
        local = system.local_positions()
        inwin = (local >= y1) & (local <= y2)
        charged[system.rep[inwin]] = True

    mark()
    for dt in np.diff(grid):
        system.step(float(dt), rng)
        mark()
    return (~charged).astype(float)


def occupation_duality_check(cfg: OccupationDualityConfig, seed: int, threads: int = 1) -> ComparisonReport:
    rhs = reflected_gap_vacancy_exact(cfg.c, cfg.t)
    if cfg.params.gamma == 0.0:
        lhs = mc_estimate(partial(_occupation_lhs_no_branching, cfg), cfg.n, seed, stream=0, threads=threads)
        return _equality_report("occupation_duality_equality", lhs, rhs)
    lhs = _mc_batched(partial(_occupation_lhs_branch_batch, cfg), cfg.n, seed, stream=0, threads=threads)
    return _one_sided_report("occupation_duality_bound", lhs, rhs, approx=cfg.params.beta < 1.0)


# ---------------------------------------------------------------------------
# Vacancy of a fixed window over a whole time interval (lower bound)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VacancyBoundConfig:
    """P(window [-a, a] empty throughout (s1, s2]) against the reflected bound.

    The bound draws the half-normal displacements of two one-sided
    reflections run for s2 - s1, starts a coalescing pair at (-x - a, a + y),
    runs it for s1 and averages exp(-rate * initial-measure mass between the
    endpoints).
    """

    params: BranchingParams
    a: float
    s1: float
    s2: float
    mu: MeasureSpec
    n: int
    t0: float = 0.01
    dt: float = 0.01


def _vacancy_lhs_batch(cfg: VacancyBoundConfig, rng: np.random.Generator, count: int) -> np.ndarray:
    t0 = _effective_t0(cfg.t0, cfg.s1)
    system = _FlatEnsemble(cfg.mu, t0, cfg.params, rng, count)
    grid = hybrid_grid(t0, cfg.s2, cfg.dt)
    charged = np.zeros(count, dtype=bool)
    for k, dt in enumerate(np.diff(grid)):
        system.step(float(dt), rng)
        t = grid[k + 1]
        if cfg.s1 < t <= cfg.s2:
            local = system.local_positions()
            inwin = (local >= -cfg.a) & (local <= cfg.a)
            charged[system.rep[inwin]] = True
    return (~charged).astype(float)


def _vacancy_rhs_batch(cfg: VacancyBoundConfig, rng: np.random.Generator, count: int) -> np.ndarray:
    gap_t = cfg.s2 - cfg.s1
    x = np.abs(rng.normal(0.0, math.sqrt(gap_t), count))
    y = np.abs(rng.normal(0.0, math.sqrt(gap_t), count))
    theta = cumulant_limit(cfg.params, cfg.s1)
    grid = _uniform_grid(cfg.s1, cfg.dt)
    out = np.empty(count)
    # pairs are batched through the flat system with per-replica offsets
    starts = np.empty(2 * count)
    starts[0::2] = -x - cfg.a + np.arange(count) * _REPLICA_OFFSET
    starts[1::2] = cfg.a + y + np.arange(count) * _REPLICA_OFFSET
    vals, member = np.unique(starts, return_inverse=True)
    frozen = np.full(len(vals), np.nan)
    for dt in np.diff(grid):
        vals, frozen, ids = step_positions(vals, frozen, float(dt), rng, boundary=None)
        member = ids[member]
    finals = vals[member].reshape(count, 2) - np.arange(count)[:, None] * _REPLICA_OFFSET
    for r in range(count):
        out[r] = math.exp(-theta * cfg.mu.mass_in(float(finals[r, 0]), float(finals[r, 1])))
    return out


def interval_vacancy_bound_check(cfg: VacancyBoundConfig, seed: int, threads: int = 1) -> ComparisonReport:
    if cfg.s1 >= cfg.s2:
        raise ValueError("need s1 < s2")
    lhs = _mc_batched(partial(_vacancy_lhs_batch, cfg), cfg.n, seed, stream=0, threads=threads)
    rhs = _mc_batched(partial(_vacancy_rhs_batch, cfg), cfg.n, seed, stream=1, threads=threads)
    return _one_sided_report("interval_vacancy_bound", lhs, rhs, approx=cfg.params.beta < 1.0)


# ---------------------------------------------------------------------------
# Laplace duality with absorbing barriers and reflected level paths (smoke)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReflectedLaplaceConfig:
    """Barrier version of the Laplace duality.

    The reflected coalescing side exists only as the fold-map grid
    approximation, so this is a smoke check; its exact counterpart is the
    lattice generator identity.
    """

    params: BranchingParams
    barriers: tuple[float, float]
    t: float
    mu: MeasureSpec
    pairs: tuple[tuple[float, float], ...]
    coefficients: tuple[float, ...]
    n: int
    t0: float = 0.01
    dt: float = 5e-3


def _reflected_lhs(cfg: ReflectedLaplaceConfig, rng: np.random.Generator) -> float:
    h0 = StepFunction(pairs=cfg.pairs, coefficients=cfg.coefficients)
    t0 = _effective_t0(cfg.t0, cfg.t)
    atoms = init_atoms(cfg.mu, t0, cfg.params, rng)
    if not atoms:
        return 1.0
    grid = hybrid_grid(t0, cfg.t, cfg.dt)
    boundary = FlowBoundary("absorbing", cfg.barriers)
    final = evolve_scbm(atoms, grid, cfg.params, rng, flow_boundary=boundary)[-1]
    return math.exp(-float(np.sum(final.masses * h0(final.locations))))


def _reflected_rhs(cfg: ReflectedLaplaceConfig, rng: np.random.Generator) -> float:
    starts = sorted(v for pair in cfg.pairs for v in pair)
    grid = _uniform_grid(cfg.t, cfg.dt)
    boundary = FlowBoundary("reflecting", cfg.barriers)
    bundle = sample_coalescing_paths(starts, grid, rng, boundary=boundary)
    finals = bundle.values[:, -1]
    pairs_t = tuple((float(finals[2 * j]), float(finals[2 * j + 1])) for j in range(len(cfg.pairs)))
    sf_t = StepFunction(pairs=pairs_t, coefficients=cfg.coefficients)
    total = step_integral_lebesgue(cfg.params, cfg.t, sf_t, cfg.mu.intervals)
    for loc, m in cfg.mu.atoms:
        total += m * cumulant(cfg.params, cfg.t, sf_t(loc))
    return math.exp(-total)


def reflected_laplace_smoke(cfg: ReflectedLaplaceConfig, seed: int, threads: int = 1) -> ComparisonReport:
    if any(v in cfg.barriers for pair in cfg.pairs for v in pair):
        raise ValueError("level points must avoid the barriers")
    lhs = mc_estimate(partial(_reflected_lhs, cfg), cfg.n, seed, stream=0, threads=threads)
    rhs = mc_estimate(partial(_reflected_rhs, cfg), cfg.n, seed, stream=1, threads=threads)
    return _equality_report("reflected_laplace_smoke", lhs, rhs, approx=True)
