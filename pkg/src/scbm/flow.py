"""Coalescing Brownian motions on a time grid, with optional barriers.

Finitely many paths evolve by independent Gaussian increments and stick
together permanently once they meet.  Meeting between grid points is resolved
with the Brownian-bridge correction: an adjacent pair at gaps d0 (step start)
and d1 (step end) merges with probability exp(-d0*d1/dt), since the pair
difference is a Brownian motion of variance 2 per unit time.  Barriers are
handled the same way (crossing, or a bridge hit against the barrier), with
absorbed paths frozen in place and reflected paths folded back onto their
side.  Single-path marginals at grid points are exact; joint laws for the
reflected coalescing case are grid approximations, refined by the step size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .branching import BranchingParams, cumulant

__all__ = [
    "FlowBoundary",
    "PathBundle",
    "StepFunction",
    "step_positions",
    "suggested_step",
    "sample_coalescing_paths",
    "sample_one_sided_reflected",
    "step_integral_lebesgue",
]


def suggested_step(starts, crossing_cap: float = 0.2) -> float:
    """Step size keeping the per-step merge probability of the tightest
    initial pair below ``crossing_cap``.

    The bridge merge probability at gap d over one step is exp(-d^2/dt), so
    dt = d_min^2 / ln(1/cap) caps it.  Bias from unresolved sub-step structure
    shrinks with dt; this is a starting point, not a convergence guarantee.
    """
    gaps = np.diff(np.asarray(starts, dtype=float))
    gaps = gaps[gaps > 0]
    if not (0 < crossing_cap < 1):
        raise ValueError("crossing_cap must be in (0, 1)")
    if len(gaps) == 0:
        return 1.0
    return float(gaps.min() ** 2 / math.log(1.0 / crossing_cap))


@dataclass(frozen=True)
class FlowBoundary:
    """Barrier points for the continuum flow: absorbing freezes, reflecting folds."""

    kind: str
    points: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.kind not in ("absorbing", "reflecting"):
            raise ValueError(f"unknown boundary kind {self.kind!r}")
        if not 1 <= len(self.points) <= 2:
            raise ValueError("boundary takes one or two barrier points")
        if any(a >= b for a, b in zip(self.points, self.points[1:])):
            raise ValueError("barrier points must be strictly increasing")


def _region_ids(values: np.ndarray, points: tuple[float, ...]) -> np.ndarray:
    """Count of barriers strictly below each value (barrier itself belongs to neither side)."""
    return np.sum(values[:, None] > np.asarray(points)[None, :], axis=1).astype(np.int64)


def _fold(values: np.ndarray, regions: np.ndarray, points: tuple[float, ...]) -> np.ndarray:
    """Fold proposals back into their reflecting region (exact one-step marginals)."""
    out = values.copy()
    lo_pts = [-math.inf] + list(points)
    hi_pts = list(points) + [math.inf]
    for rid in np.unique(regions):
        sel = regions == rid
        lo, hi = lo_pts[rid], hi_pts[rid]
        v = out[sel]
        if lo == -math.inf:
            v = hi - np.abs(hi - v)
        elif hi == math.inf:
            v = lo + np.abs(v - lo)
        else:
            period = 2.0 * (hi - lo)
            z = np.mod(v - lo, period)
            v = lo + np.minimum(z, period - z)
        out[sel] = v
    return out


def step_positions(
    values: np.ndarray,
    frozen: np.ndarray,
    dt: float,
    rng: np.random.Generator,
    boundary: FlowBoundary | None = None,
    coalesce: bool = True,
):
    """Advance one grid step and resolve coalescence.

    ``values`` are the current cluster positions (strictly increasing for
    distinct clusters); ``frozen`` holds the absorbing barrier a cluster is
    stuck at, NaN when free.  Returns ``(new_values, new_frozen, cluster_ids)``
    where ``cluster_ids`` maps each input cluster to its (merged) output
    cluster index in order.
    """
    k = len(values)
    free = np.isnan(frozen)
    proposals = values.copy()
    new_frozen = frozen.copy()
    if k:
        proposals[free] = values[free] + rng.normal(0.0, math.sqrt(dt), int(free.sum()))

    if boundary is not None and boundary.kind == "reflecting":
        regions = _region_ids(values, boundary.points)
        proposals = _fold(proposals, regions, boundary.points)
    elif boundary is not None and boundary.kind == "absorbing":
        regions = _region_ids(values, boundary.points)
        # barrier hits: certain on crossing, else a bridge draw; if both
        # barriers register in one step (rare double crossing) the one nearer
        # the step start wins
        hit_dist = np.full(k, np.inf)
        hit_at = np.full(k, np.nan)
        for bpt in boundary.points:
            e0 = np.abs(values - bpt)
            e1 = np.abs(proposals - bpt)
            crossed = (values - bpt) * (proposals - bpt) <= 0.0
            with np.errstate(over="ignore"):
                bridge = np.exp(-2.0 * e0 * e1 / dt)
            hit = free & (crossed | (rng.random(k) < bridge))
            better = hit & (e0 < hit_dist)
            hit_dist[better] = e0[better]
            hit_at[better] = bpt
        newly = free & ~np.isnan(hit_at)
        new_frozen[newly] = hit_at[newly]
        proposals[newly] = hit_at[newly]
        proposals[~free] = frozen[~free]
    else:
        regions = np.zeros(k, dtype=np.int64)

    if not coalesce or k <= 1:
        return proposals, new_frozen, np.arange(k)

    # pair decisions between adjacent clusters, one bridge draw per pair
    d0 = values[1:] - values[:-1]
    d1 = proposals[1:] - proposals[:-1]
    both_free = np.isnan(new_frozen[1:]) & np.isnan(new_frozen[:-1])
    same_region = regions[1:] == regions[:-1] if boundary is not None else np.ones(k - 1, dtype=bool)
    with np.errstate(over="ignore"):
        bridge = np.exp(-d0 * np.maximum(d1, 0.0) / dt)
    merge = np.where(
        both_free & same_region,
        (d1 <= 0.0) | (rng.random(k - 1) < bridge),
        proposals[1:] == proposals[:-1],
    )

    return _resolve_clusters(proposals, new_frozen, merge)


def _resolve_clusters(proposals: np.ndarray, frozen: np.ndarray, merge: np.ndarray):
    """Union adjacent merge decisions, set cluster values, repair any inversions."""
    k = len(proposals)
    while True:
        starts = np.concatenate(([True], ~merge))
        ids = np.cumsum(starts) - 1
        boundaries = np.flatnonzero(starts)
        lo = np.minimum.reduceat(proposals, boundaries)
        hi = np.maximum.reduceat(proposals, boundaries)
        baked = np.fmin.reduceat(frozen, boundaries)  # fmin skips NaN
        vals = np.where(np.isnan(baked), 0.5 * (lo + hi), baked)
        inverted = vals[1:] < vals[:-1]
        if not np.any(inverted):
            new_frozen = baked
            return vals, new_frozen, ids
        # force-merge offending cluster pairs and resolve again
        bad_pairs = np.flatnonzero(inverted)  # cluster index c and c+1
        pair_index = boundaries[bad_pairs + 1] - 1  # original adjacent pair position
        merge = merge.copy()
        merge[pair_index] = True


@dataclass
class PathBundle:
    """Sampled coalescing paths: values per path per grid time, plus merge bookkeeping.

    ``merge_step[i]`` is the first grid index at which original paths i and
    i+1 share a cluster (-1 if they never merge); ``frozen_at[i]`` is the
    absorbing barrier path i ended at (NaN if none).
    """

    starts: np.ndarray
    grid: np.ndarray
    values: np.ndarray
    merge_step: np.ndarray
    frozen_at: np.ndarray

    def merged_index(self, i: int, j: int) -> int:
        """First grid index at which paths i and j coincide, -1 if never."""
        lo, hi = sorted((i, j))
        if lo == hi:
            return 0
        steps = self.merge_step[lo:hi]
        return -1 if np.any(steps < 0) else int(steps.max())


def sample_coalescing_paths(
    starts,
    grid,
    rng: np.random.Generator,
    boundary: FlowBoundary | None = None,
) -> PathBundle:
    """Sample the coalescing system started from ``starts`` on ``grid``.

    The grid must increase from 0 (time 0 holds the starts).  Paths equal at
    the start are merged immediately; an absorbing start on a barrier is
    frozen there; a reflecting start on a barrier has no defined side and is
    rejected.
    """
    s = np.asarray(starts, dtype=float)
    times = np.asarray(grid, dtype=float)
    if np.any(np.diff(s) < 0):
        raise ValueError("starts must be nondecreasing")
    if len(times) == 0 or times[0] != 0.0 or np.any(np.diff(times) <= 0):
        raise ValueError("grid must be strictly increasing starting at 0")
    if boundary is not None and boundary.kind == "reflecting" and np.any(np.isin(s, boundary.points)):
        raise ValueError("reflecting start on a barrier has an ambiguous side")

    npaths = len(s)
    values = np.empty((npaths, len(times)))
    values[:, 0] = s
    merge_step = np.full(max(npaths - 1, 0), -1, dtype=np.int64)
    # cluster state: representative per cluster, member map per original path
    member = np.zeros(npaths, dtype=np.int64)
    uniq, member = np.unique(s, return_inverse=True)
    cvals = uniq.astype(float)
    cfrozen = np.full(len(cvals), np.nan)
    if boundary is not None and boundary.kind == "absorbing":
        on_bar = np.isin(cvals, boundary.points)
        cfrozen[on_bar] = cvals[on_bar]
    merge_step[member[:-1] == member[1:]] = 0

    for step in range(1, len(times)):
        dt = times[step] - times[step - 1]
        cvals, cfrozen, ids = step_positions(cvals, cfrozen, dt, rng, boundary=boundary)
        member = ids[member]
        values[:, step] = cvals[member]
        just_merged = (member[:-1] == member[1:]) & (merge_step < 0)
        merge_step[just_merged] = step

    frozen_at = cfrozen[member]
    return PathBundle(starts=s, grid=times, values=values, merge_step=merge_step, frozen_at=frozen_at)


def sample_one_sided_reflected(anchor: float, side: str, grid, rng: np.random.Generator) -> np.ndarray:
    """Brownian motion reflected at its starting point, exact at grid points.

    Returns anchor - |W| for side "below" (path never exceeds the anchor) or
    anchor + |W| for side "above".
    """
    if side not in ("below", "above"):
        raise ValueError(f"side must be 'below' or 'above', got {side!r}")
    times = np.asarray(grid, dtype=float)
    if len(times) == 0 or times[0] != 0.0 or np.any(np.diff(times) <= 0):
        raise ValueError("grid must be strictly increasing starting at 0")
    incr = rng.normal(0.0, np.sqrt(np.diff(times)))
    w = np.concatenate(([0.0], np.cumsum(incr)))
    folded = np.abs(w)
    return anchor - folded if side == "below" else anchor + folded


@dataclass(frozen=True)
class StepFunction:
    """Nonnegative step function: sum of coefficients over half-open intervals.

    Evaluation uses left-open right-closed intervals ]lo, hi]; a collapsed
    pair (lo == hi) is an empty interval and contributes nothing.  Overlapping
    intervals stack additively.
    """

    pairs: tuple[tuple[float, float], ...]
    coefficients: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.pairs) != len(self.coefficients):
            raise ValueError("one coefficient per interval pair")
        if any(hi < lo for lo, hi in self.pairs):
            raise ValueError("interval pairs must be ordered (lo <= hi)")
        if any(c < 0 for c in self.coefficients):
            raise ValueError("coefficients must be >= 0")

    def __call__(self, x):
        xarr = np.asarray(x, dtype=float)
        total = np.zeros_like(xarr)
        for (lo, hi), c in zip(self.pairs, self.coefficients):
            total = total + c * ((xarr > lo) & (xarr <= hi))
        return float(total) if np.isscalar(x) else total

    def breakpoints(self) -> np.ndarray:
        return np.unique(np.asarray(self.pairs, dtype=float).ravel()) if self.pairs else np.array([])


def step_integral_lebesgue(
    params: BranchingParams,
    t: float,
    sf: StepFunction,
    domain,
) -> float:
    """Exact value of the integral of cumulant(t, sf(x)) dx over the domain.

    ``domain`` is a sequence of disjoint (lo, hi) intervals.  The integrand is
    piecewise constant between the step-function breakpoints, so each piece
    contributes cumulant(level) times its length.
    """
    cuts = sf.breakpoints()
    total = 0.0
    for lo, hi in domain:
        if hi <= lo:
            continue
        inner = cuts[(cuts > lo) & (cuts < hi)]
        edges = np.concatenate(([lo], inner, [hi]))
        mids = 0.5 * (edges[:-1] + edges[1:])
        levels = sf(mids)
        lengths = np.diff(edges)
        for level, length in zip(levels, lengths):
            if level > 0:
                total += cumulant(params, t, float(level)) * float(length)
    return total
