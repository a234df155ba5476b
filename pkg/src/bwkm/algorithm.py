"""Boundary Weighted K-means.

The dataset is summarised by a partition into axis-aligned cells.  Weighted
Lloyd runs over the cell representatives; afterwards each cell gets a
misassignment score computed from the two distances the last assignment pass
already produced, and only cells with a positive score (the boundary) are
candidates for the next split.  A zero score certifies that every member of
the cell shares its representative's nearest centroid.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import PartitionState, as_dataset, single_cell, split_cells
from .lloyd import (AssignmentCache, DistanceLedger, LloydResult, LloydStop, WeightedSet, assign,
                    weighted_error, weighted_lloyd)
from .oracles import exact_error, nearest_labels
from .records import IterationRow, TrialRecord
from .seeding import kmeanspp, make_rng

log = logging.getLogger(__name__)

# Documented complexity constants: total ledger <= C_MAX * n * K * d and
# initialization ledger <= C_INIT * n * K * d.
C_MAX = 5.0
C_INIT = 2.0


class Converged(Exception):
    """Raised by :func:`refine` when the boundary is empty."""


class BudgetExhausted(ValueError):
    pass


@dataclass
class StopRule:
    """Any-of composition of outer stopping criteria.

    ``budget`` is a distance count relative to the ledger at the start of the
    run; ``math.inf`` disables it and ``None`` means the default
    ``C_MAX * n * K * d``.
    """

    budget: float | None = None
    empty_boundary: bool = True
    centroid_shift: float | None = None
    weighted_bound: float | None = None
    max_outer: int | None = 100

    def __post_init__(self):
        if self.budget is not None and not self.budget > 0:
            raise ValueError("distance budget must be > 0")
        if self.max_outer is not None and self.max_outer < 0:
            raise ValueError("max outer iterations must be >= 0")
        if self.centroid_shift is not None and not self.centroid_shift > 0:
            raise ValueError("centroid shift epsilon must be > 0")
        if self.weighted_bound is not None and self.weighted_bound < 0:
            raise ValueError("weighted bound threshold must be >= 0")
        if (math.isinf(self.budget or 0.0) and not self.empty_boundary
                and self.centroid_shift is None and self.weighted_bound is None
                and self.max_outer is None):
            raise ValueError("stop rule needs at least one criterion")

    @classmethod
    def parse(cls, rules) -> StopRule:
        """Build a rule from strings like ``budget:1e6``, ``boundary``, ``shift:0.1``,
        ``bound:5``, ``iters:20``.  Only the listed criteria are enabled."""
        kw = dict(budget=math.inf, empty_boundary=False, max_outer=None)
        for rule in rules:
            name, _, arg = rule.partition(":")
            try:
                if name == "budget":
                    kw["budget"] = float(arg)
                elif name == "boundary":
                    kw["empty_boundary"] = True
                elif name == "shift":
                    kw["centroid_shift"] = float(arg)
                elif name == "bound":
                    kw["weighted_bound"] = float(arg)
                elif name == "iters":
                    kw["max_outer"] = int(arg)
                else:
                    raise ValueError(f"unknown stop criterion {name!r}")
            except ValueError as exc:
                raise ValueError(f"bad --stop value {rule!r}: {exc}") from None
        return cls(**kw)


@dataclass
class BwkmConfig:
    """Parameters of one BWKM run.  ``None`` fields take the defaults
    ``m = ceil(10 sqrt(K d))``, ``m_prime = max(K+1, ceil(sqrt(K d)))`` and
    ``s = ceil(sqrt(n))``."""

    K: int
    m: int | None = None
    m_prime: int | None = None
    s: int | None = None
    r: int = 5
    stop: StopRule = field(default_factory=StopRule)
    seed: int = 0
    sample_replace: bool = False
    lloyd: LloydStop = field(default_factory=LloydStop)
    test_mode: bool = False

    def resolved(self, n: int, d: int) -> BwkmConfig:
        K = self.K
        if K < 1:
            raise ValueError("K must be >= 1")
        if K > n:
            raise ValueError(f"K={K} exceeds the number of points n={n}")
        if self.r < 1:
            raise ValueError("r must be >= 1")
        kd = math.sqrt(K * d)
        m_prime = self.m_prime if self.m_prime is not None else max(K + 1, math.ceil(kd))
        m = self.m if self.m is not None else max(math.ceil(10 * kd), m_prime + 1)
        s = self.s if self.s is not None else math.ceil(math.sqrt(n))
        s = max(1, min(s, n - 1)) if n > 1 else 1
        if not m > m_prime > K:
            raise ValueError(f"need m > m_prime > K, got m={m}, m_prime={m_prime}, K={K}")
        budget = self.stop.budget
        if budget is None:
            budget = C_MAX * n * K * d
        return replace(self, m=m, m_prime=m_prime, s=s, stop=replace(self.stop, budget=budget))


@dataclass
class MisassignmentReport:
    epsilon: np.ndarray
    delta: np.ndarray

    @property
    def in_boundary(self) -> np.ndarray:
        return self.epsilon > 0

    @property
    def boundary_size(self) -> int:
        return int(np.count_nonzero(self.epsilon > 0))


def misassignment(state: PartitionState, cache: AssignmentCache) -> MisassignmentReport:
    """Per-cell ``max(0, 2 l - delta)`` from cached distances; costs no distances."""
    if len(cache) != state.n_cells:
        raise ValueError(
            f"stale assignment cache: {len(cache)} entries for {state.n_cells} cells")
    delta = cache.second_dist - cache.nearest_dist
    with np.errstate(invalid="ignore"):
        eps = np.maximum(0.0, 2.0 * state.diagonals - delta)
    eps[~np.isfinite(eps)] = 0.0
    return MisassignmentReport(eps, delta)


def well_assigned_check(points, centers) -> bool:
    """Brute force: do all points share one nearest centroid?  Oracle only."""
    points = np.atleast_2d(points)
    if points.shape[0] == 0:
        return True
    lab = nearest_labels(points, centers)
    return bool(np.all(lab == lab[0]))


def weighted_bound(state: PartitionState, cache: AssignmentCache,
                   report: MisassignmentReport) -> float:
    """Upper bound on ``|E_full(C) - E_weighted(C)|`` from cached quantities."""
    w = state.weights.astype(float)
    l = state.diagonals
    terms = 2.0 * w * report.epsilon * (2.0 * l + cache.nearest_dist) + 0.5 * (w - 1.0) * l**2
    return float(terms.sum())


def epsilon_w(l: float, n: int, eps: float) -> float:
    """Centroid displacement threshold ``sqrt(l^2 + eps^2/n^2) - l``.

    Evaluated as ``q / (sqrt(l^2 + q) + l)`` with ``q = (eps/n)^2`` to avoid
    cancellation when ``l`` dominates.
    """
    if l < 0 or n < 1:
        raise ValueError("need l >= 0 and n >= 1")
    q = (eps / n) ** 2
    if q == 0.0:
        return 0.0
    return q / (math.sqrt(l * l + q) + l)


# -- initial partition -------------------------------------------------------

def _relabel(labels, state: PartitionState, first_new: int) -> None:
    for j in range(first_new, state.n_cells):
        labels[state.members[j]] = j


def _split(X, state, labels, which):
    old = state.n_cells
    state, touched = split_cells(X, state, which)
    # left children keep their slot, so only appended cells need new labels
    _relabel(labels, state, old)
    return state, touched.size


def _draw_sample(rng, n, s, replace_):
    return rng.choice(n, size=s, replace=replace_)


def starting_partition(X, m_prime: int, s: int, rng, *, sample_replace: bool = False,
                       labels=None, state=None):
    """Grow a partition to ``m_prime`` cells, splitting blocks sampled
    proportionally to ``diagonal * (sample points inside)``.

    Returns ``(state, labels, degenerate)``; ``degenerate`` is set when every
    block became unsplittable before reaching ``m_prime``.
    """
    X = as_dataset(X)
    n = X.shape[0]
    if state is None:
        state = single_cell(X)
        labels = np.zeros(n, dtype=np.int64)
    while state.n_cells < m_prime:
        S = _draw_sample(rng, n, s, sample_replace)
        counts = np.bincount(labels[S], minlength=state.n_cells)
        mass = state.diagonals * counts
        total = mass.sum()
        if not total > 0:
            # sample may simply have missed every splittable block
            mass = state.diagonals * state.weights
            total = mass.sum()
            if not total > 0:
                return state, labels, True
        draws = rng.choice(state.n_cells, size=min(state.n_cells, m_prime - state.n_cells),
                           p=mass / total)
        state, k = _split(X, state, labels, draws)
        if k == 0:
            return state, labels, True
    return state, labels, False


@dataclass
class CuttingProbabilities:
    prob: np.ndarray
    fallback: bool


def _sample_weighted_set(X, labels, S, n_cells):
    lab = labels[S]
    present, inv = np.unique(lab, return_inverse=True)
    counts = np.bincount(inv).astype(float)
    d = X.shape[1]
    sums = np.empty((present.size, d))
    pts = X[S]
    for j in range(d):
        sums[:, j] = np.bincount(inv, weights=pts[:, j])
    return present, WeightedSet(sums / counts[:, None], counts)


def cutting_probabilities(X, state: PartitionState, labels, K: int, s: int, r: int, rng,
                          ledger: DistanceLedger | None = None, *,
                          sample_replace: bool = False) -> CuttingProbabilities:
    """Probability of cutting each cell, averaged over ``r`` subsamples.

    For each subsample the sample-induced representatives are seeded with
    weighted K-means++ and the misassignment of every cell is evaluated
    against those seeds.  If all scores vanish, probabilities fall back to
    ``diagonal * (sample points inside)`` of the last subsample.
    """
    if state.n_cells <= K:
        raise ValueError(f"need more than K={K} cells, have {state.n_cells}")
    n = X.shape[0]
    diag = state.diagonals
    acc = np.zeros(state.n_cells)
    counts_last = None
    for _ in range(r):
        S = _draw_sample(rng, n, s, sample_replace)
        present, ws = _sample_weighted_set(X, labels, S, state.n_cells)
        counts_last = np.zeros(state.n_cells)
        counts_last[present] = ws.weights
        k_eff = min(K, len(ws))
        C = kmeanspp(ws, k_eff, rng, ledger)
        cache = assign(ws, C, ledger)
        delta = cache.second_dist - cache.nearest_dist
        with np.errstate(invalid="ignore"):
            eps = np.maximum(0.0, 2.0 * diag[present] - delta)
        eps[~np.isfinite(eps)] = 0.0
        acc[present] += eps
    total = acc.sum()
    if total > 0:
        return CuttingProbabilities(acc / total, False)
    mass = diag * counts_last
    if not mass.sum() > 0:
        mass = diag * state.weights
    if not mass.sum() > 0:
        return CuttingProbabilities(np.zeros(state.n_cells), True)
    return CuttingProbabilities(mass / mass.sum(), True)


def _cutting_cost(state, K, s, r):
    q = min(s, state.n_cells)
    return r * q * (2 * K - 1)


def initial_partition(X, config: BwkmConfig, rng, ledger: DistanceLedger | None = None,
                      cap=None):
    """Starting partition to ``m_prime`` cells, then misassignment-driven
    splitting up to ``m`` cells.

    ``config`` must already be resolved.  ``cap`` is an absolute ledger limit;
    rounds that could cross it are skipped.  Returns ``(state, info)``.
    """
    X = as_dataset(X)
    ledger = ledger if ledger is not None else DistanceLedger()
    K, m, m_prime, s, r = config.K, config.m, config.m_prime, config.s, config.r
    state, labels, degenerate = starting_partition(
        X, m_prime, s, rng, sample_replace=config.sample_replace)
    info = {"degenerate": degenerate, "rounds": 0, "fallbacks": 0, "budget_stop": False}
    while not degenerate and state.n_cells < m:
        if state.n_cells <= K:
            break
        if not ledger.can_afford(_cutting_cost(state, K, s, r), cap):
            info["budget_stop"] = True
            break
        cp = cutting_probabilities(X, state, labels, K, s, r, rng, ledger,
                                   sample_replace=config.sample_replace)
        info["rounds"] += 1
        info["fallbacks"] += int(cp.fallback)
        if not cp.prob.sum() > 0:
            degenerate = True
            break
        draws = rng.choice(state.n_cells, size=min(state.n_cells, m - state.n_cells), p=cp.prob)
        state, k = _split(X, state, labels, draws)
        if k == 0:
            degenerate = True
    info["degenerate"] = degenerate
    if degenerate:
        log.warning("initial partition stopped early at %d cells: blocks unsplittable",
                    state.n_cells)
    state.generation = 0
    return state, info


def refine(X, state: PartitionState, report: MisassignmentReport, rng) -> PartitionState:
    """Split boundary cells sampled (with replacement) proportionally to misassignment.

    ``|boundary|`` draws are made; each distinct drawn cell is bisected once,
    so the cell count grows by at most the boundary size.
    """
    return _refine(X, state, report, rng)[0]


def _refine(X, state, report, rng):
    nb = report.boundary_size
    if nb == 0:
        raise Converged("converged")
    p = report.epsilon / report.epsilon.sum()
    draws = rng.choice(state.n_cells, size=nb, p=p)
    return split_cells(X, state, draws)


def _warm_cache(state: PartitionState, old: AssignmentCache, touched, centers, ledger):
    """Assignment of a refined partition to unchanged centroids.

    Untouched cells keep their representative, so their cached distances are
    still exact; only the two children of each split cell are assigned.
    Returns the cache and whether every child kept its parent's centroid.
    """
    old_n = len(old)
    fresh = np.concatenate([touched, np.arange(old_n, state.n_cells)])
    part = assign(WeightedSet(state.reps[fresh], state.weights[fresh]), centers, ledger)
    parent = np.concatenate([touched, touched])
    same = bool(np.array_equal(part.nearest_index, old.nearest_index[parent]))
    cache = AssignmentCache(*(np.concatenate([a, np.empty(state.n_cells - old_n, a.dtype)])
                              for a in (old.nearest_index, old.nearest_dist, old.second_dist,
                                        old.nearest_sq)))
    for dst, src in zip((cache.nearest_index, cache.nearest_dist, cache.second_dist,
                         cache.nearest_sq),
                        (part.nearest_index, part.nearest_dist, part.second_dist,
                         part.nearest_sq)):
        dst[fresh] = src
    return cache, same


# -- main loop ---------------------------------------------------------------

def _seed_centers(ws: WeightedSet, K: int, rng, ledger):
    k_eff = min(K, len(ws))
    C = kmeanspp(ws, k_eff, rng, ledger)
    if k_eff < K:
        # fewer distinct cells than clusters; surplus centroids start as duplicates
        C = np.vstack([C, np.repeat(C[:1], K - k_eff, axis=0)])
    return C


def bwkm(X, config: BwkmConfig, ledger: DistanceLedger | None = None, *, rng=None,
         dataset: str = "data", trace=None):
    """Run BWKM on ``X``.

    Parameters
    ----------
    X : array_like, shape (n, d)
    config : BwkmConfig
    ledger : DistanceLedger, optional
        Shared counter; the distance budget is measured from its value on entry.
    rng : numpy.random.Generator, optional
        Defaults to ``make_rng(config.seed)``.
    trace : callable, optional
        ``trace(state, prev_centers, centers, prev_weighted, weighted)`` after
        every weighted Lloyd iteration, for instrumentation.

    Returns
    -------
    centers : ndarray, shape (K, d)
    record : TrialRecord
        One row per outer iteration.  ``record.info`` carries the final
        partition, the initialization distance count and the stop details.
    """
    t0 = time.perf_counter()
    X = as_dataset(X)
    n, d = X.shape
    cfg = config.resolved(n, d)
    K = cfg.K
    stop = cfg.stop
    ledger = ledger if ledger is not None else DistanceLedger()
    rng = rng if rng is not None else make_rng(cfg.seed)
    start = ledger.count
    cap = None if math.isinf(stop.budget) else start + stop.budget

    state, init_info = initial_partition(X, cfg, rng, ledger, cap)
    ws = WeightedSet.from_partition(state)
    first_cost = len(ws) * (min(K, len(ws)) - 1) + len(ws) * K
    if not ledger.can_afford(first_cost, cap):
        raise BudgetExhausted(
            f"distance budget {stop.budget:g} too small to seed and assign {len(ws)} cells")
    C = _seed_centers(ws, K, rng, ledger)
    init_distances = ledger.count - start

    def hook(st):
        if trace is None:
            return None
        return lambda c0, c1, e0, e1: trace(st, c0, c1, e0, e1)

    res = weighted_lloyd(ws, C, K, cfg.lloyd, ledger, cap, on_iteration=hook(state))
    record = TrialRecord(method="bwkm", dataset=dataset, k=K, seed=cfg.seed,
                         budget=None if cap is None else int(stop.budget))
    diag_D = float(np.linalg.norm(X.max(axis=0) - X.min(axis=0)))
    prev_C = None
    outer = 0
    polished = False
    reason = None
    while True:
        C = res.centers
        report = misassignment(state, res.cache)
        record.rows.append(IterationRow(
            iteration=len(record.rows),
            distances=ledger.count - start,
            weighted_error=res.error,
            exact_error=exact_error(X, C) if cfg.test_mode else None,
            cells=state.n_cells,
            boundary=report.boundary_size,
        ))
        log.info("bwkm iter %d: cells=%d boundary=%d E_w=%.6g distances=%d",
                  outer, state.n_cells, report.boundary_size, res.error, ledger.count - start)

        if report.boundary_size == 0:
            if not res.fixed_point and not polished and res.reason != "budget":
                # certify a weighted fixed point before declaring convergence
                polished = True
                if ledger.can_afford(len(ws) * K, cap):
                    res = weighted_lloyd(ws, C, K, LloydStop(tol=0.0, max_iter=cfg.lloyd.max_iter),
                                         ledger, cap, on_iteration=hook(state), cache0=res.cache)
                    if res.iterations > 0:
                        continue
            reason = "empty_boundary"
            break
        polished = False
        if res.reason == "budget":
            reason = "distance_budget"
            break
        if stop.weighted_bound is not None and \
                weighted_bound(state, res.cache, report) <= stop.weighted_bound:
            reason = "weighted_bound"
            break
        if stop.centroid_shift is not None and prev_C is not None:
            if not ledger.can_afford(K, cap):
                reason = "distance_budget"
                break
            ledger.add(K)
            shift = float(np.max(np.linalg.norm(C - prev_C, axis=1)))
            if shift <= epsilon_w(diag_D, n, stop.centroid_shift):
                reason = "centroid_shift"
                break
        if stop.max_outer is not None and outer >= stop.max_outer:
            reason = "max_outer_iterations"
            break
        if not ledger.can_afford(2 * report.boundary_size * K, cap):
            reason = "distance_budget"
            break
        prev_C = C
        was_fixed = res.fixed_point
        state, touched = _refine(X, state, report, rng)
        if touched.size == 0:
            # drawn cells cannot be bisected at float resolution
            reason = "unsplittable_boundary"
            break
        ws = WeightedSet.from_partition(state)
        cache, same = _warm_cache(state, res.cache, touched, C, ledger)
        outer += 1
        if was_fixed and same:
            # children kept their parents' centroids, so the cluster masses and
            # sums are unchanged and C is still a fixed point
            E = weighted_error(ws, C, cache=cache)
            res = LloydResult(C, cache, 0, E, [E], True, "fixed_point")
            continue
        res = weighted_lloyd(ws, C, K, cfg.lloyd, ledger, cap, on_iteration=hook(state),
                             cache0=cache)

    if record.rows[-1].exact_error is None:
        record.rows[-1].exact_error = exact_error(X, res.centers)
    record.stop_reason = reason
    record.wall_ms = (time.perf_counter() - t0) * 1e3
    record.info.update(init_info)
    record.info.update(state=state, cache=res.cache, init_distances=init_distances,
                       outer_iterations=outer, fixed_point=res.fixed_point)
    return res.centers, record
