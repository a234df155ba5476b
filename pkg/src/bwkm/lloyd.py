"""Weighted Lloyd iterations with exact distance accounting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.spatial.distance import cdist


class DistanceLedger:
    """Counts d-dimensional point-to-point distance evaluations."""

    __slots__ = ("count",)

    def __init__(self, count: int = 0):
        self.count = int(count)

    def add(self, k: int) -> None:
        self.count += int(k)

    def can_afford(self, k: int, budget: int | float | None) -> bool:
        return budget is None or self.count + k <= budget

    def __repr__(self) -> str:
        return f"DistanceLedger({self.count})"


def squared_distance(p, q, ledger: DistanceLedger | None = None) -> float:
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    if p.shape != q.shape:
        raise ValueError(f"dimension mismatch: {p.shape[0]} vs {q.shape[0]}")
    if ledger is not None:
        ledger.add(1)
    diff = p - q
    return float(diff @ diff)


def pairwise_sq(A, B, ledger: DistanceLedger | None = None) -> np.ndarray:
    """Squared distances between every row of ``A`` and every row of ``B``."""
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    if ledger is not None:
        ledger.add(A.shape[0] * B.shape[0])
    return cdist(A, B, "sqeuclidean")


@dataclass
class WeightedSet:
    reps: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.reps = np.atleast_2d(np.asarray(self.reps, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if self.reps.shape[0] != self.weights.shape[0]:
            raise ValueError("reps and weights differ in length")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be positive")

    @classmethod
    def unit(cls, X) -> WeightedSet:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return cls(X, np.ones(X.shape[0]))

    @classmethod
    def from_partition(cls, state) -> WeightedSet:
        return cls(state.reps, state.weights)

    def __len__(self) -> int:
        return self.reps.shape[0]

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())


@dataclass
class AssignmentCache:
    """Nearest and second-nearest centroid distances per representative.

    Distances are Euclidean, not squared.  ``second_dist`` is ``inf`` when
    there is a single centroid.
    """

    nearest_index: np.ndarray
    nearest_dist: np.ndarray
    second_dist: np.ndarray
    nearest_sq: np.ndarray

    def __len__(self) -> int:
        return self.nearest_index.shape[0]

    @property
    def delta(self) -> np.ndarray:
        return self.second_dist - self.nearest_dist


def assign(ws: WeightedSet, centers, ledger: DistanceLedger | None = None) -> AssignmentCache:
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    K = centers.shape[0]
    if K == 0 or centers.size == 0:
        raise ValueError("no centroids (K = 0)")
    if centers.shape[1] != ws.reps.shape[1]:
        raise ValueError("dimension mismatch between reps and centroids")
    # (K, n) layout: column reductions over a short axis are much faster
    D2 = pairwise_sq(centers, ws.reps, ledger)
    near_sq = D2.min(axis=0)
    # lowest index among ties; faster than argmin along axis 0
    nearest = np.full(D2.shape[1], K - 1, dtype=np.intp)
    for k in range(K - 2, -1, -1):
        nearest[D2[k] == near_sq] = k
    cols = np.arange(D2.shape[1])
    if K == 1:
        second = np.full(D2.shape[1], np.inf)
    else:
        D2[nearest, cols] = np.inf
        second = np.sqrt(D2.min(axis=0))
    return AssignmentCache(nearest, np.sqrt(near_sq), second, near_sq)


def update(ws: WeightedSet, cache: AssignmentCache, K: int) -> np.ndarray:
    """Weighted centers of mass per cluster.

    Empty clusters are re-seeded at the representatives farthest from their
    nearest centroid (ties to the lowest index).
    """
    if len(cache) != len(ws):
        raise ValueError("assignment cache does not match the weighted set")
    d = ws.reps.shape[1]
    idx = cache.nearest_index
    mass = np.bincount(idx, weights=ws.weights, minlength=K)
    # weighted indicator matrix times reps gives the per-cluster sums
    W = csr_matrix((ws.weights, (idx, np.arange(len(ws)))), shape=(K, len(ws)))
    sums = np.asarray(W @ ws.reps)
    out = np.zeros((K, d))
    full = mass > 0
    out[full] = sums[full] / mass[full, None]
    empty = np.flatnonzero(~full)
    if empty.size:
        order = np.argsort(-cache.nearest_dist, kind="stable")
        for k, r in zip(empty, np.resize(order, empty.size)):
            out[k] = ws.reps[r]
    return out


def weighted_error(ws: WeightedSet, centers, ledger: DistanceLedger | None = None,
                   cache: AssignmentCache | None = None) -> float:
    if cache is None:
        cache = assign(ws, centers, ledger)
    return float(np.dot(ws.weights, cache.nearest_sq))


@dataclass
class LloydStop:
    """Inner stopping rule: error change at most ``tol`` or ``max_iter`` passes.

    ``tol=None`` means ``rel_tol * E0 / total_weight`` with ``E0`` the error
    of the starting centroids.
    """

    tol: float | None = None
    rel_tol: float = 1e-4
    max_iter: int = 100

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.tol is not None and self.tol < 0:
            raise ValueError("tol must be non-negative")


@dataclass
class LloydResult:
    centers: np.ndarray
    cache: AssignmentCache
    iterations: int
    error: float
    errors: list
    fixed_point: bool
    reason: str


def weighted_lloyd(ws: WeightedSet, c0, K: int | None = None, stop: LloydStop | None = None,
                   ledger: DistanceLedger | None = None, budget=None,
                   on_iteration=None, cache0: AssignmentCache | None = None) -> LloydResult:
    """Alternate assignment and update steps over a weighted set.

    Parameters
    ----------
    ws : WeightedSet
    c0 : array_like, shape (K, d)
        Starting centroids.
    stop : LloydStop, optional
    ledger : DistanceLedger, optional
    budget : int, optional
        Absolute ledger cap.  An assignment pass that would cross it is not
        run; the last consistent (centers, cache) pair is returned.
    on_iteration : callable, optional
        Called as ``on_iteration(prev_centers, centers, prev_error, error)``
        after every update/assign pair.
    cache0 : AssignmentCache, optional
        Assignment of ``ws`` to ``c0`` that is already known; the opening
        assignment pass is then skipped.

    Returns
    -------
    LloydResult
        ``cache`` always belongs to ``centers``.  ``fixed_point`` is set when
        the last pass left every assignment unchanged, which makes
        ``centers`` an exact fixed point of the weighted update.
    """
    stop = stop or LloydStop()
    ledger = ledger if ledger is not None else DistanceLedger()
    C = np.array(c0, dtype=float, ndmin=2)
    K = C.shape[0] if K is None else K
    if C.shape[0] != K:
        raise ValueError("c0 does not hold K centroids")
    cost = len(ws) * K
    if cache0 is not None:
        if len(cache0) != len(ws):
            raise ValueError("assignment cache does not match the weighted set")
        cache = cache0
    elif not ledger.can_afford(cost, budget):
        raise ValueError("distance budget too small for one assignment pass")
    else:
        cache = assign(ws, C, ledger)
    E = weighted_error(ws, C, cache=cache)
    errors = [E]
    tol = stop.tol if stop.tol is not None else stop.rel_tol * E / max(ws.total_weight, 1.0)
    fixed = False
    reason = "max_iter"
    it = 0
    while it < stop.max_iter:
        if not ledger.can_afford(cost, budget):
            reason = "budget"
            break
        C_new = update(ws, cache, K)
        cache_new = assign(ws, C_new, ledger)
        E_new = weighted_error(ws, C_new, cache=cache_new)
        it += 1
        if on_iteration is not None:
            on_iteration(C, C_new, E, E_new)
        fixed = bool(np.array_equal(cache_new.nearest_index, cache.nearest_index))
        change = abs(E - E_new)
        C, cache, E = C_new, cache_new, E_new
        errors.append(E)
        if fixed:
            reason = "fixed_point"
            break
        if change <= tol:
            reason = "tolerance"
            break
    return LloydResult(C, cache, it, E, errors, fixed, reason)

