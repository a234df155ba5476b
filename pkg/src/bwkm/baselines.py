"""Reference algorithms measured on the same distance ledger as BWKM."""

from __future__ import annotations

import math
import time

import numpy as np

from .geometry import as_dataset, partition_from_labels
from .lloyd import DistanceLedger, LloydStop, WeightedSet, assign, weighted_lloyd
from .oracles import exact_error
from .records import IterationRow, TrialRecord
from .seeding import forgy, kmc2, kmeanspp, make_rng

SEEDERS = ("forgy", "kmpp", "kmc2")


def seed_centers(X, K, seeder: str, rng, ledger, chain_length: int = 200):
    if seeder == "forgy":
        return forgy(X, K, rng)
    if seeder == "kmpp":
        return kmeanspp(X, K, rng, ledger)
    if seeder == "kmc2":
        return kmc2(X, K, chain_length, rng, ledger)
    raise ValueError(f"unknown seeder {seeder!r}; expected one of {SEEDERS}")


def lloyd_full(X, K: int, seeder: str = "kmpp", eps: float | None = None, rng=None,
               ledger: DistanceLedger | None = None, *, seed: int = 0, max_iter: int = 300,
               chain_length: int = 200, test_mode: bool = False, dataset: str = "data",
               budget=None):
    """Seeded Lloyd's algorithm on the raw points.

    Stops once consecutive errors differ by at most ``eps``; ``None`` uses
    ``1e-4 * E0 / n``.  Returns ``(centers, record)`` with one row per
    Lloyd iteration (row 0 is the seeding plus first assignment).
    """
    t0 = time.perf_counter()
    X = as_dataset(X)
    n = X.shape[0]
    if K > n:
        raise ValueError(f"K={K} exceeds the number of points n={n}")
    ledger = ledger if ledger is not None else DistanceLedger()
    rng = rng if rng is not None else make_rng(seed)
    start = ledger.count
    C0 = seed_centers(X, K, seeder, rng, ledger, chain_length)
    ws = WeightedSet.unit(X)
    record = TrialRecord(method=f"lloyd-{seeder}", dataset=dataset, k=K, seed=seed)
    snapshots = []

    def on_iter(c_prev, c_new, e_prev, e_new):
        snapshots.append((ledger.count - start, e_new, c_new))

    stop = LloydStop(tol=eps, max_iter=max_iter)
    res = weighted_lloyd(ws, C0, K, stop, ledger, budget, on_iteration=on_iter)
    first = ledger.count - start - len(snapshots) * n * K
    record.rows.append(IterationRow(0, first, res.errors[0],
                                    res.errors[0] if test_mode else None, n, None))
    for i, (count, err, _) in enumerate(snapshots, 1):
        record.rows.append(IterationRow(i, count, err, err if test_mode else None, n, None))
    record.rows[-1].exact_error = res.error
    record.stop_reason = res.reason
    record.wall_ms = (time.perf_counter() - t0) * 1e3
    record.info.update(iterations=res.iterations, errors=res.errors)
    return res.centers, record


def kmpp_init(X, K: int, rng=None, ledger: DistanceLedger | None = None, *, seed: int = 0,
              dataset: str = "data"):
    """K-means++ seeding on its own; the error is read through the non-ledger channel."""
    t0 = time.perf_counter()
    X = as_dataset(X)
    ledger = ledger if ledger is not None else DistanceLedger()
    rng = rng if rng is not None else make_rng(seed)
    start = ledger.count
    C = kmeanspp(X, K, rng, ledger)
    err = exact_error(X, C)
    record = TrialRecord(method="kmpp-init", dataset=dataset, k=K, seed=seed,
                         stop_reason="seeded")
    # a K=1 seeding costs nothing; keep the row count positive regardless
    record.rows.append(IterationRow(0, ledger.count - start, None, err, X.shape[0], None))
    record.wall_ms = (time.perf_counter() - t0) * 1e3
    return C, record


def minibatch(X, K: int, b: int, iterations: int | None = 100, rng=None,
              ledger: DistanceLedger | None = None, *, seed: int = 0, budget=None,
              test_mode: bool = False, dataset: str = "data"):
    """Mini-batch K-means with per-center learning rate ``1 / count``.

    Forgy seeding, then per iteration a uniform batch of ``b`` points is
    assigned (``b * K`` distances) and every sample pulls its center by
    ``1 / count``.  Runs ``iterations`` batches, or until the next batch would
    cross ``budget`` (relative to the ledger on entry), whichever is first.
    """
    t0 = time.perf_counter()
    X = as_dataset(X)
    n, d = X.shape
    if b > n or b < 1:
        raise ValueError(f"batch size b={b} must be in [1, n={n}]")
    if iterations is None and budget is None:
        raise ValueError("minibatch needs an iteration count or a distance budget")
    ledger = ledger if ledger is not None else DistanceLedger()
    rng = rng if rng is not None else make_rng(seed)
    start = ledger.count
    C = forgy(X, K, rng)
    counts = np.zeros(K)
    record = TrialRecord(method=f"minibatch-{b}", dataset=dataset, k=K, seed=seed)
    it = 0
    reason = "iterations"
    while iterations is None or it < iterations:
        if budget is not None and ledger.count - start + b * K > budget:
            reason = "distance_budget"
            break
        batch = rng.choice(n, size=b, replace=False)
        pts = X[batch]
        cache = assign(WeightedSet.unit(pts), C, ledger)
        lab = cache.nearest_index
        m = np.bincount(lab, minlength=K).astype(float)
        sums = np.empty((K, d))
        for j in range(d):
            sums[:, j] = np.bincount(lab, weights=pts[:, j], minlength=K)
        # sequential 1/count steps telescope to a running mean
        hit = m > 0
        new_counts = counts + m
        C[hit] = (counts[hit, None] * C[hit] + sums[hit]) / new_counts[hit, None]
        counts = new_counts
        it += 1
        batch_err = float(cache.nearest_sq.sum())
        record.rows.append(IterationRow(
            it, ledger.count - start, batch_err,
            exact_error(X, C) if test_mode else None, None, None))
    if not record.rows:
        record.rows.append(IterationRow(0, 0, None, None, None, None))
    record.rows[-1].exact_error = exact_error(X, C)
    record.stop_reason = reason
    record.wall_ms = (time.perf_counter() - t0) * 1e3
    record.info.update(counts=counts, iterations=it)
    return C, record


MAX_GRID_BITS = 62


def grid_partition(X, level: int, box=None):
    """Induced partition of the uniform ``2**(level*d)`` grid over the bounding box.

    Points on an interior grid face go to the lower cell, so levels nest.
    """
    X = as_dataset(X)
    d = X.shape[1]
    if level * d > MAX_GRID_BITS:
        raise ValueError(f"grid guard: 2**({level}*{d}) cells exceed the index range")
    lo = X.min(axis=0) if box is None else np.asarray(box[0], dtype=float)
    hi = X.max(axis=0) if box is None else np.asarray(box[1], dtype=float)
    width = np.where(hi > lo, hi - lo, 1.0)
    side = 2**level
    t = (X - lo) / width * side
    coords = np.clip(np.ceil(t).astype(np.int64) - 1, 0, side - 1)
    _, labels = np.unique(coords, axis=0, return_inverse=True)
    return partition_from_labels(X, labels.ravel())


def grid_rpkm(X, K: int, max_iter: int = 6, rng=None, ledger: DistanceLedger | None = None, *,
              seed: int = 0, lloyd: LloydStop | None = None, test_mode: bool = False,
              dataset: str = "data"):
    """Grid-based recursive partition K-means.

    Level ``i`` uses the ``2**(i*d)`` grid; the first level is seeded by
    weighted K-means++ over its representatives and every later level is
    warm-started.  Stops after ``max_iter`` levels or once every cell is a
    single distinct location.
    """
    t0 = time.perf_counter()
    X = as_dataset(X)
    n, d = X.shape
    if K > n:
        raise ValueError(f"K={K} exceeds the number of points n={n}")
    if max_iter * d > MAX_GRID_BITS:
        raise ValueError(f"grid guard: max_iter={max_iter} with d={d} overflows the cell index")
    ledger = ledger if ledger is not None else DistanceLedger()
    rng = rng if rng is not None else make_rng(seed)
    start = ledger.count
    n_distinct = np.unique(X, axis=0).shape[0]
    record = TrialRecord(method="grid-rpkm", dataset=dataset, k=K, seed=seed)
    C = None
    reason = "max_iter"
    for level in range(1, max_iter + 1):
        state = grid_partition(X, level)
        ws = WeightedSet.from_partition(state)
        if C is None:
            k_eff = min(K, len(ws))
            C = kmeanspp(ws, k_eff, rng, ledger)
            if k_eff < K:
                C = np.vstack([C, np.repeat(C[:1], K - k_eff, axis=0)])
        res = weighted_lloyd(ws, C, K, lloyd, ledger)
        C = res.centers
        record.rows.append(IterationRow(
            level, ledger.count - start, res.error,
            exact_error(X, C) if test_mode else None, state.n_cells, None))
        if state.n_cells >= n_distinct:
            reason = "singleton_cells"
            break
    record.rows[-1].exact_error = exact_error(X, C)
    record.stop_reason = reason
    record.wall_ms = (time.perf_counter() - t0) * 1e3
    return C, record


def coreset_epsilon(level: int, n: int, diag: float, opt: float) -> float:
    """Relative error guaranteed for the level-``level`` grid summary."""
    if opt <= 0:
        return math.inf
    return (1.0 / 2 ** (level - 1)) * (1.0 + (1.0 / 2 ** (level + 2)) * (n - 1) / n) * n * diag**2 / opt
