"""Brute-force reference computations.

Nothing here touches a :class:`~bwkm.lloyd.DistanceLedger`; these functions
are the non-ledger channel used for test-mode instrumentation and checks.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.spatial.distance import cdist

from .geometry import as_dataset

BRUTE_FORCE_LIMIT = 10**7


def exact_error(X, centers) -> float:
    """Sum of squared distances from each point to its nearest center."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    total = 0.0
    step = max(1, 2**22 // max(1, centers.shape[0]))
    for lo in range(0, X.shape[0], step):
        D2 = cdist(X[lo:lo + step], centers, "sqeuclidean")
        total += float(D2.min(axis=1).sum())
    return total


def exact_error_fsum(X, centers) -> float:
    """Like :func:`exact_error` but with a compensated sum."""
    D2 = cdist(np.atleast_2d(X), np.atleast_2d(centers), "sqeuclidean")
    return math.fsum(D2.min(axis=1))


def nearest_labels(X, centers) -> np.ndarray:
    D2 = cdist(np.atleast_2d(X), np.atleast_2d(centers), "sqeuclidean")
    return np.argmin(D2, axis=1)


def full_lloyd_step(X, centers) -> np.ndarray:
    """One textbook Lloyd step on the full dataset; empty clusters keep their center."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    lab = nearest_labels(X, centers)
    out = centers.copy()
    for k in range(centers.shape[0]):
        sel = lab == k
        if sel.any():
            out[k] = X[sel].mean(axis=0)
    return out


def brute_force_optimum(X, K: int):
    """Global minimum of the K-means error by enumerating every labelling.

    Returns ``(labels, opt)``.  Guarded to ``K**n <= 1e7``.
    """
    X = as_dataset(X)
    n = X.shape[0]
    if K < 1:
        raise ValueError("K must be >= 1")
    if K**n > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force guard: K**n = {K}**{n} exceeds {BRUTE_FORCE_LIMIT}")
    if K >= n:
        return np.arange(n), 0.0
    # first point fixed to group 0 removes most label symmetry
    tails = np.array(list(itertools.product(range(K), repeat=n - 1)), dtype=np.int64)
    labels = np.hstack([np.zeros((tails.shape[0], 1), dtype=np.int64), tails])
    sq = np.sum(X**2, axis=1)
    total = np.full(labels.shape[0], sq.sum())
    for k in range(K):
        mask = (labels == k).astype(float)
        cnt = mask.sum(axis=1)
        s = mask @ X
        with np.errstate(invalid="ignore", divide="ignore"):
            total -= np.where(cnt > 0, np.sum(s**2, axis=1) / cnt, 0.0)
    best = labels[int(np.argmin(total))]
    opt = 0.0
    terms = []
    for k in range(K):
        pts = X[best == k]
        if len(pts):
            terms.extend(np.sum((pts - pts.mean(axis=0)) ** 2, axis=1))
    opt = math.fsum(terms)
    return best, opt
