"""Seeding strategies: Forgy, weighted K-means++ and KMC2.

All randomness flows through :func:`make_rng`, a PCG64 generator keyed by a
(seed, stream) pair through :class:`numpy.random.SeedSequence`.
"""

from __future__ import annotations

import numpy as np

from .lloyd import DistanceLedger, WeightedSet, pairwise_sq


def make_rng(seed: int, stream: int | tuple = 0) -> np.random.Generator:
    key = stream if isinstance(stream, tuple) else (stream,)
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def _as_weighted(ws) -> WeightedSet:
    return ws if isinstance(ws, WeightedSet) else WeightedSet.unit(ws)


def forgy(ws, K: int, rng: np.random.Generator) -> np.ndarray:
    """K distinct representatives drawn uniformly; weights are ignored."""
    ws = _as_weighted(ws)
    if K < 1:
        raise ValueError("K must be >= 1")
    if len(ws) < K:
        raise ValueError(f"cannot draw K={K} seeds from {len(ws)} points")
    idx = rng.choice(len(ws), size=K, replace=False)
    return ws.reps[idx].copy()


def kmeanspp(ws, K: int, rng: np.random.Generator, ledger: DistanceLedger | None = None,
             first_index: int | None = None) -> np.ndarray:
    """Weighted K-means++ seeding.

    Weights act as multiplicities: the first seed is drawn with probability
    proportional to weight, every later one proportional to
    ``weight * D^2`` where ``D`` is the distance to the closest seed so far.
    When every remaining mass is zero (duplicate points) the draw falls back
    to uniform over unchosen representatives.  Each new seed costs one
    distance per representative; the last seed costs nothing.
    """
    ws = _as_weighted(ws)
    n = len(ws)
    if n == 0:
        raise ValueError("empty dataset")
    if K < 1:
        raise ValueError("K must be >= 1")
    if K > n:
        raise ValueError(f"cannot draw K={K} seeds from {n} points")
    w = ws.weights
    chosen = np.zeros(n, dtype=bool)
    if first_index is None:
        first_index = int(rng.choice(n, p=w / w.sum()))
    picks = [first_index]
    chosen[first_index] = True
    mind2 = np.full(n, np.inf)
    for _ in range(1, K):
        d2 = pairwise_sq(ws.reps, ws.reps[picks[-1]], ledger)[:, 0]
        np.minimum(mind2, d2, out=mind2)
        mass = w * mind2
        mass[chosen] = 0.0
        total = mass.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=mass / total))
        else:
            nxt = int(rng.choice(np.flatnonzero(~chosen)))
        picks.append(nxt)
        chosen[nxt] = True
    return ws.reps[picks].copy()


def d2_distribution(ws, centers) -> np.ndarray:
    """Exact next-seed probabilities of K-means++ given the current seeds (no ledger)."""
    ws = _as_weighted(ws)
    mind2 = pairwise_sq(ws.reps, centers).min(axis=1)
    mass = ws.weights * mind2
    return mass / mass.sum()


def kmc2(X, K: int, chain_length: int, rng: np.random.Generator,
         ledger: DistanceLedger | None = None) -> np.ndarray:
    """Markov-chain approximation of K-means++ with a uniform proposal.

    Each new seed runs a Metropolis-Hastings chain of ``chain_length`` states
    targeting the D^2 distribution; every visited state costs one distance per
    current seed.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty dataset")
    if chain_length < 1:
        raise ValueError("chain_length must be >= 1")
    if K < 1:
        raise ValueError("K must be >= 1")
    centers = [X[rng.integers(n)]]
    for _ in range(1, K):
        cand = rng.integers(n, size=chain_length)
        d2 = pairwise_sq(X[cand], np.asarray(centers), ledger).min(axis=1)
        u = rng.random(chain_length)
        cur = 0
        for j in range(1, chain_length):
            # accept if d2[j] / d2[cur] > u[j]
            if d2[cur] == 0.0 or d2[j] > u[j] * d2[cur]:
                cur = j
        centers.append(X[cand[cur]])
    return np.array(centers)
