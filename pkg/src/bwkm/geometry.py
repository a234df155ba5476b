"""Axis-aligned blocks and the dataset partitions they induce.

A partition is stored column-wise: per-cell member index arrays plus stacked
arrays of fit boxes, representatives and weights.  Cells are never empty.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def as_dataset(X) -> np.ndarray:
    """Validate ``X`` as an ``(n, d)`` float array with finite entries."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("empty dataset")
    if not np.all(np.isfinite(X)):
        raise ValueError("dataset contains non-finite coordinates")
    return X


@dataclass(frozen=True)
class Block:
    lower: np.ndarray
    upper: np.ndarray
    diagonal: float = field(init=False)

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).ravel()
        upper = np.asarray(self.upper, dtype=float).ravel()
        if lower.shape != upper.shape:
            raise ValueError("block corners differ in dimension")
        if np.any(lower > upper):
            raise ValueError("block lower corner exceeds upper corner")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "diagonal", float(np.linalg.norm(upper - lower)))

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains(self, points) -> np.ndarray:
        """Closed-box membership test for an ``(m, d)`` array."""
        points = np.atleast_2d(points)
        return np.all((points >= self.lower) & (points <= self.upper), axis=1)

    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))


def bounding_box(X) -> Block:
    """Smallest axis-aligned box containing every row of ``X``."""
    X = as_dataset(X)
    return Block(X.min(axis=0), X.max(axis=0))


def _split_plane(lower, upper):
    widths = upper - lower
    axis = int(np.argmax(widths))  # first maximum -> lowest axis on ties
    return axis, 0.5 * (lower[axis] + upper[axis])


def split_block(b: Block) -> tuple[Block, Block]:
    """Bisect ``b`` at the midpoint of its longest side."""
    if b.diagonal <= 0.0:
        raise ValueError("unsplittable block")
    axis, mid = _split_plane(b.lower, b.upper)
    left_upper = b.upper.copy()
    left_upper[axis] = mid
    right_lower = b.lower.copy()
    right_lower[axis] = mid
    return Block(b.lower, left_upper), Block(right_lower, b.upper)


@dataclass(frozen=True)
class CellSubset:
    block: Block
    member_indices: np.ndarray
    weight: int
    representative: np.ndarray
    fit_box: Block


@dataclass
class PartitionState:
    """Induced dataset partition.

    Attributes
    ----------
    members : list of ndarray
        Dataset indices per cell, in ascending order.
    lower, upper : ndarray, shape (c, d)
        Fit box (bounding box of members) per cell.  Every diagonal used by
        the algorithms is taken from these boxes.
    reps : ndarray, shape (c, d)
        Center of mass per cell.
    weights : ndarray, shape (c,)
        Member counts.
    blocks : list of Block or None
        Geometric blocks the cells were induced from, when known.
    """

    members: list
    lower: np.ndarray
    upper: np.ndarray
    reps: np.ndarray
    weights: np.ndarray
    generation: int = 0
    blocks: list | None = None

    @property
    def n_cells(self) -> int:
        return len(self.members)

    def __len__(self) -> int:
        return self.n_cells

    @property
    def diagonals(self) -> np.ndarray:
        return np.sqrt(np.sum((self.upper - self.lower) ** 2, axis=1))

    @property
    def n_points(self) -> int:
        return int(self.weights.sum())

    def labels(self, n: int | None = None) -> np.ndarray:
        n = self.n_points if n is None else n
        out = np.full(n, -1, dtype=np.int64)
        for c, idx in enumerate(self.members):
            out[idx] = c
        return out

    def cell(self, i: int) -> CellSubset:
        fit = Block(self.lower[i], self.upper[i])
        block = self.blocks[i] if self.blocks is not None else fit
        return CellSubset(
            block=block,
            member_indices=self.members[i],
            weight=int(self.weights[i]),
            representative=self.reps[i],
            fit_box=fit,
        )

    @property
    def cells(self) -> list[CellSubset]:
        return [self.cell(i) for i in range(self.n_cells)]


def _summaries(X, members):
    d = X.shape[1]
    c = len(members)
    lower = np.empty((c, d))
    upper = np.empty((c, d))
    reps = np.empty((c, d))
    weights = np.empty(c, dtype=np.int64)
    for i, idx in enumerate(members):
        pts = X[idx]
        lower[i] = pts.min(axis=0)
        upper[i] = pts.max(axis=0)
        reps[i] = pts.mean(axis=0)
        weights[i] = len(idx)
    return lower, upper, reps, weights


def partition_from_labels(X, labels, generation: int = 0) -> PartitionState:
    """Group rows of ``X`` by integer label; empty labels are dropped."""
    X = as_dataset(X)
    labels = np.asarray(labels)
    order = np.argsort(labels, kind="stable")
    uniq, starts = np.unique(labels[order], return_index=True)
    members = np.split(order, starts[1:])
    members = [np.sort(m) for m in members]
    lower, upper, reps, weights = _summaries(X, members)
    return PartitionState(members, lower, upper, reps, weights, generation)


def induce_cells(X, blocks, candidates=None) -> PartitionState:
    """Induce the dataset partition of ``X`` by a collection of blocks.

    A point lying on a face shared by several blocks goes to the block whose
    lower corner is lexicographically smallest.  ``candidates`` optionally
    restricts, per block, which dataset indices may belong to it.
    """
    X = as_dataset(X)
    blocks = list(blocks)
    if not blocks:
        raise ValueError("orphan point")
    n = X.shape[0]
    # visit blocks in lexicographic order of lower corner; first claim wins
    order = sorted(range(len(blocks)), key=lambda j: tuple(blocks[j].lower))
    owner = np.full(n, -1, dtype=np.int64)
    for j in order:
        if candidates is None:
            idx = np.flatnonzero(owner < 0)
        else:
            idx = np.asarray(candidates[j], dtype=np.int64)
            idx = idx[owner[idx] < 0]
        inside = blocks[j].contains(X[idx])
        owner[idx[inside]] = j
    orphans = np.flatnonzero(owner < 0)
    if orphans.size:
        raise ValueError(f"orphan point: index {int(orphans[0])} lies outside every block")
    state = partition_from_labels(X, owner)
    used = np.unique(owner)
    state.blocks = [blocks[j] for j in used]
    return state


def split_cell(X, members: np.ndarray, lower: np.ndarray, upper: np.ndarray):
    """Split one cell at the midpoint of its fit box's longest side.

    Returns the two member arrays, or ``None`` when the cell cannot be divided
    into two nonempty halves (degenerate box or float resolution exhausted).
    Points on the cutting plane go to the lower half.
    """
    if not np.any(upper > lower):
        return None
    axis, mid = _split_plane(lower, upper)
    go_left = X[members, axis] <= mid
    left, right = members[go_left], members[~go_left]
    if left.size == 0 or right.size == 0:
        return None
    return left, right


def split_cells(X, state: PartitionState, which) -> tuple[PartitionState, np.ndarray]:
    """Split each distinct cell listed in ``which``.

    Children replace their parent in place (left child) and are appended
    (right child), so untouched cells keep their index.  Returns the new
    state and the indices of the parents actually split, in the order their
    right children were appended.
    """
    which = np.unique(np.asarray(which, dtype=np.int64))
    members = list(state.members)
    new_members = []
    touched = []
    for i in which:
        halves = split_cell(X, members[i], state.lower[i], state.upper[i])
        if halves is None:
            continue
        members[i] = halves[0]
        new_members.append(halves[1])
        touched.append(int(i))
    if not touched:
        return state, np.empty(0, dtype=np.int64)
    lower = state.lower.copy()
    upper = state.upper.copy()
    reps = state.reps.copy()
    weights = state.weights.copy()
    lo, up, rp, wt = _summaries(X, [members[i] for i in touched])
    lower[touched], upper[touched], reps[touched], weights[touched] = lo, up, rp, wt
    lo, up, rp, wt = _summaries(X, new_members)
    members.extend(new_members)
    state = PartitionState(
        members,
        np.vstack([lower, lo]),
        np.vstack([upper, up]),
        np.vstack([reps, rp]),
        np.concatenate([weights, wt]),
        state.generation + 1,
    )
    return state, np.asarray(touched, dtype=np.int64)


def single_cell(X) -> PartitionState:
    X = as_dataset(X)
    return partition_from_labels(X, np.zeros(X.shape[0], dtype=np.int64))
