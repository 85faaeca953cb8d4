"""Exact rectangular linear assignment and gated matching.

The solver is the shortest-augmenting-path form of the Hungarian method with
row/column potentials (O(n^2 m)), vectorised over columns.  Ties are broken
towards the lowest column index, so results depend only on input order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CLAMP = 1e12


@dataclass
class MatchResult:
    pairs: list = field(default_factory=list)  # (track index, observation index, cost)
    unmatched_tracks: list = field(default_factory=list)
    unmatched_observations: list = field(default_factory=list)


def _solve_wide(c: np.ndarray) -> np.ndarray:
    """Assign every row of an n x m matrix (n <= m); returns column per row."""
    n, m = c.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=np.int64)  # row (1-based) owning column j; 0 = free
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            reduced = c[i0 - 1] - u[i0] - v[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    col_of_row = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if owner[j]:
            col_of_row[owner[j] - 1] = j - 1
    return col_of_row


def hungarian(cost) -> list[tuple[int, int]]:
    """Minimum-cost assignment of size ``min(M, N)`` as sorted ``(row, col)`` pairs.

    Entries are clamped to ``[-1e12, 1e12]`` before solving; non-finite
    entries are rejected.
    """
    c = np.asarray(cost, dtype=float)
    if c.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {c.shape}")
    if c.size == 0:
        return []
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix entries must be finite")
    c = np.clip(c, -CLAMP, CLAMP)
    if c.shape[0] <= c.shape[1]:
        cols = _solve_wide(c)
        return [(i, int(j)) for i, j in enumerate(cols)]
    rows = _solve_wide(c.T)
    return sorted((int(i), j) for j, i in enumerate(rows))


def total_cost(cost, pairs) -> float:
    c = np.asarray(cost, dtype=float)
    return float(sum(c[i, j] for i, j in pairs))


def gated_match(cost, gamma: float, premask: bool = False) -> MatchResult:
    """Hungarian assignment, then drop pairs whose cost exceeds ``gamma``.

    With ``premask`` the over-threshold entries are replaced by the clamp value
    before solving instead, which lets the solver route around them.
    """
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    c = np.asarray(cost, dtype=float)
    if c.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {c.shape}")
    m, n = c.shape
    solve_on = np.where(c > gamma, CLAMP, c) if premask else c
    pairs = hungarian(solve_on) if c.size else []
    kept = [(i, j, float(c[i, j])) for i, j in pairs if c[i, j] <= gamma]
    mt = {i for i, _, _ in kept}
    mo = {j for _, j, _ in kept}
    return MatchResult(
        pairs=kept,
        unmatched_tracks=[i for i in range(m) if i not in mt],
        unmatched_observations=[j for j in range(n) if j not in mo],
    )
