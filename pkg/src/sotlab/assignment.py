"""Linear assignment: Hungarian O(n^3) solver and brute-force reference."""

from __future__ import annotations

import itertools
import math

import numpy as np

from .mixer import FACTORIAL_CAP


class ContractViolation(ValueError):
    pass


def hungarian(cost) -> tuple[float, list[int]]:
    """Minimum-cost perfect assignment of rows to columns, O(n^3).

    Shortest augmenting path with row/column potentials. Returns the total
    cost and ``assign`` with ``assign[row] = column``.
    """
    C = np.asarray(cost, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ContractViolation(f"cost matrix must be square, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        raise ContractViolation("cost matrix must be finite")
    n = C.shape[0]
    if n == 0:
        return 0.0, []
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=int)  # match[col] = row, 1-based, 0 = free
    way = np.zeros(n + 1, dtype=int)
    for row in range(1, n + 1):
        match[0] = row
        col0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[col0] = True
            r = match[col0]
            delta, col1 = np.inf, 0
            for col in range(1, n + 1):
                if used[col]:
                    continue
                cur = C[r - 1, col - 1] - u[r] - v[col]
                if cur < minv[col]:
                    minv[col] = cur
                    way[col] = col0
                if minv[col] < delta:
                    delta, col1 = minv[col], col
            for col in range(n + 1):
                if used[col]:
                    u[match[col]] += delta
                    v[col] -= delta
                else:
                    minv[col] -= delta
            col0 = col1
            if match[col0] == 0:
                break
        while col0:
            col1 = way[col0]
            match[col0] = match[col1]
            col0 = col1
    assign = [0] * n
    for col in range(1, n + 1):
        assign[match[col] - 1] = col - 1
    return float(sum(C[r, assign[r]] for r in range(n))), assign


def brute_force_assignment(cost) -> tuple[float, tuple[int, ...]]:
    """Minimum over all permutations; ties go to the lexicographically smallest."""
    C = np.asarray(cost, dtype=np.float64)
    n = C.shape[0]
    if n > FACTORIAL_CAP:
        raise ContractViolation(f"{n} speakers exceeds the factorial cap of {FACTORIAL_CAP}")
    best, best_perm = math.inf, None
    for perm in itertools.permutations(range(n)):
        total = sum(C[s, perm[s]] for s in range(n))
        if total < best:
            best, best_perm = total, perm
    return float(best), best_perm
