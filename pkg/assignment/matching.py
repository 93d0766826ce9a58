"""
Bipartite matching used by target assignment, pseudo-labeling and tracking.

Cost matrices are plain float arrays in which the FORBIDDEN sentinel (+inf)
marks pairs that may never be assigned.
"""
import math
from typing import List, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

FORBIDDEN = math.inf


def _as_matrix(values) -> np.ndarray:
    matrix = np.asarray(values, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError(f"Expected a 2-D matrix, got shape {matrix.shape}")
    if np.isnan(matrix).any() or np.isneginf(matrix).any():
        raise ValueError("Cost entries must be finite or FORBIDDEN")
    return matrix


def hungarian(cost) -> List[Tuple[int, int]]:
    """
    Maximum-size matching of minimum total cost.

    Forbidden pairs are replaced by a penalty larger than any possible
    difference in total finite cost, so the solver first minimizes the number
    of forbidden pairs it needs and only then the finite cost; forbidden pairs
    are dropped from the result.

    Args:
        cost: (rows, cols) matrix with FORBIDDEN entries for disallowed pairs

    Returns:
        (row, col) pairs sorted by row
    """
    matrix = _as_matrix(cost)
    rows, cols = matrix.shape
    if rows == 0 or cols == 0:
        return []

    allowed = np.isfinite(matrix)
    if not allowed.any():
        return []

    finite = matrix[allowed]
    low, high = float(finite.min()), float(finite.max())
    k = min(rows, cols)
    penalty = (high - low + 1.0) * (k + 1)

    shifted = np.where(allowed, matrix - low, penalty)
    row_ind, col_ind = linear_sum_assignment(shifted)

    pairs = [(int(r), int(c)) for r, c in zip(row_ind, col_ind) if allowed[r, c]]
    return sorted(pairs)


def greedy_match(scores, thresh: float) -> List[Tuple[int, int]]:
    """
    Repeatedly take the highest remaining score at or above thresh.

    Ties are broken by (row, col).

    Args:
        scores: (rows, cols) score matrix
        thresh: Minimum score for a pair

    Returns:
        (row, col) pairs in the order they were taken
    """
    matrix = np.asarray(scores, dtype=np.float64)
    if matrix.size == 0:
        return []

    rr, cc = np.meshgrid(np.arange(matrix.shape[0]), np.arange(matrix.shape[1]), indexing="ij")
    flat_scores, flat_rows, flat_cols = matrix.ravel(), rr.ravel(), cc.ravel()
    order = np.lexsort((flat_cols, flat_rows, -flat_scores))

    used_rows, used_cols = set(), set()
    pairs: List[Tuple[int, int]] = []
    for idx in order.tolist():
        if flat_scores[idx] < thresh:
            break
        r, c = int(flat_rows[idx]), int(flat_cols[idx])
        if r in used_rows or c in used_cols:
            continue
        used_rows.add(r)
        used_cols.add(c)
        pairs.append((r, c))
    return pairs


def total_cost(cost, pairs: List[Tuple[int, int]]) -> float:
    """Sum of the matched entries."""
    matrix = np.asarray(cost, dtype=np.float64)
    return float(sum(matrix[r, c] for r, c in pairs))
