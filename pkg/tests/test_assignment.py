import itertools

import numpy as np
import pytest

from assignment import FORBIDDEN, greedy_match, hungarian, total_cost
from synthdata import make_rng


def brute_force(cost: np.ndarray):
    """Best matching over every injection of the smaller side into the larger one."""
    rows, cols = cost.shape
    best, best_pairs = None, None
    if rows <= cols:
        candidates = ([(r, c) for r, c in enumerate(p)] for p in itertools.permutations(range(cols), rows))
    else:
        candidates = ([(r, c) for c, r in enumerate(p)] for p in itertools.permutations(range(rows), cols))
    for pairs in candidates:
        value = sum(cost[r, c] for r, c in pairs)
        if best is None or value < best:
            best, best_pairs = value, sorted(pairs)
    return best_pairs


def brute_force_partial(cost: np.ndarray):
    """(size, cost) of the best maximum-size matching avoiding forbidden pairs."""
    rows, cols = cost.shape
    best = (0, 0.0)

    def extend(r, used, size, value):
        nonlocal best
        if r == rows:
            if size > best[0] or (size == best[0] and value < best[1]):
                best = (size, value)
            return
        extend(r + 1, used, size, value)
        for c in range(cols):
            if c not in used and np.isfinite(cost[r, c]):
                extend(r + 1, used | {c}, size + 1, value + cost[r, c])

    extend(0, frozenset(), 0, 0.0)
    return best


def reference_greedy(scores: np.ndarray, thresh: float):
    entries = sorted(((-scores[r, c], r, c) for r in range(scores.shape[0]) for c in range(scores.shape[1])))
    rows, cols, pairs = set(), set(), []
    for neg, r, c in entries:
        if -neg < thresh:
            break
        if r not in rows and c not in cols:
            rows.add(r)
            cols.add(c)
            pairs.append((r, c))
    return pairs


def test_hungarian_examples():
    assert hungarian([[0.2]]) == [(0, 0)]
    cost = np.ones((3, 3)) - np.eye(3)
    assert hungarian(cost) == [(0, 0), (1, 1), (2, 2)]
    assert hungarian(np.full((2, 3), FORBIDDEN)) == []
    assert hungarian(np.zeros((0, 3))) == []


def test_hungarian_matches_brute_force():
    rng = make_rng(21)
    for _ in range(200):
        rows, cols = (int(v) for v in rng.integers(1, 7, size=2))
        cost = rng.random((rows, cols))
        assert hungarian(cost) == brute_force(cost)


def test_hungarian_rectangular_5x6():
    cost = make_rng(22).random((5, 6))
    assert hungarian(cost) == brute_force(cost)


def test_hungarian_with_forbidden_pairs_is_maximum_then_minimum():
    rng = make_rng(23)
    for _ in range(100):
        rows, cols = (int(v) for v in rng.integers(1, 5, size=2))
        cost = np.where(rng.random((rows, cols)) < 0.4, FORBIDDEN, rng.random((rows, cols)))
        pairs = hungarian(cost)
        assert all(np.isfinite(cost[r, c]) for r, c in pairs)
        size, value = brute_force_partial(cost)
        assert len(pairs) == size
        assert total_cost(cost, pairs) == pytest.approx(value)


def test_forbidden_gate_does_not_trade_size_for_cost():
    cost = np.array([[0.0, 0.9], [0.1, FORBIDDEN]])
    assert hungarian(cost) == [(0, 1), (1, 0)]


def test_hungarian_rejects_nan():
    with pytest.raises(ValueError):
        hungarian([[np.nan]])


def test_hungarian_not_worse_than_greedy():
    rng = make_rng(24)
    for _ in range(50):
        cost = rng.random((5, 5))
        greedy = greedy_match(-cost, -np.inf)
        assert total_cost(cost, hungarian(cost)) <= total_cost(cost, greedy) + 1e-12


def test_hungarian_row_permutation_equivariance():
    rng = make_rng(25)
    cost = rng.random((5, 6))
    perm = rng.permutation(5)
    original = dict(hungarian(cost))
    permuted = dict(hungarian(cost[perm]))
    assert all(permuted[i] == original[int(perm[i])] for i in range(5))


def test_hungarian_constant_shift_invariance():
    cost = make_rng(26).random((4, 6))
    assert hungarian(cost + 7.5) == hungarian(cost)


def test_greedy_examples():
    assert greedy_match(np.full((2, 2), 0.1), 0.5) == []
    scores = np.zeros((3, 3))
    scores[1, 2] = 0.9
    assert greedy_match(scores, 0.5) == [(1, 2)]
    assert greedy_match(np.ones((2, 2)), 0.5) == [(0, 0), (1, 1)]


def test_greedy_matches_sort_once_reference():
    rng = make_rng(27)
    for _ in range(50):
        scores = rng.random((4, 4))
        assert greedy_match(scores, 0.3) == reference_greedy(scores, 0.3)
