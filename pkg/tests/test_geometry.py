import numpy as np
import pytest
import torch

from geometry import Box, BinaryMask, giou, giou_loss_terms, iou, iou_matrix, mask_to_box, nms, clamp_box
from synthdata import make_rng
from utils.errors import EmptyMask
from conftest import random_box


def raster(box: Box, size: int = 12) -> np.ndarray:
    grid = np.zeros((size, size), dtype=bool)
    grid[int(box.y1):int(box.y2), int(box.x1):int(box.x2)] = True
    return grid


def grid_iou(a: Box, b: Box) -> float:
    ra, rb = raster(a), raster(b)
    union = (ra | rb).sum()
    return float((ra & rb).sum() / union) if union else 0.0


def grid_giou(a: Box, b: Box) -> float:
    hull = Box(min(a.x1, b.x1), min(a.y1, b.y1), max(a.x2, b.x2), max(a.y2, b.y2))
    union = (raster(a) | raster(b)).sum()
    hull_area = raster(hull).sum()
    if hull_area == 0:
        return 0.0
    return grid_iou(a, b) - (hull_area - union) / hull_area


def reference_nms(instances, thresh):
    order = sorted(range(len(instances)), key=lambda i: (-instances[i][1], i))
    kept = []
    for i in order:
        if all(iou(instances[i][0], instances[k][0]) <= thresh for k in kept):
            kept.append(i)
    return kept


@pytest.mark.parametrize("a, b, expected", [
    ((0, 0, 4, 4), (0, 0, 4, 4), 1.0),
    ((0, 0, 1, 1), (5, 5, 6, 6), 0.0),
    ((0, 0, 2, 2), (1, 1, 3, 3), 1 / 7),
])
def test_iou_examples(a, b, expected):
    assert iou(Box(*a), Box(*b)) == pytest.approx(expected)


def test_giou_examples():
    assert giou(Box(0, 0, 4, 4), Box(0, 0, 4, 4)) == pytest.approx(1.0)
    assert giou(Box(0, 0, 1, 1), Box(2, 0, 3, 1)) == pytest.approx(-1 / 3)


def test_giou_of_zero_area_box():
    a, b = Box(1, 1, 1, 1), Box(2, 2, 5, 4)
    hull = (5 - 1) * (4 - 1)
    assert giou(a, b) == pytest.approx(-(hull - b.area) / hull)


def test_iou_and_giou_match_grid_rasterization():
    rng = make_rng(11)
    for _ in range(200):
        a, b = random_box(rng), random_box(rng)
        assert iou(a, b) == pytest.approx(grid_iou(a, b), abs=1e-12)
        assert giou(a, b) == pytest.approx(grid_giou(a, b), abs=1e-12)


def test_iou_properties():
    rng = make_rng(12)
    for _ in range(200):
        a, b = random_box(rng, integer=False), random_box(rng, integer=False)
        assert iou(a, b) == pytest.approx(iou(b, a))
        assert 0.0 <= iou(a, b) <= 1.0
        assert giou(a, b) <= iou(a, b) + 1e-12
        if a.area > 0:
            assert iou(a, a) == pytest.approx(1.0)


def test_giou_equals_iou_for_nested_boxes():
    outer, inner = Box(0, 0, 10, 10), Box(2, 3, 6, 8)
    assert giou(outer, inner) == pytest.approx(iou(outer, inner))


def test_invalid_box_rejected():
    with pytest.raises(ValueError):
        Box(3, 0, 1, 1)


def test_mask_to_box_examples():
    assert mask_to_box(BinaryMask(np.ones((8, 8)))) == Box(0, 0, 8, 8)
    cells = np.zeros((8, 8))
    cells[3, 5] = 1
    assert mask_to_box(BinaryMask(cells)) == Box(5, 3, 6, 4)


def test_mask_to_box_empty():
    with pytest.raises(EmptyMask):
        mask_to_box(BinaryMask(np.zeros((4, 4))))


def test_mask_to_box_is_tightest():
    rng = make_rng(13)
    for _ in range(50):
        cells = rng.random((10, 12)) < 0.1
        if not cells.any():
            continue
        box = mask_to_box(BinaryMask(cells))
        rows, cols = np.nonzero(cells)
        assert box == Box(cols.min(), rows.min(), cols.max() + 1, rows.max() + 1)
        assert raster(box, 12)[:10, :12][cells].all()
        for shrunk in (Box(box.x1 + 1, box.y1, box.x2, box.y2), Box(box.x1, box.y1 + 1, box.x2, box.y2),
                       Box(box.x1, box.y1, box.x2 - 1, box.y2), Box(box.x1, box.y1, box.x2, box.y2 - 1)):
            if shrunk.x2 >= shrunk.x1 and shrunk.y2 >= shrunk.y1:
                assert not raster(shrunk, 12)[:10, :12][cells].all()


def test_iou_matrix_agrees_with_pairwise():
    rng = make_rng(14)
    a = [random_box(rng, integer=False) for _ in range(5)]
    b = [random_box(rng, integer=False) for _ in range(7)]
    expected = np.array([[iou(x, y) for y in b] for x in a])
    assert np.allclose(iou_matrix(a, b), expected)
    assert iou_matrix([], b).shape == (0, 7)


def test_nms_examples():
    assert nms([], 0.5) == []
    assert nms([(Box(0, 0, 2, 2), 0.4)], 0.5) == [0]
    box = Box(0, 0, 4, 4)
    assert nms([(box, 0.8), (box, 0.9)], 0.5) == [1]
    with pytest.raises(ValueError):
        nms([(box, 0.8)], 1.5)


def test_nms_matches_reference():
    rng = make_rng(15)
    for _ in range(20):
        instances = [(random_box(rng, limit=20, integer=False), float(rng.random())) for _ in range(20)]
        assert nms(instances, 0.4) == reference_nms(instances, 0.4)


def test_nms_permutation_invariant():
    rng = make_rng(16)
    instances = [(random_box(rng, limit=20, integer=False), float(rng.random())) for _ in range(20)]
    perm = rng.permutation(20)
    shuffled = [instances[i] for i in perm]
    kept = {instances[i][0] for i in nms(instances, 0.3)}
    kept_shuffled = {shuffled[i][0] for i in nms(shuffled, 0.3)}
    assert kept == kept_shuffled


def test_clamp_box():
    assert clamp_box(Box(-3, -1, 40, 10), 32, 32) == Box(0, 0, 32, 10)


def test_giou_loss_terms_matches_scalar_giou():
    rng = make_rng(17)
    pairs = [(random_box(rng, integer=False), random_box(rng, integer=False)) for _ in range(10)]
    pairs = [(a, b) for a, b in pairs if a.area > 0 and b.area > 0]
    pred = torch.tensor([a.as_tuple() for a, _ in pairs], dtype=torch.float64)
    target = torch.tensor([b.as_tuple() for _, b in pairs], dtype=torch.float64)
    values = giou_loss_terms(pred, target)
    for value, (a, b) in zip(values.tolist(), pairs):
        assert value == pytest.approx(giou(a, b), abs=1e-6)
