import numpy as np
import pytest

from app.models.localization import Box, LocalizationRecord
from app.services.localization import (
    best_iou,
    extract_box,
    iou,
    label_components,
    loc_metrics,
    upsample_map,
)
from app.services.tensor import Tensor


def flood_fill_components(grid):
    """Reference labeling by explicit 8-neighbour flood fill"""
    h, w = grid.shape
    seen = np.zeros_like(grid, dtype=bool)
    components = []
    for y in range(h):
        for x in range(w):
            if not grid[y, x] or seen[y, x]:
                continue
            stack, cells = [(y, x)], set()
            seen[y, x] = True
            while stack:
                cy, cx = stack.pop()
                cells.add((cy, cx))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        ny, nx = cy + dy, cx + dx
                        if 0 <= ny < h and 0 <= nx < w and grid[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            stack.append((ny, nx))
            components.append(frozenset(cells))
    return set(components)


def record(ranked, gt_class, iou_best, gt_known_iou=None):
    return LocalizationRecord(
        ranked_classes=ranked,
        pred_box=Box(x0=0, y0=0, x1=1, y1=1),
        gt_class=gt_class,
        gt_boxes=[Box(x0=0, y0=0, x1=1, y1=1)],
        iou_best=iou_best,
        gt_known_iou=gt_known_iou,
    )


def test_single_block_box():
    m = np.zeros((4, 4))
    m[:2, :2] = 1.0
    assert extract_box(Tensor(m), (4, 4), 0.1) == Box(x0=0, y0=0, x1=2, y1=2)


def test_constant_map_gives_full_image():
    assert extract_box(Tensor(np.full((4, 4), 0.3)), (32, 48), 0.1) == Box(x0=0, y0=0, x1=48, y1=32)


def test_largest_component_wins():
    m = np.zeros((6, 6))
    m[0, 0:3] = 1.0
    for y, x in [(3, 4), (4, 3), (4, 4), (4, 5), (5, 4)]:
        m[y, x] = 0.9
    assert extract_box(Tensor(m), (6, 6), 0.1) == Box(x0=3, y0=3, x1=6, y1=6)


def test_equal_components_prefer_the_peak():
    m = np.zeros((5, 5))
    m[0, 0:2] = 0.8
    m[4, 3:5] = [0.9, 1.0]
    assert extract_box(Tensor(m), (5, 5), 0.5) == Box(x0=3, y0=4, x1=5, y1=5)


def test_box_contains_the_peak_of_a_unimodal_map(rng):
    ys, xs = np.mgrid[0:4, 0:4]
    for _ in range(25):
        cy, cx = rng.uniform(0, 3, size=2)
        m = np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / rng.uniform(0.5, 3.0))
        box = extract_box(Tensor(m), (32, 32), 0.1)
        peak_y, peak_x = np.unravel_index(int(np.argmax(upsample_map(Tensor(m), (32, 32)))), (32, 32))
        assert box.contains(int(peak_x), int(peak_y))


def test_threshold_must_be_inside_unit_interval():
    with pytest.raises(ValueError):
        extract_box(Tensor(np.zeros((2, 2))), (4, 4), 1.0)


def test_labeling_matches_flood_fill():
    rng = np.random.default_rng(17)
    for _ in range(200):
        grid = rng.uniform(size=(12, 12)) < rng.uniform(0.2, 0.6)
        labels, count = label_components(grid)
        found = {frozenset(zip(*np.nonzero(labels == k))) for k in range(1, count + 1)}
        expected = flood_fill_components(grid)
        assert count == len(expected)
        assert {frozenset((int(y), int(x)) for y, x in c) for c in found} == expected


def test_iou_examples():
    a = Box(x0=0, y0=0, x1=10, y1=10)
    assert iou(a, a) == 1.0
    assert abs(iou(a, Box(x0=5, y0=5, x1=15, y1=15)) - 1 / 7) < 1e-12
    assert iou(a, Box(x0=10, y0=0, x1=12, y1=4)) == 0.0


def test_iou_is_symmetric_and_bounded(rng):
    for _ in range(100):
        x0, y0 = rng.integers(0, 10, size=2)
        u0, v0 = rng.integers(0, 10, size=2)
        a = Box(x0=int(x0), y0=int(y0), x1=int(x0 + rng.integers(1, 8)), y1=int(y0 + rng.integers(1, 8)))
        b = Box(x0=int(u0), y0=int(v0), x1=int(u0 + rng.integers(1, 8)), y1=int(v0 + rng.integers(1, 8)))
        assert iou(a, b) == iou(b, a)
        assert 0.0 <= iou(a, b) <= 1.0


def test_best_iou_takes_the_closest_box():
    gt = [Box(x0=0, y0=0, x1=2, y1=2), Box(x0=4, y0=4, x1=8, y1=8)]
    assert best_iou(Box(x0=4, y0=4, x1=8, y1=8), gt) == 1.0


def test_loc_metrics_example():
    scores = loc_metrics([
        record([2, 0, 1, 3, 4], 2, 0.6),
        record([1, 0, 2, 3, 4], 2, 0.7),
        record([2, 1, 0, 3, 4], 2, 0.3),
    ])
    assert scores.top1_loc == pytest.approx(1 / 3)
    assert scores.top5_loc == pytest.approx(2 / 3)
    assert scores.gt_known_loc == pytest.approx(2 / 3)
    assert scores.top1_cls == pytest.approx(2 / 3)
    assert scores.count == 3


def test_loc_metrics_low_and_perfect():
    low = loc_metrics([record([0], 0, 0.4), record([1, 0], 0, 0.5)])
    assert (low.top1_loc, low.top5_loc, low.gt_known_loc) == (0.0, 0.0, 0.0)
    perfect = loc_metrics([record([0], 0, 1.0), record([1], 1, 0.9)])
    assert (perfect.top1_loc, perfect.top5_loc, perfect.gt_known_loc) == (1.0, 1.0, 1.0)


def test_gt_known_uses_the_ground_truth_class_box():
    scores = loc_metrics([record([1, 0], 0, 0.2, gt_known_iou=0.8)])
    assert scores.top1_loc == 0.0
    assert scores.gt_known_loc == 1.0


def test_loc_metrics_rejects_empty():
    with pytest.raises(ValueError):
        loc_metrics([])
