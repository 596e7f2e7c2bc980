from typing import Sequence, Tuple

import numpy as np
from scipy import ndimage

from app.core.errors import ShapeError
from app.models.localization import Box, LocalizationRecord, LocMetrics
from app.services.tensor import Tensor, as_tensor, stop_gradient, upsample_bilinear

# 8-connectivity: diagonal neighbours join a component.
EIGHT_CONNECTED = np.ones((3, 3), dtype=int)
IOU_POSITIVE = 0.5


def label_components(mask: np.ndarray) -> Tuple[np.ndarray, int]:
    """Label 8-connected foreground components; 0 is background"""
    labels, count = ndimage.label(np.asarray(mask, dtype=bool), structure=EIGHT_CONNECTED)
    return labels, int(count)


def _tight_box(region: np.ndarray) -> Box:
    rows = np.flatnonzero(region.any(axis=1))
    cols = np.flatnonzero(region.any(axis=0))
    return Box(x0=int(cols[0]), y0=int(rows[0]), x1=int(cols[-1]) + 1, y1=int(rows[-1]) + 1)


def upsample_map(activation: Tensor, image_size: Tuple[int, int]) -> np.ndarray:
    """Corner-aligned bilinear upsampling of an h x w map to H x W"""
    activation = as_tensor(activation)
    if activation.ndim != 2:
        raise ShapeError(f"extract_box: expected an h x w map, got {activation.shape}")
    return upsample_bilinear(stop_gradient(activation), image_size).numpy()


def extract_box(activation: Tensor, image_size: Tuple[int, int], threshold: float = 0.1) -> Box:
    """Tight box around the largest 8-connected region above ``threshold``.

    The map is upsampled to the image and min-max normalized first. A
    constant map has no foreground and yields the full-image box. Equal-size
    regions are resolved in favour of the one holding the map's maximum, then
    by label order.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"extract_box: threshold must lie in (0, 1), got {threshold}")
    height, width = image_size
    full = Box(x0=0, y0=0, x1=width, y1=height)

    values = upsample_map(activation, image_size)
    lo, hi = float(values.min()), float(values.max())
    if not np.isfinite(lo) or not np.isfinite(hi) or hi - lo <= 0:
        return full
    normalized = (values - lo) / (hi - lo)

    labels, count = label_components(normalized >= threshold)
    if count == 0:
        return full
    sizes = np.bincount(labels.ravel(), minlength=count + 1)[1:]
    peak = labels.flat[int(np.argmax(normalized))]
    candidates = np.flatnonzero(sizes == sizes.max()) + 1
    chosen = peak if peak in candidates else int(candidates[0])
    return _tight_box(labels == chosen)


def iou(a: Box, b: Box) -> float:
    ix = max(0, min(a.x1, b.x1) - max(a.x0, b.x0))
    iy = max(0, min(a.y1, b.y1) - max(a.y0, b.y0))
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def best_iou(box: Box, gt_boxes: Sequence[Box]) -> float:
    return max(iou(box, gt) for gt in gt_boxes)


def loc_metrics(records: Sequence[LocalizationRecord]) -> LocMetrics:
    """Top-1 / Top-5 / GT-known localization accuracy over ``records``.

    Top-k uses ``iou_best`` of the predicted-class box; GT-known uses
    ``gt_known_iou`` when a separate ground-truth-class box was scored.
    """
    if not records:
        raise ValueError("loc_metrics: no records")
    top1 = top5 = known = cls_hits = 0
    ious = []
    for r in records:
        hit = r.iou_best > IOU_POSITIVE
        known_iou = r.gt_known_iou if r.gt_known_iou is not None else r.iou_best
        top1 += int(hit and r.ranked_classes[0] == r.gt_class)
        top5 += int(hit and r.gt_class in r.ranked_classes[:5])
        known += int(known_iou > IOU_POSITIVE)
        cls_hits += int(r.ranked_classes[0] == r.gt_class)
        ious.append(r.iou_best)
    n = len(records)
    return LocMetrics(
        top1_loc=top1 / n,
        top5_loc=top5 / n,
        gt_known_loc=known / n,
        top1_cls=cls_hits / n,
        mean_iou=float(np.mean(ious)),
        count=n,
    )
