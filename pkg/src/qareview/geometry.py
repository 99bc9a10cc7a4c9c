"""Rectangle geometry helpers shared by the session and proposal layers."""

from __future__ import annotations

from typing import Optional, Tuple

from .schema import BBox


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes. Symmetric, in [0, 1]."""
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    if inter == 0:
        return 0.0
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0


def clip_to_image(bbox: BBox, image_size: Tuple[float, float]) -> Optional[BBox]:
    """Clip a box to image bounds. Returns None when nothing remains."""
    width, height = image_size
    x1 = max(0.0, bbox.x)
    y1 = max(0.0, bbox.y)
    x2 = min(float(width), bbox.x + bbox.w)
    y2 = min(float(height), bbox.y + bbox.h)
    if x2 - x1 <= 0 or y2 - y1 <= 0:
        return None
    clipped = BBox(x1, y1, x2 - x1, y2 - y1)
    if clipped == bbox:
        return bbox
    return clipped
