"""Boxes in center/half-extent form, normalization, mirroring and IoU.

Coordinates follow the image convention: ``y`` grows downward, so a smaller
``cy`` means higher in the picture.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class BBox(NamedTuple):
    """Center and half-extent, in units of image width/height."""

    cx: float
    cy: float
    hw: float
    hh: float

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=np.float64)


class PixelBox(NamedTuple):
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def is_ordered(self) -> bool:
        return self.xmin <= self.xmax and self.ymin <= self.ymax


def normalize_box(p: PixelBox, image_w: float, image_h: float) -> BBox:
    if not (image_w > 0 and image_h > 0):
        raise ValueError(f"image size must be positive, got {image_w}x{image_h}")
    if not p.is_ordered():
        raise ValueError(f"box corners out of order: {tuple(p)}")
    return BBox(
        (p.xmin + p.xmax) / (2.0 * image_w),
        (p.ymin + p.ymax) / (2.0 * image_h),
        (p.xmax - p.xmin) / (2.0 * image_w),
        (p.ymax - p.ymin) / (2.0 * image_h),
    )


def denormalize_box(b: BBox, image_w: float, image_h: float) -> PixelBox:
    """Inverse of :func:`normalize_box`."""
    return PixelBox(
        (b.cx - b.hw) * image_w,
        (b.cy - b.hh) * image_h,
        (b.cx + b.hw) * image_w,
        (b.cy + b.hh) * image_h,
    )


def reflect(b: BBox) -> BBox:
    """Reflect about the vertical axis through the image center (x -> 1 - x)."""
    return b._replace(cx=1.0 - b.cx)


def mirror_pair(subject: BBox, obj: BBox) -> tuple[BBox, BBox, bool]:
    """Reflect both boxes when the object center lies strictly left of the subject's."""
    if obj.cx < subject.cx:
        return reflect(subject), reflect(obj), True
    return subject, obj, False


def _edges(b) -> tuple[float, float, float, float]:
    hw, hh = np.maximum(b[2], 0.0), np.maximum(b[3], 0.0)
    return b[0] - hw, b[0] + hw, b[1] - hh, b[1] + hh


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two axis-aligned boxes.

    Negative half-extents (possible in raw predictions) count as zero.
    Returns 0 when the union is empty.
    """
    ax0, ax1, ay0, ay1 = _edges(a)
    bx0, bx1, by0, by1 = _edges(b)
    # areas use the same edge arithmetic as the overlap, so iou(a, a) == 1 exactly
    inter = max(min(ax1, bx1) - max(ax0, bx0), 0.0) * max(min(ay1, by1) - max(ay0, by0), 0.0)
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    if union <= 0.0:
        return 0.0
    return float(min(1.0, inter / union))


def iou_many(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise :func:`iou` over two ``(n, 4)`` arrays of boxes."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ax0, ax1, ay0, ay1 = _edges(a.T)
    bx0, bx1, by0, by1 = _edges(b.T)
    inter = (np.maximum(np.minimum(ax1, bx1) - np.maximum(ax0, bx0), 0.0)
             * np.maximum(np.minimum(ay1, by1) - np.maximum(ay0, by0), 0.0))
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    out = np.zeros_like(inter)
    ok = union > 0.0
    out[ok] = inter[ok] / union[ok]
    return np.minimum(out, 1.0)
