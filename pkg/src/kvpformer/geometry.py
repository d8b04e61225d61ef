"""Bounding-box arithmetic and pairwise spatial compatibility features.

Boxes live on a page-normalized integer grid of [0, 1000] x [0, 1000].
Every pair of boxes is summarized by an 18-d feature vector built from
center offsets and log size ratios against each other and their union
box; this vector feeds the attention bias and both scoring heads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

COORD_MAX = 1000
FEATURE_DIM = 18


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box with integer corners on the [0, 1000] grid.

    Construction repairs its input: corners are clipped into range and
    reordered if inverted, and degenerate boxes are widened to
    width/height >= 1 so ratio and log features stay finite.
    """

    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        coords = []
        for name in ("x1", "y1", "x2", "y2"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"BBox coordinate {name} is not finite: {v!r}")
            coords.append(min(COORD_MAX, max(0, int(round(v)))))
        x1, y1, x2, y2 = coords
        if x1 > x2:
            x1, x2 = x2, x1
        if y1 > y2:
            y1, y2 = y2, y1
        # widen degenerate boxes; back off when pinned to the far edge
        if x2 - x1 < 1:
            if x1 >= COORD_MAX:
                x1 = COORD_MAX - 1
            x2 = x1 + 1
        if y2 - y1 < 1:
            if y1 >= COORD_MAX:
                y1 = COORD_MAX - 1
            y2 = y1 + 1
        object.__setattr__(self, "x1", x1)
        object.__setattr__(self, "y1", y1)
        object.__setattr__(self, "x2", x2)
        object.__setattr__(self, "y2", y2)

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1

    @property
    def center_x(self) -> float:
        return (self.x1 + self.x2) / 2.0

    @property
    def center_y(self) -> float:
        return (self.y1 + self.y2) / 2.0

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x1, self.y1, self.x2, self.y2)

    def translate(self, dx: int, dy: int) -> "BBox":
        return BBox(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)


class BoxDelta(NamedTuple):
    """Dimensionless offset of box a relative to box b (and back).

    Components: center offsets scaled by a's size, log size ratios, and
    center offsets scaled by b's size.
    """

    dx_ab: float
    dy_ab: float
    dw: float
    dh: float
    dx_ba: float
    dy_ba: float


class SpatialCompatibilityFeature(NamedTuple):
    """18-d pairwise geometry feature: (delta(a,b), delta(a,U), delta(b,U))."""

    pair: BoxDelta
    a_to_union: BoxDelta
    b_to_union: BoxDelta

    def to_array(self) -> np.ndarray:
        return np.array(self.pair + self.a_to_union + self.b_to_union, dtype=np.float64)


def normalize_box(
    raw_box: Sequence[float], page_width: float, page_height: float
) -> BBox:
    """Scale a pixel-space box onto the [0, 1000] grid.

    Coordinates are clipped into the page, scaled, and rounded half-up;
    BBox construction then repairs corner order and degeneracy.

    Raises:
        ValueError: non-finite coordinates or non-positive page size.
    """
    if page_width <= 0 or page_height <= 0:
        raise ValueError(f"page size must be positive, got {page_width}x{page_height}")
    vals = list(raw_box)
    if len(vals) != 4:
        raise ValueError(f"box must have 4 coordinates, got {len(vals)}")
    for v in vals:
        if not math.isfinite(v):
            raise ValueError(f"box coordinate is not finite: {v!r}")
    x1, y1, x2, y2 = vals
    x1 = min(page_width, max(0.0, x1))
    x2 = min(page_width, max(0.0, x2))
    y1 = min(page_height, max(0.0, y1))
    y2 = min(page_height, max(0.0, y2))

    def scale(v: float, extent: float) -> int:
        return int(math.floor(v * COORD_MAX / extent + 0.5))

    return BBox(scale(x1, page_width), scale(y1, page_height),
                scale(x2, page_width), scale(y2, page_height))


def union_box(a: BBox, b: BBox) -> BBox:
    """Smallest axis-aligned box containing both inputs."""
    return BBox(min(a.x1, b.x1), min(a.y1, b.y1), max(a.x2, b.x2), max(a.y2, b.y2))


def box_delta(a: BBox, b: BBox) -> BoxDelta:
    """Six-component geometric offset between two boxes.

    Center offsets are scaled by the reference box's width/height and
    size ratios enter through natural logs, so the result is invariant
    under joint translation of both boxes.
    """
    wa, ha = float(a.width), float(a.height)
    wb, hb = float(b.width), float(b.height)
    return BoxDelta(
        dx_ab=(a.center_x - b.center_x) / wa,
        dy_ab=(a.center_y - b.center_y) / ha,
        dw=math.log(wa / wb),
        dh=math.log(ha / hb),
        dx_ba=(b.center_x - a.center_x) / wb,
        dy_ba=(b.center_y - a.center_y) / hb,
    )


def spatial_compatibility(a: BBox, b: BBox) -> SpatialCompatibilityFeature:
    """Pairwise 18-d feature of two boxes and their union box."""
    u = union_box(a, b)
    return SpatialCompatibilityFeature(
        pair=box_delta(a, b),
        a_to_union=box_delta(a, u),
        b_to_union=box_delta(b, u),
    )


def pairwise_feature_matrix(
    boxes_a: Sequence[BBox], boxes_b: Sequence[BBox] | None = None
) -> np.ndarray:
    """Stack spatial_compatibility over all (a, b) pairs.

    Returns an array of shape (len(boxes_a), len(boxes_b), 18). With one
    argument the matrix is square over all ordered pairs of `boxes_a`.
    """
    if boxes_b is None:
        boxes_b = boxes_a
    out = np.empty((len(boxes_a), len(boxes_b), FEATURE_DIM), dtype=np.float64)
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            out[i, j] = spatial_compatibility(a, b).to_array()
    return out
