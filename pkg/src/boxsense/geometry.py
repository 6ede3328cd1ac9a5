"""Planar poses, oriented boxes, exact polygon overlap and separation."""

from __future__ import annotations

import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi

Point = tuple[float, float]


def wrap_angle(theta: float) -> float:
    """Wrap an angle to the half-open interval (-pi, pi]."""
    # math.remainder returns a value in [-pi, pi]; only the -pi endpoint
    # needs remapping.  Angles already in range pass through unchanged.
    r = math.remainder(theta, TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    return r


@dataclass(frozen=True)
class Pose2:
    """SE(2) pose; theta is stored wrapped to (-pi, pi]."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def compose(self, other: "Pose2") -> "Pose2":
        """Apply ``other`` expressed in this pose's frame."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )

    def transform_point(self, p: Point) -> Point:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return (self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1])

    def inverse(self) -> "Pose2":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(-c * self.x - s * self.y, s * self.x - c * self.y, -self.theta)


@dataclass(frozen=True)
class Obb:
    """Oriented box: length is the extent along local x, width along local y."""

    center: Pose2
    width: float
    length: float

    def __post_init__(self):
        if self.width <= 0.0 or self.length <= 0.0:
            raise ValueError(f"box dimensions must be positive, got {self.width}x{self.length}")


def obb_corners(box: Obb) -> list[Point]:
    """Corners in CCW order, starting at the (-length/2, -width/2) one."""
    hl, hw = 0.5 * box.length, 0.5 * box.width
    c = box.center
    cos_t, sin_t = math.cos(c.theta), math.sin(c.theta)
    out = []
    for lx, ly in ((-hl, -hw), (hl, -hw), (hl, hw), (-hl, hw)):
        out.append((c.x + cos_t * lx - sin_t * ly, c.y + sin_t * lx + cos_t * ly))
    return out


def polygon_area(poly: list[Point]) -> float:
    """Shoelace area of a simple polygon, non-negative; empty input gives 0."""
    n = len(poly)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return 0.5 * abs(acc)


def convex_clip(subject: list[Point], clip: list[Point]) -> list[Point]:
    """Sutherland-Hodgman clip of one convex CCW polygon by another.

    Returns the intersection polygon, or [] when it is empty or degenerate
    (zero area).
    """
    if len(subject) < 3 or len(clip) < 3:
        raise ValueError("polygons need at least 3 vertices")
    output = list(subject)
    for i in range(len(clip)):
        if not output:
            return []
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % len(clip)]
        ex, ey = bx - ax, by - ay
        inputs = output
        output = []
        prev = inputs[-1]
        prev_in = ex * (prev[1] - ay) - ey * (prev[0] - ax) >= 0.0
        for cur in inputs:
            cur_in = ex * (cur[1] - ay) - ey * (cur[0] - ax) >= 0.0
            if cur_in != prev_in:
                # Edge crossing: parametric intersection with the clip edge.
                dx, dy = cur[0] - prev[0], cur[1] - prev[1]
                denom = ex * dy - ey * dx
                if abs(denom) > 1e-15:
                    t = (dx * (ay - prev[1]) - dy * (ax - prev[0])) / denom
                    output.append((ax + t * ex, ay + t * ey))
            if cur_in:
                output.append(cur)
            prev, prev_in = cur, cur_in
    if polygon_area(output) <= 1e-12:
        return []
    return output


def rotated_iou(a: Obb, b: Obb) -> float:
    """Intersection-over-union of two oriented boxes via exact clipping."""
    inter_poly = convex_clip(obb_corners(a), obb_corners(b))
    if not inter_poly:
        return 0.0
    inter = polygon_area(inter_poly)
    union = a.width * a.length + b.width * b.length - inter
    if union <= 0.0:
        return 0.0
    return min(1.0, inter / union)


def _axes(box: Obb) -> list[Point]:
    t = box.center.theta
    c, s = math.cos(t), math.sin(t)
    return [(c, s), (-s, c)]


def minimal_translation(a: Obb, b: Obb) -> tuple[Point, float] | None:
    """Least translation applied to ``b`` that separates overlapping boxes.

    Returns ``(normal, depth)`` with depth > 0, or None when the boxes do not
    overlap.  The axis order prefers box ``a``'s +x face normal on ties.
    """
    axes = _axes(a) + _axes(b)
    half_a = (0.5 * a.length, 0.5 * a.width)
    half_b = (0.5 * b.length, 0.5 * b.width)
    axes_a = _axes(a)
    axes_b = _axes(b)
    dx = b.center.x - a.center.x
    dy = b.center.y - a.center.y
    best_depth = math.inf
    best_axis: Point | None = None
    for ax, ay in axes:
        ra = half_a[0] * abs(ax * axes_a[0][0] + ay * axes_a[0][1]) + half_a[1] * abs(
            ax * axes_a[1][0] + ay * axes_a[1][1]
        )
        rb = half_b[0] * abs(ax * axes_b[0][0] + ay * axes_b[0][1]) + half_b[1] * abs(
            ax * axes_b[1][0] + ay * axes_b[1][1]
        )
        overlap = ra + rb - abs(dx * ax + dy * ay)
        if overlap <= 0.0:
            return None
        if overlap < best_depth:
            best_depth = overlap
            # Point the normal from a toward b; a centered tie keeps +axis.
            if dx * ax + dy * ay >= 0.0:
                best_axis = (ax, ay)
            else:
                best_axis = (-ax, -ay)
    assert best_axis is not None
    return best_axis, best_depth
