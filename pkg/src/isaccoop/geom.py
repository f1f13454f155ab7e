"""
Planar geometry for the image method.

All angles are absolute bearings in the world frame, measured
counter-clockwise from the +x axis and wrapped to (-pi, pi].  Points are
plain ``Point2`` tuples so the scalar routines here stay cheap enough to
call inside per-path loops; batched variants operate on ``(N, 2)`` arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import GeometryError

TWO_PI = 2.0 * math.pi

# Hits closer than this along a ray are ignored (self-intersection guard).
RAY_EPS = 1e-9
# Slack on segment parameters so rays through exact endpoints still hit.
PARAM_EPS = 1e-12


class Point2(NamedTuple):
    x: float
    y: float

    def __add__(self, other):
        return Point2(self.x + other[0], self.y + other[1])

    def __sub__(self, other):
        return Point2(self.x - other[0], self.y - other[1])

    def scale(self, k: float) -> "Point2":
        return Point2(self.x * k, self.y * k)


def as_point(p) -> Point2:
    """Coerce a length-2 sequence to ``Point2``, rejecting NaN/Inf."""
    if isinstance(p, Point2):
        x, y = p
        if math.isfinite(x) and math.isfinite(y):
            return p
    else:
        x, y = float(p[0]), float(p[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise GeometryError(f"non-finite point ({x}, {y})")
    return Point2(x, y)


@dataclass(frozen=True, slots=True)
class Segment:
    a: Point2
    b: Point2

    def __post_init__(self):
        a, b = as_point(self.a), as_point(self.b)
        if a == b:
            raise GeometryError("zero-length segment")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def length(self) -> float:
        return math.hypot(self.b.x - self.a.x, self.b.y - self.a.y)

    @property
    def midpoint(self) -> Point2:
        return Point2(0.5 * (self.a.x + self.b.x), 0.5 * (self.a.y + self.b.y))

    def point_at(self, s: float) -> Point2:
        return Point2(self.a.x + s * (self.b.x - self.a.x),
                      self.a.y + s * (self.b.y - self.a.y))


class RayHit(NamedTuple):
    point: Point2
    distance: float
    segment_index: int


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.remainder(a, TWO_PI)
    if a <= -math.pi:
        a += TWO_PI
    return a


def wrap_angles(a: np.ndarray) -> np.ndarray:
    a = np.remainder(np.asarray(a, dtype=float) + math.pi, TWO_PI) - math.pi
    return np.where(a <= -math.pi, a + TWO_PI, a)


def unit(bearing: float) -> Point2:
    return Point2(math.cos(bearing), math.sin(bearing))


def cross(u, v) -> float:
    return u[0] * v[1] - u[1] * v[0]


def dot(u, v) -> float:
    return u[0] * v[0] + u[1] * v[1]


def distance(p, q) -> float:
    return math.hypot(p[0] - q[0], p[1] - q[1])


def bearing_between(src, dst) -> float:
    """Bearing of ``dst - src`` in (-pi, pi]."""
    dx = dst[0] - src[0]
    dy = dst[1] - src[1]
    if dx == 0.0 and dy == 0.0:
        raise GeometryError("bearing between coincident points")
    return wrap_angle(math.atan2(dy, dx))


def mirror_point(p, line_through: Segment) -> Point2:
    """Reflect ``p`` across the infinite line containing ``line_through``."""
    if not isinstance(line_through, Segment):
        line_through = Segment(*line_through)
    ax, ay = line_through.a
    ex = line_through.b.x - ax
    ey = line_through.b.y - ay
    t = ((p[0] - ax) * ex + (p[1] - ay) * ey) / (ex * ex + ey * ey)
    fx = ax + t * ex
    fy = ay + t * ey
    return Point2(2.0 * fx - p[0], 2.0 * fy - p[1])


def distance_to_line(p, seg: Segment) -> float:
    ex = seg.b.x - seg.a.x
    ey = seg.b.y - seg.a.y
    return abs(cross((ex, ey), (p[0] - seg.a.x, p[1] - seg.a.y))) / math.hypot(ex, ey)


def closest_param(p, seg: Segment) -> float:
    """Unclamped line parameter of the orthogonal projection of ``p``."""
    ex = seg.b.x - seg.a.x
    ey = seg.b.y - seg.a.y
    return ((p[0] - seg.a.x) * ex + (p[1] - seg.a.y) * ey) / (ex * ex + ey * ey)


def distance_to_segment(p, seg: Segment) -> float:
    s = min(1.0, max(0.0, closest_param(p, seg)))
    return distance(p, seg.point_at(s))


def side_of(p, seg: Segment) -> float:
    """Signed area test: >0 left of a->b, <0 right, 0 on the line."""
    return cross(seg.b - seg.a, (p[0] - seg.a.x, p[1] - seg.a.y))


def intersect_segments(p, q, seg: Segment) -> Optional[tuple[float, float]]:
    """Parameters ``(t, s)`` where p + t(q-p) meets seg.a + s(seg.b-seg.a).

    Returns None for parallel (including collinear) pairs; the parameters
    are not range-checked.
    """
    dx, dy = q[0] - p[0], q[1] - p[1]
    ex, ey = seg.b.x - seg.a.x, seg.b.y - seg.a.y
    den = dx * ey - dy * ex
    scale = math.hypot(dx, dy) * math.hypot(ex, ey)
    if scale == 0.0 or abs(den) <= 1e-14 * scale:
        return None
    wx, wy = seg.a.x - p[0], seg.a.y - p[1]
    t = (wx * ey - wy * ex) / den
    s = (wx * dy - wy * dx) / den
    return t, s


def ray_cast(origin, direction: float, segments: Sequence[Segment]) -> Optional[RayHit]:
    """Nearest hit of the ray ``origin + t*unit(direction)``, t > RAY_EPS.

    Parallel segments never register a hit.  Ties resolve to the lower
    segment index.
    """
    ox, oy = origin[0], origin[1]
    ux, uy = math.cos(direction), math.sin(direction)
    best_t = math.inf
    best_i = -1
    for i, seg in enumerate(segments):
        ax, ay = seg.a
        ex, ey = seg.b.x - ax, seg.b.y - ay
        den = ux * ey - uy * ex
        if abs(den) <= 1e-14 * math.hypot(ex, ey):
            continue
        wx, wy = ax - ox, ay - oy
        t = (wx * ey - wy * ex) / den
        if t <= RAY_EPS or t >= best_t:
            continue
        s = (wx * uy - wy * ux) / den
        if -PARAM_EPS <= s <= 1.0 + PARAM_EPS:
            best_t = t
            best_i = i
    if best_i < 0:
        return None
    return RayHit(Point2(ox + best_t * ux, oy + best_t * uy), best_t, best_i)


def ray_cast_fan(origin, directions: np.ndarray, seg_array: np.ndarray):
    """Vectorised ``ray_cast`` for many bearings from one origin.

    ``seg_array`` has shape (M, 2, 2).  Returns ``(distance, index)`` arrays
    of length N with ``inf`` / ``-1`` where nothing is hit.
    """
    directions = np.asarray(directions, dtype=float)
    n = directions.shape[0]
    if len(seg_array) == 0:
        return np.full(n, np.inf), np.full(n, -1, dtype=int)
    o = np.asarray(origin, dtype=float)
    u = np.stack([np.cos(directions), np.sin(directions)], axis=1)[:, None, :]
    a = seg_array[:, 0, :][None, :, :]
    e = (seg_array[:, 1, :] - seg_array[:, 0, :])[None, :, :]
    w = a - o
    den = u[..., 0] * e[..., 1] - u[..., 1] * e[..., 0]
    elen = np.hypot(e[..., 0], e[..., 1])
    ok = np.abs(den) > 1e-14 * elen
    safe = np.where(ok, den, 1.0)
    t = (w[..., 0] * e[..., 1] - w[..., 1] * e[..., 0]) / safe
    s = (w[..., 0] * u[..., 1] - w[..., 1] * u[..., 0]) / safe
    valid = ok & (t > RAY_EPS) & (s >= -PARAM_EPS) & (s <= 1.0 + PARAM_EPS)
    t = np.where(valid, t, np.inf)
    idx = np.argmin(t, axis=1)
    dist = t[np.arange(n), idx]
    idx = np.where(np.isfinite(dist), idx, -1)
    return dist, idx


def segment_blocks(a, b, obstacles: Iterable[Segment], exclude: Optional[int] = None) -> bool:
    """True iff a non-excluded obstacle crosses the open segment (a, b)."""
    if a[0] == b[0] and a[1] == b[1]:
        raise GeometryError("segment_blocks on coincident endpoints")
    for i, seg in enumerate(obstacles):
        if i == exclude:
            continue
        hit = intersect_segments(a, b, seg)
        if hit is None:
            continue
        t, s = hit
        if RAY_EPS < t < 1.0 - RAY_EPS and 0.0 <= s <= 1.0:
            return True
    return False


def segments_to_array(segments: Sequence[Segment]) -> np.ndarray:
    if not segments:
        return np.zeros((0, 2, 2))
    return np.array([[s.a, s.b] for s in segments], dtype=float)


def point_segment_distances(points: np.ndarray, seg_array: np.ndarray) -> np.ndarray:
    """Distance from every point (N, 2) to every segment (M, 2, 2): (N, M)."""
    p = np.asarray(points, dtype=float)[:, None, :]
    a = seg_array[None, :, 0, :]
    e = seg_array[None, :, 1, :] - a
    t = np.clip(np.sum((p - a) * e, axis=-1) / np.sum(e * e, axis=-1), 0.0, 1.0)
    foot = a + t[..., None] * e
    return np.linalg.norm(p - foot, axis=-1)
