"""Exact cubic-Bezier and triangle math.

Everything in this module is a pure function over immutable values:
curve evaluation and splitting, curve/segment intersection via a guarded
closed-form cubic solver, Delaunay triangulation, affine solves between
triangle pairs, and cubic-arc circle construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial import Delaunay as _SciPyDelaunay
from scipy.spatial import QhullError

__all__ = [
    "Point",
    "CubicBezier",
    "ClosedPath",
    "AffineTransform",
    "Triangulation",
    "eval_cubic",
    "split_matrices",
    "split_cubic",
    "curve_segment_intersections",
    "affine_from_triangles",
    "delaunay",
    "locate_point",
    "circle_path",
    "solve_cubic",
    "path_nodes",
    "path_from_nodes",
]

# Intersection parameters closer than this to 0/1 are dropped: splitting
# there would create a degenerate piece.
ENDPOINT_EPS = 1e-9

# Triangles with smaller (absolute) signed area are treated as degenerate.
DEGENERATE_AREA = 1e-12


class Point(NamedTuple):
    """A 2-D point in pixel coordinates."""

    x: float
    y: float


def _as_point(p) -> Point:
    q = Point(float(p[0]), float(p[1]))
    if not (math.isfinite(q.x) and math.isfinite(q.y)):
        raise ValueError(f"non-finite point {q}")
    return q


@dataclass(frozen=True)
class CubicBezier:
    """One cubic Bezier segment with control points c0..c3."""

    c0: Point
    c1: Point
    c2: Point
    c3: Point

    def __post_init__(self):
        object.__setattr__(self, "c0", _as_point(self.c0))
        object.__setattr__(self, "c1", _as_point(self.c1))
        object.__setattr__(self, "c2", _as_point(self.c2))
        object.__setattr__(self, "c3", _as_point(self.c3))

    @classmethod
    def from_array(cls, a) -> "CubicBezier":
        a = np.asarray(a, dtype=float)
        if a.shape != (4, 2):
            raise ValueError(f"expected (4, 2) control array, got {a.shape}")
        return cls(Point(*a[0]), Point(*a[1]), Point(*a[2]), Point(*a[3]))

    def as_array(self) -> np.ndarray:
        return np.array([self.c0, self.c1, self.c2, self.c3], dtype=float)


class ClosedPath:
    """A closed loop of cubic Bezier segments with one RGBA fill.

    Control points are stored as a float array of shape (n_segments, 4, 2);
    consecutive segments must share endpoints (within 1e-9 at construction)
    and the last segment must return to the first.
    """

    __slots__ = ("controls", "fill")

    def __init__(self, controls, fill):
        controls = np.ascontiguousarray(controls, dtype=float)
        if controls.ndim != 3 or controls.shape[0] < 1 or controls.shape[1:] != (4, 2):
            raise ValueError(f"expected (L, 4, 2) controls, got {controls.shape}")
        if not np.all(np.isfinite(controls)):
            raise ValueError("non-finite control point")
        gap = controls[:, 3] - np.roll(controls[:, 0], -1, axis=0)
        worst = float(np.abs(gap).max())
        if worst > 1e-9:
            raise ValueError(f"path is not closed: max endpoint gap {worst:g}")
        fill = np.asarray(fill, dtype=float)
        if fill.shape != (4,):
            raise ValueError("fill must be RGBA")
        if not np.all(np.isfinite(fill)) or fill.min() < 0.0 or fill.max() > 1.0:
            raise ValueError(f"fill channels must be in [0, 1], got {fill}")
        self.controls = controls
        self.fill = fill

    @classmethod
    def from_segments(cls, segments, fill) -> "ClosedPath":
        if len(segments) < 1:
            raise ValueError("need at least one segment")
        controls = np.stack([s.as_array() for s in segments])
        return cls(controls, fill)

    @property
    def segments(self) -> list[CubicBezier]:
        return [CubicBezier.from_array(c) for c in self.controls]

    @property
    def n_segments(self) -> int:
        return self.controls.shape[0]

    def copy(self) -> "ClosedPath":
        return ClosedPath(self.controls.copy(), self.fill.copy())


@dataclass(frozen=True)
class AffineTransform:
    """Planar affine map (x, y) -> (a*x + b*y + tx, c*x + d*y + ty)."""

    a: float
    b: float
    tx: float
    c: float
    d: float
    ty: float

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(1.0, 0.0, 0.0, 0.0, 1.0, 0.0)

    def apply(self, points):
        """Transform an (..., 2) array of points."""
        p = np.asarray(points, dtype=float)
        x = self.a * p[..., 0] + self.b * p[..., 1] + self.tx
        y = self.c * p[..., 0] + self.d * p[..., 1] + self.ty
        return np.stack([x, y], axis=-1)

    def apply_point(self, p: Point) -> Point:
        return Point(self.a * p[0] + self.b * p[1] + self.tx,
                     self.c * p[0] + self.d * p[1] + self.ty)


@dataclass(frozen=True)
class Triangulation:
    """Vertices plus index triples; vertex order is the caller's labelling."""

    vertices: np.ndarray  # (N, 2) float
    triangles: np.ndarray  # (M, 3) int

    def triangle_points(self, i: int) -> np.ndarray:
        return self.vertices[self.triangles[i]]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def edges(self) -> np.ndarray:
        """Unique undirected edges as an (E, 2) index array."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0)


def _bernstein_weights(t):
    t = np.asarray(t, dtype=float)
    u = 1.0 - t
    return np.stack([u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t], axis=-1)


def eval_cubic(curve: CubicBezier, t: float) -> Point:
    """Point on the curve at parameter t in [0, 1] (Bernstein form)."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    w = _bernstein_weights(t)
    p = w @ curve.as_array()
    return Point(float(p[0]), float(p[1]))


def split_matrices(t: float) -> tuple[np.ndarray, np.ndarray]:
    """The two 4x4 matrices mapping a cubic's control points to the
    control points of its left and right pieces when cut at t.

    Rows of each matrix sum to 1, so the split commutes with affine maps.
    """
    u = 1.0 - t
    m0 = np.array([
        [1.0, 0.0, 0.0, 0.0],
        [u, t, 0.0, 0.0],
        [u * u, 2.0 * t * u, t * t, 0.0],
        [u * u * u, 3.0 * t * u * u, 3.0 * t * t * u, t * t * t],
    ])
    m1 = np.array([
        [u * u * u, 3.0 * t * u * u, 3.0 * t * t * u, t * t * t],
        [0.0, u * u, 2.0 * t * u, t * t],
        [0.0, 0.0, u, t],
        [0.0, 0.0, 0.0, 1.0],
    ])
    return m0, m1


def split_cubic(curve: CubicBezier, t: float) -> tuple[CubicBezier, CubicBezier]:
    """Cut a cubic at interior parameter t into two cubics tracing the
    same locus; left ends exactly where right begins."""
    if not 0.0 < t < 1.0:
        raise ValueError(f"split parameter t={t} must be strictly inside (0, 1)")
    m0, m1 = split_matrices(t)
    ctrl = curve.as_array()
    left = m0 @ ctrl
    right = m1 @ ctrl
    right[0] = left[3]  # shared point, bit-identical
    return CubicBezier.from_array(left), CubicBezier.from_array(right)


def solve_cubic(c3: float, c2: float, c1: float, c0: float) -> list[float]:
    """Real roots of c3*t^3 + c2*t^2 + c1*t + c0 = 0.

    Closed form (Cardano, trigonometric branch for three real roots) with
    degree fallbacks for vanishing leading coefficients, each root polished
    by two Newton steps.
    """
    scale = max(abs(c3), abs(c2), abs(c1), abs(c0))
    if scale == 0.0:
        return []
    eps = 1e-12 * scale
    if abs(c3) <= eps:
        if abs(c2) <= eps:
            if abs(c1) <= eps:
                return []
            return [-c0 / c1]
        disc = c1 * c1 - 4.0 * c2 * c0
        if disc < 0.0:
            return []
        sq = math.sqrt(disc)
        q = -0.5 * (c1 + math.copysign(sq, c1))
        roots = [q / c2]
        if q != 0.0:
            roots.append(c0 / q)
        elif disc == 0.0:
            pass
        else:
            roots.append(-c1 / c2 - roots[0])
        return roots

    def cbrt(x: float) -> float:
        return math.copysign(abs(x) ** (1.0 / 3.0), x)

    a = c2 / c3
    b = c1 / c3
    c = c0 / c3
    p = b - a * a / 3.0
    q = 2.0 * a ** 3 / 27.0 - a * b / 3.0 + c
    shift = a / 3.0
    disc = 0.25 * q * q + p ** 3 / 27.0
    if disc > 0.0:
        sq = math.sqrt(disc)
        u = cbrt(-0.5 * q + sq)
        v = cbrt(-0.5 * q - sq)
        roots = [u + v - shift]
    elif p == 0.0:  # triple root (disc == 0 forces q == 0 here)
        roots = [-shift]
    elif disc == 0.0:
        u = cbrt(-0.5 * q)
        roots = [2.0 * u - shift, -u - shift]
    else:
        m = 2.0 * math.sqrt(-p / 3.0)
        arg = 3.0 * q / (p * m)
        theta = math.acos(min(1.0, max(-1.0, arg))) / 3.0
        roots = [m * math.cos(theta - 2.0 * math.pi * k / 3.0) - shift for k in range(3)]

    def polish(t: float) -> float:
        for _ in range(2):
            f = ((c3 * t + c2) * t + c1) * t + c0
            df = (3.0 * c3 * t + 2.0 * c2) * t + c1
            if df == 0.0:
                break
            t -= f / df
        return t

    return [polish(t) for t in roots]


def curve_segment_intersections(curve: CubicBezier, seg_a, seg_b) -> list[float]:
    """Parameters t in (0, 1) where the curve meets the closed segment
    [seg_a, seg_b], sorted and deduplicated within 1e-9.

    The intersection reduces to the real roots of one cubic; roots are then
    filtered to the segment's span. Endpoint parameters (within 1e-9 of 0
    or 1) are excluded.
    """
    a = _as_point(seg_a)
    b = _as_point(seg_b)
    dx = b.x - a.x
    dy = b.y - a.y
    seg_len2 = dx * dx + dy * dy
    if seg_len2 == 0.0:
        raise ValueError("degenerate segment (seg_a == seg_b)")

    ctrl = curve.as_array()
    # Power-basis coefficients of the curve.
    p0 = ctrl[0]
    p1 = 3.0 * (ctrl[1] - ctrl[0])
    p2 = 3.0 * (ctrl[0] - 2.0 * ctrl[1] + ctrl[2])
    p3 = -ctrl[0] + 3.0 * ctrl[1] - 3.0 * ctrl[2] + ctrl[3]
    # Signed line function f(p) = cross(b - a, p - a), zero on the line.
    def line_of(v):
        return dx * v[1] - dy * v[0]

    c0 = line_of(p0 - np.array([a.x, a.y]))
    c1 = line_of(p1)
    c2 = line_of(p2)
    c3 = line_of(p3)

    out = []
    for t in solve_cubic(c3, c2, c1, c0):
        if not (ENDPOINT_EPS < t < 1.0 - ENDPOINT_EPS):
            continue
        w = _bernstein_weights(t)
        p = w @ ctrl
        s = ((p[0] - a.x) * dx + (p[1] - a.y) * dy) / seg_len2
        if -1e-9 <= s <= 1.0 + 1e-9:
            out.append(float(t))
    out.sort()
    dedup: list[float] = []
    for t in out:
        if not dedup or t - dedup[-1] > 1e-9:
            dedup.append(t)
    return dedup


def affine_from_triangles(src, dst) -> AffineTransform:
    """The unique affine map sending each of three source vertices to its
    destination vertex (six linear equations)."""
    s = np.asarray(src, dtype=float).reshape(3, 2)
    d = np.asarray(dst, dtype=float).reshape(3, 2)
    area2 = (s[1, 0] - s[0, 0]) * (s[2, 1] - s[0, 1]) - (s[2, 0] - s[0, 0]) * (s[1, 1] - s[0, 1])
    if abs(area2) / 2.0 <= DEGENERATE_AREA:
        raise ValueError(f"source triangle is degenerate (area {abs(area2) / 2.0:g})")
    m = np.column_stack([s, np.ones(3)])
    sol = np.linalg.solve(m, d)  # columns: image of x-row / y-row
    return AffineTransform(a=sol[0, 0], b=sol[1, 0], tx=sol[2, 0],
                           c=sol[0, 1], d=sol[1, 1], ty=sol[2, 1])


def delaunay(points) -> Triangulation:
    """Delaunay triangulation of the given points, keeping the caller's
    vertex order. Requires at least 3 non-collinear points."""
    pts = np.asarray([_as_point(p) for p in points], dtype=float)
    if pts.shape[0] < 3:
        raise ValueError(f"need at least 3 points, got {pts.shape[0]}")
    try:
        tri = _SciPyDelaunay(pts)
    except QhullError as e:
        raise ValueError(f"degenerate point set (collinear?): {e}") from e
    simplices = np.array(sorted(map(tuple, np.sort(tri.simplices, axis=1))), dtype=int)
    if simplices.shape[0] == 0:
        raise ValueError("degenerate point set: no triangles")
    v = pts[simplices]
    area = 0.5 * np.abs(
        (v[:, 1, 0] - v[:, 0, 0]) * (v[:, 2, 1] - v[:, 0, 1])
        - (v[:, 2, 0] - v[:, 0, 0]) * (v[:, 1, 1] - v[:, 0, 1])
    )
    simplices = simplices[area > DEGENERATE_AREA]
    if simplices.shape[0] == 0:
        raise ValueError("degenerate point set: all triangles have zero area")
    return Triangulation(vertices=pts, triangles=simplices)


def barycentric(tri: Triangulation, p) -> np.ndarray:
    """Barycentric coordinates of p w.r.t. every triangle, shape (M, 3)."""
    p = np.asarray(p, dtype=float)
    v = tri.vertices[tri.triangles]  # (M, 3, 2)
    d = v[:, :2] - v[:, 2:3]  # edge vectors from vertex 2
    det = d[:, 0, 0] * d[:, 1, 1] - d[:, 1, 0] * d[:, 0, 1]
    r = p - v[:, 2]
    l0 = (r[:, 0] * d[:, 1, 1] - r[:, 1] * d[:, 1, 0]) / det
    l1 = (r[:, 1] * d[:, 0, 0] - r[:, 0] * d[:, 0, 1]) / det
    return np.stack([l0, l1, 1.0 - l0 - l1], axis=1)


def locate_point(tri: Triangulation, p) -> int | None:
    """Index of a triangle containing p, or None when p is outside the hull.

    Points on shared edges resolve to the lowest containing index.
    """
    lam = barycentric(tri, _as_point(p))
    inside = np.all(lam >= -1e-9, axis=1)
    idx = np.flatnonzero(inside)
    return int(idx[0]) if idx.size else None


def path_nodes(path: ClosedPath) -> np.ndarray:
    """Free-variable view of a closed path: (3L, 2) array of
    [anchor, out-handle, in-handle-of-next-anchor, anchor, ...] with each
    shared endpoint stored once, so closure holds by construction."""
    c = path.controls
    nodes = np.empty((3 * c.shape[0], 2))
    nodes[0::3] = c[:, 0]
    nodes[1::3] = c[:, 1]
    nodes[2::3] = c[:, 2]
    return nodes


def path_from_nodes(nodes: np.ndarray, fill) -> ClosedPath:
    """Inverse of path_nodes; the rebuilt path is exactly closed."""
    nodes = np.asarray(nodes, dtype=float)
    if nodes.ndim != 2 or nodes.shape[0] % 3 or nodes.shape[0] < 3:
        raise ValueError(f"expected (3L, 2) node array, got {nodes.shape}")
    anchors = nodes[0::3]
    controls = np.stack(
        [anchors, nodes[1::3], nodes[2::3], np.roll(anchors, -1, axis=0)], axis=1
    )
    return ClosedPath(controls, fill)


def circle_path(center, r: float, n_segments: int = 8, fill=(0, 0, 0, 1)) -> ClosedPath:
    """Closed path of n cubic arcs approximating a circle.

    Tangent handles have length (4/3)*tan(pi/(2n))*r, which keeps the
    radial deviation under 1e-4*r for n = 8.
    """
    if r <= 0.0:
        raise ValueError(f"radius must be positive, got {r}")
    if n_segments < 4:
        raise ValueError(f"need at least 4 segments, got {n_segments}")
    cx, cy = _as_point(center)
    ang = 2.0 * math.pi * np.arange(n_segments + 1) / n_segments
    px = cx + r * np.cos(ang)
    py = cy + r * np.sin(ang)
    # Unit tangents (counterclockwise) scaled by the handle length.
    k = (4.0 / 3.0) * math.tan(math.pi / (2.0 * n_segments)) * r
    tx = -np.sin(ang) * k
    ty = np.cos(ang) * k
    controls = np.empty((n_segments, 4, 2))
    controls[:, 0, 0] = px[:-1]
    controls[:, 0, 1] = py[:-1]
    controls[:, 1, 0] = px[:-1] + tx[:-1]
    controls[:, 1, 1] = py[:-1] + ty[:-1]
    controls[:, 2, 0] = px[1:] - tx[1:]
    controls[:, 2, 1] = py[1:] - ty[1:]
    controls[:, 3, 0] = px[1:]
    controls[:, 3, 1] = py[1:]
    # Re-weld the wrap-around exactly (cos/sin of 2*pi vs 0 differ in ulps).
    controls[-1, 3] = controls[0, 0]
    return ClosedPath(controls, np.asarray(fill, dtype=float))
