"""Independent brute-force oracles shared by the unit and acceptance tests.

Everything here deliberately avoids the library's own solution paths:
intersections come from sign-change bisection on a dense parameter grid,
metrics from per-pixel Python loops, coverage from a 64x64 subsample count.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from shapely.geometry import Polygon, box


def bezier_points(ctrl: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Bernstein evaluation of a (4, 2) control array at many parameters."""
    t = np.asarray(t, dtype=float)
    u = 1.0 - t
    w = np.stack([u ** 3, 3 * u * u * t, 3 * u * t * t, t ** 3], axis=-1)
    return w @ ctrl


def segment_intersections_oracle(ctrl: np.ndarray, a, b, n: int = 100_000) -> list[float]:
    """Transversal curve/segment intersection parameters found by scanning
    the signed line function on a dense grid and refining each sign change
    with bisection. Endpoint parameters (within 1e-9 of 0/1) are dropped,
    mirroring the library contract."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    d = b - a

    def line_f(t):
        p = bezier_points(ctrl, t)
        return d[0] * (p[..., 1] - a[1]) - d[1] * (p[..., 0] - a[0])

    def span_s(t):
        p = bezier_points(ctrl, t)
        return ((p[..., 0] - a[0]) * d[0] + (p[..., 1] - a[1]) * d[1]) / (d @ d)

    ts = np.linspace(0.0, 1.0, n + 1)
    f = line_f(ts)
    roots = []
    sign_change = np.nonzero((f[:-1] < 0) != (f[1:] < 0))[0]
    for i in sign_change:
        lo, hi = ts[i], ts[i + 1]
        flo = f[i]
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            fm = line_f(np.array(mid))
            if (fm < 0) == (flo < 0):
                lo, flo = mid, fm
            else:
                hi = mid
        root = 0.5 * (lo + hi)
        if 1e-9 < root < 1.0 - 1e-9 and -1e-9 <= span_s(np.array(root)) <= 1.0 + 1e-9:
            roots.append(float(root))
    exact_zeros = np.nonzero(f == 0.0)[0]
    for i in exact_zeros:
        root = float(ts[i])
        if 1e-9 < root < 1.0 - 1e-9 and -1e-9 <= span_s(np.array(root)) <= 1.0 + 1e-9:
            roots.append(root)
    roots.sort()
    dedup: list[float] = []
    for r in roots:
        if not dedup or r - dedup[-1] > 1e-7:
            dedup.append(r)
    return dedup


def dist_point_to_segment(p, a, b) -> float:
    p = np.asarray(p, float)
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    d = b - a
    s = float(np.clip(((p - a) @ d) / (d @ d), 0.0, 1.0))
    return float(np.hypot(*(p - (a + s * d))))


def mse_loop(a: np.ndarray, b: np.ndarray) -> float:
    """Naive per-pixel mean squared difference over RGB."""
    h, w = a.shape[:2]
    acc = 0.0
    for y in range(h):
        for x in range(w):
            for c in range(3):
                acc += (a[y, x, c] - b[y, x, c]) ** 2
    return acc / (h * w * 3)


def ssim_loop(a: np.ndarray, b: np.ndarray) -> float:
    """Naive windowed SSIM on luma: explicit loops over window positions."""
    luma = np.array([0.299, 0.587, 0.114])
    x = a[:, :, :3] @ luma
    y = b[:, :, :3] @ luma
    r = np.arange(11) - 5.0
    g = np.exp(-(r * r) / (2 * 1.5 ** 2))
    g /= g.sum()
    win = np.outer(g, g)
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    h, w = x.shape
    vals = []
    for i in range(h - 10):
        for j in range(w - 10):
            wx = x[i:i + 11, j:j + 11]
            wy = y[i:i + 11, j:j + 11]
            mx = float((win * wx).sum())
            my = float((win * wy).sum())
            vx = float((win * wx * wx).sum()) - mx * mx
            vy = float((win * wy * wy).sum()) - my * my
            vxy = float((win * wx * wy).sum()) - mx * my
            vals.append(((2 * mx * my + c1) * (2 * vxy + c2))
                        / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def circumcircle(p0, p1, p2):
    """Center and radius of the circle through three points."""
    ax, ay = p0
    bx, by = p1
    cx, cy = p2
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    ux = ((ax * ax + ay * ay) * (by - cy) + (bx * bx + by * by) * (cy - ay)
          + (cx * cx + cy * cy) * (ay - by)) / d
    uy = ((ax * ax + ay * ay) * (cx - bx) + (bx * bx + by * by) * (ax - cx)
          + (cx * cx + cy * cy) * (bx - ax)) / d
    r = math.hypot(ax - ux, ay - uy)
    return (ux, uy), r


def exact_scene_loss(polys: list[Polygon], fills, background, target: np.ndarray,
                     pixels) -> float:
    """MSE of the exact-coverage composite over the given pixels.

    Within each pixel the plane is partitioned into the regions of the path
    arrangement (inclusion-exclusion over polygon intersections) and each
    region contributes its over-composited color weighted by exact area.
    This is the continuous limit that subsample rendering approximates.
    """
    n = len(polys)
    bg = np.asarray(background, dtype=float)
    subsets = [s for r in range(1, n + 1) for s in itertools.combinations(range(n), r)]
    total = 0.0
    for px, py in pixels:
        cell = box(px, py, px + 1, py + 1)
        areas = {}
        for s in subsets:
            g = cell
            for i in s:
                g = g.intersection(polys[i])
                if g.is_empty:
                    break
            areas[s] = 0.0 if g.is_empty else g.area
        val = np.zeros(3)
        covered = 0.0
        for s in subsets:
            exact = sum((-1) ** (len(t) - len(s)) * areas[t]
                        for t in subsets if set(t) >= set(s))
            if abs(exact) > 1e-14:
                c = bg.copy()
                for i in range(n):
                    if i in s:
                        a = fills[i][3]
                        c = c * (1 - a) + np.asarray(fills[i][:3]) * a
                val += exact * c
                covered += exact
        val += max(0.0, 1.0 - covered) * bg
        d = val - target[py, px, :3]
        total += float(d @ d)
    return total


def exact_point_fd(paths, k, nudge, width, height, background, target,
                   h: float = 1e-3) -> float:
    """Central finite difference of the exact-coverage loss when one free
    control parameter of path k moves by +-h (nudge applies the move).

    Only pixels near the moved path's outline are evaluated; everything
    else cancels in the central difference. The returned value is
    normalized like the library's plain MSE (mean over W*H*3)."""
    from portraitvec.diffrast import flatten_path

    fills = [p.fill for p in paths]
    base_poly = Polygon(flatten_path(paths[k].controls, tol=2e-4))
    band = base_poly.exterior.buffer(2.0 * max(h, 0.5))
    minx, miny, maxx, maxy = band.bounds
    pixels = []
    for py in range(max(0, int(miny) - 1), min(height, int(maxy) + 2)):
        for px in range(max(0, int(minx) - 1), min(width, int(maxx) + 2)):
            if band.intersects(box(px, py, px + 1, py + 1)):
                pixels.append((px, py))
    norm = width * height * 3

    def loss_at(delta: float) -> float:
        polys = []
        for i, p in enumerate(paths):
            ctrl = nudge(p.controls, delta) if i == k else p.controls
            polys.append(Polygon(flatten_path(ctrl, tol=2e-4)).buffer(0))
        return exact_scene_loss(polys, fills, background, target, pixels) / norm

    return (loss_at(+h) - loss_at(-h)) / (2.0 * h)


def coverage_oracle(poly: np.ndarray, width: int, height: int, n: int = 64) -> np.ndarray:
    """Per-pixel coverage from an n x n grid of point-in-polygon tests
    (nonzero winding), independent of the library's scanline fill."""
    cov = np.zeros((height, width))
    offs = (np.arange(n) + 0.5) / n
    ax = poly[:, 0]
    ay = poly[:, 1]
    bx = np.roll(ax, -1)
    by = np.roll(ay, -1)
    for py in range(height):
        ys = py + offs
        for px in range(width):
            xs = px + offs
            total = 0
            for yy in ys:
                asc = (ay <= yy) & (yy < by)
                desc = (by <= yy) & (yy < ay)
                cross = asc | desc
                if not cross.any():
                    continue
                dy = np.where(by == ay, 1.0, by - ay)
                xc = ax + (yy - ay) * (bx - ax) / dy
                for xx in xs:
                    wind = np.sum(np.where(cross & (xc <= xx),
                                           np.where(by > ay, 1, -1), 0))
                    total += wind != 0
            cov[py, px] = total / (n * n)
    return cov
