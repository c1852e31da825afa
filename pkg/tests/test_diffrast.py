from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from portraitvec.diffrast import (
    GradientSet,
    RenderConfig,
    flatten_path,
    polygon_area,
    render,
    render_with_grad,
)
from portraitvec.geometry import ClosedPath, circle_path
from portraitvec.raster import Mask, RasterImage

from helpers import bezier_points, coverage_oracle


def rectangle_path(x0, y0, x1, y1, fill) -> ClosedPath:
    corners = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)
    controls = np.empty((4, 4, 2))
    for k in range(4):
        a = corners[k]
        b = corners[(k + 1) % 4]
        controls[k, 0] = a
        controls[k, 1] = a + (b - a) / 3.0
        controls[k, 2] = a + 2.0 * (b - a) / 3.0
        controls[k, 3] = b
    return ClosedPath(controls, fill)


def blob_path(rng, center, radius, fill) -> ClosedPath:
    """A wobbly but simple closed loop: a circle with jittered handles."""
    path = circle_path(center, radius, 8, fill)
    controls = path.controls.copy()
    jitter = rng.uniform(-0.2, 0.2, size=(8, 2)) * radius
    for k in range(8):
        controls[k, 0] += jitter[k]
        controls[k - 1, 3] += jitter[k]
        controls[k, 1] += jitter[k] * 0.5
        controls[k - 1, 2] += jitter[k] * 0.5
    return ClosedPath(controls, fill)


def random_scene(rng, size=16, n_paths=3):
    paths = []
    for _ in range(n_paths):
        center = rng.uniform(3, size - 3, 2)
        radius = rng.uniform(2.5, 5.0)
        fill = np.append(rng.uniform(0.1, 0.9, 3), rng.uniform(0.6, 1.0))
        paths.append(blob_path(rng, center, radius, fill))
    return paths


class TestRender:
    def test_empty_scene_is_background(self):
        cfg = RenderConfig(8, 6, background=(0.2, 0.4, 0.6))
        img = render([], cfg)
        np.testing.assert_allclose(img.data, np.tile([0.2, 0.4, 0.6], (6, 8, 1)))

    def test_full_cover_opaque(self):
        cfg = RenderConfig(8, 8, background=(1, 1, 1))
        path = rectangle_path(-2, -2, 10, 10, (0.3, 0.5, 0.7, 1.0))
        img = render([path], cfg)
        np.testing.assert_allclose(img.data, np.tile([0.3, 0.5, 0.7], (8, 8, 1)), atol=1e-12)

    @pytest.mark.parametrize("aa", [1, 2, 4])
    def test_half_covered_pixel(self, aa):
        cfg = RenderConfig(4, 4, background=(1, 1, 1), aa_samples=aa)
        # Square covering the left half of pixel column 1.
        path = rectangle_path(0, 0, 1.5, 4, (0, 0, 0, 1))
        img = render([path], cfg)
        expect = 0.5 * 0.0 + 0.5 * 1.0
        assert abs(img.data[2, 1, 0] - expect) <= 0.51 / aa ** 2

    def test_against_supersampling_oracle_axis_aligned(self):
        cfg = RenderConfig(6, 6, background=(1, 1, 1), aa_samples=4)
        path = rectangle_path(1.3, 0.7, 4.9, 5.2, (0, 0, 0, 1))
        img = render([path], cfg)
        cov = coverage_oracle(flatten_path(path.controls), 6, 6, n=64)
        diff = np.abs((1.0 - img.data[:, :, 0]) - cov)
        # Binary samples quantize an edge pixel's coverage to 1/aa steps;
        # on a 6x6 canvas over half the pixels are edge pixels.
        assert diff.max() <= 0.5 / cfg.aa_samples + 1e-9
        assert diff.mean() < 0.04
        interior = cov == 1.0
        assert np.all(diff[interior] < 1e-12)

    def test_against_supersampling_oracle_curved(self):
        rng = np.random.default_rng(0)
        path = blob_path(rng, (8, 8), 5.0, (0, 0, 0, 1))
        cfg = RenderConfig(16, 16, background=(1, 1, 1), aa_samples=8)
        img = render([path], cfg)
        cov = coverage_oracle(flatten_path(path.controls), 16, 16, n=64)
        diff = np.abs((1.0 - img.data[:, :, 0]) - cov)
        assert diff.max() < 0.1
        assert diff.mean() < 0.01

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        paths = random_scene(rng)
        cfg = RenderConfig(16, 16)
        a = render(paths, cfg)
        b = render(paths, cfg)
        np.testing.assert_array_equal(a.data, b.data)

    def test_opaque_top_path_hides_lower_colors(self):
        rng = np.random.default_rng(2)
        cfg = RenderConfig(12, 12)
        top = rectangle_path(-1, -1, 13, 13, (0.1, 0.2, 0.3, 1.0))
        for _ in range(5):
            below = random_scene(rng, size=12, n_paths=2)
            img = render(below + [top], cfg)
            np.testing.assert_allclose(img.data, np.tile([0.1, 0.2, 0.3], (12, 12, 1)),
                                       atol=1e-12)

    def test_pixel_values_stay_in_range(self):
        rng = np.random.default_rng(3)
        paths = random_scene(rng, n_paths=4)
        img = render(paths, RenderConfig(16, 16))
        assert img.data.min() >= 0.0
        assert img.data.max() <= 1.0

    def test_semitransparent_over_background(self):
        cfg = RenderConfig(4, 4, background=(1.0, 1.0, 1.0))
        path = rectangle_path(-1, -1, 5, 5, (0.0, 0.0, 0.0, 0.25))
        img = render([path], cfg)
        np.testing.assert_allclose(img.data, 0.75, atol=1e-12)


class TestFlatten:
    def test_flatness_bound(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            path = blob_path(rng, (10, 10), rng.uniform(2, 8), (0, 0, 0, 1))
            poly = flatten_path(path.controls, tol=0.1)
            # Every polygon vertex must lie on the curve; check chords stay
            # within tol of densely sampled curve points.
            dense = np.concatenate([
                bezier_points(c, np.linspace(0, 1, 200)) for c in path.controls
            ])
            a = poly
            b = np.roll(poly, -1, axis=0)
            d = b - a
            len2 = np.maximum((d * d).sum(1), 1e-12)
            for p in dense[::7]:
                s = np.clip(((p - a) * d).sum(1) / len2, 0, 1)
                proj = a + s[:, None] * d
                assert np.hypot(*(p - proj).T).min() < 0.1 + 1e-9

    def test_polygon_area_of_square(self):
        path = rectangle_path(1, 1, 4, 3, (0, 0, 0, 1))
        assert polygon_area(flatten_path(path.controls)) == pytest.approx(6.0, abs=1e-9)


class TestRenderWithGrad:
    def test_image_matches_render(self):
        rng = np.random.default_rng(5)
        paths = random_scene(rng)
        cfg = RenderConfig(16, 16)
        target = RasterImage(rng.uniform(0, 1, (16, 16, 3)))
        img_a = render(paths, cfg)
        img_b, _, _ = render_with_grad(paths, cfg, target)
        np.testing.assert_array_equal(img_a.data, img_b.data)

    def test_perfect_fit_has_zero_loss_and_gradients(self):
        rng = np.random.default_rng(6)
        paths = random_scene(rng)
        cfg = RenderConfig(16, 16)
        target = render(paths, cfg)
        _, loss, grads = render_with_grad(paths, cfg, target)
        assert loss == 0.0
        for g in grads.colors:
            np.testing.assert_allclose(g, 0.0, atol=1e-6)
        for g in grads.points:
            np.testing.assert_allclose(g, 0.0, atol=1e-6)

    def test_dimension_mismatch_rejected(self):
        cfg = RenderConfig(16, 16)
        target = RasterImage(np.zeros((8, 8, 3)))
        with pytest.raises(ValueError):
            render_with_grad([], cfg, target)
        with pytest.raises(ValueError):
            render_with_grad([], cfg, RasterImage(np.zeros((16, 16, 3))),
                             Mask(np.zeros((8, 8))))

    def test_zero_mask_zero_loss(self):
        rng = np.random.default_rng(7)
        paths = random_scene(rng)
        cfg = RenderConfig(16, 16)
        target = RasterImage(rng.uniform(0, 1, (16, 16, 3)))
        _, loss, grads = render_with_grad(paths, cfg, target, Mask(np.zeros((16, 16))))
        assert loss == 0.0
        for g in grads.colors + grads.points:
            np.testing.assert_array_equal(g, 0.0)

    def test_single_path_color_gradient_matches_fd(self):
        rng = np.random.default_rng(8)
        path = blob_path(rng, (8, 8), 4.0, (0.4, 0.5, 0.6, 0.8))
        cfg = RenderConfig(16, 16, aa_samples=4)
        target = RasterImage(rng.uniform(0, 1, (16, 16, 3)))
        _, _, grads = render_with_grad([path], cfg, target)
        h = 1e-3
        for ch in range(4):
            for sign, store in ((1, []), ):
                pass
            fill_hi = path.fill.copy()
            fill_hi[ch] += h
            fill_lo = path.fill.copy()
            fill_lo[ch] -= h
            _, lo_loss, _ = render_with_grad([ClosedPath(path.controls, fill_lo)], cfg, target)
            _, hi_loss, _ = render_with_grad([ClosedPath(path.controls, fill_hi)], cfg, target)
            fd = (hi_loss - lo_loss) / (2 * h)
            assert grads.colors[0][ch] == pytest.approx(fd, rel=1e-4, abs=1e-12)

    def test_multi_path_color_gradients_match_fd(self):
        rng = np.random.default_rng(9)
        paths = random_scene(rng, n_paths=3)
        cfg = RenderConfig(16, 16, aa_samples=2)
        target = RasterImage(rng.uniform(0, 1, (16, 16, 3)))
        _, _, grads = render_with_grad(paths, cfg, target)
        h = 1e-3
        for k in range(3):
            for ch in range(4):
                hi = [p.copy() for p in paths]
                hi[k].fill[ch] += h
                lo = [p.copy() for p in paths]
                lo[k].fill[ch] -= h
                _, hi_loss, _ = render_with_grad(hi, cfg, target)
                _, lo_loss, _ = render_with_grad(lo, cfg, target)
                fd = (hi_loss - lo_loss) / (2 * h)
                assert grads.colors[k][ch] == pytest.approx(fd, rel=1e-4, abs=1e-10)

    def test_single_path_point_gradient_matches_fd(self):
        # The reference is a central finite difference of the exact-coverage
        # loss (shapely arrangement oracle): finite differences of the
        # subsample-quantized loss itself do not converge cleanly near the
        # staircase, while the continuous limit is what the boundary
        # estimator targets.
        from helpers import exact_point_fd

        rng = np.random.default_rng(10)
        path = blob_path(rng, (8, 8), 4.5, (0.2, 0.3, 0.8, 1.0))
        target = RasterImage(rng.uniform(0, 1, (16, 16, 3)))
        checks = [(0, 0, 0), (3, 2, 1), (5, 3, 0), (2, 1, 0), (6, 0, 1)]
        est = np.zeros(len(checks))
        for seed in range(8):
            cfg = RenderConfig(16, 16, aa_samples=8, boundary_samples=256, rng_seed=seed)
            _, _, grads = render_with_grad([path], cfg, target)
            est += np.array([self._anchor_grad(grads.points[0], c) for c in checks]) / 8.0
        fds = np.array([
            exact_point_fd([path], 0, self._node_nudger(seg, pt, coord),
                           16, 16, (1, 1, 1), target.data)
            for seg, pt, coord in checks
        ])
        scale = np.abs(fds).max()
        for e, fd in zip(est, fds):
            assert e == pytest.approx(fd, rel=5e-2, abs=5e-2 * scale)

    @staticmethod
    def _nudge(controls, seg, pt, coord, delta):
        """Move one control point, keeping shared endpoints welded."""
        controls[seg, pt, coord] += delta
        nseg = controls.shape[0]
        if pt == 0:
            controls[(seg - 1) % nseg, 3, coord] += delta
        elif pt == 3:
            controls[(seg + 1) % nseg, 0, coord] += delta

    @classmethod
    def _node_nudger(cls, seg, pt, coord):
        def apply(controls, delta):
            out = controls.copy()
            cls._nudge(out, seg, pt, coord, delta)
            return out
        return apply

    @staticmethod
    def _anchor_grad(grad, check):
        """Gradient of a welded parameter: anchors are stored twice, so the
        two copies' gradients add (handles have a single copy)."""
        seg, pt, coord = check
        nseg = grad.shape[0]
        total = grad[seg, pt, coord]
        if pt == 0:
            total += grad[(seg - 1) % nseg, 3, coord]
        elif pt == 3:
            total += grad[(seg + 1) % nseg, 0, coord]
        return total

    def test_gradient_set_shapes(self):
        rng = np.random.default_rng(11)
        paths = random_scene(rng, n_paths=2)
        cfg = RenderConfig(16, 16)
        target = RasterImage(rng.uniform(0, 1, (16, 16, 3)))
        _, _, grads = render_with_grad(paths, cfg, target)
        assert isinstance(grads, GradientSet)
        assert len(grads.colors) == 2
        for p, gc, gp in zip(paths, grads.colors, grads.points):
            assert gc.shape == (4,)
            assert gp.shape == p.controls.shape
            assert np.all(np.isfinite(gc))
            assert np.all(np.isfinite(gp))

    def test_masked_loss_consistency(self):
        rng = np.random.default_rng(12)
        paths = random_scene(rng)
        cfg = RenderConfig(16, 16)
        target = RasterImage(rng.uniform(0, 1, (16, 16, 3)))
        img, full_loss, _ = render_with_grad(paths, cfg, target)
        _, ones_loss, _ = render_with_grad(paths, cfg, target, Mask(np.ones((16, 16))))
        assert ones_loss == pytest.approx(full_loss, abs=1e-15)
        d = (img.data - target.data) ** 2
        assert full_loss == pytest.approx(float(d.mean()), abs=1e-12)


class TestScaleConsistency:
    def test_double_resolution_downsample_matches(self):
        rng = np.random.default_rng(13)
        paths = random_scene(rng, size=16, n_paths=3)
        polys = [flatten_path(p.controls) for p in paths]
        fills = [p.fill for p in paths]
        from portraitvec.diffrast import render_flattened
        one_x = render_flattened(polys, fills, 16, 16, 4, (1, 1, 1))
        two_x = render_flattened([q * 2.0 for q in polys], fills, 32, 32, 2, (1, 1, 1))
        down = two_x.reshape(16, 2, 16, 2, 3).mean(axis=(1, 3))
        assert np.abs(one_x - down).max() < 1e-12
