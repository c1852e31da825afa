"""Progressive, semantically layered vectorization.

The optimizer fits filled cubic-Bezier paths to a coarse-to-fine stack of
smoothed targets: each level seeds new circle paths where the current
reconstruction error is large, assigns them to the background / local /
foreground layer from the segmentation masks, and runs Adam on a layered
reconstruction loss (per-layer masked terms plus the merged composite,
with the background compared against an inpainted target).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffrast import (
    GradientSet,
    RenderConfig,
    flatten_path,
    polygon_area,
    prepare_paths,
    render,
    render_with_grad,
)
from .geometry import ClosedPath, circle_path, path_from_nodes, path_nodes
from .raster import Mask, RasterImage, mse, psnr
from .smoothing import build_stack

__all__ = [
    "VectorizeConfig",
    "SvgDocument",
    "ErrorMap",
    "AdamState",
    "adam_step",
    "error_map",
    "init_paths",
    "inpaint_background",
    "layered_loss",
    "progressive_vectorize",
]

LAYER_NAMES = ("background", "local", "foreground")

# Paths whose filled area falls below this (px^2) at a level boundary are
# re-seeded at the error-map argmax of their layer's region.
MIN_LIVE_AREA = 0.25


@dataclass(frozen=True)
class VectorizeConfig:
    """Hyperparameters of the progressive loop (defaults: 500 paths over 5
    levels, 8 segments per path, point/color learning rates 1 and 0.01,
    200 iterations per level and 400 on the finest one)."""

    total_paths: int = 500
    n_levels: int = 5
    segments_per_path: int = 8
    lr_point: float = 1.0
    lr_color: float = 0.01
    iters_per_level: int = 200
    iters_final: int = 400
    lambda_max: float = 0.02
    loss_weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    rng_seed: int = 0
    background: tuple[float, float, float] = (1.0, 1.0, 1.0)
    aa_samples: int = 2
    boundary_samples: int = 64

    def __post_init__(self):
        for name in ("total_paths", "n_levels", "segments_per_path",
                     "iters_per_level", "iters_final"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if len(self.loss_weights) != 4:
            raise ValueError("loss_weights must have 4 entries")


@dataclass
class SvgDocument:
    """Ordered layers of closed paths: background below local below
    foreground. Path identifiers are '<layer>-<index>' and stay stable
    because layer order and path order never change after vectorization."""

    width: int
    height: int
    background: list[ClosedPath] = field(default_factory=list)
    local: list[ClosedPath] = field(default_factory=list)
    foreground: list[ClosedPath] = field(default_factory=list)

    def layers(self) -> list[tuple[str, list[ClosedPath]]]:
        return [("background", self.background), ("local", self.local),
                ("foreground", self.foreground)]

    def all_paths(self) -> list[ClosedPath]:
        """Paths in render order (background first)."""
        return self.background + self.local + self.foreground

    @property
    def n_paths(self) -> int:
        return len(self.background) + len(self.local) + len(self.foreground)

    def path_ids(self) -> list[str]:
        return [f"{name}-{i:04d}" for name, paths in self.layers()
                for i in range(len(paths))]

    def copy(self) -> "SvgDocument":
        return SvgDocument(self.width, self.height,
                           [p.copy() for p in self.background],
                           [p.copy() for p in self.local],
                           [p.copy() for p in self.foreground])


@dataclass(frozen=True)
class ErrorMap:
    """Per-pixel channel-summed squared reconstruction error."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.min() < 0.0:
            raise ValueError("error map must be a non-negative (H, W) array")


def error_map(target: RasterImage, rendered: RasterImage) -> ErrorMap:
    d = target.rgb() - rendered.rgb()
    return ErrorMap(np.sum(d * d, axis=2))


def _box_blur5(values: np.ndarray) -> np.ndarray:
    """5x5 box blur with edge replication."""
    padded = np.pad(values, 2, mode="edge")
    csum = np.cumsum(np.cumsum(padded, axis=0), axis=1)
    csum = np.pad(csum, ((1, 0), (1, 0)))
    h, w = values.shape
    return (csum[5:, 5:] - csum[:-5, 5:] - csum[5:, :-5] + csum[:-5, :-5])[:h, :w] / 25.0


def init_paths(error: ErrorMap, count: int, radius: float,
               fill_source: RasterImage, seed: int,
               segments_per_path: int = 8) -> list[ClosedPath]:
    """Seed circle paths at pixels drawn (without replacement) with
    probability proportional to the box-blurred error map; uniform when the
    map is all-zero. Fills start as the source color under the center,
    fully opaque."""
    if count < 0:
        raise ValueError("count must be >= 0")
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    if count == 0:
        return []
    h, w = error.data.shape
    blurred = _box_blur5(error.data).ravel()
    total = blurred.sum()
    if total <= 0.0:
        probs = np.full(blurred.shape, 1.0 / blurred.size)
    else:
        probs = blurred / total
        if np.count_nonzero(probs) < count:
            probs = probs + 1e-12
            probs /= probs.sum()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    flat = rng.choice(blurred.size, size=count, replace=False, p=probs)
    paths = []
    for f in flat:
        py, px = divmod(int(f), w)
        center = (px + 0.5, py + 0.5)
        rgb = np.clip(fill_source.data[py, px, :3], 0.0, 1.0)
        fill = np.append(rgb, 1.0)
        paths.append(circle_path(center, radius, segments_per_path, fill))
    return paths


@dataclass
class AdamState:
    """First/second moment accumulators plus the per-parameter step count."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, params: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(params), v=np.zeros_like(params), step=0)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. Fails fast on non-finite gradients."""
    if params.shape != grads.shape:
        raise ValueError(f"shape mismatch: params {params.shape} vs grads {grads.shape}")
    if not np.all(np.isfinite(grads)):
        raise ValueError("non-finite gradient")
    step = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_params, AdamState(m=m, v=v, step=step)


def inpaint_background(image: RasterImage, fg_mask: Mask,
                       max_iters: int = 2000, tol: float = 1e-6) -> RasterImage:
    """Replace masked pixels (mask >= 0.5) by the harmonic fill: Laplace's
    equation solved with red-black Gauss-Seidel, Dirichlet data from the
    surrounding unmasked pixels and mirrored values at the canvas edge."""
    if (fg_mask.height, fg_mask.width) != (image.height, image.width):
        raise ValueError("mask dimensions do not match the image")
    hole = fg_mask.data >= 0.5
    if not hole.any():
        return image.copy()
    if hole.all():
        raise ValueError("mask covers the whole image: no boundary data to inpaint from")
    data = image.data.copy()
    known_mean = data[~hole].reshape(-1, data.shape[2]).mean(axis=0)
    data[hole] = known_mean
    yy, xx = np.mgrid[0:image.height, 0:image.width]
    parity = (yy + xx) % 2
    masks = [hole & (parity == 0), hole & (parity == 1)]
    for _ in range(max_iters):
        residual = 0.0
        for m in masks:
            padded = np.pad(data, ((1, 1), (1, 1), (0, 0)), mode="edge")
            nb = (padded[:-2, 1:-1] + padded[2:, 1:-1]
                  + padded[1:-1, :-2] + padded[1:-1, 2:]) / 4.0
            delta = nb[m] - data[m]
            data[m] = nb[m]
            if delta.size:
                residual = max(residual, float(np.abs(delta).max()))
        if residual < tol:
            break
    return RasterImage(data)


def _fold_point_grads(grad: np.ndarray) -> np.ndarray:
    """Per-segment control gradients (L, 4, 2) folded onto the free node
    parameters (3L, 2); the two stored copies of each anchor add up."""
    nodes = np.empty((3 * grad.shape[0], 2))
    nodes[0::3] = grad[:, 0] + np.roll(grad[:, 3], 1, axis=0)
    nodes[1::3] = grad[:, 1]
    nodes[2::3] = grad[:, 2]
    return nodes


def _plain_loss(img: RasterImage, target: RasterImage, mask: Mask | None) -> float:
    d = img.rgb() - target.rgb()
    if mask is None:
        return float((d * d).mean())
    msum = float(mask.data.sum())
    if msum == 0.0:
        return 0.0
    return float((mask.data[:, :, None] * d * d).sum() / (msum * 3))


def layered_loss(doc: SvgDocument, target: RasterImage, m_fore: Mask, m_local: Mask,
                 weights=(1.0, 1.0, 1.0, 1.0), render_cfg: RenderConfig | None = None,
                 inpainted: RasterImage | None = None) -> tuple[float, GradientSet]:
    """Weighted sum of four reconstruction terms with summed gradients:

    - background layer alone vs the inpainted target (plain MSE),
    - foreground layer alone vs the target, masked to the foreground,
    - local layer alone vs the target, masked to the local regions,
    - the full composite vs the target (plain MSE).

    Gradients come back in document render order. Zero-weight terms are
    skipped entirely.
    """
    if (target.height, target.width) != (doc.height, doc.width):
        raise ValueError("target dimensions do not match the document")
    if render_cfg is None:
        render_cfg = RenderConfig(doc.width, doc.height)
    w_back, w_fore, w_local, w_merged = weights
    n_back, n_local = len(doc.background), len(doc.local)

    colors = [np.zeros(4) for _ in range(doc.n_paths)]
    points = [np.zeros_like(p.controls) for p in doc.all_paths()]
    total = 0.0

    back_target = inpainted
    if back_target is None and w_back != 0.0:
        combined = Mask(np.maximum(m_fore.data, m_local.data))
        if combined.data.max() >= 0.5:
            back_target = inpaint_background(target, combined)
        else:
            back_target = target

    all_paths = doc.all_paths()
    prepared = prepare_paths(all_paths, render_cfg) if all_paths else []
    jobs = [
        (w_back, doc.background, back_target, None, 0),
        (w_local, doc.local, target, m_local, n_back),
        (w_fore, doc.foreground, target, m_fore, n_back + n_local),
        (w_merged, all_paths, target, None, 0),
    ]
    for weight, paths, loss_target, mask, offset in jobs:
        if weight == 0.0:
            continue
        if not paths:
            total += weight * _plain_loss(render([], render_cfg), loss_target, mask)
            continue
        _, loss, grads = render_with_grad(paths, render_cfg, loss_target, mask,
                                          prepared=prepared[offset:offset + len(paths)])
        total += weight * loss
        for i, (gc, gp) in enumerate(zip(grads.colors, grads.points)):
            colors[offset + i] += weight * gc
            points[offset + i] += weight * gp

    return total, GradientSet(colors=colors, points=points)


def _layer_regions(m_fore: Mask, m_local: Mask) -> dict[str, np.ndarray]:
    local = m_local.data >= 0.5
    fore = (m_fore.data >= 0.5) & ~local
    back = ~(local | fore)
    return {"background": back, "local": local, "foreground": fore}


def _path_center(path: ClosedPath) -> tuple[float, float]:
    c = path.controls[:, 0, :].mean(axis=0)
    return float(c[0]), float(c[1])


def _render_seed(base_seed: int, step: int) -> int:
    return (base_seed + step * 2654435761) & 0xFFFFFFFF


def progressive_vectorize(image: RasterImage, m_fore: Mask, m_local: Mask,
                          cfg: VectorizeConfig | None = None,
                          log: dict | None = None) -> SvgDocument:
    """Coarse-to-fine fit of cfg.total_paths closed paths to the image.

    Per smoothing level: seed new circle paths where the current error is
    large (radius halving per level, floored at 2 px), assign each to a
    layer by its center's mask value, then run Adam on the layered loss
    against that level's target; the finest level gets the longer final
    schedule. Deterministic for a fixed config and seed.
    """
    cfg = cfg or VectorizeConfig()
    if (m_fore.height, m_fore.width) != (image.height, image.width) or \
            (m_local.height, m_local.width) != (image.height, image.width):
        raise ValueError("mask dimensions do not match the image")

    h, w = image.height, image.width
    stack = build_stack(image, cfg.n_levels, cfg.lambda_max)
    regions = _layer_regions(m_fore, m_local)
    combined_mask = Mask(np.maximum(m_fore.data, m_local.data))
    has_hole = combined_mask.data.max() >= 0.5

    doc = SvgDocument(width=w, height=h)
    states: dict[str, list[dict]] = {name: [] for name in LAYER_NAMES}
    layer_lists = {"background": doc.background, "local": doc.local,
                   "foreground": doc.foreground}

    n_per = cfg.total_paths // cfg.n_levels
    counts = [n_per] * (cfg.n_levels - 1) + [cfg.total_paths - n_per * (cfg.n_levels - 1)]
    diag = float(np.hypot(w, h))

    if log is not None:
        log.setdefault("iterations", [])
        log.setdefault("levels", [])

    global_step = 0
    err = error_map(stack.levels[0], render([], RenderConfig(
        w, h, background=cfg.background, aa_samples=cfg.aa_samples)))

    for level in range(cfg.n_levels):
        target = stack.levels[level]
        radius = max(diag / 16.0 * 2.0 ** (-level), 2.0)
        inpainted = inpaint_background(target, combined_mask) if has_hole else target

        seed_seq = np.random.SeedSequence((cfg.rng_seed & 0xFFFFFFFF, level))
        new_paths = init_paths(err, counts[level], radius, target,
                               int(seed_seq.generate_state(1)[0]),
                               cfg.segments_per_path)
        for path in new_paths:
            cx, cy = _path_center(path)
            px = min(max(int(cx), 0), w - 1)
            py = min(max(int(cy), 0), h - 1)
            if regions["local"][py, px]:
                name = "local"
            elif regions["foreground"][py, px]:
                name = "foreground"
            else:
                name = "background"
            layer_lists[name].append(path)
            states[name].append({
                "nodes": AdamState.zeros_like(path_nodes(path)),
                "color": AdamState.zeros_like(path.fill),
            })

        iters = cfg.iters_final if level == cfg.n_levels - 1 else cfg.iters_per_level
        for _ in range(iters):
            rc = RenderConfig(w, h, background=cfg.background,
                              aa_samples=cfg.aa_samples,
                              boundary_samples=cfg.boundary_samples,
                              rng_seed=_render_seed(cfg.rng_seed, global_step))
            loss, grads = layered_loss(doc, target, m_fore, m_local,
                                       cfg.loss_weights, rc, inpainted)
            offset = 0
            for name in LAYER_NAMES:
                paths = layer_lists[name]
                for i, path in enumerate(paths):
                    st = states[name][i]
                    nodes = path_nodes(path)
                    node_grads = _fold_point_grads(grads.points[offset + i])
                    nodes, st["nodes"] = adam_step(nodes, node_grads, st["nodes"],
                                                   cfg.lr_point)
                    fill, st["color"] = adam_step(path.fill, grads.colors[offset + i],
                                                  st["color"], cfg.lr_color)
                    fill = np.clip(fill, 0.0, 1.0)
                    paths[i] = path_from_nodes(nodes, fill)
                offset += len(paths)
            global_step += 1
            if log is not None:
                log["iterations"].append({"level": level + 1,
                                          "step": global_step,
                                          "loss": loss})

        rendered = render(doc.all_paths(), RenderConfig(
            w, h, background=cfg.background, aa_samples=cfg.aa_samples))
        err = error_map(target, rendered)

        if level < cfg.n_levels - 1:
            _reseed_dead_paths(layer_lists, states, err, regions,
                               max(radius / 2.0, 2.0), stack.levels[level + 1],
                               cfg.segments_per_path)

        if log is not None:
            log["levels"].append({
                "level": level + 1,
                "lambda": stack.lambdas[level],
                "paths": doc.n_paths,
                "psnr_vs_input": psnr(image, rendered),
                "mse_vs_target": mse(target, rendered),
            })

    return doc


def _reseed_dead_paths(layer_lists, states, err: ErrorMap, regions,
                       radius: float, fill_source: RasterImage,
                       segments_per_path: int) -> None:
    """Replace collapsed paths (area below MIN_LIVE_AREA) with fresh circles
    at the error-map argmax of their own layer's region, preserving the
    layer-assignment invariant."""
    for name, paths in layer_lists.items():
        region = regions[name]
        if not region.any():
            continue
        for i, path in enumerate(paths):
            if polygon_area(flatten_path(path.controls)) >= MIN_LIVE_AREA:
                continue
            masked = np.where(region, err.data, -1.0)
            py, px = np.unravel_index(int(np.argmax(masked)), masked.shape)
            rgb = np.clip(fill_source.data[py, px, :3], 0.0, 1.0)
            paths[i] = circle_path((px + 0.5, py + 0.5), radius,
                                   segments_per_path, np.append(rgb, 1.0))
            states[name][i] = {
                "nodes": AdamState.zeros_like(path_nodes(paths[i])),
                "color": AdamState.zeros_like(paths[i].fill),
            }
