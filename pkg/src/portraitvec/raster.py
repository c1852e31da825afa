"""Raster image container, PNG/PPM I/O and reconstruction metrics."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image as _PILImage

__all__ = [
    "RasterImage",
    "Mask",
    "load_image",
    "save_image",
    "load_mask",
    "save_mask",
    "mse",
    "psnr",
    "ssim",
]

_LUMA = np.array([0.299, 0.587, 0.114])


class RasterImage:
    """Row-major RGB(A) image with float channels, nominally in [0, 1].

    Values are clamped to [0, 1] on load/save; in-memory images may carry
    out-of-range values (e.g. synthetic test data).
    """

    __slots__ = ("data",)

    def __init__(self, data):
        data = np.ascontiguousarray(data, dtype=float)
        if data.ndim != 3 or data.shape[2] not in (3, 4):
            raise ValueError(f"expected (H, W, 3|4) pixel array, got {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"empty image {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("non-finite pixel value")
        self.data = data

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def rgb(self) -> np.ndarray:
        """The first three channels."""
        return self.data[:, :, :3]

    def copy(self) -> "RasterImage":
        return RasterImage(self.data.copy())


class Mask:
    """Single-channel soft mask in [0, 1], same grid as its image."""

    __slots__ = ("data",)

    def __init__(self, data):
        data = np.ascontiguousarray(data, dtype=float)
        if data.ndim != 2:
            raise ValueError(f"expected (H, W) mask array, got {data.shape}")
        if not np.all(np.isfinite(data)) or data.min() < 0.0 or data.max() > 1.0:
            raise ValueError("mask values must be finite and in [0, 1]")
        self.data = data

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def load_image(path) -> RasterImage:
    """Read an 8-bit PNG or binary PPM as floats in [0, 1]."""
    path = Path(path)
    try:
        with _PILImage.open(path) as im:
            fmt = im.format
            if fmt not in ("PNG", "PPM"):
                raise OSError(f"unsupported image format {fmt!r} in {path}")
            im = im.convert("RGBA" if im.mode in ("RGBA", "LA", "PA") else "RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except FileNotFoundError:
        raise
    except OSError as e:
        raise OSError(f"cannot read image {path}: {e}") from e
    return RasterImage(np.clip(arr.astype(float) / 255.0, 0.0, 1.0))


def save_image(image: RasterImage, path) -> None:
    """Write as 8-bit PNG (.png) or binary PPM (.ppm), by suffix."""
    path = Path(path)
    data = np.clip(image.data, 0.0, 1.0)
    arr = np.rint(data * 255.0).astype(np.uint8)
    suffix = path.suffix.lower()
    if suffix == ".png":
        mode = "RGBA" if image.channels == 4 else "RGB"
        _PILImage.fromarray(arr, mode=mode).save(path, format="PNG")
    elif suffix == ".ppm":
        _PILImage.fromarray(arr[:, :, :3], mode="RGB").save(path, format="PPM")
    else:
        raise OSError(f"unsupported output format {suffix!r} for {path} (use .png or .ppm)")


def load_mask(path) -> Mask:
    """Read a grayscale PNG as a soft [0, 1] mask."""
    path = Path(path)
    try:
        with _PILImage.open(path) as im:
            arr = np.asarray(im.convert("L"), dtype=np.uint8)
    except FileNotFoundError:
        raise
    except OSError as e:
        raise OSError(f"cannot read mask {path}: {e}") from e
    return Mask(arr.astype(float) / 255.0)


def save_mask(mask: Mask, path) -> None:
    arr = np.rint(np.clip(mask.data, 0.0, 1.0) * 255.0).astype(np.uint8)
    _PILImage.fromarray(arr, mode="L").save(Path(path), format="PNG")


def _check_dims(a: RasterImage, b: RasterImage) -> None:
    if (a.height, a.width) != (b.height, b.width):
        raise ValueError(
            f"image dimensions differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )


def mse(a: RasterImage, b: RasterImage) -> float:
    """Mean squared difference over the RGB channels."""
    _check_dims(a, b)
    d = a.rgb() - b.rgb()
    return float(np.mean(d * d))


def psnr(a: RasterImage, b: RasterImage) -> float:
    """Peak signal-to-noise ratio in dB for a [0, 1] range; +inf when equal."""
    m = mse(a, b)
    if m == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / m)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def _windowed_mean(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    k = win.shape[0]
    h, w = img.shape
    strides = np.lib.stride_tricks.sliding_window_view(img, (k, k))
    return np.einsum("ijkl,kl->ij", strides, win)


def ssim(a: RasterImage, b: RasterImage) -> float:
    """Single-scale SSIM on luma, 11x11 Gaussian window (sigma 1.5),
    k1 = 0.01, k2 = 0.03, dynamic range 1."""
    _check_dims(a, b)
    if min(a.height, a.width) < 11:
        raise ValueError("image smaller than the 11x11 SSIM window")
    x = a.rgb() @ _LUMA
    y = b.rgb() @ _LUMA
    win = _gaussian_window()
    mu_x = _windowed_mean(x, win)
    mu_y = _windowed_mean(y, win)
    sxx = _windowed_mean(x * x, win) - mu_x * mu_x
    syy = _windowed_mean(y * y, win) - mu_y * mu_y
    sxy = _windowed_mean(x * y, win) - mu_x * mu_y
    c1 = 0.01 ** 2
    c2 = 0.03 ** 2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))
