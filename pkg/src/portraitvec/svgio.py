"""Minimal SVG subset writer/parser and document rasterization.

The on-disk format is SVG 1.1 restricted to what the optimizer produces:
a root svg element with three layer groups (background, local, foreground)
holding path elements whose data uses absolute M/C/Z commands only, filled
with solid colors. Coordinates are printed with 4 decimals; colors as
8-bit hex plus a fill-opacity attribute.
"""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np

from .diffrast import FLATTEN_TOL, flatten_path, render_flattened
from .geometry import ClosedPath
from .raster import RasterImage
from .vectorize import SvgDocument

__all__ = [
    "UnsupportedSvgFeature",
    "serialize_svg",
    "parse_svg",
    "write_svg",
    "read_svg",
    "render_document",
]

SVG_NS = "http://www.w3.org/2000/svg"

# Geometry round-trips within 1e-4 at this precision while keeping files
# compact.
COORD_DECIMALS = 4


class UnsupportedSvgFeature(ValueError):
    """Raised for SVG content outside the M/C/Z filled-path subset."""


def _fmt(x: float) -> str:
    return f"{x:.{COORD_DECIMALS}f}"


def _fill_attrs(fill: np.ndarray) -> tuple[str, str]:
    rgb = np.clip(np.rint(np.asarray(fill[:3]) * 255.0), 0, 255).astype(int)
    return "#{:02x}{:02x}{:02x}".format(*rgb), f"{float(fill[3]):.4f}"


def _path_data(path: ClosedPath) -> str:
    c = path.controls
    parts = [f"M {_fmt(c[0, 0, 0])},{_fmt(c[0, 0, 1])}"]
    for seg in c:
        parts.append(
            "C "
            + " ".join(f"{_fmt(p[0])},{_fmt(p[1])}" for p in seg[1:])
        )
    parts.append("Z")
    return " ".join(parts)


def serialize_svg(doc: SvgDocument) -> str:
    """Deterministic text form of the document (same doc, same bytes)."""
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="{SVG_NS}" width="{doc.width}" height="{doc.height}" '
        f'viewBox="0 0 {doc.width} {doc.height}">',
    ]
    for layer_name, paths in doc.layers():
        lines.append(f'  <g id="{layer_name}">')
        for i, path in enumerate(paths):
            color, opacity = _fill_attrs(path.fill)
            lines.append(
                f'    <path id="{layer_name}-{i:04d}" d="{_path_data(path)}" '
                f'fill="{color}" fill-opacity="{opacity}"/>'
            )
        lines.append("  </g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


_NUM = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")


def _parse_path_data(d: str, elem_id: str) -> np.ndarray:
    tokens = re.findall(r"[MCZmczLlAaQqHhVvSsTt]|" + _NUM.pattern, d)
    segments = []
    current = None
    start = None
    i = 0
    while i < len(tokens):
        cmd = tokens[i]
        if cmd in "MCZ":
            i += 1
        elif cmd.isalpha():
            raise UnsupportedSvgFeature(
                f"unsupported path command {cmd!r} in element {elem_id!r} "
                "(only absolute M/C/Z are understood)"
            )
        else:
            raise UnsupportedSvgFeature(f"unexpected token {cmd!r} in element {elem_id!r}")
        if cmd == "M":
            nums = tokens[i:i + 2]
            i += 2
            current = np.array([float(nums[0]), float(nums[1])])
            start = current.copy()
        elif cmd == "C":
            if current is None:
                raise UnsupportedSvgFeature(f"C before M in element {elem_id!r}")
            nums = [float(v) for v in tokens[i:i + 6]]
            i += 6
            if len(nums) != 6:
                raise UnsupportedSvgFeature(f"truncated C command in element {elem_id!r}")
            seg = np.array([current, nums[0:2], nums[2:4], nums[4:6]])
            segments.append(seg)
            current = seg[3].copy()
        elif cmd == "Z":
            break
    if not segments:
        raise UnsupportedSvgFeature(f"element {elem_id!r} has no curve segments")
    gap = float(np.abs(segments[-1][3] - start).max())
    if gap > 1e-3:
        raise UnsupportedSvgFeature(f"element {elem_id!r} is not closed (gap {gap:g})")
    segments[-1][3] = start  # weld the loop exactly
    return np.stack(segments)


def _parse_fill(elem, elem_id: str) -> np.ndarray:
    fill = elem.get("fill", "#000000")
    m = re.fullmatch(r"#([0-9a-fA-F]{6})", fill)
    if not m:
        raise UnsupportedSvgFeature(
            f"unsupported fill {fill!r} in element {elem_id!r} (need #rrggbb)"
        )
    rgb = [int(m.group(1)[j:j + 2], 16) / 255.0 for j in (0, 2, 4)]
    opacity = float(elem.get("fill-opacity", "1"))
    return np.array(rgb + [opacity])


def parse_svg(text: str) -> SvgDocument:
    """Parse a document produced by serialize_svg (strict subset: three
    layer groups of filled M/C/Z paths)."""
    root = ET.fromstring(text)
    if root.tag not in ("svg", f"{{{SVG_NS}}}svg"):
        raise UnsupportedSvgFeature(f"root element {root.tag!r} is not svg")
    try:
        width = int(round(float(root.get("width"))))
        height = int(round(float(root.get("height"))))
    except (TypeError, ValueError) as e:
        raise UnsupportedSvgFeature("svg element needs numeric width/height") from e
    doc = SvgDocument(width=width, height=height)
    layers = {"background": doc.background, "local": doc.local,
              "foreground": doc.foreground}
    for child in root:
        tag = child.tag.split("}")[-1]
        if tag != "g":
            raise UnsupportedSvgFeature(f"unsupported element <{tag}> at top level")
        gid = child.get("id")
        if gid not in layers:
            raise UnsupportedSvgFeature(f"unknown layer group id {gid!r}")
        for elem in child:
            etag = elem.tag.split("}")[-1]
            elem_id = elem.get("id", "<anonymous>")
            if etag != "path":
                raise UnsupportedSvgFeature(f"unsupported element <{etag}> in group {gid!r}")
            if elem.get("stroke") not in (None, "none"):
                raise UnsupportedSvgFeature(f"stroked path {elem_id!r} is not supported")
            if elem.get("transform") is not None:
                raise UnsupportedSvgFeature(f"transform on {elem_id!r} is not supported")
            controls = _parse_path_data(elem.get("d", ""), elem_id)
            layers[gid].append(ClosedPath(controls, _parse_fill(elem, elem_id)))
    return doc


def write_svg(doc: SvgDocument, path) -> None:
    Path(path).write_text(serialize_svg(doc), encoding="utf-8")


def read_svg(path) -> SvgDocument:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise
    except OSError as e:
        raise OSError(f"cannot read SVG {p}: {e}") from e
    return parse_svg(text)


def render_document(doc: SvgDocument, width: int | None = None,
                    height: int | None = None, aa: int = 4,
                    background=(1.0, 1.0, 1.0)) -> RasterImage:
    """Rasterize the document at an arbitrary output size.

    Curves are flattened in document space and the subsample density is
    held fixed per document pixel (aa at 1x), so scaling the output by 2
    while the density stays put samples the identical set of points:
    renders at different scales agree up to the float averaging order.
    """
    out_w = width or doc.width
    out_h = height or doc.height
    if out_w < 1 or out_h < 1:
        raise ValueError(f"output size must be positive, got {out_w}x{out_h}")
    sx = out_w / doc.width
    sy = out_h / doc.height
    aa_eff = max(1, round(aa / max(sx, sy)))
    scale = np.array([sx, sy])
    polys = []
    fills = []
    for path in doc.all_paths():
        polys.append(flatten_path(path.controls, FLATTEN_TOL) * scale)
        fills.append(path.fill)
    return RasterImage(render_flattened(polys, fills, out_w, out_h, aa_eff, background))
