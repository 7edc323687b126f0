"""User scribbles: stroke geometry, rasterization, and region helpers.

Scribbles arrive as polylines or Bezier curves in image coordinates
(x = column, y = row, origin at the top-left cell center) and are rasterized
once into boolean masks that the losses and the propagation stage consume.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .core import Grid2D

__all__ = [
    "ScribbleFormatError",
    "ScribbleGeometry",
    "Scribble",
    "ScribbleSet",
    "rasterize",
    "padded_bbox",
    "boundary_anchors",
    "load_scribble_set",
    "scribble_set_from_dict",
    "with_masks",
]

BEZIER_SEGMENTS = 64  # flattening resolution for curved strokes


class ScribbleFormatError(ValueError):
    """Raised for malformed scribble input (bad schema, degenerate geometry)."""


@dataclass(frozen=True)
class ScribbleGeometry:
    kind: str  # "polyline" | "bezier"
    points: tuple  # ((x, y), ...) in image coordinates, floats allowed
    thickness: int = 1

    def __post_init__(self):
        if self.kind not in ("polyline", "bezier"):
            raise ScribbleFormatError(f"unknown scribble kind {self.kind!r}")
        pts = tuple((float(x), float(y)) for x, y in self.points)
        object.__setattr__(self, "points", pts)
        min_pts = 3 if self.kind == "bezier" else 2
        if len(pts) < min_pts:
            raise ScribbleFormatError(
                f"{self.kind} needs at least {min_pts} points, got {len(pts)}"
            )
        if all(p == pts[0] for p in pts[1:]):
            raise ScribbleFormatError("degenerate geometry: all points coincide")
        if int(self.thickness) < 1:
            raise ScribbleFormatError(f"thickness must be >= 1, got {self.thickness}")
        object.__setattr__(self, "thickness", int(self.thickness))


@dataclass(frozen=True, eq=False)
class Scribble:
    geometry: ScribbleGeometry
    tokens: tuple  # nonempty tuple of token strings
    mask: np.ndarray  # bool (h, w), the rasterized stroke

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if len(self.tokens) == 0:
            raise ScribbleFormatError("scribble has no tokens")


@dataclass(frozen=True, eq=False)
class ScribbleSet:
    width: int
    height: int
    scribbles: tuple  # tuple of Scribble

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ScribbleFormatError("canvas dimensions must be positive")
        for s in self.scribbles:
            if s.mask.shape != (self.height, self.width):
                raise ScribbleFormatError("scribble mask does not match canvas size")

    def tokens(self):
        """All tokens in scribble order, deduplicated, order preserved."""
        seen = {}
        for s in self.scribbles:
            for t in s.tokens:
                seen.setdefault(t, None)
        return tuple(seen)


def _bresenham(x0: int, y0: int, x1: int, y1: int):
    """Integer line cells from (x0, y0) to (x1, y1), inclusive."""
    dx = abs(x1 - x0)
    sx = 1 if x0 < x1 else -1
    dy = -abs(y1 - y0)
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        yield x0, y0
        if x0 == x1 and y0 == y1:
            return
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def _bezier_polyline(points):
    """Flatten a Bezier curve (de Casteljau) at uniform parameters."""
    ctrl = np.asarray(points, dtype=np.float64)
    ts = np.linspace(0.0, 1.0, BEZIER_SEGMENTS + 1)
    beta = np.broadcast_to(ctrl[None, :, :], (ts.size, *ctrl.shape)).copy()
    for _ in range(len(points) - 1):
        beta = beta[:, :-1, :] + ts[:, None, None] * (beta[:, 1:, :] - beta[:, :-1, :])
    return [tuple(p) for p in beta[:, 0, :]]


def rasterize(geometry: ScribbleGeometry, width: int, height: int) -> np.ndarray:
    """Rasterize a stroke to a boolean (height, width) mask.

    Points are clipped into the image rectangle, segments are drawn with
    Bresenham, and the stroke is thickened to Chebyshev radius
    floor(thickness / 2) around the drawn cells.
    """
    if width < 1 or height < 1:
        raise ValueError("raster dimensions must be positive")
    pts = geometry.points
    if geometry.kind == "bezier":
        pts = _bezier_polyline(pts)
    # clip, then round half-up to cell indices
    cells_x = []
    cells_y = []
    px = [min(max(x, 0.0), width - 1.0) for x, _ in pts]
    py = [min(max(y, 0.0), height - 1.0) for _, y in pts]
    ix = [int(np.floor(v + 0.5)) for v in px]
    iy = [int(np.floor(v + 0.5)) for v in py]
    for i in range(len(pts) - 1):
        for cx, cy in _bresenham(ix[i], iy[i], ix[i + 1], iy[i + 1]):
            cells_x.append(cx)
            cells_y.append(cy)
    mask = np.zeros((height, width), dtype=bool)
    mask[cells_y, cells_x] = True
    rad = geometry.thickness // 2
    if rad > 0:
        base = mask
        mask = base.copy()
        for dy in range(-rad, rad + 1):
            for dx in range(-rad, rad + 1):
                if dx == 0 and dy == 0:
                    continue
                shifted = np.zeros_like(base)
                ys0, ys1 = max(0, dy), height + min(0, dy)
                xs0, xs1 = max(0, dx), width + min(0, dx)
                shifted[ys0:ys1, xs0:xs1] = base[
                    max(0, -dy) : height + min(0, -dy),
                    max(0, -dx) : width + min(0, -dx),
                ]
                mask |= shifted
    return mask


def padded_bbox(mask: np.ndarray, pad_fraction: float = 0.05):
    """Tight bounding box of the set cells, padded per side by
    (pad_fraction / 2) of the corresponding box extent, clipped to the image.

    Returns inclusive (x0, y0, x1, y1).
    """
    if pad_fraction < 0:
        raise ValueError("pad_fraction must be >= 0")
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise ValueError("empty mask has no bounding box")
    h, w = mask.shape
    x0, x1 = int(xs.min()), int(xs.max())
    y0, y1 = int(ys.min()), int(ys.max())
    pad_x = 0.5 * pad_fraction * (x1 - x0)
    pad_y = 0.5 * pad_fraction * (y1 - y0)
    x0 = max(0, int(np.floor(x0 - pad_x)))
    y0 = max(0, int(np.floor(y0 - pad_y)))
    x1 = min(w - 1, int(np.ceil(x1 + pad_x)))
    y1 = min(h - 1, int(np.ceil(y1 + pad_y)))
    return (x0, y0, x1, y1)


def boundary_anchors(region: np.ndarray):
    """Cells of a boolean region with at least one unset 8-neighbor.

    The image border counts as unset, so a region touching the border is
    boundary there. Returns a list of (x, y) pairs in row-major order.
    """
    region = np.asarray(region, dtype=bool)
    padded = np.pad(region, 1, constant_values=False)
    interior = np.ones_like(region)
    h, w = region.shape
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            interior &= padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
    ys, xs = np.nonzero(region & ~interior)
    return list(zip(xs.tolist(), ys.tolist()))


def scribble_set_from_dict(data) -> ScribbleSet:
    """Build a ScribbleSet from the JSON scribble schema (already parsed)."""
    if not isinstance(data, dict):
        raise ScribbleFormatError("scribble file must contain a JSON object")
    unknown = set(data) - {"width", "height", "scribbles"}
    if unknown:
        raise ScribbleFormatError(f"unknown scribble-file keys: {sorted(unknown)}")
    try:
        width = int(data["width"])
        height = int(data["height"])
        raw = data["scribbles"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ScribbleFormatError(f"missing or invalid scribble field: {exc}") from exc
    if width < 1 or height < 1:
        raise ScribbleFormatError(f"canvas must be positive, got {width}x{height}")
    if not isinstance(raw, list) or not raw:
        raise ScribbleFormatError("'scribbles' must be a nonempty list")
    scribbles = []
    for k, entry in enumerate(raw):
        if not isinstance(entry, dict):
            raise ScribbleFormatError(f"scribble #{k} is not an object")
        extra = set(entry) - {"tokens", "kind", "points", "thickness"}
        if extra:
            raise ScribbleFormatError(f"scribble #{k} has unknown keys: {sorted(extra)}")
        tokens = entry.get("tokens")
        if not isinstance(tokens, list) or not tokens or not all(
            isinstance(t, str) and t for t in tokens
        ):
            raise ScribbleFormatError(f"scribble #{k} needs a nonempty token list")
        try:
            geom = ScribbleGeometry(
                kind=entry.get("kind", "polyline"),
                points=tuple((p[0], p[1]) for p in entry["points"]),
                thickness=entry.get("thickness", 1),
            )
        except (KeyError, TypeError, IndexError) as exc:
            raise ScribbleFormatError(f"scribble #{k} has invalid points: {exc}") from exc
        mask = rasterize(geom, width, height)
        scribbles.append(Scribble(geometry=geom, tokens=tuple(tokens), mask=mask))
    return ScribbleSet(width=width, height=height, scribbles=tuple(scribbles))


def load_scribble_set(path) -> ScribbleSet:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScribbleFormatError(f"invalid JSON in {path}: {exc}") from exc
    return scribble_set_from_dict(data)


def with_masks(scribble_set: ScribbleSet, masks) -> ScribbleSet:
    """Copy of the set with each scribble's mask replaced (propagation output)."""
    if len(masks) != len(scribble_set.scribbles):
        raise ValueError("mask count does not match scribble count")
    new = tuple(
        replace(s, mask=np.asarray(m, dtype=bool))
        for s, m in zip(scribble_set.scribbles, masks)
    )
    return ScribbleSet(scribble_set.width, scribble_set.height, new)
