"""Polygon geometry: ring simplification, normalization, and the vertex-text grammar.

The serialized polygon form is the bit-exact contract between dataset text
and the evaluation parser::

    [(x1, y1), (x2, y2), ...]

with fixed-point coordinates in [0, 1]. The parser additionally tolerates
missing or round outer brackets, arbitrary whitespace, and a trailing comma.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import (
    CoordinateOutOfRange,
    DegenerateResult,
    OutOfBoundsVertex,
    ParseFailure,
)
from .raster import ClosedContour, LabelGrid, signed_area


@dataclass(frozen=True)
class NormalizedPolygon:
    """Vertex loop with coordinates scaled to [0, 1]."""

    vertices: tuple[tuple[float, float], ...]
    category: int = 0

    def __post_init__(self):
        if len(self.vertices) < 3:
            raise ValueError(f"polygon needs >= 3 vertices, got {len(self.vertices)}")
        for x, y in self.vertices:
            if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
                raise ValueError(f"vertex ({x}, {y}) outside the unit square")


def _point_segment_dist2(p, a, b) -> float:
    px, py = p
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    seg2 = dx * dx + dy * dy
    if seg2 == 0:
        ex, ey = px - ax, py - ay
        return ex * ex + ey * ey
    t = ((px - ax) * dx + (py - ay) * dy) / seg2
    t = 0.0 if t < 0.0 else 1.0 if t > 1.0 else t
    ex, ey = px - (ax + t * dx), py - (ay + t * dy)
    return ex * ex + ey * ey


def _dp_keep(points, eps2: float) -> list[bool]:
    # iterative Douglas-Peucker over an open chain, distances to the segment
    n = len(points)
    keep = [False] * n
    keep[0] = keep[-1] = True
    stack = [(0, n - 1)]
    while stack:
        s, e = stack.pop()
        if e <= s + 1:
            continue
        a, b = points[s], points[e]
        max_d = -1.0
        idx = -1
        for i in range(s + 1, e):
            d = _point_segment_dist2(points[i], a, b)
            if d > max_d:
                max_d = d
                idx = i
        if max_d > eps2:
            keep[idx] = True
            stack.append((s, idx))
            stack.append((idx, e))
    return keep


def _farthest_pair(vertices) -> tuple[int, int]:
    pts = np.asarray(vertices, dtype=float)
    best = (-1.0, 0, 0)
    for i in range(len(pts) - 1):
        d = ((pts[i + 1 :] - pts[i]) ** 2).sum(axis=1)
        j = int(np.argmax(d))
        if d[j] > best[0]:
            best = (float(d[j]), i, i + 1 + j)
    return best[1], best[2]


def simplify(contour: ClosedContour, epsilon: float) -> ClosedContour:
    """Douglas-Peucker simplification adapted to closed rings.

    The ring is split at its two mutually farthest vertices and each half is
    simplified as an open chain, so no arbitrary start vertex survives by
    accident. Every removed vertex lies within epsilon of the simplified
    ring. epsilon = 0 collapses exactly-collinear runs and nothing else.

    Raises DegenerateResult when fewer than 3 non-collinear vertices remain;
    callers decide whether to drop the object or fall back to epsilon = 0.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    verts = list(contour.vertices)
    if len(verts) < 3:
        raise DegenerateResult(f"ring has only {len(verts)} vertices")
    i, j = _farthest_pair(verts)
    chain_a = verts[i : j + 1]
    chain_b = verts[j:] + verts[: i + 1]
    eps2 = float(epsilon) * float(epsilon)
    keep_a = _dp_keep(chain_a, eps2)
    keep_b = _dp_keep(chain_b, eps2)
    ring = [p for p, k in zip(chain_a[:-1], keep_a[:-1]) if k]
    ring += [p for p, k in zip(chain_b[:-1], keep_b[:-1]) if k]
    if len(ring) < 3 or abs(signed_area(ring)) < 1e-12:
        raise DegenerateResult(f"simplification left {len(ring)} usable vertices")
    return ClosedContour(vertices=tuple(ring))


def normalize(contour: ClosedContour, width: int, height: int, category: int = 0) -> NormalizedPolygon:
    """Scale corner coordinates into the unit square (x/width, y/height)."""
    if width <= 0 or height <= 0:
        raise ValueError("width and height must be positive")
    out = []
    for x, y in contour.vertices:
        if not (0 <= x <= width and 0 <= y <= height):
            raise OutOfBoundsVertex((x, y), width, height)
        out.append((x / width, y / height))
    return NormalizedPolygon(vertices=tuple(out), category=category)


def serialize_polygon(poly: NormalizedPolygon, precision: int = 2) -> str:
    """Emit the canonical vertex-text form at a fixed decimal precision.

    Consecutive vertices that coincide after quantization are merged, as is
    a quantized closing vertex equal to the first.
    """
    if not 1 <= precision <= 6:
        raise ValueError("precision must be in [1, 6]")
    quantized = [(f"{x:.{precision}f}", f"{y:.{precision}f}") for x, y in poly.vertices]
    merged: list[tuple[str, str]] = []
    for q in quantized:
        if merged and merged[-1] == q:
            continue
        merged.append(q)
    while len(merged) > 1 and merged[0] == merged[-1]:
        merged.pop()
    return "[" + ", ".join(f"({x}, {y})" for x, y in merged) + "]"


_NUM_RE = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)")


def parse_polygon(text: str, category: int = 0) -> NormalizedPolygon:
    """Parse vertex text into a polygon; inverse of serialize_polygon.

    Accepts the canonical form plus tolerant variants: optional whitespace
    anywhere, square or round (or missing) outer brackets, and a trailing
    comma. Coordinates outside [0, 1] raise CoordinateOutOfRange; any other
    shape problem raises ParseFailure with the offset and reason.
    """
    s = text
    n = len(s)

    def skip_ws(i: int) -> int:
        while i < n and s[i].isspace():
            i += 1
        return i

    i = skip_ws(0)
    closer = None
    if i < n and s[i] in "[(":
        # an opening '(' is the outer bracket only if another '(' follows
        if s[i] == "[" or skip_ws(i + 1) < n and s[skip_ws(i + 1)] == "(":
            closer = "]" if s[i] == "[" else ")"
            i = skip_ws(i + 1)

    vertices: list[tuple[float, float]] = []
    while True:
        if i >= n or s[i] != "(":
            raise ParseFailure(i, "expected '(' to open a vertex")
        i = skip_ws(i + 1)
        coords = []
        for want_comma in (True, False):
            m = _NUM_RE.match(s, i)
            if not m:
                raise ParseFailure(i, "expected a number")
            value = float(m.group())
            if not 0.0 <= value <= 1.0:
                raise CoordinateOutOfRange(value)
            coords.append(value)
            i = skip_ws(m.end())
            if want_comma:
                if i >= n or s[i] != ",":
                    raise ParseFailure(i, "expected ',' between coordinates")
                i = skip_ws(i + 1)
        if i >= n or s[i] != ")":
            raise ParseFailure(i, "expected ')' to close a vertex")
        vertices.append((coords[0], coords[1]))
        i = skip_ws(i + 1)
        if i < n and s[i] == ",":
            i = skip_ws(i + 1)
            if closer and i < n and s[i] == closer:  # trailing comma
                break
            continue
        break
    if closer:
        if i >= n or s[i] != closer:
            raise ParseFailure(i, f"expected '{closer}' to close the polygon")
        i = skip_ws(i + 1)
    if i != n:
        raise ParseFailure(i, "unexpected trailing characters")

    merged: list[tuple[float, float]] = []
    for v in vertices:
        if merged and merged[-1] == v:
            continue
        merged.append(v)
    while len(merged) > 1 and merged[0] == merged[-1]:
        merged.pop()
    if len(merged) < 3:
        raise ParseFailure(0, f"polygon has {len(merged)} distinct vertices, needs >= 3")
    return NormalizedPolygon(vertices=tuple(merged), category=category)


_EMBEDDED_POLY_RE = re.compile(
    r"\[\s*\(\s*[0-9.+-]+\s*,\s*[0-9.+-]+\s*\)"
    r"(?:\s*,\s*\(\s*[0-9.+-]+\s*,\s*[0-9.+-]+\s*\))*\s*,?\s*\]"
)


def extract_polygon_texts(text: str) -> list[str]:
    """Find every serialized-polygon substring embedded in free text."""
    return _EMBEDDED_POLY_RE.findall(text)


def rasterize_ring(vertices, width: int, height: int) -> set[tuple[int, int]]:
    """Even-odd scanline fill of a closed ring, sampled at pixel centers."""
    if not vertices:
        return set()
    filled: set[tuple[int, int]] = set()
    n = len(vertices)
    edges = [(vertices[k], vertices[(k + 1) % n]) for k in range(n)]
    ys = [v[1] for v in vertices]
    y_lo = max(0, math.floor(min(ys)))
    y_hi = min(height, math.ceil(max(ys)))
    for y in range(y_lo, y_hi):
        cy = y + 0.5
        crossings = []
        for (x1, y1), (x2, y2) in edges:
            if (y1 <= cy < y2) or (y2 <= cy < y1):
                t = (cy - y1) / (y2 - y1)
                crossings.append(x1 + t * (x2 - x1))
        crossings.sort()
        for k in range(0, len(crossings) - 1, 2):
            start = max(0, math.ceil(crossings[k] - 0.5))
            end = min(width, math.ceil(crossings[k + 1] - 0.5))
            for x in range(start, end):
                filled.add((x, y))
    return filled


def rasterize_polygon(poly: NormalizedPolygon, width: int, height: int) -> set[tuple[int, int]]:
    scaled = [(x * width, y * height) for x, y in poly.vertices]
    return rasterize_ring(scaled, width, height)


def mask_pixels(grid: LabelGrid, category: int) -> set[tuple[int, int]]:
    ys, xs = np.nonzero(grid.category_mask(category))
    return set(zip(xs.tolist(), ys.tolist()))


def sets_iou(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    union = len(a | b)
    return len(a & b) / union


def polygon_raster_iou(poly: NormalizedPolygon, grid: LabelGrid, category: int) -> float:
    """IoU between the polygon's rasterized interior and the category mask."""
    return sets_iou(rasterize_polygon(poly, grid.width, grid.height), mask_pixels(grid, category))


def polygons_raster_iou(polys, grid: LabelGrid, target: set) -> float:
    """IoU between the union of several polygons' interiors and a pixel set."""
    fill: set[tuple[int, int]] = set()
    for poly in polys:
        fill |= rasterize_polygon(poly, grid.width, grid.height)
    return sets_iou(fill, target)
