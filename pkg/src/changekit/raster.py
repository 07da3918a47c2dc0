"""Change-map rasters: decoding, connected components, contour tracing.

Pixel coordinates are (x, y) with x growing right and y growing down.
Contours live on the integer corner lattice, so a single pixel at (x, y)
owns the unit square with corners (x, y) .. (x+1, y+1). Orientation is
defined by the shoelace sign of the stored (x, y) values: positive signed
area is reported as counter-clockwise.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from .config import BACKGROUND, Palette
from .errors import (
    BackgroundCategoryRequested,
    DecodeFailure,
    UnknownPixelValue,
)


@dataclass(eq=False)
class LabelGrid:
    """Per-pixel category ids, row-major, shape (height, width)."""

    width: int
    height: int
    labels: np.ndarray

    def __post_init__(self):
        if self.labels.shape != (self.height, self.width):
            raise ValueError(f"labels shape {self.labels.shape} != (height={self.height}, width={self.width})")

    def label_at(self, x: int, y: int) -> int:
        return int(self.labels[y, x])

    def has_change(self) -> bool:
        return bool((self.labels != BACKGROUND).any())

    def category_mask(self, category: int) -> np.ndarray:
        return self.labels == category


@dataclass(frozen=True)
class Component:
    """One connected blob of same-category pixels; a counted object."""

    category: int
    pixel_count: int
    bbox: tuple[int, int, int, int]        # (x_min, y_min, x_max, y_max) inclusive
    pixels: frozenset = field(repr=False)


@dataclass(frozen=True)
class ClosedContour:
    """Closed vertex loop on pixel corners; closure is implicit."""

    vertices: tuple[tuple[int, int], ...]

    @property
    def orientation(self) -> str:
        return "counter_clockwise" if signed_area(self.vertices) > 0 else "clockwise"


def signed_area(vertices) -> float:
    total = 0.0
    n = len(vertices)
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        total += x1 * y2 - x2 * y1
    return total / 2.0


def decode_change_map(data: bytes, palette: Palette) -> LabelGrid:
    """Decode PNG bytes into a LabelGrid via the palette.

    Gray (or grayscale-coded RGB) images map through the palette's value
    table; color images map through its color table. Any pixel outside the
    palette raises UnknownPixelValue with the value and first location.
    """
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DecodeFailure(f"cannot decode change map: {exc}") from exc

    if img.mode == "L":
        arr = np.asarray(img)
        return _map_gray(arr, palette)
    if img.mode in ("P", "RGB", "RGBA", "LA", "1", "I", "I;16"):
        rgb = np.asarray(img.convert("RGB"))
        grayish = bool((rgb[:, :, 0] == rgb[:, :, 1]).all() and (rgb[:, :, 1] == rgb[:, :, 2]).all())
        if palette.rgb and not (grayish and not _rgb_needed(rgb, palette)):
            return _map_rgb(rgb, palette)
        if grayish:
            return _map_gray(rgb[:, :, 0], palette)
        if palette.rgb:
            return _map_rgb(rgb, palette)
        # color image against a gray-only palette: report the first color
        h, w, _ = rgb.shape
        flat = rgb.reshape(-1, 3)
        idx = int(np.argmax((flat[:, 0] != flat[:, 1]) | (flat[:, 1] != flat[:, 2])))
        raise UnknownPixelValue(tuple(int(v) for v in flat[idx]), (idx % w, idx // w))
    raise DecodeFailure(f"unsupported image mode {img.mode!r}")


def _rgb_needed(rgb: np.ndarray, palette: Palette) -> bool:
    # grayscale-coded pixels can still be palette rgb entries like (255,255,255)
    values = np.unique(rgb[:, :, 0])
    return any((int(v), int(v), int(v)) in palette.rgb for v in values)


def _map_gray(arr: np.ndarray, palette: Palette) -> LabelGrid:
    height, width = arr.shape
    out = np.zeros((height, width), dtype=np.int32)
    for value in np.unique(arr):
        v = int(value)
        if v in palette.gray:
            cat = palette.gray[v]
        elif (v, v, v) in palette.rgb:
            cat = palette.rgb[(v, v, v)]
        else:
            flat_idx = int(np.argmax(arr.reshape(-1) == value))
            raise UnknownPixelValue(v, (flat_idx % width, flat_idx // width))
        out[arr == value] = cat
    return LabelGrid(width=width, height=height, labels=out)


def _map_rgb(rgb: np.ndarray, palette: Palette) -> LabelGrid:
    height, width, _ = rgb.shape
    flat = rgb.reshape(-1, 3)
    packed = flat[:, 0].astype(np.int64) * 65536 + flat[:, 1].astype(np.int64) * 256 + flat[:, 2]
    out = np.zeros(packed.shape, dtype=np.int32)
    for code in np.unique(packed):
        c = int(code)
        color = (c >> 16 & 255, c >> 8 & 255, c & 255)
        if color in palette.rgb:
            cat = palette.rgb[color]
        elif color[0] == color[1] == color[2] and color[0] in palette.gray:
            cat = palette.gray[color[0]]
        else:
            flat_idx = int(np.argmax(packed == code))
            raise UnknownPixelValue(color, (flat_idx % width, flat_idx // width))
        out[packed == code] = cat
    return LabelGrid(width=width, height=height, labels=out.reshape(height, width))


def connected_components(
    grid: LabelGrid,
    category: int,
    connectivity: str = "eight",
    min_area: int = 0,
) -> list[Component]:
    """Two-pass union-find labeling of one change category.

    Returns components sorted by (y_min, x_min) of their bounding boxes;
    components smaller than min_area pixels are dropped.
    """
    if category == BACKGROUND:
        raise BackgroundCategoryRequested("connected components of the background are not defined")
    eight = connectivity == "eight"
    width, height = grid.width, grid.height
    rows = (grid.labels == category).tolist()

    parent = [0]  # 1-based provisional labels; parent[0] unused
    label_rows: list[list[int]] = []
    prev = [0] * width

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for y in range(height):
        mask_row = rows[y]
        cur = [0] * width
        for x in range(width):
            if not mask_row[x]:
                continue
            touching = []
            if x > 0 and cur[x - 1]:
                touching.append(cur[x - 1])
            if prev[x]:
                touching.append(prev[x])
            if eight:
                if x > 0 and prev[x - 1]:
                    touching.append(prev[x - 1])
                if x + 1 < width and prev[x + 1]:
                    touching.append(prev[x + 1])
            if not touching:
                parent.append(len(parent))
                cur[x] = len(parent) - 1
            else:
                roots = [find(t) for t in touching]
                target = min(roots)
                for r in roots:
                    if r != target:
                        parent[r] = target
                cur[x] = target
        label_rows.append(cur)
        prev = cur

    groups: dict[int, list[tuple[int, int]]] = {}
    for y in range(height):
        row = label_rows[y]
        for x in range(width):
            lab = row[x]
            if lab:
                groups.setdefault(find(lab), []).append((x, y))

    components = []
    for pixels in groups.values():
        if len(pixels) < min_area:
            continue
        xs = [p[0] for p in pixels]
        ys = [p[1] for p in pixels]
        components.append(
            Component(
                category=category,
                pixel_count=len(pixels),
                bbox=(min(xs), min(ys), max(xs), max(ys)),
                pixels=frozenset(pixels),
            )
        )
    components.sort(key=lambda c: (c.bbox[1], c.bbox[0]))
    return components


def count_objects(grid: LabelGrid, category: int, connectivity: str = "eight", min_area: int = 0) -> int:
    return len(connected_components(grid, category, connectivity, min_area))


# direction vectors for crack following; region stays on the right of travel
_LEFT_TURN = {(1, 0): (0, -1), (0, -1): (-1, 0), (-1, 0): (0, 1), (0, 1): (1, 0)}


def trace_contour(component: Component, width: int | None = None, height: int | None = None) -> ClosedContour:
    """Trace the outer boundary of a component on pixel corners.

    Walks the boundary cracks keeping the region on the right of travel; at
    pinch corners (diagonal self-contact) it prefers the left turn, which
    keeps eight-connected regions inside a single loop. Collinear runs are
    collapsed. The result has positive signed area (counter-clockwise under
    the stored-coordinate convention).
    """
    pixels = component.pixels
    if width is not None and height is not None:
        for (x, y) in pixels:
            if not (0 <= x < width and 0 <= y < height):
                raise ValueError(f"component pixel {(x, y)} outside {width}x{height} grid")

    # directed boundary edges keyed by start corner
    out_edges: dict[tuple[int, int], list[tuple[int, int]]] = {}

    def add_edge(start, end):
        out_edges.setdefault(start, []).append(end)

    for (x, y) in pixels:
        if (x, y - 1) not in pixels:
            add_edge((x, y), (x + 1, y))
        if (x + 1, y) not in pixels:
            add_edge((x + 1, y), (x + 1, y + 1))
        if (x, y + 1) not in pixels:
            add_edge((x + 1, y + 1), (x, y + 1))
        if (x - 1, y) not in pixels:
            add_edge((x, y + 1), (x, y))

    # start at the top-left corner of the topmost-leftmost pixel; its top
    # edge is guaranteed to be an outer boundary crack
    start_pixel = min(pixels, key=lambda p: (p[1], p[0]))
    start = (start_pixel[0], start_pixel[1])

    walk = [start]
    current = start
    direction = (1, 0)
    while True:
        candidates = out_edges[current]
        if len(candidates) == 1:
            nxt = candidates[0]
        else:
            preferred = _LEFT_TURN[direction]
            ranked = sorted(
                candidates,
                key=lambda end: _turn_rank(direction, (end[0] - current[0], end[1] - current[1]), preferred),
            )
            nxt = ranked[0]
        candidates.remove(nxt)
        direction = (nxt[0] - current[0], nxt[1] - current[1])
        current = nxt
        if current == start:
            break
        walk.append(current)

    # collapse collinear corner runs into turn points
    verts = []
    n = len(walk)
    for i in range(n):
        prev_pt = walk[i - 1]
        pt = walk[i]
        nxt_pt = walk[(i + 1) % n]
        d1 = (pt[0] - prev_pt[0], pt[1] - prev_pt[1])
        d2 = (nxt_pt[0] - pt[0], nxt_pt[1] - pt[1])
        if d1[0] * d2[1] - d1[1] * d2[0] != 0:
            verts.append(pt)
    return ClosedContour(vertices=tuple(verts))


def _turn_rank(direction, step, preferred):
    if step == preferred:
        return 0
    if step == direction:
        return 1
    if step == (-direction[0], -direction[1]):
        return 3
    return 2
