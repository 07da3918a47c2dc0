import io
import random

import numpy as np
import pytest
from PIL import Image

from changekit.config import default_palette
from changekit.errors import BackgroundCategoryRequested, DecodeFailure, UnknownPixelValue
from changekit.geometry import rasterize_ring
from changekit.raster import (
    LabelGrid,
    connected_components,
    count_objects,
    decode_change_map,
    signed_area,
    trace_contour,
)
from oracles import flood_fill_components


def png_bytes(array: np.ndarray, mode: str = "L") -> bytes:
    buf = io.BytesIO()
    Image.fromarray(array.astype(np.uint8), mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def grid_from(rows: list[list[int]]) -> LabelGrid:
    arr = np.asarray(rows, dtype=np.int32)
    return LabelGrid(width=arr.shape[1], height=arr.shape[0], labels=arr)


# ---------------------------------------------------------------------------
# decoding
# ---------------------------------------------------------------------------

def test_decode_all_black():
    grid = decode_change_map(png_bytes(np.zeros((4, 4))), default_palette())
    assert grid.width == grid.height == 4
    assert not grid.has_change()
    assert grid.labels.sum() == 0


def test_decode_single_road_pixel():
    arr = np.zeros((2, 2))
    arr[1, 1] = 128  # (x=1, y=1)
    grid = decode_change_map(png_bytes(arr), default_palette())
    assert grid.labels.tolist() == [[0, 0], [0, 1]]
    assert grid.label_at(1, 1) == 1


def test_decode_unknown_value_reports_location():
    arr = np.zeros((3, 3))
    arr[2, 1] = 77
    with pytest.raises(UnknownPixelValue) as exc:
        decode_change_map(png_bytes(arr), default_palette())
    assert exc.value.value == 77
    assert exc.value.location == (1, 2)


def test_decode_rgb_color_palette():
    from changekit.config import parse_config_text

    palette = parse_config_text(
        "palette.0,0,0 = background\npalette.255,0,0 = building\n"
    ).corpus.palette
    arr = np.zeros((2, 2, 3))
    arr[0, 1] = (255, 0, 0)
    grid = decode_change_map(png_bytes(arr, mode="RGB"), palette)
    assert grid.labels.tolist() == [[0, 1], [0, 0]]


def test_decode_gray_coded_rgb_image():
    arr = np.zeros((2, 2, 3))
    arr[1, 0] = (128, 128, 128)
    grid = decode_change_map(png_bytes(arr, mode="RGB"), default_palette())
    assert grid.labels.tolist() == [[0, 0], [1, 0]]


def test_decode_garbage_bytes():
    with pytest.raises(DecodeFailure):
        decode_change_map(b"not a png", default_palette())


# ---------------------------------------------------------------------------
# connected components
# ---------------------------------------------------------------------------

def test_empty_grid_has_no_components():
    grid = grid_from([[0, 0], [0, 0]])
    assert connected_components(grid, 1) == []
    assert count_objects(grid, 1) == 0


def test_single_pixel_component():
    rows = [[0] * 5 for _ in range(4)]
    rows[2][3] = 1
    comps = connected_components(grid_from(rows), 1)
    assert len(comps) == 1
    assert comps[0].pixel_count == 1
    assert comps[0].bbox == (3, 2, 3, 2)
    assert comps[0].pixels == {(3, 2)}


def test_connectivity_split_vs_merge():
    grid = grid_from([[1, 0], [0, 1]])
    assert len(connected_components(grid, 1, "four")) == 2
    assert len(connected_components(grid, 1, "eight")) == 1


def test_background_category_rejected():
    with pytest.raises(BackgroundCategoryRequested):
        connected_components(grid_from([[0]]), 0)


def test_components_sorted_and_disjoint():
    rows = [[0] * 8 for _ in range(8)]
    for x, y in [(6, 0), (0, 3), (4, 5), (5, 5), (5, 6)]:
        rows[y][x] = 1
    comps = connected_components(grid_from(rows), 1, "four")
    keys = [(c.bbox[1], c.bbox[0]) for c in comps]
    assert keys == sorted(keys)
    seen = set()
    for c in comps:
        assert not (c.pixels & seen)
        seen |= c.pixels
    assert seen == {(6, 0), (0, 3), (4, 5), (5, 5), (5, 6)}


def test_min_area_filter():
    rows = [[0] * 6 for _ in range(6)]
    rows[0][0] = 1
    for x in range(2, 5):
        for y in range(2, 5):
            rows[y][x] = 1
    grid = grid_from(rows)
    assert count_objects(grid, 1, "eight") == 2
    assert count_objects(grid, 1, "eight", min_area=2) == 1


def random_grid(rng: random.Random, size=16, categories=(0, 0, 1, 1, 2)) -> list[list[int]]:
    return [[rng.choice(categories) for _ in range(size)] for _ in range(size)]


def test_matches_flood_fill_oracle_on_random_grids():
    rng = random.Random(99)
    for _ in range(120):
        rows = random_grid(rng)
        grid = grid_from(rows)
        for connectivity in ("four", "eight"):
            for category in (1, 2):
                ours = {c.pixels for c in connected_components(grid, category, connectivity)}
                assert ours == flood_fill_components(rows, category, connectivity)


def test_determinism_two_runs_identical():
    rng = random.Random(5)
    rows = random_grid(rng, size=24)
    grid = grid_from(rows)
    first = connected_components(grid, 1, "eight")
    second = connected_components(grid, 1, "eight")
    assert first == second


# ---------------------------------------------------------------------------
# contour tracing
# ---------------------------------------------------------------------------

def test_single_pixel_contour_is_unit_square():
    rows = [[0] * 3 for _ in range(3)]
    rows[0][0] = 1
    comp = connected_components(grid_from(rows), 1)[0]
    contour = trace_contour(comp, 3, 3)
    assert contour.vertices == ((0, 0), (1, 0), (1, 1), (0, 1))
    assert contour.orientation == "counter_clockwise"
    assert signed_area(contour.vertices) == pytest.approx(1.0)


def test_2x2_block_contour():
    rows = [[0] * 5 for _ in range(5)]
    for x in (1, 2):
        for y in (1, 2):
            rows[y][x] = 1
    comp = connected_components(grid_from(rows), 1)[0]
    contour = trace_contour(comp, 5, 5)
    # hand trace: square with corners (1,1) (3,1) (3,3) (1,3), side 2
    assert contour.vertices == ((1, 1), (3, 1), (3, 3), (1, 3))


def test_l_shape_contour_has_six_vertices():
    # pixels (0,0), (0,1), (1,1): hand trace gives the 6-corner L outline
    rows = [[1, 0], [1, 1]]
    comp = connected_components(grid_from(rows), 1)[0]
    contour = trace_contour(comp, 2, 2)
    assert len(contour.vertices) == 6
    assert set(contour.vertices) == {(0, 0), (1, 0), (1, 1), (2, 1), (2, 2), (0, 2)}
    assert signed_area(contour.vertices) == pytest.approx(3.0)


def test_diagonal_pair_traces_as_one_pinched_loop():
    rows = [[1, 0], [0, 1]]
    comp = connected_components(grid_from(rows), 1, "eight")[0]
    contour = trace_contour(comp, 2, 2)
    assert signed_area(contour.vertices) == pytest.approx(2.0)
    filled = rasterize_ring(contour.vertices, 2, 2)
    assert filled == {(0, 0), (1, 1)}


def test_trace_interior_covers_component_on_random_blobs():
    rng = random.Random(17)
    for _ in range(40):
        rows = random_grid(rng, size=12, categories=(0, 1, 1))
        grid = grid_from(rows)
        for comp in connected_components(grid, 1, "eight"):
            contour = trace_contour(comp, 12, 12)
            filled = rasterize_ring(contour.vertices, 12, 12)
            # outer contour recovers a superset: component plus any holes
            assert set(comp.pixels) <= filled
            assert len(filled) >= comp.pixel_count
