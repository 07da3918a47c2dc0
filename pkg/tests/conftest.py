"""Shared fixtures: synthetic corpora with known change maps."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from changekit.config import RunConfig, load_config

ROAD = 128
BUILDING = 255

BASE_CONFIG = "image_width = {size}\nimage_height = {size}\n"


def write_gray_png(path: Path, array: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array.astype(np.uint8), mode="L").save(path)


def label_array(size: int, blobs: list[tuple[int, int, int, int, int]]) -> np.ndarray:
    arr = np.zeros((size, size), dtype=np.uint8)
    for x, y, w, h, value in blobs:
        arr[y : y + h, x : x + w] = value
    return arr


def captions_for(sample_id: str, changed: bool) -> list[str]:
    if not changed:
        return [
            "there is no change in the scene .",
            "the two images look the same .",
            "nothing has changed over time here .",
            "no difference shows between the images .",
            "the area remains completely unchanged .",
        ]
    return [
        f"new structures appear in area {sample_id} .",
        "a road is built across the field .",
        "some buildings are constructed on the bareland .",
        "the open land now contains new objects .",
        "several changes show up in the later image .",
    ]


def make_corpus(
    root: Path,
    samples: list[dict],
    size: int = 32,
    extra_config: str = "",
) -> tuple[Path, Path]:
    """Write a corpus tree; each sample is {sample_id, split, blobs, captions?}.

    Returns (corpus_root, config_path).
    """
    entries = []
    rng = np.random.default_rng(7)
    for spec in samples:
        sid = spec["sample_id"]
        split = spec["split"]
        blobs = spec.get("blobs", [])
        caps = spec.get("captions", captions_for(sid, bool(blobs)))
        base = rng.integers(0, 256, (size, size), dtype=np.uint8)
        write_gray_png(root / split / "A" / f"{sid}.png", base)
        write_gray_png(root / split / "B" / f"{sid}.png", base)
        write_gray_png(root / split / "label" / f"{sid}.png", label_array(size, blobs))
        entries.append({"filename": f"{sid}.png", "split": split, "sentences": [{"raw": c} for c in caps]})
    (root / "captions.json").write_text(json.dumps({"images": entries}, indent=1), encoding="utf-8")
    config_path = root / "corpus.cfg"
    config_path.write_text(BASE_CONFIG.format(size=size) + extra_config, encoding="utf-8")
    return root, config_path


STANDARD_SAMPLES = [
    {"sample_id": "t00", "split": "train", "blobs": []},
    {"sample_id": "t01", "split": "train", "blobs": [(4, 6, 6, 3, ROAD)]},
    {"sample_id": "t02", "split": "train",
     "blobs": [(2, 2, 4, 4, BUILDING), (10, 10, 5, 5, BUILDING), (20, 4, 6, 6, BUILDING)]},
    {"sample_id": "t03", "split": "test", "blobs": [(3, 3, 5, 4, ROAD), (12, 12, 8, 6, BUILDING)]},
    {"sample_id": "t04", "split": "test", "blobs": []},
    {"sample_id": "t05", "split": "test", "blobs": [(0, 0, 7, 5, BUILDING), (20, 20, 9, 9, ROAD)]},
]


@pytest.fixture
def corpus(tmp_path) -> tuple[Path, RunConfig]:
    root, config_path = make_corpus(tmp_path / "corpus", STANDARD_SAMPLES)
    return root, load_config(config_path)
