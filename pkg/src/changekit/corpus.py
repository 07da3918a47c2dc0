"""Corpus discovery and validation.

Expected on-disk layout (the ``split_dirs`` default; ``flat`` drops the
split level)::

    <root>/captions.json
    <root>/<split>/A/<sample>.png        bitemporal image, time t1
    <root>/<split>/B/<sample>.png        bitemporal image, time t2
    <root>/<split>/label/<sample>.png    change map

The caption index is a JSON object with an ``images`` array; each entry
carries ``filename``, ``split``, and either ``sentences`` (objects with a
``raw`` field) or a plain ``captions`` string array. Every sample must have
exactly five captions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from PIL import Image, UnidentifiedImageError

from .config import CorpusConfig, Palette, SPLITS
from .errors import CorpusValidationError, IoFailure, ValidationIssue
from .raster import LabelGrid, decode_change_map

CAPTIONS_PER_SAMPLE = 5


@dataclass(frozen=True)
class SampleBundle:
    """One bitemporal pair: two image refs, a change map, five captions."""

    sample_id: str
    image_a_ref: Path
    image_b_ref: Path
    change_map_ref: Path
    captions: tuple[str, ...]
    split: str


@dataclass(frozen=True)
class CorpusManifest:
    root: Path
    samples: tuple[SampleBundle, ...]
    palette: Palette
    image_size: tuple[int, int]          # (width, height)

    @property
    def category_labels(self) -> dict[int, str]:
        """Gray pixel value -> category name, for value-coded change maps."""
        return {value: self.palette.names[cat] for value, cat in self.palette.gray.items()}

    def split_samples(self, split: str) -> list[SampleBundle]:
        return [s for s in self.samples if s.split == split]

    def relative_ref(self, ref: Path) -> str:
        return ref.relative_to(self.root).as_posix()


def _index_entries(root: Path, config: CorpusConfig) -> list[dict]:
    index_path = root / config.caption_index
    if not index_path.is_file():
        # vacuous scan: a tree without a caption index holds zero samples
        return []
    try:
        data = json.loads(index_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CorpusValidationError([ValidationIssue("bad_index", "<index>", str(exc))]) from exc
    entries = data.get("images") if isinstance(data, dict) else None
    if not isinstance(entries, list):
        raise CorpusValidationError(
            [ValidationIssue("bad_index", "<index>", "caption index must be an object with an 'images' array")]
        )
    return entries


def _entry_captions(entry: dict) -> list[str]:
    if "sentences" in entry:
        out = []
        for s in entry["sentences"]:
            if isinstance(s, dict) and "raw" in s:
                out.append(str(s["raw"]))
            elif isinstance(s, str):
                out.append(s)
        return out
    if "captions" in entry:
        return [str(c) for c in entry["captions"]]
    return []


def scan_corpus(root: str | Path, config: CorpusConfig) -> CorpusManifest:
    """Discover and validate a corpus; returns samples sorted by sample_id.

    Validation aggregates every problem it finds into one
    CorpusValidationError so a broken corpus can be fixed in a single pass.
    """
    root = Path(root)
    if not root.is_dir():
        raise IoFailure(f"corpus root is not a directory: {root}")
    entries = _index_entries(root, config)

    issues: list[ValidationIssue] = []
    samples: list[SampleBundle] = []
    seen_ids: set[str] = set()
    expected_size = (config.image_width, config.image_height)

    for entry in entries:
        if not isinstance(entry, dict) or "filename" not in entry:
            issues.append(ValidationIssue("bad_index", "<index>", f"entry without filename: {entry!r}"))
            continue
        filename = str(entry["filename"])
        sample_id = Path(filename).stem
        split = str(entry.get("split", "train"))
        if split not in SPLITS:
            issues.append(ValidationIssue("bad_index", sample_id, f"unknown split {split!r}"))
            continue
        if sample_id in seen_ids:
            issues.append(ValidationIssue("duplicate_sample_id", sample_id, "sample_id appears twice in the index"))
            continue
        seen_ids.add(sample_id)

        captions = _entry_captions(entry)
        if len(captions) != CAPTIONS_PER_SAMPLE:
            issues.append(
                ValidationIssue(
                    "caption_count_mismatch",
                    sample_id,
                    f"expected {CAPTIONS_PER_SAMPLE} captions, found {len(captions)}",
                )
            )
            continue

        base = root / split if config.layout == "split_dirs" else root
        refs = {
            "t1 image": base / config.dir_a / filename,
            "t2 image": base / config.dir_b / filename,
            "change map": base / config.dir_label / filename,
        }
        missing = [f"{what}: {p}" for what, p in refs.items() if not p.is_file()]
        if missing:
            for m in missing:
                issues.append(ValidationIssue("missing_file", sample_id, m))
            continue

        map_size = _png_size(refs["change map"])
        if map_size is None:
            issues.append(ValidationIssue("missing_file", sample_id, f"unreadable change map: {refs['change map']}"))
            continue
        if map_size != expected_size:
            issues.append(
                ValidationIssue(
                    "change_map_size_mismatch",
                    sample_id,
                    f"change map is {map_size[0]}x{map_size[1]}, corpus expects {expected_size[0]}x{expected_size[1]}",
                )
            )
            continue

        samples.append(
            SampleBundle(
                sample_id=sample_id,
                image_a_ref=refs["t1 image"],
                image_b_ref=refs["t2 image"],
                change_map_ref=refs["change map"],
                captions=tuple(captions),
                split=split,
            )
        )

    if issues:
        raise CorpusValidationError(issues)
    samples.sort(key=lambda s: s.sample_id)
    return CorpusManifest(root=root, samples=tuple(samples), palette=config.palette, image_size=expected_size)


def _png_size(path: Path) -> tuple[int, int] | None:
    try:
        with Image.open(path) as img:
            return img.size
    except (UnidentifiedImageError, OSError):
        return None


def load_change_map(sample: SampleBundle, palette: Palette) -> LabelGrid:
    try:
        data = sample.change_map_ref.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read change map {sample.change_map_ref}: {exc}") from exc
    return decode_change_map(data, palette)
