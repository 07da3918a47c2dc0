"""Rule-based instruction generation.

Six record kinds are produced per corpus: five captioning records per
sample (one per reference caption), one binary change record, one
category-count record, one localization record, one three-round
conversation, plus externally supplied GPT-assisted records.

Question templates are drawn from small paraphrase pools keyed by a
sha256 of (seed, stream, sample_id), so output is varied across samples
yet byte-identical across runs.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .config import RunConfig
from .corpus import CorpusManifest, SampleBundle, load_change_map
from .errors import DegenerateResult
from .geometry import normalize, serialize_polygon, simplify
from .raster import LabelGrid, connected_components, trace_contour
from .records import (
    ASSISTANT,
    HUMAN,
    IMAGE_A_TOKEN,
    IMAGE_B_TOKEN,
    ConversationRecord,
    Turn,
)

CAPTION_QUESTION = "Please briefly describe the changes in these two images."

YES_NO_SUFFIX = "Please answer yes or no."

BINARY_QUESTIONS = tuple(
    f"{q} {YES_NO_SUFFIX}"
    for q in (
        "Have any changes occurred between these two images?",
        "Is there any difference between the two scenes?",
        "Did the area change from the first image to the second?",
        "Do these two images show any changes?",
        "Has anything changed in this area over time?",
        "Are there any new or removed objects between the two acquisitions?",
        "Comparing the two images, has the scene changed?",
        "Is the second image different from the first?",
        "Can you detect any change between these two images?",
        "Does anything differ between the earlier and the later image?",
    )
)

QUANTIFY_QUESTIONS = (
    "How many changed {categories} are there between these two images?",
    "Count the changed {categories} shown by these two images.",
    "How many {categories} were added or altered in this scene?",
    "Give the number of changed {categories} in this scene.",
    "How many {categories} have changed from the first image to the second?",
    "State the count of changed {categories} between the two acquisitions.",
    "What is the number of changed {categories} in these two images?",
    "Report how many {categories} changed in this area.",
    "Tell me the number of {categories} that changed between the two images.",
    "Between these two images, how many {categories} show change?",
)

LOCALIZE_QUESTIONS = (
    "Please outline each changed object with a polygon of normalized vertex coordinates.",
    "Delineate the contours of the changed objects using polygons in the form [(x1, y1), (x2, y2), ...].",
    "Where are the changes? Give one polygon of normalized coordinates per changed object.",
    "Mark the changed regions by listing polygon vertices with normalized coordinates.",
    "Localize every changed object with a polygon of vertex coordinates scaled to [0, 1].",
    "Trace the outlines of the changed objects as sequences of normalized vertex coordinates.",
)

ROUND2_QUESTIONS = (
    "What kinds of objects changed, and how many of each?",
    "Which categories changed, and what are the counts?",
    "Identify the changed object categories and their quantities.",
    "What changed here? List each category with its count.",
    "Tell me the changed categories and how many objects each contains.",
    "Which object types changed between the images, and how many?",
)

NO_OBJECTS_ANSWER = "There are no changed objects to outline."


def pick_template(pool, seed: int, stream: str, sample_id: str) -> str:
    digest = hashlib.sha256(f"{seed}|{stream}|{sample_id}".encode()).digest()
    return pool[int.from_bytes(digest[:8], "big") % len(pool)]


def plural(name: str, count: int) -> str:
    return name if count == 1 else f"{name}s"


def join_with_and(parts: list[str]) -> str:
    if len(parts) <= 1:
        return parts[0] if parts else ""
    return ", ".join(parts[:-1]) + " and " + parts[-1]


def binary_answer(grid: LabelGrid) -> str:
    return "yes" if grid.has_change() else "no"


def quantify_answer(counts: dict[int, int], palette) -> str:
    phrases = [f"{n} changed {plural(palette.name_of(cat), n)}" for cat, n in sorted(counts.items())]
    return f"Compared with the first image, the second image shows {join_with_and(phrases)}."


def localize_answer(polygons: dict[int, list[str]], palette) -> str:
    if not any(polygons.values()):
        return NO_OBJECTS_ANSWER
    sentences = []
    for cat in sorted(polygons):
        name = palette.name_of(cat)
        texts = polygons[cat]
        if texts:
            n = len(texts)
            sentences.append(f"The image pair shows {n} changed {plural(name, n)}, outlined by {join_with_and(texts)}.")
        else:
            sentences.append(f"There are no changed {name}s.")
    return " ".join(sentences)


@dataclass(frozen=True)
class SampleDerived:
    """Everything the generators need, computed once per sample."""

    grid: LabelGrid
    counts: dict[int, int]             # change category id -> object count
    polygons: dict[int, list[str]]     # change category id -> serialized polygons


def derive_sample(sample: SampleBundle, manifest: CorpusManifest, config: RunConfig) -> SampleDerived:
    grid = load_change_map(sample, manifest.palette)
    epsilon = config.epsilon_px()
    counts: dict[int, int] = {}
    polygons: dict[int, list[str]] = {}
    for cat, _name in manifest.palette.change_categories:
        comps = connected_components(grid, cat, config.connectivity, config.min_area)
        counts[cat] = len(comps)
        texts = []
        for comp in comps:
            contour = trace_contour(comp, grid.width, grid.height)
            try:
                simplified = simplify(contour, epsilon)
            except DegenerateResult:
                simplified = simplify(contour, 0.0)
            poly = normalize(simplified, grid.width, grid.height, category=cat)
            texts.append(_serialize_distinct(poly, config.precision))
        polygons[cat] = texts
    return SampleDerived(grid=grid, counts=counts, polygons=polygons)


def derive_all(manifest: CorpusManifest, config: RunConfig) -> list[SampleDerived]:
    """Derive every sample, fanning out across jobs when configured."""
    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            return list(pool.map(lambda s: derive_sample(s, manifest, config), manifest.samples))
    return [derive_sample(s, manifest, config) for s in manifest.samples]


def _serialize_distinct(poly, precision: int) -> str:
    # tiny objects can quantize below 3 distinct vertices; escalate precision
    for p in range(precision, 7):
        text = serialize_polygon(poly, p)
        if text.count("(") >= 3:
            return text
    return text


def _first_human(sample: SampleBundle, question: str) -> Turn:
    return Turn(HUMAN, f"{IMAGE_A_TOKEN} {IMAGE_B_TOKEN} {question}")


def _record(manifest, sample, record_id, kind, turns, provenance="rule_based"):
    return ConversationRecord(
        record_id=record_id,
        sample_id=sample.sample_id,
        kind=kind,
        provenance=provenance,
        image_a=manifest.relative_ref(sample.image_a_ref),
        image_b=manifest.relative_ref(sample.image_b_ref),
        turns=tuple(turns),
    )


def gen_caption_records(manifest: CorpusManifest, sample: SampleBundle) -> list[ConversationRecord]:
    """Five records per sample: the fixed question, one caption each."""
    return [
        _record(
            manifest,
            sample,
            f"{sample.sample_id}/caption/{i}",
            "caption",
            [_first_human(sample, CAPTION_QUESTION), Turn(ASSISTANT, caption)],
        )
        for i, caption in enumerate(sample.captions)
    ]


def gen_binary_record(manifest, sample, derived: SampleDerived, config: RunConfig) -> ConversationRecord:
    question = pick_template(BINARY_QUESTIONS, config.seed, "binary", sample.sample_id)
    return _record(
        manifest,
        sample,
        f"{sample.sample_id}/binary",
        "binary",
        [_first_human(sample, question), Turn(ASSISTANT, binary_answer(derived.grid))],
    )


def _categories_phrase(palette) -> str:
    return join_with_and([f"{name}s" for _cat, name in palette.change_categories])


def gen_quantify_record(manifest, sample, derived: SampleDerived, config: RunConfig) -> ConversationRecord:
    template = pick_template(QUANTIFY_QUESTIONS, config.seed, "quantify", sample.sample_id)
    question = template.format(categories=_categories_phrase(manifest.palette))
    return _record(
        manifest,
        sample,
        f"{sample.sample_id}/quantify",
        "quantify",
        [_first_human(sample, question), Turn(ASSISTANT, quantify_answer(derived.counts, manifest.palette))],
    )


def gen_localize_record(manifest, sample, derived: SampleDerived, config: RunConfig) -> ConversationRecord:
    question = pick_template(LOCALIZE_QUESTIONS, config.seed, "localize", sample.sample_id)
    return _record(
        manifest,
        sample,
        f"{sample.sample_id}/localize",
        "localize",
        [_first_human(sample, question), Turn(ASSISTANT, localize_answer(derived.polygons, manifest.palette))],
    )


def gen_multiturn_record(manifest, sample, derived: SampleDerived, config: RunConfig) -> ConversationRecord:
    """Three rounds of increasing difficulty: changed? -> what/how many? -> describe."""
    q1 = pick_template(BINARY_QUESTIONS, config.seed, "multi_turn.binary", sample.sample_id)
    q2 = pick_template(ROUND2_QUESTIONS, config.seed, "multi_turn.round2", sample.sample_id)
    caption = sample.captions[
        int.from_bytes(
            hashlib.sha256(f"{config.seed}|multi_turn.caption|{sample.sample_id}".encode()).digest()[:8], "big"
        )
        % len(sample.captions)
    ]
    turns = [
        _first_human(sample, q1),
        Turn(ASSISTANT, binary_answer(derived.grid)),
        Turn(HUMAN, q2),
        Turn(ASSISTANT, quantify_answer(derived.counts, manifest.palette)),
        Turn(HUMAN, CAPTION_QUESTION),
        Turn(ASSISTANT, caption),
    ]
    return _record(manifest, sample, f"{sample.sample_id}/multi_turn", "multi_turn", turns)


KIND_LABELS = {
    "caption": "Change captioning",
    "binary": "Binary change classification",
    "quantify": "Category-specific change quantification",
    "localize": "Change localization",
    "gpt_assisted": "GPT-assisted instruction",
    "multi_turn": "Multi-turn conversation",
}

KIND_ORDER = ("caption", "binary", "quantify", "localize", "gpt_assisted", "multi_turn")


@dataclass(frozen=True)
class CountReport:
    counts: dict[str, int]
    samples: int

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @classmethod
    def from_records(cls, records, samples: int) -> "CountReport":
        tally = Counter(r.kind for r in records)
        return cls(counts={k: tally.get(k, 0) for k in KIND_ORDER}, samples=samples)

    def to_dict(self) -> dict:
        return {"samples": self.samples, "counts": dict(self.counts), "total": self.total}

    def format_table(self) -> str:
        width = max(len(v) for v in KIND_LABELS.values())
        lines = [f"{'Instruction':<{width}}  Number"]
        lines.append("-" * (width + 8))
        for kind in KIND_ORDER:
            lines.append(f"{KIND_LABELS[kind]:<{width}}  {self.counts.get(kind, 0):>6}")
        lines.append("-" * (width + 8))
        lines.append(f"{'Total':<{width}}  {self.total:>6}")
        return "\n".join(lines)


def assemble_dataset(
    manifest: CorpusManifest,
    config: RunConfig,
    gpt_records: list[ConversationRecord] | None = None,
    derived: list[SampleDerived] | None = None,
) -> tuple[list[ConversationRecord], CountReport]:
    """Generate every rule-based record, slotting GPT records per sample.

    Output order is sample-major (sorted by sample_id), kind-minor:
    caption x5, binary, quantify, localize, multi_turn, then that sample's
    GPT-assisted records. GPT records for unknown samples are appended at
    the end in their given order. Pass precomputed per-sample derivations
    to avoid decoding each change map twice.
    """
    gpt_by_sample: dict[str, list[ConversationRecord]] = {}
    known = {s.sample_id for s in manifest.samples}
    leftovers: list[ConversationRecord] = []
    for r in gpt_records or []:
        if r.sample_id in known:
            gpt_by_sample.setdefault(r.sample_id, []).append(r)
        else:
            leftovers.append(r)

    if derived is not None:
        derived_all = derived
    elif config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            derived_all = list(pool.map(lambda s: derive_sample(s, manifest, config), manifest.samples))
    else:
        derived_all = [derive_sample(s, manifest, config) for s in manifest.samples]

    records: list[ConversationRecord] = []
    for sample, derived in zip(manifest.samples, derived_all):
        records.extend(gen_caption_records(manifest, sample))
        unchanged = not derived.grid.has_change()
        skip_rest = config.skip_unchanged and unchanged
        records.append(gen_binary_record(manifest, sample, derived, config))
        if not skip_rest:
            records.append(gen_quantify_record(manifest, sample, derived, config))
            records.append(gen_localize_record(manifest, sample, derived, config))
            records.append(gen_multiturn_record(manifest, sample, derived, config))
        records.extend(gpt_by_sample.get(sample.sample_id, []))
    records.extend(leftovers)
    return records, CountReport.from_records(records, samples=len(manifest.samples))
