"""Evaluation harness: drive a model endpoint through the change-analysis
tasks, persist transcripts, and score them into a MetricsReport.

Tasks
-----
caption_direct   one-shot captioning with the fixed question
caption_cot      three-round easy-to-hard dialogue (changed? -> which
                 categories / how many? -> describe), scored on the final
                 caption
binary           yes/no change classification
quantify         per-category object counts, scored by MAE
localize         polygon outlines, scored by rasterized IoU against the
                 change map

Transcripts are written to disk before scoring, and scoring is a pure
function of (transcripts, ground truth), so saved runs can be re-scored
offline and reproduce the report byte for byte.

Malformed model output never aborts a run. The fixed policy: an answer
with no yes/no token scores as incorrect; an answer with no readable count
scores as if it said 0 (an absolute error equal to the true count); an
answer with no parseable polygon scores IoU 0 against a non-empty mask.

The shipped prompt wordings are reconstructions; override them with
``prompt.binary``, ``prompt.quantify``, ``prompt.localize``,
``prompt.cot_round2`` or ``prompt.caption`` config keys.
"""

from __future__ import annotations

import base64
import io
import json
import logging
import re
from dataclasses import dataclass, replace
from pathlib import Path

import httpx

from .config import RunConfig
from .corpus import CorpusManifest, SampleBundle, load_change_map
from .errors import (
    AuthFailure,
    ConfigError,
    CorpusTooSmall,
    EndpointTimeout,
    EndpointUnavailable,
    IoFailure,
    UnparseableAnswer,
)
from .geometry import (
    extract_polygon_texts,
    mask_pixels,
    normalize,
    parse_polygon,
    polygons_raster_iou,
    serialize_polygon,
    simplify,
)
from .gpt_assist import EndpointConfig, chat_completion
from .instructions import (
    CAPTION_QUESTION,
    binary_answer,
    join_with_and,
    localize_answer,
    quantify_answer,
)
from .metrics import MetricsReport, binary_scores, bleu1, cider_d, make_pair, mae, meteor, rouge_l
from .raster import connected_components, trace_contour

log = logging.getLogger(__name__)

TASKS = ("caption_direct", "caption_cot", "binary", "quantify", "localize")

# precision used by ground-truth-echo answers: fine enough that polygons
# rasterize back to the exact component pixels
ECHO_PRECISION = 4


@dataclass(frozen=True)
class EvalPrompts:
    binary: str = "Have any changes occurred between these two images? Please answer yes or no."
    quantify: str = "How many changed {categories} are there between these two images? Give a number for each category."
    localize: str = (
        "Outline each changed object with a polygon of normalized vertex "
        "coordinates in the form [(x1, y1), (x2, y2), ...]."
    )
    cot_round2: str = "What are the specific changes in {categories}? State how many of each changed."
    caption: str = CAPTION_QUESTION

    @classmethod
    def from_config(cls, config: RunConfig) -> "EvalPrompts":
        overrides = {k: v for k, v in config.prompt_overrides.items() if k in cls.__dataclass_fields__}
        return cls(**overrides)


def categories_phrase(palette) -> str:
    return join_with_and([f"{name}s" for _cat, name in palette.change_categories])


# ---------------------------------------------------------------------------
# answer parsing
# ---------------------------------------------------------------------------

_WORD_RE = re.compile(r"[a-z]+")


def parse_yes_no(text: str) -> bool:
    """First standalone yes/no token wins, case-insensitive.

    'no change(s)' parses as False through the leading 'no'. Raises
    UnparseableAnswer when neither token occurs.
    """
    for word in _WORD_RE.findall(text.lower()):
        if word == "yes":
            return True
        if word == "no":
            return False
    raise UnparseableAnswer(f"no yes/no token in {text!r}")


_UNITS = {
    "zero": 0, "one": 1, "two": 2, "three": 3, "four": 4, "five": 5,
    "six": 6, "seven": 7, "eight": 8, "nine": 9, "ten": 10,
    "eleven": 11, "twelve": 12, "thirteen": 13, "fourteen": 14,
    "fifteen": 15, "sixteen": 16, "seventeen": 17, "eighteen": 18,
    "nineteen": 19, "twenty": 20,
}
_TENS = {
    "twenty": 20, "thirty": 30, "forty": 40, "fifty": 50,
    "sixty": 60, "seventy": 70, "eighty": 80, "ninety": 90,
}
_ZERO_WORDS = {"no", "none"}

_COUNT_TOKEN_RE = re.compile(r"\d+|[a-z]+(?:-[a-z]+)*")


def _token_value(token: str) -> int | None:
    if token.isdigit():
        return int(token)
    if token in _ZERO_WORDS:
        return 0
    if token in _UNITS:
        return _UNITS[token]
    if token in _TENS:
        return _TENS[token]
    if "-" in token:
        head, _, tail = token.partition("-")
        if head in _TENS and tail in _UNITS and 1 <= _UNITS[tail] <= 9:
            return _TENS[head] + _UNITS[tail]
    return None


def parse_count(text: str, category: str) -> int:
    """Extract the count tied to a category from free text.

    Rules, in order: within the first sentence mentioning the category
    (singular or naive plural), the nearest count token before the mention
    wins, then the nearest after. Count tokens are digit strings, the
    number words zero..twenty, the tens up to ninety, hyphenated compounds
    like twenty-one, and the zero words 'no'/'none'. If the category is
    never mentioned, the first count token anywhere is used. Anything else
    raises UnparseableAnswer.
    """
    lowered = text.lower()
    names = {category.lower(), category.lower() + "s", category.lower() + "es"}
    for sentence in re.split(r"[.?!;\n]", lowered):
        tokens = _COUNT_TOKEN_RE.findall(sentence)
        positions = [i for i, t in enumerate(tokens) if t in names]
        if not positions:
            continue
        anchor = positions[0]
        for i in range(anchor - 1, -1, -1):
            value = _token_value(tokens[i])
            if value is not None:
                return value
        for i in range(anchor + 1, len(tokens)):
            value = _token_value(tokens[i])
            if value is not None:
                return value
    for token in _COUNT_TOKEN_RE.findall(lowered):
        value = _token_value(token)
        if value is not None:
            return value
    raise UnparseableAnswer(f"no count for {category!r} in {text!r}")


# ---------------------------------------------------------------------------
# endpoints
# ---------------------------------------------------------------------------

class HttpEndpoint:
    """Chat-completions endpoint with the two bitemporal images attached.

    image_mode 'attachments' sends both PNGs as separate data-URL image
    parts on the first user message; 'stitched' composites them side by
    side into a single attachment.
    """

    def __init__(self, config: EndpointConfig, image_mode: str = "attachments",
                 transport: httpx.BaseTransport | None = None):
        self.config = config
        self.image_mode = image_mode
        self.transport = transport

    def chat(self, messages: list[dict], images: tuple[Path, Path], meta: dict) -> str:
        wired = [dict(m) for m in messages]
        first_user = next(i for i, m in enumerate(wired) if m["role"] == "user")
        parts = [{"type": "text", "text": wired[first_user]["content"]}]
        for url in self._image_urls(images):
            parts.append({"type": "image_url", "image_url": {"url": url}})
        wired[first_user]["content"] = parts
        return chat_completion(self.config, wired, transport=self.transport)

    def _image_urls(self, images: tuple[Path, Path]) -> list[str]:
        if self.image_mode == "stitched":
            return [_data_url(_stitch_side_by_side(images[0], images[1]))]
        return [_data_url(p.read_bytes()) for p in images]


def _data_url(png_bytes: bytes) -> str:
    return "data:image/png;base64," + base64.b64encode(png_bytes).decode("ascii")


def _stitch_side_by_side(path_a: Path, path_b: Path) -> bytes:
    from PIL import Image

    img_a = Image.open(path_a).convert("RGB")
    img_b = Image.open(path_b).convert("RGB")
    height = max(img_a.height, img_b.height)
    combined = Image.new("RGB", (img_a.width + img_b.width, height))
    combined.paste(img_a, (0, 0))
    combined.paste(img_b, (img_a.width, 0))
    buf = io.BytesIO()
    combined.save(buf, format="PNG")
    return buf.getvalue()


class ScriptedEndpoint:
    """Replays canned responses; raises on the '<FAIL>' marker.

    script maps sample_id -> {task: response} for single-shot tasks and
    sample_id -> {"caption_cot": [r1, r2, r3]} for the dialogue.
    """

    FAIL = "<FAIL>"

    def __init__(self, script: dict):
        self.script = script

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedEndpoint":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def chat(self, messages: list[dict], images: tuple[Path, Path], meta: dict) -> str:
        entry = self.script.get(meta["sample_id"], {})
        task = meta["task"]
        if task == "caption_cot":
            responses = entry.get(task, [])
            answer = responses[meta["round"]] if meta["round"] < len(responses) else self.FAIL
        else:
            answer = entry.get(task, self.FAIL)
        if answer == self.FAIL:
            raise EndpointUnavailable(f"scripted failure for {meta['sample_id']} {task} round {meta['round']}")
        return answer


@dataclass
class _EchoDerived:
    grid: object
    counts: dict[int, int]
    polygons: dict[int, list[str]]


class EchoEndpoint:
    """Perfect model: answers every task with the ground truth.

    Localization answers use unsimplified contours at a precision fine
    enough to rasterize back to the exact change mask, so they score
    IoU 1.0 under the harness.
    """

    def __init__(self, manifest: CorpusManifest, config: RunConfig):
        self.manifest = manifest
        self.config = config
        self._by_id = {s.sample_id: s for s in manifest.samples}
        self._derived: dict[str, _EchoDerived] = {}

    def chat(self, messages: list[dict], images: tuple[Path, Path], meta: dict) -> str:
        sample = self._by_id[meta["sample_id"]]
        task, rnd = meta["task"], meta["round"]
        derived = self._derive(sample)
        palette = self.manifest.palette
        if task == "binary" or (task == "caption_cot" and rnd == 0):
            return binary_answer(derived.grid)
        if task == "quantify" or (task == "caption_cot" and rnd == 1):
            return quantify_answer(derived.counts, palette)
        if task == "localize":
            return localize_answer(derived.polygons, palette)
        return sample.captions[0]

    def _derive(self, sample: SampleBundle) -> _EchoDerived:
        cached = self._derived.get(sample.sample_id)
        if cached is not None:
            return cached
        grid = load_change_map(sample, self.manifest.palette)
        counts: dict[int, int] = {}
        polygons: dict[int, list[str]] = {}
        for cat, _name in self.manifest.palette.change_categories:
            comps = connected_components(grid, cat, self.config.connectivity, self.config.min_area)
            counts[cat] = len(comps)
            texts = []
            for comp in comps:
                ring = simplify(trace_contour(comp, grid.width, grid.height), 0.0)
                texts.append(serialize_polygon(normalize(ring, grid.width, grid.height, cat), ECHO_PRECISION))
            polygons[cat] = texts
        derived = _EchoDerived(grid=grid, counts=counts, polygons=polygons)
        self._derived[sample.sample_id] = derived
        return derived


def make_endpoint(spec: str, manifest: CorpusManifest, config: RunConfig,
                  transport: httpx.BaseTransport | None = None):
    """Build an endpoint from its CLI/service spec string.

    'echo' -> ground-truth echo stub; 'scripted:<path>' -> canned responses
    from a JSON file; anything starting with http -> live chat-completions
    endpoint using the configured model and auth env var.
    """
    if spec == "echo":
        return EchoEndpoint(manifest, config)
    if spec.startswith("scripted:"):
        return ScriptedEndpoint.from_file(spec.split(":", 1)[1])
    if spec.startswith("http://") or spec.startswith("https://"):
        endpoint_config = replace(EndpointConfig.from_run_config(config), base_url=spec)
        return HttpEndpoint(endpoint_config, image_mode=config.image_mode, transport=transport)
    raise ConfigError(f"unknown endpoint spec {spec!r} (use 'echo', 'scripted:<path>' or an http(s) URL)")


# ---------------------------------------------------------------------------
# sessions and transcripts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CotTranscript:
    """One three-round dialogue: binary round, category/count round, caption round."""

    sample_id: str
    rounds: tuple[tuple[str, str], ...]
    failed: bool = False
    error: str | None = None

    @property
    def final_caption(self) -> str | None:
        if self.failed or len(self.rounds) < 3:
            return None
        return self.rounds[2][1]

    def to_entry(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "task": "caption_cot",
            "rounds": [{"prompt": p, "response": r} for p, r in self.rounds],
            "failed": self.failed,
            "error": self.error,
        }


def cot_prompt_sequence(prompts: EvalPrompts, palette) -> list[str]:
    return [
        prompts.binary,
        prompts.cot_round2.format(categories=categories_phrase(palette)),
        prompts.caption,
    ]


def run_cot_session(endpoint, sample: SampleBundle, prompts: EvalPrompts, palette) -> CotTranscript:
    """Issue the three CoT rounds in order, carrying prior context forward."""
    questions = cot_prompt_sequence(prompts, palette)
    images = (sample.image_a_ref, sample.image_b_ref)
    messages: list[dict] = []
    rounds: list[tuple[str, str]] = []
    for idx, question in enumerate(questions):
        messages.append({"role": "user", "content": question})
        meta = {"sample_id": sample.sample_id, "task": "caption_cot", "round": idx}
        try:
            response = endpoint.chat(messages, images, meta)
        except (EndpointUnavailable, EndpointTimeout, AuthFailure) as exc:
            log.warning("cot session %s failed at round %d: %s", sample.sample_id, idx + 1, exc)
            return CotTranscript(sample.sample_id, tuple(rounds), failed=True, error=str(exc))
        if not response.strip():
            log.warning("cot session %s got an empty round-%d response", sample.sample_id, idx + 1)
            return CotTranscript(sample.sample_id, tuple(rounds), failed=True, error="empty response")
        rounds.append((question, response))
        messages.append({"role": "assistant", "content": response})
    return CotTranscript(sample.sample_id, tuple(rounds))


def single_shot_prompt(task: str, prompts: EvalPrompts, palette) -> str:
    if task == "binary":
        return prompts.binary
    if task == "quantify":
        return prompts.quantify.format(categories=categories_phrase(palette))
    if task == "localize":
        return prompts.localize
    if task == "caption_direct":
        return prompts.caption
    raise ConfigError(f"unknown task {task!r}")


def run_task(endpoint, manifest: CorpusManifest, task: str, config: RunConfig) -> list[dict]:
    """Collect one transcript entry per eval-split sample (never aborts)."""
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r} (choose from {TASKS})")
    samples = manifest.split_samples(config.eval_split)
    if not samples:
        raise ConfigError(f"eval split {config.eval_split!r} has no samples")
    prompts = EvalPrompts.from_config(config)
    entries: list[dict] = []
    for sample in samples:
        if task == "caption_cot":
            entries.append(run_cot_session(endpoint, sample, prompts, manifest.palette).to_entry())
            continue
        question = single_shot_prompt(task, prompts, manifest.palette)
        meta = {"sample_id": sample.sample_id, "task": task, "round": 0}
        try:
            response = endpoint.chat(
                [{"role": "user", "content": question}],
                (sample.image_a_ref, sample.image_b_ref),
                meta,
            )
            entries.append(
                {
                    "sample_id": sample.sample_id,
                    "task": task,
                    "rounds": [{"prompt": question, "response": response}],
                    "failed": False,
                    "error": None,
                }
            )
        except (EndpointUnavailable, EndpointTimeout, AuthFailure) as exc:
            log.warning("task %s sample %s failed: %s", task, sample.sample_id, exc)
            entries.append(
                {"sample_id": sample.sample_id, "task": task, "rounds": [{"prompt": question, "response": ""}],
                 "failed": True, "error": str(exc)}
            )
    return entries


def write_transcripts(entries: list[dict], path: str | Path) -> None:
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8") as fh:
            for entry in entries:
                fh.write(json.dumps(entry, ensure_ascii=False))
                fh.write("\n")
    except OSError as exc:
        raise IoFailure(f"cannot write transcripts to {path}: {exc}") from exc


def read_transcripts(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise IoFailure(f"transcript file not found: {path}")
    entries = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                entries.append(json.loads(line))
    return entries


# ---------------------------------------------------------------------------
# scoring (pure function of transcripts + ground truth)
# ---------------------------------------------------------------------------

def score_transcripts(entries: list[dict], manifest: CorpusManifest, config: RunConfig, task: str) -> MetricsReport:
    by_id = {s.sample_id: s for s in manifest.samples}
    grids: dict[str, object] = {}

    def grid_of(sample_id: str):
        if sample_id not in grids:
            grids[sample_id] = load_change_map(by_id[sample_id], manifest.palette)
        return grids[sample_id]

    report = MetricsReport(task=task)
    if task in ("caption_direct", "caption_cot"):
        pairs = []
        for entry in entries:
            final = None if entry["failed"] or not entry["rounds"] else entry["rounds"][-1]["response"]
            if entry["failed"] or not final or not final.strip():
                report.failed += 1
                continue
            sample = by_id[entry["sample_id"]]
            pairs.append(make_pair(sample.sample_id, final, list(sample.captions)))
        report.evaluated = len(pairs)
        if pairs:
            report.bleu1 = bleu1(pairs)
            report.meteor = meteor(pairs)
            report.rouge_l = rouge_l(pairs)
            try:
                report.cider_d = cider_d(pairs)
            except CorpusTooSmall:
                report.cider_d = None
        return report

    if task == "binary":
        preds, gts = [], []
        for entry in entries:
            gt = grid_of(entry["sample_id"]).has_change()
            if entry["failed"]:
                report.failed += 1
                pred = not gt  # a failed session scores as incorrect
            else:
                try:
                    pred = parse_yes_no(entry["rounds"][0]["response"])
                except UnparseableAnswer:
                    report.unparseable += 1
                    pred = not gt
            preds.append(pred)
            gts.append(gt)
        report.evaluated = len(preds)
        report.accuracy, report.recall = binary_scores(preds, gts)
        return report

    if task == "quantify":
        per_category: dict[str, tuple[list[int], list[int]]] = {
            name: ([], []) for _cat, name in manifest.palette.change_categories
        }
        for entry in entries:
            grid = grid_of(entry["sample_id"])
            response = "" if entry["failed"] else entry["rounds"][0]["response"]
            if entry["failed"]:
                report.failed += 1
            bad = False
            for cat, name in manifest.palette.change_categories:
                gt = len(connected_components(grid, cat, config.connectivity, config.min_area))
                try:
                    pred = parse_count(response, name) if response else 0
                except UnparseableAnswer:
                    pred = 0  # counts as the maximal error, capped at the true count
                    bad = True
                preds, gts = per_category[name]
                preds.append(pred)
                gts.append(gt)
            if bad:
                report.unparseable += 1
        report.evaluated = len(entries)
        report.mae = {name: mae(preds, gts) for name, (preds, gts) in per_category.items()}
        return report

    if task == "localize":
        ious = []
        for entry in entries:
            grid = grid_of(entry["sample_id"])
            target = set()
            for cat, _name in manifest.palette.change_categories:
                target |= mask_pixels(grid, cat)
            if entry["failed"]:
                report.failed += 1
                ious.append(0.0)
                continue
            response = entry["rounds"][0]["response"]
            texts = extract_polygon_texts(response)
            polys = []
            for text in texts:
                try:
                    polys.append(parse_polygon(text))
                except Exception:  # noqa: BLE001 - any bad polygon is just skipped
                    continue
            if texts and not polys:
                report.unparseable += 1
            ious.append(polygons_raster_iou(polys, grid, target))
        report.evaluated = len(ious)
        report.mean_iou = sum(ious) / len(ious) if ious else None
        return report

    raise ConfigError(f"unknown task {task!r}")


def evaluate_task(
    endpoint,
    manifest: CorpusManifest,
    task: str,
    config: RunConfig,
    transcripts_path: str | Path | None = None,
) -> tuple[MetricsReport, list[dict]]:
    """Run a task end to end: collect transcripts, persist them, then score."""
    entries = run_task(endpoint, manifest, task, config)
    if transcripts_path is not None:
        write_transcripts(entries, transcripts_path)
    return score_transcripts(entries, manifest, config, task), entries
