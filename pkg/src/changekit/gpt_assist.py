"""GPT-assisted instruction generation.

Builds in-context prompts (system message + seed examples + per-sample
evidence) for any OpenAI-style chat-completions endpoint, converts the
responses into conversation records, and caches raw responses so an
interrupted run resumes without re-issuing requests.

The endpoint is constrained, via the system message, to answer with a
fenced JSON array of ``{"question": ..., "answer": ...}`` objects; that is
the only response shape the parser accepts. The shipped system messages
and seed examples are reconstructions and can be replaced by pointing
``load_seeds`` at custom files.
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import httpx

from .config import RunConfig
from .corpus import CorpusManifest, SampleBundle
from .errors import (
    AuthFailure,
    ConfigError,
    EndpointTimeout,
    EndpointUnavailable,
    MissingEvidence,
    UnparseableResponse,
)
from .records import (
    ASSISTANT,
    HUMAN,
    IMAGE_A_TOKEN,
    IMAGE_B_TOKEN,
    ConversationRecord,
    Turn,
    validate_record,
)

log = logging.getLogger(__name__)

TASK_KINDS = ("qa_from_captions", "fine_grained")

SYSTEM_MESSAGES = {
    "qa_from_captions": (
        "You write question-answer pairs about the changes between two satellite "
        "images of the same area taken at different times. You will be given five "
        "reference captions describing the change. Write varied, self-contained "
        "questions a user could ask about the change, each answerable from the "
        "captions alone, with faithful answers. Respond with ONLY a fenced JSON "
        "array of objects, each having exactly two string fields, \"question\" and "
        "\"answer\". Generate {n} pairs."
    ),
    "fine_grained": (
        "You write question-answer pairs about the changes between two satellite "
        "images of the same area taken at different times. You will be given five "
        "reference captions, per-category changed-object counts, and polygon "
        "outlines of the changed objects in normalized [0, 1] vertex coordinates. "
        "Write fine-grained questions about quantities and relative locations, "
        "answered faithfully from the supplied counts and polygons. Respond with "
        "ONLY a fenced JSON array of objects, each having exactly two string "
        "fields, \"question\" and \"answer\". Generate {n} pairs."
    ),
}


@dataclass(frozen=True)
class EndpointConfig:
    """How to reach a chat-completions endpoint. The token itself is never
    stored; only the name of the environment variable holding it."""

    base_url: str
    model: str
    auth_env: str = "OPENAI_API_KEY"
    max_retries: int = 3
    timeout: float = 30.0
    max_concurrency: int = 2
    temperature: float = 0.2
    backoff_base: float = 0.5

    def __post_init__(self):
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if self.max_concurrency < 1:
            raise ConfigError("max_concurrency must be >= 1")

    @classmethod
    def from_run_config(cls, config: RunConfig, backoff_base: float = 0.5) -> "EndpointConfig":
        return cls(
            base_url=config.endpoint_base_url,
            model=config.endpoint_model,
            auth_env=config.endpoint_auth_env,
            max_retries=config.endpoint_max_retries,
            timeout=config.endpoint_timeout,
            max_concurrency=config.endpoint_concurrency,
            temperature=config.endpoint_temperature,
            backoff_base=backoff_base,
        )


@dataclass(frozen=True)
class SeedExample:
    evidence: str
    pairs: tuple[dict, ...]


@dataclass(frozen=True)
class PromptBundle:
    system_message: str
    seed_examples: tuple[SeedExample, ...]
    evidence: str
    task_kind: str

    def to_messages(self) -> list[dict]:
        messages = [{"role": "system", "content": self.system_message}]
        for seed in self.seed_examples:
            messages.append({"role": "user", "content": seed.evidence})
            messages.append({"role": "assistant", "content": _fenced_pairs(seed.pairs)})
        messages.append({"role": "user", "content": self.evidence})
        return messages


def _fenced_pairs(pairs) -> str:
    return "```json\n" + json.dumps(list(pairs), ensure_ascii=False, indent=2) + "\n```"


def load_seeds(task_kind: str, path: str | Path | None = None) -> tuple[SeedExample, ...]:
    """Load seed examples from a JSON file (default: the packaged set)."""
    if path is not None:
        raw = Path(path).read_text(encoding="utf-8")
    else:
        raw = resources.files("changekit").joinpath(f"seeds/{task_kind}.json").read_text(encoding="utf-8")
    data = json.loads(raw)
    seeds = tuple(SeedExample(evidence=e["evidence"], pairs=tuple(e["pairs"])) for e in data)
    if not seeds:
        raise ConfigError(f"seed file for {task_kind} is empty")
    return seeds


def build_evidence(
    captions,
    counts: dict[str, int] | None = None,
    polygons: dict[str, list[str]] | None = None,
) -> str:
    lines = ["Captions:"]
    lines += [f"{i}. {c}" for i, c in enumerate(captions, start=1)]
    if counts is not None:
        lines.append("Object counts: " + ", ".join(f"{name}={n}" for name, n in sorted(counts.items())))
    if polygons is not None:
        lines.append("Polygons:")
        any_poly = False
        for name in sorted(polygons):
            for k, text in enumerate(polygons[name], start=1):
                lines.append(f"{name} {k}: {text}")
                any_poly = True
        if not any_poly:
            lines.append("(none)")
    return "\n".join(lines)


def build_prompt(
    captions,
    task_kind: str,
    seeds: tuple[SeedExample, ...],
    counts: dict[str, int] | None = None,
    polygons: dict[str, list[str]] | None = None,
    pairs_requested: int = 2,
) -> PromptBundle:
    """Assemble the deterministic prompt for one sample and task kind."""
    if task_kind not in TASK_KINDS:
        raise ConfigError(f"unknown task kind {task_kind!r}")
    if len(captions) != 5:
        raise MissingEvidence(f"need 5 captions, got {len(captions)}")
    if not seeds:
        raise MissingEvidence("no seed examples supplied")
    if task_kind == "fine_grained":
        if counts is None or polygons is None:
            raise MissingEvidence("fine_grained prompts need counts and polygons")
        evidence = build_evidence(captions, counts, polygons)
    else:
        evidence = build_evidence(captions)
    return PromptBundle(
        system_message=SYSTEM_MESSAGES[task_kind].format(n=pairs_requested),
        seed_examples=seeds,
        evidence=evidence,
        task_kind=task_kind,
    )


def chat_completion(
    config: EndpointConfig,
    messages: list[dict],
    transport: httpx.BaseTransport | None = None,
    sleeper=time.sleep,
) -> str:
    """POST one chat-completions request, retrying transient failures.

    Retries (with exponential backoff) on connection errors, timeouts, 429
    and 5xx responses, up to max_retries extra attempts. 401/403 raise
    AuthFailure immediately. A missing auth env var simply sends no
    Authorization header, which suits stub and unauthenticated endpoints.
    """
    if not config.base_url:
        raise ConfigError("endpoint base_url is not configured")
    url = config.base_url.rstrip("/") + "/chat/completions"
    headers = {"Content-Type": "application/json"}
    token = os.environ.get(config.auth_env, "")
    if token:
        headers["Authorization"] = f"Bearer {token}"
    payload = {"model": config.model, "messages": messages, "temperature": config.temperature}

    last_error: Exception | None = None
    timed_out = False
    with httpx.Client(transport=transport, timeout=config.timeout) as client:
        for attempt in range(config.max_retries + 1):
            if attempt:
                sleeper(config.backoff_base * 2 ** (attempt - 1))
            try:
                response = client.post(url, json=payload, headers=headers)
            except httpx.TimeoutException as exc:
                last_error, timed_out = exc, True
                continue
            except httpx.HTTPError as exc:
                last_error = exc
                continue
            if response.status_code in (401, 403):
                raise AuthFailure(f"endpoint rejected credentials (HTTP {response.status_code})")
            if response.status_code == 429 or response.status_code >= 500:
                last_error = EndpointUnavailable(f"HTTP {response.status_code}")
                continue
            if response.status_code != 200:
                raise EndpointUnavailable(f"unexpected HTTP {response.status_code}: {response.text[:200]}")
            try:
                body = response.json()
                return body["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError, json.JSONDecodeError) as exc:
                raise EndpointUnavailable(f"malformed completion payload: {exc}") from exc
    if timed_out:
        raise EndpointTimeout(f"endpoint timed out after {config.max_retries + 1} attempts") from last_error
    raise EndpointUnavailable(f"endpoint failed after {config.max_retries + 1} attempts") from last_error


def request_generation(
    config: EndpointConfig,
    bundle: PromptBundle,
    transport: httpx.BaseTransport | None = None,
    sleeper=time.sleep,
) -> str:
    return chat_completion(config, bundle.to_messages(), transport=transport, sleeper=sleeper)


_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def parse_generated(
    text: str,
    sample_id: str,
    image_a: str,
    image_b: str,
    task_kind: str,
) -> list[ConversationRecord]:
    """Convert one response into gpt_assisted records.

    Pairs that are not {question, answer} string objects, or whose record
    fails the structural invariants, are dropped with a logged reason. A
    response yielding zero usable pairs raises UnparseableResponse.
    """
    payload = _extract_json_array(text)
    records: list[ConversationRecord] = []
    index = 0
    for i, item in enumerate(payload):
        if not isinstance(item, dict):
            log.warning("sample %s %s: pair %d is not an object, dropped", sample_id, task_kind, i)
            continue
        question = item.get("question")
        answer = item.get("answer")
        if not isinstance(question, str) or not isinstance(answer, str) or not question.strip() or not answer.strip():
            log.warning("sample %s %s: pair %d lacks question/answer strings, dropped", sample_id, task_kind, i)
            continue
        question = question.replace(IMAGE_A_TOKEN, " ").replace(IMAGE_B_TOKEN, " ")
        question = " ".join(question.split())
        answer = " ".join(answer.split())
        if not question or not answer:
            log.warning("sample %s %s: pair %d empty after cleanup, dropped", sample_id, task_kind, i)
            continue
        record = ConversationRecord(
            record_id=f"{sample_id}/gpt/{task_kind}/{index}",
            sample_id=sample_id,
            kind="gpt_assisted",
            provenance="gpt_assisted",
            image_a=image_a,
            image_b=image_b,
            turns=(Turn(HUMAN, f"{IMAGE_A_TOKEN} {IMAGE_B_TOKEN} {question}"), Turn(ASSISTANT, answer)),
        )
        problems = validate_record(record)
        if problems:
            log.warning("sample %s %s: pair %d invalid (%s), dropped", sample_id, task_kind, i, "; ".join(problems))
            continue
        records.append(record)
        index += 1
    if not records:
        raise UnparseableResponse(f"sample {sample_id} {task_kind}: no usable question/answer pairs")
    return records


def _extract_json_array(text: str) -> list:
    candidates = []
    fence = _FENCE_RE.search(text)
    if fence:
        candidates.append(fence.group(1))
    start, end = text.find("["), text.rfind("]")
    if 0 <= start < end:
        candidates.append(text[start : end + 1])
    for candidate in candidates:
        try:
            data = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if isinstance(data, list) and data:
            return data
    raise UnparseableResponse("response contains no JSON array of pairs")


# ---------------------------------------------------------------------------
# corpus-level pipeline with a resumable response cache
# ---------------------------------------------------------------------------

@dataclass
class GptGenerationStats:
    requested: int = 0
    from_cache: int = 0
    raw_pairs: int = 0
    valid_records: int = 0
    dropped_pairs: int = 0
    failed_samples: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "requested": self.requested,
            "from_cache": self.from_cache,
            "raw_pairs": self.raw_pairs,
            "valid_records": self.valid_records,
            "dropped_pairs": self.dropped_pairs,
            "failed_samples": list(self.failed_samples),
        }


def _cache_path(cache_dir: Path, task_kind: str, sample_id: str) -> Path:
    return cache_dir / task_kind / f"{sample_id}.txt"


def generate_gpt_records(
    manifest: CorpusManifest,
    derived_by_sample: dict[str, "object"],
    run_config: RunConfig,
    cache_dir: str | Path,
    transport: httpx.BaseTransport | None = None,
    sleeper=time.sleep,
) -> tuple[list[ConversationRecord], GptGenerationStats]:
    """Run both GPT tasks over a corpus, reading/writing the response cache.

    Requests for samples already cached are skipped, so re-running after an
    interruption produces exactly the record set of an uninterrupted run.
    In-flight requests are bounded by the endpoint concurrency limit.
    """
    endpoint = EndpointConfig.from_run_config(run_config)
    cache_dir = Path(cache_dir)
    seeds = {kind: load_seeds(kind) for kind in TASK_KINDS}
    pair_counts = {"qa_from_captions": run_config.gpt_qa_pairs, "fine_grained": run_config.gpt_fine_pairs}
    stats = GptGenerationStats()

    jobs = []
    for sample in manifest.samples:
        for kind in TASK_KINDS:
            if pair_counts[kind] > 0:
                path = _cache_path(cache_dir, kind, sample.sample_id)
                if path.is_file():
                    stats.from_cache += 1
                else:
                    jobs.append((sample, kind, path))

    def run_job(job):
        sample, kind, path = job
        bundle = _sample_prompt(sample, derived_by_sample[sample.sample_id], manifest, kind, seeds[kind], pair_counts[kind])
        text = request_generation(endpoint, bundle, transport=transport, sleeper=sleeper)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")

    if jobs:
        stats.requested = len(jobs)
        with ThreadPoolExecutor(max_workers=endpoint.max_concurrency) as pool:
            list(pool.map(run_job, jobs))

    records: list[ConversationRecord] = []
    for sample in manifest.samples:
        image_a = manifest.relative_ref(sample.image_a_ref)
        image_b = manifest.relative_ref(sample.image_b_ref)
        for kind in TASK_KINDS:
            if pair_counts[kind] <= 0:
                continue
            text = _cache_path(cache_dir, kind, sample.sample_id).read_text(encoding="utf-8")
            try:
                parsed = parse_generated(text, sample.sample_id, image_a, image_b, kind)
            except UnparseableResponse as exc:
                log.warning("%s", exc)
                stats.failed_samples.append(f"{sample.sample_id}/{kind}")
                continue
            raw = _raw_pair_count(text)
            stats.raw_pairs += raw
            stats.valid_records += len(parsed)
            stats.dropped_pairs += max(0, raw - len(parsed))
            records.extend(parsed)
    return records, stats


def _raw_pair_count(text: str) -> int:
    try:
        return len(_extract_json_array(text))
    except UnparseableResponse:
        return 0


def _sample_prompt(sample: SampleBundle, derived, manifest: CorpusManifest, kind, seeds, n_pairs) -> PromptBundle:
    named_counts = {manifest.palette.name_of(cat): n for cat, n in derived.counts.items()}
    named_polys = {manifest.palette.name_of(cat): list(texts) for cat, texts in derived.polygons.items()}
    if kind == "fine_grained":
        return build_prompt(sample.captions, kind, seeds, counts=named_counts, polygons=named_polys, pairs_requested=n_pairs)
    return build_prompt(sample.captions, kind, seeds, pairs_requested=n_pairs)


# ---------------------------------------------------------------------------
# deterministic offline stub
# ---------------------------------------------------------------------------

_STUB_N_RE = re.compile(r"Generate (\d+) pairs")
_STUB_CAPTION_RE = re.compile(r"^\d+\. (.+)$", re.MULTILINE)


def stub_response_for_messages(messages: list[dict]) -> str:
    """Fabricate a valid fenced-JSON response purely from the prompt text."""
    import hashlib

    system = next((m["content"] for m in messages if m["role"] == "system"), "")
    evidence = [m["content"] for m in messages if m["role"] == "user"][-1]
    n_match = _STUB_N_RE.search(system)
    n = int(n_match.group(1)) if n_match else 2
    captions = _STUB_CAPTION_RE.findall(evidence) or ["the scene changed"]
    digest = hashlib.sha256(evidence.encode()).hexdigest()[:8]
    pairs = []
    for i in range(n):
        caption = captions[i % len(captions)]
        pairs.append(
            {
                "question": f"What does comparison {digest}-{i + 1} of the two images reveal?",
                "answer": caption,
            }
        )
    return _fenced_pairs(pairs)


def deterministic_stub_transport() -> httpx.MockTransport:
    """An offline chat-completions endpoint with byte-reproducible output."""

    def handler(request: httpx.Request) -> httpx.Response:
        body = json.loads(request.content.decode("utf-8"))
        content = stub_response_for_messages(body["messages"])
        return httpx.Response(200, json={"choices": [{"message": {"content": content}}]})

    return httpx.MockTransport(handler)
