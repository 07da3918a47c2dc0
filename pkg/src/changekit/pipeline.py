"""High-level operations shared by the HTTP service and the CLI."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import httpx

from .config import RunConfig
from .corpus import scan_corpus
from .errors import ConfigError, IoFailure, MalformedLine, RecordViolation, SchemaViolation
from .eval_harness import evaluate_task, make_endpoint, read_transcripts, score_transcripts
from .geometry import extract_polygon_texts, parse_polygon
from .gpt_assist import deterministic_stub_transport, generate_gpt_records
from .instructions import CountReport, assemble_dataset, derive_all
from .metrics import MetricsReport
from .records import read_records, record_from_dict, validate_record, write_records

log = logging.getLogger(__name__)

RECORDS_FILENAME = "records.jsonl"
STATS_FILENAME = "stats.json"


def generate_dataset(
    corpus_root: str | Path,
    config: RunConfig,
    out_dir: str | Path,
    transport: httpx.BaseTransport | None = None,
) -> dict:
    """Scan, generate all rule-based (and optionally GPT-assisted) records,
    and persist records.jsonl plus a stats.json tally.

    The stats file carries only run-independent content so identical
    config + seed always produce byte-identical outputs.
    """
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = scan_corpus(corpus_root, config.corpus)

    derived = derive_all(manifest, config)

    gpt_records = None
    gpt_stats_dict = None
    if config.gpt_mode != "off":
        if config.gpt_mode == "stub":
            transport = deterministic_stub_transport()
            config = _with_stub_endpoint(config)
        elif not config.endpoint_base_url:
            raise ConfigError("gpt_mode=live needs endpoint_base_url (responses are billed; see README)")
        derived_map = {s.sample_id: d for s, d in zip(manifest.samples, derived)}
        gpt_records, gpt_stats = generate_gpt_records(
            manifest, derived_map, config, out_dir / "gpt_cache", transport=transport
        )
        full = gpt_stats.to_dict()
        log.info("gpt generation: %s", full)
        gpt_stats_dict = {k: full[k] for k in ("raw_pairs", "valid_records", "dropped_pairs")}

    records, report = assemble_dataset(manifest, config, gpt_records=gpt_records, derived=derived)
    records_path = out_dir / RECORDS_FILENAME
    write_records(records, records_path)

    stats = report.to_dict()
    if gpt_stats_dict is not None:
        stats["gpt"] = gpt_stats_dict
    stats_path = out_dir / STATS_FILENAME
    stats_path.write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    return {
        "records_path": str(records_path),
        "stats_path": str(stats_path),
        "samples": report.samples,
        "counts": dict(report.counts),
        "total": report.total,
        "gpt": gpt_stats_dict,
        "report": report,
    }


def _with_stub_endpoint(config: RunConfig) -> RunConfig:
    from dataclasses import replace

    return replace(config, endpoint_base_url="http://stub.invalid") if not config.endpoint_base_url else config


def dataset_stats(dataset_path: str | Path) -> CountReport:
    records = read_records(dataset_path)
    sample_ids = {r.sample_id for r in records}
    return CountReport.from_records(records, samples=len(sample_ids))


def validate_dataset(dataset_path: str | Path) -> tuple[int, list[RecordViolation]]:
    """Check every record against the schema and structural invariants.

    Also re-parses every polygon substring embedded in turn text; a
    generated dataset must never contain an unparseable polygon.
    """
    dataset_path = Path(dataset_path)
    if not dataset_path.is_file():
        raise IoFailure(f"dataset not found: {dataset_path}")
    violations: list[RecordViolation] = []
    total = 0
    with dataset_path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            total += 1
            obj = None
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise MalformedLine(line_no, "not a JSON object")
                record = record_from_dict(obj, line_no)
            except json.JSONDecodeError as exc:
                violations.append(RecordViolation(record_id="?", line_no=line_no, problem=f"malformed JSON: {exc}"))
                continue
            except (MalformedLine, SchemaViolation) as exc:
                record_id = obj.get("record_id", "?") if isinstance(obj, dict) else "?"
                violations.append(RecordViolation(record_id=str(record_id), line_no=line_no, problem=str(exc)))
                continue
            for problem in validate_record(record):
                violations.append(RecordViolation(record_id=record.record_id, line_no=line_no, problem=problem))
            for turn in record.turns:
                for text in extract_polygon_texts(turn.text):
                    try:
                        parse_polygon(text)
                    except Exception as exc:  # noqa: BLE001 - reported, not raised
                        violations.append(
                            RecordViolation(
                                record_id=record.record_id,
                                line_no=line_no,
                                problem=f"embedded polygon does not parse: {exc}",
                            )
                        )
    return total, violations


def run_evaluation(
    corpus_root: str | Path,
    config: RunConfig,
    task: str,
    endpoint_spec: str = "echo",
    transcripts_path: str | Path | None = None,
    rescore: bool = False,
    report_path: str | Path | None = None,
    transport: httpx.BaseTransport | None = None,
) -> tuple[MetricsReport, str | None]:
    """Evaluate one task against an endpoint, or re-score saved transcripts."""
    config.validate()
    manifest = scan_corpus(corpus_root, config.corpus)
    if rescore:
        if transcripts_path is None:
            raise ConfigError("--rescore needs a transcripts file")
        entries = read_transcripts(transcripts_path)
        report = score_transcripts(entries, manifest, config, task)
    else:
        endpoint = make_endpoint(endpoint_spec, manifest, config, transport=transport)
        report, _entries = evaluate_task(endpoint, manifest, task, config, transcripts_path)
    if report_path is not None:
        Path(report_path).write_text(report.to_json() + "\n", encoding="utf-8")
    return report, str(transcripts_path) if transcripts_path else None
