"""FastAPI service wrapping the dataset and evaluation pipeline.

Errors carry a ``category`` the CLI maps to exit codes: ``validation``
(bad corpus, config or dataset), ``io`` (missing or unreadable files) and
``endpoint`` (the model endpoint kept failing).
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..config import RunConfig, apply_overrides, load_config
from ..errors import (
    AuthFailure,
    ChangekitError,
    ConfigError,
    CorpusTooSmall,
    CorpusValidationError,
    EmptyHypothesis,
    EndpointTimeout,
    EndpointUnavailable,
    IoFailure,
    MalformedLine,
    SchemaViolation,
)
from ..metrics import bleu1, cider_d, make_pair, meteor, rouge_l
from ..pipeline import dataset_stats, generate_dataset, run_evaluation, validate_dataset
from .schemas import (
    EvaluateRequest,
    EvaluateResponse,
    GenerateRequest,
    GenerateResponse,
    HealthResponse,
    ScoreRequest,
    ScoreResponse,
    StatsRequest,
    StatsResponse,
    ValidateRequest,
    ValidateResponse,
    Violation,
)

app = FastAPI(title="changekit", version=__version__)


def _error(status: int, category: str, message: str, issues: list[str] | None = None):
    return HTTPException(status_code=status, detail={"category": category, "message": message, "issues": issues or []})


def _mapped(exc: Exception) -> HTTPException:
    if isinstance(exc, CorpusValidationError):
        return _error(422, "validation", "corpus validation failed", [str(i) for i in exc.issues])
    if isinstance(exc, (ConfigError, SchemaViolation, MalformedLine, EmptyHypothesis, CorpusTooSmall)):
        return _error(422, "validation", str(exc))
    if isinstance(exc, (IoFailure, FileNotFoundError)):
        return _error(404, "io", str(exc))
    if isinstance(exc, (EndpointUnavailable, AuthFailure, EndpointTimeout)):
        return _error(502, "endpoint", str(exc))
    if isinstance(exc, ChangekitError):
        return _error(422, "validation", str(exc))
    raise exc


def _load_run_config(config_path: str | None, **overrides) -> RunConfig:
    config = load_config(config_path) if config_path else RunConfig()
    return apply_overrides(config, **overrides)


@app.get("/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__)


@app.post("/generate", response_model=GenerateResponse)
def generate(req: GenerateRequest) -> GenerateResponse:
    try:
        config = _load_run_config(
            req.config_path,
            seed=req.seed,
            connectivity=req.connectivity,
            epsilon=req.epsilon,
            precision=req.precision,
            min_area=req.min_area,
            skip_unchanged=req.skip_unchanged,
            gpt_mode=req.gpt_mode,
            jobs=req.jobs,
        )
        result = generate_dataset(req.corpus_root, config, req.out_dir)
    except Exception as exc:  # noqa: BLE001 - mapped to structured HTTP errors
        raise _mapped(exc) from exc
    return GenerateResponse(
        records_path=result["records_path"],
        stats_path=result["stats_path"],
        samples=result["samples"],
        counts=result["counts"],
        total=result["total"],
        gpt=result["gpt"],
    )


@app.post("/stats", response_model=StatsResponse)
def stats(req: StatsRequest) -> StatsResponse:
    try:
        report = dataset_stats(req.dataset_path)
    except Exception as exc:  # noqa: BLE001
        raise _mapped(exc) from exc
    return StatsResponse(samples=report.samples, counts=dict(report.counts), total=report.total,
                         table=report.format_table())


@app.post("/validate", response_model=ValidateResponse)
def validate(req: ValidateRequest) -> ValidateResponse:
    try:
        total, violations = validate_dataset(req.dataset_path)
    except Exception as exc:  # noqa: BLE001
        raise _mapped(exc) from exc
    shown = [Violation(record_id=v.record_id, line=v.line_no, problem=v.problem)
             for v in violations[: req.max_violations]]
    return ValidateResponse(valid=not violations, records=total,
                            total_violations=len(violations), violations=shown)


@app.post("/evaluate", response_model=EvaluateResponse)
def evaluate(req: EvaluateRequest) -> EvaluateResponse:
    try:
        config = _load_run_config(
            req.config_path,
            seed=req.seed,
            eval_split=req.eval_split,
            connectivity=req.connectivity,
            min_area=req.min_area,
        )
        report, transcripts_path = run_evaluation(
            req.corpus_root,
            config,
            req.task,
            endpoint_spec=req.endpoint,
            transcripts_path=req.transcripts_path,
            rescore=req.rescore,
            report_path=req.report_path,
        )
    except Exception as exc:  # noqa: BLE001
        raise _mapped(exc) from exc
    return EvaluateResponse(report=report.to_dict(), transcripts_path=transcripts_path,
                            table=report.format_table())


@app.post("/score", response_model=ScoreResponse)
def score(req: ScoreRequest) -> ScoreResponse:
    try:
        pairs = [make_pair(p.sample_id, p.hypothesis, p.references) for p in req.pairs]
        result = ScoreResponse(
            evaluated=len(pairs),
            bleu1=bleu1(pairs),
            meteor=meteor(pairs),
            rouge_l=rouge_l(pairs),
            cider_d=None,
        )
        if len(pairs) >= 2:
            result.cider_d = cider_d(pairs)
    except Exception as exc:  # noqa: BLE001
        raise _mapped(exc) from exc
    return result
