"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class GenerateRequest(BaseModel):
    corpus_root: str
    out_dir: str
    config_path: str | None = None
    seed: int | None = None
    connectivity: str | None = None
    epsilon: float | None = None
    precision: int | None = None
    min_area: int | None = None
    skip_unchanged: bool | None = None
    gpt_mode: str | None = None
    jobs: int | None = None


class GenerateResponse(BaseModel):
    records_path: str
    stats_path: str
    samples: int
    counts: dict[str, int]
    total: int
    gpt: dict[str, int] | None = None


class StatsRequest(BaseModel):
    dataset_path: str


class StatsResponse(BaseModel):
    samples: int
    counts: dict[str, int]
    total: int
    table: str


class ValidateRequest(BaseModel):
    dataset_path: str
    max_violations: int = Field(default=20, ge=1)


class Violation(BaseModel):
    record_id: str
    line: int
    problem: str


class ValidateResponse(BaseModel):
    valid: bool
    records: int
    total_violations: int
    violations: list[Violation]


class EvaluateRequest(BaseModel):
    corpus_root: str
    task: str
    config_path: str | None = None
    endpoint: str = "echo"
    transcripts_path: str | None = None
    rescore: bool = False
    report_path: str | None = None
    seed: int | None = None
    eval_split: str | None = None
    connectivity: str | None = None
    min_area: int | None = None


class EvaluateResponse(BaseModel):
    report: dict
    transcripts_path: str | None = None
    table: str


class ScorePair(BaseModel):
    sample_id: str
    hypothesis: str
    references: list[str] = Field(min_length=1, max_length=5)


class ScoreRequest(BaseModel):
    pairs: list[ScorePair] = Field(min_length=1)


class ScoreResponse(BaseModel):
    evaluated: int
    bleu1: float
    meteor: float
    rouge_l: float
    cider_d: float | None = None


class HealthResponse(BaseModel):
    status: str
    version: str
