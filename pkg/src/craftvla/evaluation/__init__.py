"""Grounding scoring, success-rate aggregation and the LLM judge harness."""

from .judge import (
    BenchmarkCase,
    HttpJudgeClient,
    JudgeReport,
    JudgeVerdict,
    StubJudge,
    Verdict,
    build_judge_request,
    load_benchmark,
    parse_judge_verdict,
    run_judge_eval,
)
from .scoring import GroundingCase, GroundingReport, Outcome, box_iou, grounding_accuracy, load_grounding_cases, score_grounding
from .stats import EpisodeOutcome, SuccessReport, TaskStats, aggregate_success, group_average

__all__ = [
    "BenchmarkCase",
    "EpisodeOutcome",
    "GroundingCase",
    "GroundingReport",
    "HttpJudgeClient",
    "JudgeReport",
    "JudgeVerdict",
    "Outcome",
    "StubJudge",
    "SuccessReport",
    "TaskStats",
    "Verdict",
    "aggregate_success",
    "box_iou",
    "build_judge_request",
    "grounding_accuracy",
    "group_average",
    "load_benchmark",
    "load_grounding_cases",
    "parse_judge_verdict",
    "run_judge_eval",
    "score_grounding",
]
