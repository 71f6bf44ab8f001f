"""
Scoring grounding predictions and grading QA answers
====================================================

Grounding is scored by rule. Free-form answers are graded by a judge model;
here an offline stub stands in for the endpoint.
"""

import tempfile
from pathlib import Path

import numpy as np

from craftvla.evaluation import (
    BenchmarkCase,
    EpisodeOutcome,
    GroundingCase,
    StubJudge,
    aggregate_success,
    grounding_accuracy,
    run_judge_eval,
)
from craftvla.grounding import Annotation

# A point inside the ground-truth box is a hit; unparseable text is a miss.
truth = Annotation.bbox("wheat_seeds", 300, 300, 499, 449)
preds = [
    "<|point_start|>(400,350)<|point_end|>",
    "<|point_start|>(900,900)<|point_end|>",
    "I think it is in the middle",
]
cases = [GroundingCase(str(i), "wheat_seeds", truth, p) for i, p in enumerate(preds)]
print(grounding_accuracy(cases).to_dict())

# Random guessing hits at a rate equal to the box's share of the grid.
rng = np.random.default_rng(0)
guesses = [GroundingCase("r", "", truth, f"<|point_start|>({x},{y})<|point_end|>") for x, y in rng.integers(0, 1000, (20_000, 2))]
print("random hit rate:", grounding_accuracy(guesses).accuracy, "expected:", 200 * 150 / 1e6)

# Success rates per task, and unweighted per-group averages.
outcomes = [EpisodeOutcome("iron_ore", "mine", i < 24) for i in range(30)]
outcomes += [EpisodeOutcome("oak_log", "mine", i < 38) for i in range(40)]
report = aggregate_success(outcomes)
print({t.task: t.success_rate for t in report.tasks}, report.group_averages)

# Judge run with a journal, so a crashed run picks up where it stopped.
bench = [
    BenchmarkCase("k1", "knowledge", "What digs dirt fastest?", "A shovel", "a shovel"),
    BenchmarkCase("k2", "knowledge", "What smelts ore?", "A furnace", "A crafting table"),
    BenchmarkCase("v1", "visual", "What is in the hotbar slot 1?", "A torch", "A torch"),
]
journal = Path(tempfile.mkdtemp()) / "verdicts.jsonl"
result = run_judge_eval(bench, StubJudge.exact_match(), journal)
print(result.to_dict()["categories"])
stub = StubJudge.exact_match()
run_judge_eval(bench, stub, journal)
print("calls on resume:", stub.calls)
