"""Per-task success rates and unweighted per-group averages."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable

from ..errors import DataError

MIN_PROTOCOL_EPISODES = 30


@dataclass(frozen=True)
class EpisodeOutcome:
    task: str
    group: str
    success: bool


@dataclass(frozen=True)
class TaskStats:
    task: str
    group: str
    episodes: int
    successes: int

    def __post_init__(self):
        if self.episodes < 1:
            raise DataError(f"task {self.task!r} has no episodes")
        if not 0 <= self.successes <= self.episodes:
            raise DataError(f"task {self.task!r}: {self.successes} successes out of {self.episodes}")

    @property
    def success_rate(self) -> float:
        return self.successes / self.episodes

    @property
    def meets_protocol(self) -> bool:
        """True once the task has been run at least 30 times."""
        return self.episodes >= MIN_PROTOCOL_EPISODES

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "group": self.group,
            "episodes": self.episodes,
            "successes": self.successes,
            "success_rate": self.success_rate,
            "meets_protocol": self.meets_protocol,
        }


@dataclass(frozen=True)
class SuccessReport:
    tasks: tuple
    group_averages: dict

    def to_jsonl(self, header: dict | None = None) -> str:
        lines = []
        if header is not None:
            lines.append({"header": header})
        lines += [t.to_dict() for t in self.tasks]
        lines.append({"summary": {"group_averages": dict(sorted(self.group_averages.items()))}})
        return "".join(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n" for rec in lines)


def group_average(rates: Iterable[float]) -> float:
    rates = list(rates)
    if not rates:
        raise DataError("cannot average an empty group")
    return sum(rates) / len(rates)


def aggregate_success(outcomes: Iterable[EpisodeOutcome], tasks: Iterable[str] | None = None) -> SuccessReport:
    """Fold episode outcomes into sorted per-task stats and group averages.

    ``tasks`` optionally names tasks that must be present; one without any
    episode raises :class:`DataError`.
    """
    counts: dict = defaultdict(lambda: [0, 0])
    groups: dict = {}
    for o in outcomes:
        if groups.setdefault(o.task, o.group) != o.group:
            raise DataError(f"task {o.task!r} appears in groups {groups[o.task]!r} and {o.group!r}")
        c = counts[o.task]
        c[0] += 1
        c[1] += bool(o.success)
    for task in tasks or ():
        if task not in counts:
            raise DataError(f"task {task!r} has no episodes")
    stats = tuple(
        TaskStats(task, groups[task], n, k) for task, (n, k) in sorted(counts.items(), key=lambda kv: (groups[kv[0]], kv[0]))
    )
    by_group: dict = defaultdict(list)
    for s in stats:
        by_group[s.group].append(s.success_rate)
    return SuccessReport(stats, {g: group_average(r) for g, r in sorted(by_group.items())})
