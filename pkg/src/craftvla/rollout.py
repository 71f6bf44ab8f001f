"""Deterministic mock environment, chunked closed-loop driver and the
chunk-size / throughput latency model.

The mock task is sequence matching: the environment holds a scripted target
event per tick and the episode succeeds when the executed stream matches it
within tolerance. With ``perturb_rate > 0`` the script changes at random
ticks, and a change only becomes visible in the observation taken at that
tick. Events committed earlier in the same chunk are then stale, which is
what makes large chunks fail more often.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .action_codec import BUTTONS, ActionEvent
from .errors import DataError, ProtocolError
from .evaluation.stats import EpisodeOutcome, SuccessReport, aggregate_success
from .trajectory import ChunkSchedule

MAX_CHUNK = 3
OBSERVED_FPS_ROWS = ((1, 8.0), (2, 15.0), (3, 21.0))


@dataclass(frozen=True)
class Tolerance:
    camera_deg: float = 0.0
    max_mismatches: int = 0

    def matches(self, executed: ActionEvent, expected: ActionEvent) -> bool:
        if executed.buttons != expected.buttons:
            return False
        return all(abs(a - b) <= self.camera_deg for a, b in zip(executed.camera, expected.camera))


@dataclass(frozen=True)
class TaskSpec:
    task: str
    group: str
    target_events: tuple
    tolerance: Tolerance = Tolerance()
    max_steps: int | None = None
    perturb_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "target_events", tuple(self.target_events))
        if not self.target_events:
            raise DataError(f"task {self.task!r} has no target events")
        if not 0.0 <= self.perturb_rate <= 1.0:
            raise DataError(f"task {self.task!r}: perturb_rate must lie in [0, 1]")

    @classmethod
    def from_record(cls, rec: dict) -> "TaskSpec":
        allowed = {"task", "group", "target_events", "tolerance", "max_steps", "perturb_rate"}
        if set(rec) - allowed:
            raise DataError(f"unknown task fields {sorted(set(rec) - allowed)}")
        tol = rec.get("tolerance") or {}
        if set(tol) - {"camera_deg", "max_mismatches"}:
            raise DataError(f"unknown tolerance fields {sorted(set(tol) - {'camera_deg', 'max_mismatches'})}")
        events = tuple(ActionEvent.from_record(f) for f in rec["target_events"])
        return cls(
            rec["task"],
            rec.get("group", rec["task"]),
            events,
            Tolerance(float(tol.get("camera_deg", 0.0)), int(tol.get("max_mismatches", 0))),
            rec.get("max_steps"),
            float(rec.get("perturb_rate", 0.0)),
        )


def load_task_specs(path) -> list[TaskSpec]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(TaskSpec.from_record(json.loads(line)))
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"line {lineno}: bad task spec: {exc}") from None
    return out


@dataclass(frozen=True)
class Observation:
    tick: int
    chunk: int
    preview: tuple  # target events as currently visible, starting at ``tick``


def _divergent_event(rng: np.random.Generator, base: ActionEvent, tol: Tolerance) -> ActionEvent:
    while True:
        button = BUTTONS[int(rng.integers(len(BUTTONS)))]
        camera = (float(rng.uniform(-10, 10)), float(rng.uniform(-10, 10)))
        candidate = ActionEvent(frozenset([button]), camera)
        if not tol.matches(candidate, base):
            return candidate


class MockEnv:
    """Scripted sequence-matching environment; evolution depends only on the seed and actions."""

    def __init__(self, task: TaskSpec, seed: int):
        self.task = task
        self.seed = seed
        rng = np.random.default_rng(seed)
        base = list(task.target_events)
        truth = list(base)
        if task.perturb_rate > 0:
            # Tick 0 is always observed fresh, so it is never perturbed.
            for t in range(1, len(base)):
                if rng.random() < task.perturb_rate:
                    truth[t] = _divergent_event(rng, base[t], task.tolerance)
        self._base = tuple(base)
        self._truth = tuple(truth)
        self.tick = 0
        self.mismatches = 0
        self.done = False
        self.success = False

    @property
    def length(self) -> int:
        return len(self._truth)

    def observe(self, chunk: int) -> Observation:
        t = self.tick
        return Observation(t, chunk, self._truth[t:t + 1] + self._base[t + 1:])

    def step(self, event: ActionEvent) -> bool:
        if self.done:
            raise ProtocolError("episode is done; no further steps accepted")
        if not self.task.tolerance.matches(event, self._truth[self.tick]):
            self.mismatches += 1
        self.tick += 1
        if self.mismatches > self.task.tolerance.max_mismatches:
            self.done = True
        elif self.tick == self.length:
            self.done, self.success = True, True
        return self.done


@dataclass(frozen=True)
class EpisodeResult:
    task: str
    seed: int
    chunk: int
    success: bool
    steps: int
    decisions: int
    mismatches: int
    max_observation_age: int
    error: str | None = None

    def to_dict(self) -> dict:
        return dict(vars(self))


Policy = Callable[[Observation, tuple], Sequence[ActionEvent]]


def replay_policy(obs: Observation, history: tuple) -> list[ActionEvent]:
    """Oracle: replays the visible script, padded with no-ops past its end."""
    events = list(obs.preview[:obs.chunk])
    return events + [ActionEvent()] * (obs.chunk - len(events))


def noop_policy(obs: Observation, history: tuple) -> list[ActionEvent]:
    return [ActionEvent()] * obs.chunk


POLICIES = {"replay": replay_policy, "noop": noop_policy}


def _check_chunk(chunk: int, allow_large: bool) -> None:
    if chunk < 1:
        raise ValueError(f"chunk size must be >= 1, got {chunk}")
    if chunk > MAX_CHUNK and not allow_large:
        raise ValueError(f"chunk size {chunk} > {MAX_CHUNK} requires allow_large_chunks=True")


def run_episode(
    task: TaskSpec,
    seed: int,
    policy: Policy,
    chunk: int,
    max_steps: int | None = None,
    allow_large_chunks: bool = False,
) -> EpisodeResult:
    """Drive one episode, querying ``policy`` once every ``chunk`` steps.

    Each query must return exactly ``chunk`` events; anything else raises
    :class:`ProtocolError`. Running past ``max_steps`` ends the episode as
    a failure.
    """
    _check_chunk(chunk, allow_large_chunks)
    limit = max_steps if max_steps is not None else task.max_steps
    env = MockEnv(task, seed)
    history: list = []
    decisions = 0
    max_age = 0
    exceeded = False
    while not env.done:
        if limit is not None and env.tick >= limit:
            exceeded = True
            break
        obs = env.observe(chunk)
        events = list(policy(obs, tuple(history)))
        decisions += 1
        if len(events) != chunk:
            raise ProtocolError(f"policy returned {len(events)} events for chunk size {chunk}")
        for age, event in enumerate(events):
            if env.done or (limit is not None and env.tick >= limit):
                break
            max_age = max(max_age, age)
            env.step(event)
            history.append(event)
    return EpisodeResult(
        task.task,
        seed,
        chunk,
        env.success and not exceeded,
        env.tick,
        decisions,
        env.mismatches,
        max_age,
        "max_steps exceeded" if exceeded else None,
    )


# ---------------------------------------------------------------- suites


def _episode_job(args) -> EpisodeResult:
    task, seed, policy, chunk, allow_large = args
    try:
        return run_episode(task, seed, policy, chunk, allow_large_chunks=allow_large)
    except ProtocolError as exc:
        return EpisodeResult(task.task, seed, chunk, False, 0, 0, 0, 0, f"protocol error: {exc}")


@dataclass(frozen=True)
class SuiteResult:
    report: SuccessReport
    episodes: tuple = field(repr=False)


def run_task_suite(
    tasks: Iterable[TaskSpec],
    episodes: int = 30,
    schedule: ChunkSchedule = ChunkSchedule(),
    policy: Policy = replay_policy,
    base_seed: int = 0,
    chunk: int | None = None,
    jobs: int = 1,
) -> SuiteResult:
    """Run ``episodes`` seeded episodes per task (seeds ``base_seed + i``).

    ``chunk`` defaults to the schedule's inference size. Protocol errors
    count as failed episodes. Results do not depend on ``jobs``.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    chunk = schedule.inference if chunk is None else chunk
    _check_chunk(chunk, schedule.allow_large)
    tasks = list(tasks)
    names = [t.task for t in tasks]
    if len(set(names)) != len(names):
        raise DataError("duplicate task names in suite")
    jobs_list = [(t, base_seed + i, policy, chunk, schedule.allow_large) for t in tasks for i in range(episodes)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_episode_job, jobs_list, chunksize=max(1, len(jobs_list) // (4 * jobs))))
    else:
        results = [_episode_job(j) for j in jobs_list]
    results.sort(key=lambda r: (r.task, r.seed))
    groups = {t.task: t.group for t in tasks}
    report = aggregate_success((EpisodeOutcome(r.task, groups[r.task], r.success) for r in results), names)
    return SuiteResult(report, tuple(results))


# ------------------------------------------------------------ latency model


@dataclass(frozen=True)
class LatencyModel:
    """Seconds per policy query (``decision_latency``) and per executed action (``step_latency``)."""

    decision_latency: float
    step_latency: float

    def __post_init__(self):
        if self.decision_latency < 0 or self.step_latency < 0:
            raise ValueError("latencies must be non-negative")


def simulate_fps(model: LatencyModel, chunk: int) -> float:
    """Actions per second: ``c / (L_d + c * L_e)``."""
    if chunk < 1:
        raise ValueError(f"chunk size must be >= 1, got {chunk}")
    return chunk / (model.decision_latency + chunk * model.step_latency)


@dataclass(frozen=True)
class LatencyFit:
    model: LatencyModel
    observed: tuple
    predicted: tuple
    relative_residuals: tuple

    def to_dict(self) -> dict:
        return {
            "decision_latency": self.model.decision_latency,
            "step_latency": self.model.step_latency,
            "rows": [
                {"chunk": c, "observed_fps": f, "predicted_fps": p, "relative_residual": r}
                for (c, f), p, r in zip(self.observed, self.predicted, self.relative_residuals)
            ],
        }


def fit_latency_model(observed: Iterable[tuple]) -> LatencyFit:
    """Least-squares fit of ``c / fps = L_d + c * L_e`` over ``(c, fps)`` rows."""
    rows = [(int(c), float(f)) for c, f in observed]
    if len({c for c, _ in rows}) < 2:
        raise DataError("need at least two distinct chunk sizes to fit the latency model")
    if any(f <= 0 or c < 1 for c, f in rows):
        raise DataError("chunk sizes must be >= 1 and fps positive")
    xs = [c for c, _ in rows]
    ys = [c / f for c, f in rows]
    n = len(rows)
    mx, my = sum(xs) / n, sum(ys) / n
    sxx = sum((x - mx) ** 2 for x in xs)
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    slope = sxy / sxx
    intercept = my - slope * mx
    if intercept < 0 or slope < 0:
        raise DataError(f"fit gives negative latency (L_d={intercept:.4g}, L_e={slope:.4g})")
    model = LatencyModel(intercept, slope)
    predicted = tuple(simulate_fps(model, c) for c in xs)
    residuals = tuple(p / f - 1.0 for p, (_, f) in zip(predicted, rows))
    return LatencyFit(model, tuple(rows), predicted, residuals)


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def decision_law_holds(result: EpisodeResult) -> bool:
    return result.decisions == ceil_div(result.steps, result.chunk)


def staleness_ok(result: EpisodeResult) -> bool:
    return result.max_observation_age <= result.chunk - 1


def success_rate_by_chunk(task: TaskSpec, seeds: Sequence[int], chunks: Sequence[int], policy: Policy = replay_policy) -> dict:
    return {c: sum(run_episode(task, s, policy, c, allow_large_chunks=True).success for s in seeds) / len(seeds) for c in chunks}

