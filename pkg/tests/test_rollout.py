import json
import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_event
from craftvla.action_codec import ActionEvent
from craftvla.errors import DataError, ProtocolError
from craftvla.rollout import (
    OBSERVED_FPS_ROWS,
    LatencyModel,
    MockEnv,
    TaskSpec,
    Tolerance,
    ceil_div,
    decision_law_holds,
    fit_latency_model,
    load_task_specs,
    noop_policy,
    replay_policy,
    run_episode,
    run_task_suite,
    simulate_fps,
    staleness_ok,
    success_rate_by_chunk,
)
from craftvla.trajectory import ChunkSchedule


def scripted_task(n=11, name="chop", group="mine", perturb=0.0, seed=0, **kw):
    rng = random.Random(seed)
    events = [ActionEvent(frozenset({"attack"}), (0.0, 0.0))] + [random_event(rng) for _ in range(n - 1)]
    return TaskSpec(name, group, events, perturb_rate=perturb, **kw)


# ----------------------------------------------------------------- episodes


def test_oracle_chunk_one():
    r = run_episode(scripted_task(), 0, replay_policy, 1)
    assert r.success and r.steps == 11 and r.decisions == 11


def test_oracle_chunk_two():
    r = run_episode(scripted_task(), 0, replay_policy, 2)
    assert r.success and r.decisions == ceil_div(11, 2) == 6


@pytest.mark.parametrize("chunk", [1, 2, 3])
def test_decision_law_and_staleness(chunk):
    for seed in range(60):
        task = scripted_task(n=5 + seed % 17, seed=seed, perturb=0.1, tolerance=Tolerance(max_mismatches=seed % 3))
        for policy in (replay_policy, noop_policy):
            r = run_episode(task, seed, policy, chunk)
            assert decision_law_holds(r)
            assert staleness_ok(r)
            assert r.decisions == math.ceil(r.steps / chunk)


def test_staleness_bound_is_reached():
    r = run_episode(scripted_task(n=9), 0, replay_policy, 3)
    assert r.max_observation_age == 2


def test_noop_policy_fails():
    r = run_episode(scripted_task(), 0, noop_policy, 1)
    assert not r.success and r.steps == 1 and r.mismatches == 1


def test_tolerance_allows_mismatches():
    task = TaskSpec("t", "g", [ActionEvent(frozenset({"jump"}))] * 4, Tolerance(max_mismatches=4))
    r = run_episode(task, 0, noop_policy, 2)
    assert r.success and r.mismatches == 4


def test_camera_tolerance():
    tol = Tolerance(camera_deg=0.5)
    assert tol.matches(ActionEvent(camera=(1.4, -0.2)), ActionEvent(camera=(1.0, 0.0)))
    assert not tol.matches(ActionEvent(camera=(1.6, 0.0)), ActionEvent(camera=(1.0, 0.0)))
    assert not tol.matches(ActionEvent({"use"}), ActionEvent())


def test_wrong_event_count_is_protocol_error():
    with pytest.raises(ProtocolError):
        run_episode(scripted_task(), 0, lambda obs, hist: [ActionEvent()], 2)


def test_max_steps_ends_in_failure():
    r = run_episode(scripted_task(n=20), 0, replay_policy, 3, max_steps=7)
    assert not r.success and r.steps == 7 and r.error == "max_steps exceeded"
    assert decision_law_holds(r)
    assert run_episode(scripted_task(n=20, max_steps=7), 0, replay_policy, 1).error == "max_steps exceeded"


def test_done_env_rejects_steps():
    env = MockEnv(scripted_task(n=1), 0)
    assert env.step(ActionEvent(frozenset({"attack"})))
    with pytest.raises(ProtocolError):
        env.step(ActionEvent())


def test_chunk_cap():
    with pytest.raises(ValueError):
        run_episode(scripted_task(), 0, replay_policy, 4)
    assert run_episode(scripted_task(), 0, replay_policy, 4, allow_large_chunks=True).success
    with pytest.raises(ValueError):
        run_episode(scripted_task(), 0, replay_policy, 0)


def test_reproducible_per_seed():
    task = scripted_task(n=30, perturb=0.2)
    for seed in range(20):
        assert run_episode(task, seed, replay_policy, 3) == run_episode(task, seed, replay_policy, 3)


def test_history_passed_to_policy():
    seen = []

    def policy(obs, history):
        seen.append(len(history))
        return replay_policy(obs, history)

    run_episode(scripted_task(n=7), 0, policy, 3)
    assert seen == [0, 3, 6]


def test_stale_chunks_degrade_success_monotonically():
    task = scripted_task(n=40, perturb=0.05, seed=3)
    rates = success_rate_by_chunk(task, range(400), [1, 2, 3, 4])
    assert rates[1] == 1.0
    assert rates[1] > rates[2] > rates[3] > rates[4]
    # analytic expectation: each non-boundary tick survives with probability 1 - p
    for c, rate in rates.items():
        hidden = sum(1 for t in range(1, 40) if t % c)
        expected = 0.95**hidden
        assert abs(rate - expected) <= 3 * math.sqrt(expected * (1 - expected) / 400) + 1e-12


# -------------------------------------------------------------------- suite


def suite_tasks():
    return [scripted_task(n=8, name="chop", group="mine", seed=1), scripted_task(n=12, name="slay", group="kill", seed=2)]


def test_suite_oracle_is_perfect():
    result = run_task_suite(suite_tasks(), episodes=30)
    assert all(t.success_rate == 1.0 and t.meets_protocol for t in result.report.tasks)
    assert result.report.group_averages == {"kill": 1.0, "mine": 1.0}
    assert all(r.chunk == 2 for r in result.episodes)


def test_suite_noop_is_zero():
    result = run_task_suite(suite_tasks(), episodes=30, policy=noop_policy)
    assert all(t.success_rate == 0.0 for t in result.report.tasks)


def test_suite_is_byte_identical_across_runs_and_jobs():
    tasks = [scripted_task(n=25, name=f"t{i}", perturb=0.1, seed=i) for i in range(3)]
    a = run_task_suite(tasks, episodes=30, chunk=3).report.to_jsonl({"seed": 0})
    b = run_task_suite(tasks, episodes=30, chunk=3).report.to_jsonl({"seed": 0})
    c = run_task_suite(tasks, episodes=30, chunk=3, jobs=2).report.to_jsonl({"seed": 0})
    assert a == b == c


def test_suite_records_protocol_errors_as_failures():
    result = run_task_suite(suite_tasks(), episodes=2, policy=lambda obs, hist: [], chunk=1)
    assert all(r.error.startswith("protocol error") for r in result.episodes)
    assert all(t.success_rate == 0.0 for t in result.report.tasks)


def test_suite_rejects_duplicates_and_large_chunks():
    with pytest.raises(DataError):
        run_task_suite([scripted_task(), scripted_task()], episodes=1)
    with pytest.raises(ValueError):
        run_task_suite(suite_tasks(), episodes=1, chunk=5)
    assert run_task_suite(suite_tasks(), episodes=1, chunk=5, schedule=ChunkSchedule(allow_large=True)).report


def test_load_task_specs(tmp_path):
    p = tmp_path / "tasks.jsonl"
    rec = {
        "task": "oak_log",
        "group": "mine",
        "target_events": [{"buttons": ["attack"], "camera": [0, 0]}, {"buttons": [], "camera": [1.0, 0]}],
        "tolerance": {"camera_deg": 0.5},
        "max_steps": 10,
    }
    p.write_text(json.dumps(rec) + "\n")
    (task,) = load_task_specs(p)
    assert task.max_steps == 10 and task.tolerance.camera_deg == 0.5 and len(task.target_events) == 2
    p.write_text(json.dumps({**rec, "reward": 1}) + "\n")
    with pytest.raises(DataError):
        load_task_specs(p)


# ------------------------------------------------------------------ latency


def test_zero_step_cost_is_linear():
    m = LatencyModel(0.125, 0.0)
    assert [simulate_fps(m, c) for c in (1, 2, 3)] == [8.0, 16.0, 24.0]


@given(st.floats(1e-4, 1.0), st.floats(0.0, 0.5))
def test_fps_properties(ld, le):
    m = LatencyModel(ld, le)
    assert simulate_fps(m, 1) == pytest.approx(1 / (ld + le), rel=1e-12)
    fps = [simulate_fps(m, c) for c in range(1, 8)]
    assert all(a < b for a, b in zip(fps, fps[1:]))


def test_fit_recovers_synthetic_model():
    rng = np.random.default_rng(0)
    for _ in range(50):
        truth = LatencyModel(float(rng.uniform(0.01, 0.5)), float(rng.uniform(0, 0.05)))
        rows = [(c, simulate_fps(truth, c)) for c in (1, 2, 3, 5)]
        fit = fit_latency_model(rows)
        assert fit.model.decision_latency == pytest.approx(truth.decision_latency, abs=1e-9)
        assert fit.model.step_latency == pytest.approx(truth.step_latency, abs=1e-9)


def test_observed_fps_rows_fit():
    fit = fit_latency_model(OBSERVED_FPS_ROWS)
    # independent oracle: numpy least squares on the linearized system
    a = np.array([[1.0, c] for c, _ in OBSERVED_FPS_ROWS])
    y = np.array([c / f for c, f in OBSERVED_FPS_ROWS])
    (ld, le), *_ = np.linalg.lstsq(a, y, rcond=None)
    assert fit.model.decision_latency == pytest.approx(ld, abs=1e-12)
    assert fit.model.step_latency == pytest.approx(le, abs=1e-12)
    # frozen from that oracle
    assert fit.model.decision_latency == pytest.approx(0.115873015873, abs=1e-11)
    assert fit.model.step_latency == pytest.approx(0.008928571428, abs=1e-11)
    assert all(abs(r) <= 0.05 for r in fit.relative_residuals)
    assert [round(p, 4) for p in fit.predicted] == [8.0127, 14.9555, 21.0292]


def test_fit_rejects_degenerate_input():
    with pytest.raises(DataError):
        fit_latency_model([(2, 15.0), (2, 14.0)])
    with pytest.raises(DataError):
        fit_latency_model([(1, 8.0), (2, -1.0)])
    with pytest.raises(ValueError):
        LatencyModel(-1, 0)
