"""
Chunked inference: throughput against staleness
===============================================

Predicting several actions per model call raises throughput but commits to
actions planned on an older observation.
"""

import random

from craftvla import ActionEvent, fit_latency_model, simulate_fps
from craftvla.rollout import OBSERVED_FPS_ROWS, TaskSpec, run_episode, run_task_suite, success_rate_by_chunk

# Fit per-call and per-action costs to the observed chunk/FPS rows.
fit = fit_latency_model(OBSERVED_FPS_ROWS)
m = fit.model
print(f"per call {m.decision_latency * 1000:.1f} ms, per action {m.step_latency * 1000:.2f} ms")
for (c, fps), pred in zip(fit.observed, fit.predicted):
    print(f"  chunk {c}: observed {fps:4.1f} fps, model {pred:6.3f} fps")
print("extrapolated chunk 6:", round(simulate_fps(m, 6), 2), "fps")

# A scripted task: the policy replays what it sees.
rng = random.Random(1)
script = [ActionEvent({rng.choice(["forward", "attack", "jump"])}) for _ in range(30)]
task = TaskSpec("follow", "demo", script)
for c in (1, 2, 3):
    r = run_episode(task, seed=0, policy=lambda obs, hist: obs.preview[:obs.chunk], chunk=c)
    print(f"chunk {c}: success={r.success} steps={r.steps} decisions={r.decisions}")

# Now the script changes at random ticks and only shows it at that tick.
# Anything committed earlier in the chunk goes stale.
noisy = TaskSpec("follow-noisy", "demo", script, perturb_rate=0.05)
print(success_rate_by_chunk(noisy, range(300), [1, 2, 3]))

# A whole suite, 30 seeds per task, with the default inference chunk of 2.
suite = run_task_suite([task, TaskSpec("other", "demo", script[::-1])], episodes=30)
print(suite.report.to_jsonl({"seed": 0}))
