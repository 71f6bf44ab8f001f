import random
import sys
from pathlib import Path

import pytest

from craftvla.action_codec import BUTTONS, ActionEvent, mu_law_decode
from craftvla.token_vocab import BaseVocabStats, build_vocab
from craftvla.trajectory import Trajectory, TrajectoryFrame

FIXTURES = Path(__file__).parent / "fixtures"

# Two frames whose camera deltas sit exactly on the bin centers of the
# crafting example: (13, 5) with no buttons, then (3, 2) with "use".
BREAD_EVENTS = [
    ActionEvent(frozenset(), (mu_law_decode(13), mu_law_decode(5))),
    ActionEvent(frozenset({"use"}), (mu_law_decode(3), mu_law_decode(2))),
]
BREAD_FRAMES = [
    "<|action_begin|><|cam_w_13|><|cam_h_5|><|action_end|>",
    "<|action_begin|><|use|><|cam_w_3|><|cam_h_2|><|action_end|>",
]


def random_event(rng: random.Random) -> ActionEvent:
    buttons = {b for b in BUTTONS if not b.startswith("hotbar_") and rng.random() < 0.15}
    if rng.random() < 0.2:
        buttons.add(f"hotbar_{rng.randint(1, 9)}")
    if rng.random() < 0.3:
        camera = (0.0, 0.0)
    else:
        camera = (rng.uniform(-15, 15), rng.uniform(-15, 15))
    return ActionEvent(frozenset(buttons), camera)


def random_trajectory(rng: random.Random, n_frames=None) -> Trajectory:
    n = n_frames if n_frames is not None else rng.randint(1, 30)
    tick = rng.randint(0, 5)
    frames = []
    for i in range(n):
        frames.append(TrajectoryFrame(f"ep/{i:04d}.jpg", random_event(rng), tick))
        tick += rng.randint(1, 3)
    return Trajectory(f"task {rng.randint(0, 99)}: mine the log", tuple(frames), "rollout")


@pytest.fixture
def vocab():
    return build_vocab(BaseVocabStats((), 1000), "append")


@pytest.fixture
def rng():
    return random.Random(1234)


def pytest_terminal_summary(terminalreporter):
    lines = [line for name, mod in list(sys.modules.items()) if name.endswith("test_acceptance") for line in getattr(mod, "RESULTS", [])]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
