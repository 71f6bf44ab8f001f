"""Trajectories, action chunks and supervised training samples.

Trajectory files are JSONL, one trajectory per line::

    {"instruction": "...", "source_tag": "contractor",
     "frames": [{"obs": "ep0/000.jpg", "buttons": ["use"], "camera": [1.2, -0.4], "tick": 0}, ...]}

Packed datasets are JSONL too. The first line is a header record, every
following line one sample::

    {"format": "craftvla.packed", "version": 1, "ignore_index": -100, "vocab_size": 151708, ...}
    {"kind": "il", "input_ids": [...], "label_ids": [...], "meta": {...}}

``-100`` is the only label value allowed outside the id range.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .action_codec import DEFAULT_CONFIG, ActionEvent, CameraQuantizerConfig, all_surfaces, encode_action
from .errors import ActionError, DatasetError, TrajectoryError
from .token_vocab import ActionTokenVocab, tokens_to_ids

log = logging.getLogger(__name__)

IGNORE_INDEX = -100
PACKED_FORMAT = "craftvla.packed"
PACKED_VERSION = 1
DEFAULT_HISTORY_LEN = 2
# Stand-in id for one observation image; real pipelines swap in their image-pad id.
DEFAULT_OBS_PLACEHOLDER_ID = 0


@dataclass(frozen=True)
class ChunkSchedule:
    """Chunk size per phase: one while post-training, three in fine-tuning, two at inference."""

    post_train: int = 1
    fine_tune: int = 3
    inference: int = 2
    allow_large: bool = False

    def __post_init__(self):
        for name in ("post_train", "fine_tune", "inference"):
            size = getattr(self, name)
            if size < 1:
                raise ValueError(f"{name} chunk size must be >= 1, got {size}")
            if size > 3 and not self.allow_large:
                raise ValueError(f"{name} chunk size {size} > 3 requires allow_large=True")

    def size(self, phase: str) -> int:
        if phase not in ("post_train", "fine_tune", "inference"):
            raise KeyError(phase)
        return getattr(self, phase)


@dataclass(frozen=True)
class TrajectoryFrame:
    observation_ref: str
    action: ActionEvent
    tick_index: int


@dataclass(frozen=True)
class Trajectory:
    instruction: str
    frames: tuple
    source_tag: str = ""

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if not self.instruction:
            raise TrajectoryError("instruction must be non-empty")
        if not self.frames:
            raise TrajectoryError("trajectory needs at least one frame")
        ticks = [f.tick_index for f in self.frames]
        for a, b in zip(ticks, ticks[1:]):
            if b <= a:
                raise TrajectoryError(f"tick indices must strictly increase, got {a} then {b}")

    @property
    def events(self) -> list[ActionEvent]:
        return [f.action for f in self.frames]

    def to_record(self) -> dict:
        return {
            "instruction": self.instruction,
            "source_tag": self.source_tag,
            "frames": [
                {"obs": f.observation_ref, **f.action.to_record(), "tick": f.tick_index} for f in self.frames
            ],
        }


@dataclass(frozen=True)
class ActionChunk:
    """``horizon`` consecutive events starting at frame position ``start``."""

    start: int
    horizon: int
    events: tuple

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        if self.horizon < 1 or len(self.events) != self.horizon:
            raise ValueError(f"chunk needs exactly horizon={self.horizon} >= 1 events, got {len(self.events)}")


class SampleKind(str, enum.Enum):
    SFT = "sft"
    IL = "il"


@dataclass(frozen=True)
class TrainingSample:
    input_ids: tuple
    label_ids: tuple
    kind: SampleKind
    meta: dict = field(default_factory=dict, compare=True, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "input_ids", tuple(self.input_ids))
        object.__setattr__(self, "label_ids", tuple(self.label_ids))
        object.__setattr__(self, "kind", SampleKind(self.kind))
        if len(self.input_ids) != len(self.label_ids):
            raise DatasetError(f"input_ids ({len(self.input_ids)}) and label_ids ({len(self.label_ids)}) differ in length")
        supervised = 0
        for pos, (i, lab) in enumerate(zip(self.input_ids, self.label_ids)):
            if lab == IGNORE_INDEX:
                continue
            if lab != i:
                raise DatasetError(f"label at position {pos} is {lab}, expected teacher-forced {i}")
            supervised += 1
        if supervised == 0:
            raise DatasetError("sample has no supervised position")

    @property
    def supervised_count(self) -> int:
        return sum(1 for lab in self.label_ids if lab != IGNORE_INDEX)

    def to_record(self) -> dict:
        return {
            "kind": self.kind.value,
            "input_ids": list(self.input_ids),
            "label_ids": list(self.label_ids),
            "meta": self.meta,
        }


# ---------------------------------------------------------------- loading


def _frame_from_record(rec) -> TrajectoryFrame:
    if not isinstance(rec, dict):
        raise TrajectoryError(f"frame must be an object, got {type(rec).__name__}")
    unknown = set(rec) - {"obs", "buttons", "camera", "tick"}
    if unknown:
        raise TrajectoryError(f"unknown frame fields {sorted(unknown)}")
    try:
        obs, buttons, camera, tick = rec["obs"], rec["buttons"], rec["camera"], rec["tick"]
    except KeyError as exc:
        raise TrajectoryError(f"frame missing field {exc}") from None
    if not isinstance(obs, str) or not isinstance(buttons, list) or isinstance(tick, bool) or not isinstance(tick, int):
        raise TrajectoryError("frame fields have wrong types")
    if not isinstance(camera, list) or len(camera) != 2 or not all(isinstance(v, (int, float)) for v in camera):
        raise TrajectoryError(f"camera must be [yaw, pitch], got {camera!r}")
    try:
        event = ActionEvent(frozenset(buttons), (float(camera[0]), float(camera[1])))
    except (ActionError, TypeError) as exc:
        raise TrajectoryError(str(exc)) from None
    return TrajectoryFrame(obs, event, tick)


def trajectory_from_record(rec) -> Trajectory:
    if not isinstance(rec, dict):
        raise TrajectoryError("trajectory record must be an object")
    if not isinstance(rec.get("instruction"), str) or not isinstance(rec.get("frames"), list):
        raise TrajectoryError("trajectory needs 'instruction' (str) and 'frames' (list)")
    tag = rec.get("source_tag", "")
    if not isinstance(tag, str):
        raise TrajectoryError("source_tag must be a string")
    frames = [_frame_from_record(f) for f in rec["frames"]]
    return Trajectory(rec["instruction"], tuple(frames), tag)


def load_trajectories(path) -> list[Trajectory]:
    """Read a trajectory JSONL file. Blank lines are skipped."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(trajectory_from_record(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise TrajectoryError(f"invalid JSON: {exc.msg}", line=lineno) from None
            except TrajectoryError as exc:
                raise TrajectoryError(str(exc), line=lineno) from None
    return out


def save_trajectories(trajectories: Iterable[Trajectory], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for traj in trajectories:
            fh.write(json.dumps(traj.to_record(), ensure_ascii=False) + "\n")


# --------------------------------------------------------------- chunking


def chunk_actions(traj: Trajectory, horizon: int, stride: int | None = None) -> list[ActionChunk]:
    """Windows of ``horizon`` events at positions 0, stride, 2*stride, ...

    ``stride`` defaults to ``horizon``. A trailing window shorter than
    ``horizon`` is dropped.
    """
    stride = horizon if stride is None else stride
    if horizon < 1 or stride < 1:
        raise ValueError(f"horizon and stride must be >= 1, got {horizon}, {stride}")
    events = traj.events
    return [
        ActionChunk(start, horizon, tuple(events[start:start + horizon]))
        for start in range(0, len(events) - horizon + 1, stride)
    ]


# ---------------------------------------------------------------- samples


def _check_action_bindings(vocab: ActionTokenVocab, cfg: CameraQuantizerConfig) -> None:
    missing = [s for s in all_surfaces(cfg) if not vocab.covers([s])]
    if missing:
        raise DatasetError(f"vocabulary lacks action bindings for {missing[:5]}{'...' if len(missing) > 5 else ''}")


def build_il_sample(
    traj: Trajectory,
    chunk: ActionChunk,
    vocab: ActionTokenVocab,
    instruction_ids: Sequence[int],
    history_len: int = DEFAULT_HISTORY_LEN,
    obs_placeholder_id: int = DEFAULT_OBS_PLACEHOLDER_ID,
    cfg: CameraQuantizerConfig = DEFAULT_CONFIG,
) -> TrainingSample:
    """Imitation sample: instruction, observation history, then the supervised action chunk.

    The history holds up to ``history_len`` adjacent frames ending at the
    chunk start (the last one is the current observation). Only action-token
    positions carry labels.
    """
    if history_len < 1:
        raise ValueError(f"history_len must be >= 1, got {history_len}")
    end = chunk.start + chunk.horizon
    if chunk.start < 0 or end > len(traj.frames) or tuple(traj.events[chunk.start:end]) != chunk.events:
        raise DatasetError(f"chunk at {chunk.start} (horizon {chunk.horizon}) is not part of this trajectory")
    _check_action_bindings(vocab, cfg)

    first = max(0, chunk.start - history_len + 1)
    history = traj.frames[first:chunk.start + 1]
    prompt = list(instruction_ids) + [obs_placeholder_id] * len(history)
    action_ids = []
    for event in chunk.events:
        action_ids += tokens_to_ids(vocab, encode_action(event, cfg))
    meta = {
        "observations": [f.observation_ref for f in history],
        "history_len": len(history),
        "start_tick": traj.frames[chunk.start].tick_index,
        "horizon": chunk.horizon,
    }
    return TrainingSample(
        tuple(prompt + action_ids),
        tuple([IGNORE_INDEX] * len(prompt) + action_ids),
        SampleKind.IL,
        meta,
    )


def build_sft_sample(
    instruction_ids: Sequence[int],
    vision_placeholder_count: int,
    answer_token_ids: Sequence[int],
    vision_placeholder_id: int = DEFAULT_OBS_PLACEHOLDER_ID,
) -> TrainingSample:
    """Question-answer sample laid out as vision, instruction, answer; only the answer is supervised."""
    answer = list(answer_token_ids)
    if not answer:
        raise DatasetError("answer must be non-empty")
    if vision_placeholder_count < 0:
        raise ValueError("vision_placeholder_count must be >= 0")
    prompt = [vision_placeholder_id] * vision_placeholder_count + list(instruction_ids)
    return TrainingSample(
        tuple(prompt + answer),
        tuple([IGNORE_INDEX] * len(prompt) + answer),
        SampleKind.SFT,
        {"vision_placeholders": vision_placeholder_count, "prompt_len": len(prompt)},
    )


def utf8_byte_ids(text: str) -> list[int]:
    """Tokenizer-free fallback: one id per UTF-8 byte (0..255)."""
    return list(text.encode("utf-8"))


def samples_from_trajectories(
    trajectories: Iterable[Trajectory],
    vocab: ActionTokenVocab,
    horizon: int = 1,
    stride: int | None = None,
    history_len: int = DEFAULT_HISTORY_LEN,
    text_to_ids: Callable[[str], list[int]] = utf8_byte_ids,
    obs_placeholder_id: int = DEFAULT_OBS_PLACEHOLDER_ID,
    cfg: CameraQuantizerConfig = DEFAULT_CONFIG,
) -> list[TrainingSample]:
    samples = []
    for traj in trajectories:
        instruction_ids = text_to_ids(traj.instruction)
        for chunk in chunk_actions(traj, horizon, stride):
            samples.append(
                build_il_sample(traj, chunk, vocab, instruction_ids, history_len, obs_placeholder_id, cfg)
            )
    return samples


# ---------------------------------------------------------------- packing


def sample_to_line(sample: TrainingSample) -> str:
    return json.dumps(sample.to_record(), sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n"


def _lines(samples: list[TrainingSample]) -> list[str]:
    return [sample_to_line(s) for s in samples]


def make_header(vocab_size: int, extra: dict | None = None) -> dict:
    header = {"format": PACKED_FORMAT, "version": PACKED_VERSION, "ignore_index": IGNORE_INDEX, "vocab_size": vocab_size}
    if extra:
        header["config"] = extra
    return header


def pack_dataset(
    samples: Sequence[TrainingSample],
    path,
    vocab_size: int | None = None,
    header_extra: dict | None = None,
    jobs: int = 1,
) -> str:
    """Write samples as packed JSONL and return the SHA-256 of the bytes written.

    ``jobs > 1`` serializes in worker processes; record order and bytes do
    not depend on it.
    """
    samples = list(samples)
    max_id = max((max(s.input_ids) for s in samples if s.input_ids), default=-1)
    if vocab_size is None:
        vocab_size = max_id + 1
    elif max_id >= vocab_size:
        raise DatasetError(f"token id {max_id} outside declared vocab_size {vocab_size}")
    if any(min(s.input_ids) < 0 for s in samples if s.input_ids):
        raise DatasetError("negative input id")

    if jobs > 1 and len(samples) > 1:
        size = math.ceil(len(samples) / jobs)
        parts = [samples[i:i + size] for i in range(0, len(samples), size)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            lines = [line for part in pool.map(_lines, parts) for line in part]
    else:
        lines = _lines(samples)

    header = json.dumps(make_header(vocab_size, header_extra), sort_keys=True, separators=(",", ":")) + "\n"
    data = (header + "".join(lines)).encode("utf-8")
    Path(path).write_bytes(data)
    log.info("packed %d samples into %s", len(samples), path)
    return hashlib.sha256(data).hexdigest()


def _int_list(value, what, offset):
    if not isinstance(value, list) or any(isinstance(v, bool) or not isinstance(v, int) for v in value):
        raise DatasetError(f"{what} must be a list of integers", offset)
    return value


def sample_from_record(rec, offset=None, vocab_size=None) -> TrainingSample:
    if not isinstance(rec, dict) or set(rec) != {"kind", "input_ids", "label_ids", "meta"}:
        raise DatasetError("sample record must have exactly kind, input_ids, label_ids, meta", offset)
    if rec["kind"] not in ("sft", "il"):
        raise DatasetError(f"unknown sample kind {rec['kind']!r}", offset)
    if not isinstance(rec["meta"], dict):
        raise DatasetError("meta must be an object", offset)
    input_ids = _int_list(rec["input_ids"], "input_ids", offset)
    label_ids = _int_list(rec["label_ids"], "label_ids", offset)
    if vocab_size is not None:
        for i in input_ids:
            if not 0 <= i < vocab_size:
                raise DatasetError(f"id {i} outside declared vocab range [0, {vocab_size})", offset)
    for lab in label_ids:
        if lab < 0 and lab != IGNORE_INDEX:
            raise DatasetError(f"label {lab} is neither an id nor the ignore sentinel", offset)
    try:
        return TrainingSample(tuple(input_ids), tuple(label_ids), rec["kind"], rec["meta"])
    except DatasetError as exc:
        raise DatasetError(str(exc), offset) from None


def _iter_lines_with_offsets(data: bytes):
    offset = 0
    while offset < len(data):
        nl = data.find(b"\n", offset)
        if nl == -1:
            raise DatasetError("truncated record (no terminating newline)", offset)
        yield offset, data[offset:nl]
        offset = nl + 1


def unpack_dataset(path) -> list[TrainingSample]:
    samples, _ = read_packed(path)
    return samples


def read_packed(path) -> tuple[list[TrainingSample], dict]:
    data = Path(path).read_bytes()
    lines = _iter_lines_with_offsets(data)
    header = None
    samples = []
    for offset, raw in lines:
        try:
            rec = json.loads(raw)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise DatasetError(f"invalid JSON record: {exc}", offset) from None
        if header is None:
            if not isinstance(rec, dict) or rec.get("format") != PACKED_FORMAT:
                raise DatasetError("missing packed-dataset header", offset)
            if rec.get("version") != PACKED_VERSION or rec.get("ignore_index") != IGNORE_INDEX:
                raise DatasetError("unsupported packed-dataset version or sentinel", offset)
            if not isinstance(rec.get("vocab_size"), int):
                raise DatasetError("header lacks integer vocab_size", offset)
            header = rec
            continue
        samples.append(sample_from_record(rec, offset, header["vocab_size"]))
    if header is None:
        raise DatasetError("empty file: missing packed-dataset header", 0)
    return samples, header


def read_samples_jsonl(path) -> list[TrainingSample]:
    """Header-less sample JSONL, as written by :func:`write_samples_jsonl`."""
    data = Path(path).read_bytes()
    out = []
    for offset, raw in _iter_lines_with_offsets(data):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise DatasetError(f"invalid JSON record: {exc}", offset) from None
        out.append(sample_from_record(rec, offset))
    return out


def write_samples_jsonl(samples: Iterable[TrainingSample], path) -> None:
    Path(path).write_text("".join(sample_to_line(s) for s in samples), encoding="utf-8")


# ------------------------------------------------------------------ stats


@dataclass(frozen=True)
class KindStats:
    samples: int = 0
    tokens: int = 0
    supervised_tokens: int = 0


@dataclass(frozen=True)
class DatasetStats:
    samples: int
    tokens: int
    supervised_tokens: int
    by_kind: dict

    def to_dict(self) -> dict:
        return {
            "samples": self.samples,
            "tokens": self.tokens,
            "supervised_tokens": self.supervised_tokens,
            "by_kind": {k: vars(v) for k, v in sorted(self.by_kind.items())},
        }


def dataset_stats(samples: Iterable[TrainingSample]) -> DatasetStats:
    counts = {k.value: [0, 0, 0] for k in SampleKind}
    for s in samples:
        c = counts[s.kind.value]
        c[0] += 1
        c[1] += len(s.input_ids)
        c[2] += s.supervised_count
    by_kind = {k: KindStats(*v) for k, v in counts.items()}
    return DatasetStats(
        sum(v.samples for v in by_kind.values()),
        sum(v.tokens for v in by_kind.values()),
        sum(v.supervised_tokens for v in by_kind.values()),
        by_kind,
    )
