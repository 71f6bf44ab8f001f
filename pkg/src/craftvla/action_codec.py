"""Action events <-> framed action tokens.

One environment tick is an :class:`ActionEvent` (held buttons plus a camera
delta in degrees). It is written as a frame::

    <|action_begin|><|use|><|cam_w_3|><|cam_h_2|><|action_end|>

Buttons come first in a fixed order, then the yaw (``cam_w``) and pitch
(``cam_h``) bins. Camera deltas are mu-law companded and quantized per axis.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ActionError, MalformedFrameError

HOTBAR = tuple(f"hotbar_{k}" for k in range(1, 10))
BUTTONS = (
    "forward",
    "back",
    "left",
    "right",
    "jump",
    "sneak",
    "sprint",
    "attack",
    "use",
    *HOTBAR,
    "inventory",
)
_BUTTON_RANK = {name: i for i, name in enumerate(BUTTONS)}

BEGIN_SURFACE = "<|action_begin|>"
END_SURFACE = "<|action_end|>"


@dataclass(frozen=True)
class CameraQuantizerConfig:
    mu: float = 10.0
    max_abs_delta: float = 10.0
    bins_per_axis: int = 21

    def __post_init__(self):
        if not (self.mu > 0 and math.isfinite(self.mu)):
            raise ActionError(f"mu must be positive, got {self.mu}")
        if not (self.max_abs_delta > 0 and math.isfinite(self.max_abs_delta)):
            raise ActionError(f"max_abs_delta must be positive, got {self.max_abs_delta}")
        if self.bins_per_axis < 3 or self.bins_per_axis % 2 == 0:
            raise ActionError(f"bins_per_axis must be odd and >= 3, got {self.bins_per_axis}")

    @property
    def center_bin(self) -> int:
        return (self.bins_per_axis - 1) // 2


DEFAULT_CONFIG = CameraQuantizerConfig()


@dataclass(frozen=True)
class ActionEvent:
    """Control state for one tick.

    ``camera`` is ``(yaw_delta, pitch_delta)`` in degrees.
    """

    buttons: frozenset = field(default_factory=frozenset)
    camera: tuple = (0.0, 0.0)

    def __post_init__(self):
        buttons = frozenset(self.buttons)
        unknown = sorted(b for b in buttons if b not in _BUTTON_RANK)
        if unknown:
            raise ActionError(f"unknown button(s): {', '.join(unknown)}")
        hotbars = sorted(b for b in buttons if b.startswith("hotbar_"))
        if len(hotbars) > 1:
            raise ActionError(f"hotbar selections are exclusive, got {hotbars}")
        if len(self.camera) != 2:
            raise ActionError(f"camera must be a (yaw, pitch) pair, got {self.camera!r}")
        yaw, pitch = (float(v) for v in self.camera)
        if not (math.isfinite(yaw) and math.isfinite(pitch)):
            raise ActionError(f"camera deltas must be finite, got {self.camera!r}")
        object.__setattr__(self, "buttons", buttons)
        object.__setattr__(self, "camera", (yaw, pitch))

    @classmethod
    def noop(cls) -> "ActionEvent":
        return cls()

    def sorted_buttons(self) -> list[str]:
        return sorted(self.buttons, key=_BUTTON_RANK.__getitem__)

    def to_record(self) -> dict:
        return {"buttons": self.sorted_buttons(), "camera": [self.camera[0], self.camera[1]]}

    @classmethod
    def from_record(cls, record: dict) -> "ActionEvent":
        camera = record.get("camera", (0.0, 0.0))
        return cls(frozenset(record.get("buttons", ())), tuple(camera))


class TokenKind(enum.Enum):
    BEGIN = "begin"
    END = "end"
    BUTTON = "button"
    CAM_W = "cam_w"
    CAM_H = "cam_h"


_SURFACE_RE = re.compile(r"<\|([a-z0-9_]+)\|>")
_CAM_RE = re.compile(r"(cam_[wh])_(0|[1-9][0-9]*)")


@dataclass(frozen=True)
class ActionToken:
    kind: TokenKind
    value: object = None  # button name for BUTTON, bin index for CAM_*

    @property
    def surface(self) -> str:
        if self.kind is TokenKind.BEGIN:
            return BEGIN_SURFACE
        if self.kind is TokenKind.END:
            return END_SURFACE
        if self.kind is TokenKind.BUTTON:
            return f"<|{self.value}|>"
        return f"<|{self.kind.value}_{self.value}|>"

    @classmethod
    def parse(cls, surface: str, cfg: CameraQuantizerConfig = DEFAULT_CONFIG) -> "ActionToken":
        m = _SURFACE_RE.fullmatch(surface)
        if m is None:
            raise ActionError(f"not an action token: {surface!r}")
        body = m.group(1)
        if body == "action_begin":
            return cls(TokenKind.BEGIN)
        if body == "action_end":
            return cls(TokenKind.END)
        if body in _BUTTON_RANK:
            return cls(TokenKind.BUTTON, body)
        cam = _CAM_RE.fullmatch(body)
        if cam is not None:
            index = int(cam.group(2))
            if index < cfg.bins_per_axis:
                return cls(TokenKind(cam.group(1)), index)
        raise ActionError(f"not an action token: {surface!r}")

    def __str__(self):
        return self.surface


BEGIN = ActionToken(TokenKind.BEGIN)
END = ActionToken(TokenKind.END)


def all_tokens(cfg: CameraQuantizerConfig = DEFAULT_CONFIG) -> list[ActionToken]:
    """Every token of the grammar in canonical order (62 for 21 bins)."""
    tokens = [BEGIN, END]
    tokens += [ActionToken(TokenKind.BUTTON, b) for b in BUTTONS]
    tokens += [ActionToken(TokenKind.CAM_W, i) for i in range(cfg.bins_per_axis)]
    tokens += [ActionToken(TokenKind.CAM_H, i) for i in range(cfg.bins_per_axis)]
    return tokens


def all_surfaces(cfg: CameraQuantizerConfig = DEFAULT_CONFIG) -> list[str]:
    return [t.surface for t in all_tokens(cfg)]


def compand(value: float, mu: float) -> float:
    """mu-law compression of ``value`` in [-1, 1]."""
    return math.copysign(math.log1p(mu * abs(value)) / math.log1p(mu), value)


def mu_law_encode(delta: float, cfg: CameraQuantizerConfig = DEFAULT_CONFIG) -> int:
    """Quantize a camera delta (degrees) to a bin index.

    Rounds half to even, so ``encode(-x) == bins - 1 - encode(x)``.
    """
    delta = float(delta)
    if not math.isfinite(delta):
        raise ActionError(f"camera delta must be finite, got {delta}")
    v = min(1.0, max(-1.0, delta / cfg.max_abs_delta))
    c = compand(v, cfg.mu)
    return int(round((c + 1.0) / 2.0 * (cfg.bins_per_axis - 1)))


def mu_law_decode(index: int, cfg: CameraQuantizerConfig = DEFAULT_CONFIG) -> float:
    """Bin center in degrees. The center bin decodes to exactly 0.0."""
    if isinstance(index, bool) or int(index) != index:
        raise ActionError(f"bin index must be an integer, got {index!r}")
    index = int(index)
    if not 0 <= index < cfg.bins_per_axis:
        raise ActionError(f"bin {index} outside [0, {cfg.bins_per_axis - 1}]")
    if index == cfg.center_bin:
        return 0.0
    c = 2.0 * index / (cfg.bins_per_axis - 1) - 1.0
    magnitude = cfg.max_abs_delta * ((1.0 + cfg.mu) ** abs(c) - 1.0) / cfg.mu
    return math.copysign(magnitude, c)


def mu_law_encode_array(delta, cfg: CameraQuantizerConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Vectorized :func:`mu_law_encode`; ``np.rint`` also rounds half to even."""
    delta = np.asarray(delta, dtype=np.float64)
    if not np.all(np.isfinite(delta)):
        raise ActionError("camera deltas must be finite")
    v = np.clip(delta / cfg.max_abs_delta, -1.0, 1.0)
    c = np.sign(v) * np.log1p(cfg.mu * np.abs(v)) / np.log1p(cfg.mu)
    return np.rint((c + 1.0) / 2.0 * (cfg.bins_per_axis - 1)).astype(np.int64)


def mu_law_decode_array(index, cfg: CameraQuantizerConfig = DEFAULT_CONFIG) -> np.ndarray:
    index = np.asarray(index)
    if np.any((index < 0) | (index >= cfg.bins_per_axis)):
        raise ActionError("bin index out of range")
    c = 2.0 * index / (cfg.bins_per_axis - 1) - 1.0
    out = np.sign(c) * cfg.max_abs_delta * ((1.0 + cfg.mu) ** np.abs(c) - 1.0) / cfg.mu
    out[index == cfg.center_bin] = 0.0
    return out


def encode_action(event: ActionEvent, cfg: CameraQuantizerConfig = DEFAULT_CONFIG) -> list[ActionToken]:
    tokens = [BEGIN]
    tokens += [ActionToken(TokenKind.BUTTON, b) for b in event.sorted_buttons()]
    w = mu_law_encode(event.camera[0], cfg)
    h = mu_law_encode(event.camera[1], cfg)
    if w != cfg.center_bin or h != cfg.center_bin:
        tokens.append(ActionToken(TokenKind.CAM_W, w))
        tokens.append(ActionToken(TokenKind.CAM_H, h))
    tokens.append(END)
    return tokens


def encode_actions(events: Iterable[ActionEvent], cfg: CameraQuantizerConfig = DEFAULT_CONFIG) -> list[ActionToken]:
    out = []
    for event in events:
        out.extend(encode_action(event, cfg))
    return out


def decode_actions(tokens: Sequence[ActionToken], cfg: CameraQuantizerConfig = DEFAULT_CONFIG) -> list[ActionEvent]:
    """Split a token stream on begin/end frames and rebuild one event per frame.

    Within a frame, tokens may appear in any order; a frame without camera
    tokens means zero camera motion.
    """
    events = []
    frame_start = None
    buttons: set = set()
    cam: dict = {}
    for pos, tok in enumerate(tokens):
        if tok.kind is TokenKind.BEGIN:
            if frame_start is not None:
                raise MalformedFrameError("nested action_begin", pos)
            frame_start, buttons, cam = pos, set(), {}
            continue
        if frame_start is None:
            raise MalformedFrameError(f"{tok.surface} outside an action frame", pos)
        if tok.kind is TokenKind.END:
            if len(cam) == 1:
                missing = "cam_h" if TokenKind.CAM_W in cam else "cam_w"
                raise MalformedFrameError(f"frame lacks its {missing} token", pos)
            if len(cam) == 2:
                camera = (mu_law_decode(cam[TokenKind.CAM_W], cfg), mu_law_decode(cam[TokenKind.CAM_H], cfg))
            else:
                camera = (0.0, 0.0)
            try:
                events.append(ActionEvent(frozenset(buttons), camera))
            except ActionError as exc:
                raise MalformedFrameError(str(exc), frame_start) from None
            frame_start = None
        elif tok.kind is TokenKind.BUTTON:
            if tok.value in buttons:
                raise MalformedFrameError(f"duplicate {tok.surface}", pos)
            buttons.add(tok.value)
        else:
            if tok.kind in cam:
                raise MalformedFrameError(f"duplicate {tok.kind.value} axis", pos)
            if not 0 <= tok.value < cfg.bins_per_axis:
                raise MalformedFrameError(f"{tok.surface} outside bin range", pos)
            cam[tok.kind] = tok.value
    if frame_start is not None:
        raise MalformedFrameError("unterminated action frame", frame_start)
    return events


def format_tokens(tokens: Iterable[ActionToken]) -> str:
    return "".join(t.surface for t in tokens)


_ANY_TOKEN_RE = re.compile(r"<\|[^|<>]*\|>")


def parse_token_string(text: str, cfg: CameraQuantizerConfig = DEFAULT_CONFIG) -> list[ActionToken]:
    """Parse concatenated token surfaces; whitespace between tokens is ignored."""
    tokens = []
    pos = 0
    for m in _ANY_TOKEN_RE.finditer(text):
        if text[pos:m.start()].strip():
            raise ActionError(f"unexpected text at character {pos}: {text[pos:m.start()]!r}")
        tokens.append(ActionToken.parse(m.group(0), cfg))
        pos = m.end()
    if text[pos:].strip():
        raise ActionError(f"unexpected text at character {pos}: {text[pos:]!r}")
    return tokens
