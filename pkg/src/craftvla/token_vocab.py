"""Bind action-token surfaces to ids inside a base tokenizer's id space.

Two strategies:

* ``repurpose`` takes over the least frequently used base ids
  (ties go to the larger id) and records which surface each one replaced.
* ``append`` grows the vocabulary with contiguous ids starting at
  ``base_vocab_size``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

from .action_codec import DEFAULT_CONFIG, ActionToken, CameraQuantizerConfig, all_surfaces
from .errors import VocabError, VocabLookupError

FORMAT_VERSION = 1


class Strategy(str, enum.Enum):
    REPURPOSE = "repurpose"
    APPEND = "append"


ORIGIN = {Strategy.REPURPOSE: "repurposed", Strategy.APPEND: "appended"}


@dataclass(frozen=True)
class BaseVocabStats:
    entries: tuple  # of (token_id, surface, frequency)
    vocab_size: int

    def __post_init__(self):
        entries = tuple((int(i), str(s), f) for i, s, f in self.entries)
        seen = set()
        for token_id, surface, freq in entries:
            if token_id in seen:
                raise VocabError(f"duplicate base token id {token_id}")
            seen.add(token_id)
            if token_id < 0:
                raise VocabError(f"negative base token id {token_id}")
            if freq < 0:
                raise VocabError(f"negative frequency for id {token_id} ({surface!r})")
        if entries and self.vocab_size < max(seen) + 1:
            raise VocabError(f"vocab_size {self.vocab_size} smaller than max id + 1")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def from_json(cls, text: str) -> "BaseVocabStats":
        """Parse ``{"vocab_size": N, "entries": [{"id", "surface", "frequency"}, ...]}``."""
        try:
            doc = json.loads(text)
            entries = [(e["id"], e["surface"], e["frequency"]) for e in doc["entries"]]
            return cls(tuple(entries), int(doc["vocab_size"]))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise VocabError(f"malformed base vocabulary statistics: {exc}") from None


@dataclass(frozen=True)
class Binding:
    surface: str
    id: int
    origin: str
    replaced_surface: str | None = None


@dataclass(frozen=True)
class ActionTokenVocab:
    strategy: Strategy
    bindings: tuple
    base_vocab_size: int

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        object.__setattr__(self, "bindings", tuple(self.bindings))
        by_id: dict = {}
        by_surface: set = set()
        for b in self.bindings:
            if b.id in by_id:
                raise VocabError(f"id {b.id} bound to both {by_id[b.id]!r} and {b.surface!r}")
            if b.surface in by_surface:
                raise VocabError(f"surface {b.surface!r} bound twice")
            by_id[b.id] = b.surface
            by_surface.add(b.surface)
            if b.origin != ORIGIN[self.strategy]:
                raise VocabError(f"binding {b.surface!r} has origin {b.origin!r} under {self.strategy.value}")
            if self.strategy is Strategy.REPURPOSE and not 0 <= b.id < self.base_vocab_size:
                raise VocabError(f"repurposed id {b.id} for {b.surface!r} outside [0, {self.base_vocab_size})")
            if self.strategy is Strategy.APPEND and b.id < self.base_vocab_size:
                raise VocabError(f"appended id {b.id} for {b.surface!r} below base_vocab_size {self.base_vocab_size}")
        if self.strategy is Strategy.APPEND and by_id:
            ids = sorted(by_id)
            if ids != list(range(self.base_vocab_size, self.base_vocab_size + len(ids))):
                raise VocabError("appended ids must be contiguous from base_vocab_size")
        object.__setattr__(self, "_by_surface", {b.surface: b.id for b in self.bindings})
        object.__setattr__(self, "_by_id", {b.id: b.surface for b in self.bindings})

    @property
    def total_vocab_size(self) -> int:
        """Size of the id space once the action tokens are grafted in."""
        if self.strategy is Strategy.APPEND:
            return self.base_vocab_size + len(self.bindings)
        return self.base_vocab_size

    def id_of(self, surface: str) -> int:
        try:
            return self._by_surface[surface]
        except KeyError:
            raise VocabLookupError(surface) from None

    def surface_of(self, token_id: int) -> str:
        try:
            return self._by_id[token_id]
        except KeyError:
            raise VocabLookupError(token_id) from None

    def covers(self, surfaces: Iterable[str]) -> bool:
        return all(s in self._by_surface for s in surfaces)


def select_repurposed(stats: BaseVocabStats, n: int) -> list:
    """The ``n`` least-frequent entries, rarest first; ties prefer larger ids."""
    if n > len(stats.entries):
        raise VocabError(f"need {n} base entries to repurpose, only {len(stats.entries)} available")
    return sorted(stats.entries, key=lambda e: (e[2], -e[0]))[:n]


def build_vocab(
    stats: BaseVocabStats,
    strategy: Strategy | str,
    token_surfaces: Sequence[str] | None = None,
) -> ActionTokenVocab:
    """Graft ``token_surfaces`` (default: the full 62-token action grammar) onto a base vocabulary.

    Under ``repurpose`` the first surface gets the rarest base id.
    """
    strategy = Strategy(strategy)
    surfaces = list(all_surfaces() if token_surfaces is None else token_surfaces)
    if len(set(surfaces)) != len(surfaces):
        dupes = sorted({s for s in surfaces if surfaces.count(s) > 1})
        raise VocabError(f"duplicate action surfaces: {dupes}")
    if strategy is Strategy.REPURPOSE:
        chosen = select_repurposed(stats, len(surfaces))
        bindings = [
            Binding(surface, token_id, ORIGIN[strategy], replaced)
            for surface, (token_id, replaced, _) in zip(surfaces, chosen)
        ]
    else:
        bindings = [
            Binding(surface, stats.vocab_size + i, ORIGIN[strategy]) for i, surface in enumerate(surfaces)
        ]
    return ActionTokenVocab(strategy, tuple(bindings), stats.vocab_size)


def serialize_vocab(vocab: ActionTokenVocab) -> str:
    bindings = []
    for b in vocab.bindings:
        rec = {"surface": b.surface, "id": b.id, "origin": b.origin}
        if b.replaced_surface is not None:
            rec["replaced_surface"] = b.replaced_surface
        bindings.append(rec)
    doc = {"strategy": vocab.strategy.value, "base_vocab_size": vocab.base_vocab_size, "bindings": bindings}
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


_TOP_KEYS = {"strategy", "base_vocab_size", "bindings"}
_BINDING_KEYS = {"surface", "id", "origin"}
_BINDING_OPTIONAL = {"replaced_surface"}


def _require_int(value, what):
    if isinstance(value, bool) or not isinstance(value, int):
        raise VocabError(f"{what} must be an integer, got {value!r}")
    return value


def load_vocab(text: str) -> ActionTokenVocab:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise VocabError(f"vocab document is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise VocabError("vocab document must be a JSON object")
    if set(doc) != _TOP_KEYS:
        extra = sorted(set(doc) - _TOP_KEYS)
        missing = sorted(_TOP_KEYS - set(doc))
        raise VocabError(f"vocab document keys: unknown {extra}, missing {missing}")
    try:
        strategy = Strategy(doc["strategy"])
    except ValueError:
        raise VocabError(f"unknown strategy {doc['strategy']!r}") from None
    base = _require_int(doc["base_vocab_size"], "base_vocab_size")
    if not isinstance(doc["bindings"], list):
        raise VocabError("bindings must be a list")
    bindings = []
    for i, rec in enumerate(doc["bindings"]):
        if not isinstance(rec, dict):
            raise VocabError(f"binding {i} must be an object")
        keys = set(rec)
        if not _BINDING_KEYS <= keys or keys - _BINDING_KEYS - _BINDING_OPTIONAL:
            raise VocabError(f"binding {i} has keys {sorted(keys)}")
        surface = rec["surface"]
        if not isinstance(surface, str):
            raise VocabError(f"binding {i} surface must be a string")
        replaced = rec.get("replaced_surface")
        if replaced is not None and not isinstance(replaced, str):
            raise VocabError(f"binding {i} replaced_surface must be a string")
        bindings.append(Binding(surface, _require_int(rec["id"], f"binding {i} id"), rec["origin"], replaced))
    return ActionTokenVocab(strategy, tuple(bindings), base)


def tokens_to_ids(vocab: ActionTokenVocab, tokens: Iterable) -> list[int]:
    """Map tokens (``ActionToken`` or surface strings) to vocabulary ids."""
    return [vocab.id_of(t.surface if isinstance(t, ActionToken) else t) for t in tokens]


def ids_to_surfaces(vocab: ActionTokenVocab, ids: Iterable[int]) -> list[str]:
    return [vocab.surface_of(i) for i in ids]


def ids_to_tokens(
    vocab: ActionTokenVocab, ids: Iterable[int], cfg: CameraQuantizerConfig = DEFAULT_CONFIG
) -> list[ActionToken]:
    return [ActionToken.parse(s, cfg) for s in ids_to_surfaces(vocab, ids)]
