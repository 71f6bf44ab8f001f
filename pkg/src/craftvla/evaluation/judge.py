"""LLM-as-judge grading of free-form answers against reference answers.

The judge is any OpenAI-compatible ``/chat/completions`` endpoint. Requests
are text only. :class:`StubJudge` is a deterministic offline stand-in.
"""

from __future__ import annotations

import enum
import json
import logging
import os
import re
import threading
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Protocol

import httpx

from ..errors import DataError, JudgeEndpointError

log = logging.getLogger(__name__)

DEFAULT_MODEL = "gpt-4o"
DEFAULT_CONCURRENCY = 4
API_KEY_ENV = "JUDGE_API_KEY"
BASE_URL_ENV = "JUDGE_BASE_URL"

TEMPLATES = {
    "binary-v1": (
        "You are grading answers to questions about Minecraft. Compare the model answer with the "
        "reference answer. Judge only whether the model answer conveys the same facts as the "
        "reference; ignore wording and length. Reply with exactly one word: Correct or Incorrect.",
        "[Question]\n{question}\n\n[Reference Answer]\n{reference}\n\n[Model Answer]\n{answer}\n\n"
        "Is the model answer correct?",
    ),
}

# JSON schema of a chat request body.
WIRE_SCHEMA = {
    "type": "object",
    "required": ["model", "messages", "temperature"],
    "additionalProperties": False,
    "properties": {
        "model": {"type": "string", "minLength": 1},
        "temperature": {"const": 0},
        "messages": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["role", "content"],
                "additionalProperties": False,
                "properties": {
                    "role": {"enum": ["system", "user", "assistant"]},
                    "content": {"type": "string"},
                },
            },
        },
    },
}


def build_judge_request(
    question: str,
    reference_answer: str,
    model_answer: str,
    template_id: str = "binary-v1",
    model: str = DEFAULT_MODEL,
) -> dict:
    system, user = TEMPLATES[template_id]
    content = user.format(question=question, reference=reference_answer, answer=model_answer)
    return {
        "model": model,
        "messages": [{"role": "system", "content": system}, {"role": "user", "content": content}],
        "temperature": 0,
    }


def _extract(payload: dict) -> tuple[str, str, str]:
    """Recover (question, reference, answer) from a ``binary-v1`` request."""
    text = payload["messages"][-1]["content"]
    _, _, rest = text.partition("[Question]\n")
    question, _, rest = rest.partition("\n\n[Reference Answer]\n")
    reference, _, rest = rest.partition("\n\n[Model Answer]\n")
    answer, _, _ = rest.rpartition("\n\nIs the model answer correct?")
    return question, reference, answer


class Verdict(str, enum.Enum):
    CORRECT = "correct"
    INCORRECT = "incorrect"


@dataclass(frozen=True)
class JudgeVerdict:
    case_id: str
    verdict: Verdict
    reply: str
    unparsed: bool = False

    def to_record(self) -> dict:
        return {"id": self.case_id, "verdict": self.verdict.value, "reply": self.reply, "unparsed": self.unparsed}

    @classmethod
    def from_record(cls, rec: dict) -> "JudgeVerdict":
        return cls(str(rec["id"]), Verdict(rec["verdict"]), rec["reply"], bool(rec.get("unparsed", False)))


# "incorrect" is tried first so "correct" never matches inside it.
_GRADE_RE = re.compile(r"\b(incorrect|correct)\b", re.IGNORECASE)


def parse_judge_verdict(reply: str, case_id: str = "") -> JudgeVerdict:
    """First standalone "correct"/"incorrect" wins; no token means Incorrect, flagged ``unparsed``."""
    m = _GRADE_RE.search(reply or "")
    if m is None:
        return JudgeVerdict(case_id, Verdict.INCORRECT, reply, unparsed=True)
    return JudgeVerdict(case_id, Verdict(m.group(1).lower()), reply)


class JudgeClient(Protocol):
    def complete(self, payload: dict) -> str: ...


class HttpJudgeClient:
    """POSTs to ``{base_url}/chat/completions`` with a bearer token."""

    def __init__(self, base_url: str | None = None, api_key: str | None = None, timeout: float = 60.0, transport=None):
        base_url = base_url or os.environ.get(BASE_URL_ENV)
        if not base_url:
            raise DataError(f"no judge base URL (pass one or set {BASE_URL_ENV})")
        api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self.url = base_url.rstrip("/") + "/chat/completions"
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def complete(self, payload: dict) -> str:
        try:
            resp = self._client.post(self.url, json=payload)
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except (httpx.HTTPError, ValueError, KeyError, IndexError, TypeError) as exc:
            raise JudgeEndpointError(f"{self.url}: {exc}") from exc

    def close(self):
        self._client.close()


class StubJudge:
    """Offline judge answering from a deterministic rule over the request payload."""

    def __init__(self, rule: Callable[[dict], str]):
        self.rule = rule
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, payload: dict) -> str:
        with self._lock:
            self.calls += 1
        return self.rule(payload)

    @classmethod
    def always(cls, verdict: str | Verdict) -> "StubJudge":
        word = Verdict(verdict).value.capitalize()
        return cls(lambda payload: f"{word}.")

    @classmethod
    def exact_match(cls) -> "StubJudge":
        """Correct iff the model answer equals the reference after whitespace/case folding."""

        def rule(payload):
            _, reference, answer = _extract(payload)
            fold = lambda s: " ".join(s.lower().split())  # noqa: E731
            return "Correct" if fold(reference) == fold(answer) else "Incorrect"

        return cls(rule)


@dataclass(frozen=True)
class BenchmarkCase:
    case_id: str
    category: str
    question: str
    reference_answer: str
    model_answer: str
    image_ref: str | None = None


_CASE_KEYS = {"id", "category", "question", "reference_answer", "model_answer"}


def load_benchmark(path) -> list[BenchmarkCase]:
    cases = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: invalid JSON: {exc.msg}") from None
            if not isinstance(rec, dict) or not _CASE_KEYS <= set(rec) or set(rec) - _CASE_KEYS - {"image_ref"}:
                raise DataError(f"line {lineno}: benchmark record needs exactly {sorted(_CASE_KEYS)} (+ image_ref)")
            case = BenchmarkCase(
                str(rec["id"]), rec["category"], rec["question"], rec["reference_answer"], rec["model_answer"], rec.get("image_ref")
            )
            if not all((case.question, case.reference_answer, case.model_answer)):
                raise DataError(f"line {lineno}: empty question or answer")
            if case.case_id in seen:
                raise DataError(f"line {lineno}: duplicate case id {case.case_id!r}")
            seen.add(case.case_id)
            cases.append(case)
    return cases


@dataclass(frozen=True)
class CategoryScore:
    correct: int
    graded: int
    total: int

    @property
    def accuracy(self) -> float | None:
        return self.correct / self.graded if self.graded else None


@dataclass(frozen=True)
class JudgeReport:
    categories: dict
    complete: bool
    failed: tuple
    unparsed: int

    @property
    def overall(self) -> float | None:
        correct = sum(c.correct for c in self.categories.values())
        graded = sum(c.graded for c in self.categories.values())
        return correct / graded if graded else None

    def to_dict(self) -> dict:
        return {
            "categories": {
                k: {"correct": v.correct, "graded": v.graded, "total": v.total, "accuracy": v.accuracy}
                for k, v in sorted(self.categories.items())
            },
            "overall_accuracy": self.overall,
            "complete": self.complete,
            "failed_cases": list(self.failed),
            "unparsed_replies": self.unparsed,
        }


def read_journal(path) -> dict:
    """Verdicts already recorded, keyed by case id. A torn last line is ignored."""
    path = Path(path)
    if not path.exists():
        return {}
    done = {}
    for line in path.read_text(encoding="utf-8").splitlines(keepends=True):
        if not line.endswith("\n"):
            break
        v = JudgeVerdict.from_record(json.loads(line))
        done[v.case_id] = v
    return done


def _open_journal(path: Path):
    if path.exists():
        data = path.read_bytes()
        cut = data.rfind(b"\n") + 1
        if cut != len(data):
            with open(path, "r+b") as fh:
                fh.truncate(cut)
    return open(path, "a", encoding="utf-8")


def _grade(client, case, model, template_id, max_retries, backoff, sleep) -> JudgeVerdict:
    payload = build_judge_request(case.question, case.reference_answer, case.model_answer, template_id, model)
    for attempt in range(max_retries + 1):
        try:
            return parse_judge_verdict(client.complete(payload), case.case_id)
        except JudgeEndpointError as exc:
            if attempt == max_retries:
                raise
            delay = backoff * 2**attempt
            log.warning("case %s attempt %d failed (%s); retrying in %.2fs", case.case_id, attempt + 1, exc, delay)
            sleep(delay)
    raise AssertionError("unreachable")


def run_judge_eval(
    cases: Iterable[BenchmarkCase],
    client: JudgeClient,
    journal_path=None,
    concurrency: int = DEFAULT_CONCURRENCY,
    max_retries: int = 3,
    backoff: float = 1.0,
    model: str = DEFAULT_MODEL,
    template_id: str = "binary-v1",
    sleep: Callable[[float], None] = time.sleep,
) -> JudgeReport:
    """Grade every case and report accuracy per category.

    With ``journal_path`` every verdict is appended as it arrives and cases
    already in the journal are skipped, so an interrupted run can resume.
    Cases whose endpoint calls keep failing are listed in ``failed`` and the
    report is marked incomplete.
    """
    cases = list(cases)
    journal = Path(journal_path) if journal_path is not None else None
    verdicts = read_journal(journal) if journal is not None else {}
    pending = [c for c in cases if c.case_id not in verdicts]
    failed = []
    fh = _open_journal(journal) if journal is not None else None
    pool = ThreadPoolExecutor(max_workers=max(1, concurrency))
    try:
        futures = {
            pool.submit(_grade, client, c, model, template_id, max_retries, backoff, sleep): c for c in pending
        }
        for fut in as_completed(futures):
            case = futures[fut]
            try:
                v = fut.result()
            except JudgeEndpointError as exc:
                log.error("case %s failed after retries: %s", case.case_id, exc)
                failed.append(case.case_id)
                continue
            verdicts[case.case_id] = v
            if fh is not None:
                fh.write(json.dumps(v.to_record(), sort_keys=True, ensure_ascii=False) + "\n")
                fh.flush()
    finally:
        pool.shutdown(wait=True, cancel_futures=True)
        if fh is not None:
            fh.close()

    tally: dict = defaultdict(lambda: [0, 0, 0])
    unparsed = 0
    for c in cases:
        t = tally[c.category]
        t[2] += 1
        v = verdicts.get(c.case_id)
        if v is None:
            continue
        t[1] += 1
        t[0] += v.verdict is Verdict.CORRECT
        unparsed += v.unparsed
    categories = {k: CategoryScore(*v) for k, v in sorted(tally.items())}
    return JudgeReport(categories, not failed, tuple(sorted(failed)), unparsed)
