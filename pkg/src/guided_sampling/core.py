"""Domain types, budget arithmetic, and exact pass@k combinatorics.

The value objects here are shared by every other module. They are frozen
dataclasses: cheap to hash, safe to pass between worker threads, and easy to
serialize to the JSONL formats used on disk.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

from .errors import BudgetError, DatasetError, QueryError

DOMAIN_KINDS = ("math", "mcq", "code", "free")
VERIFIER_KINDS = ("exact_answer", "mcq_letter", "external_command")
VERDICTS = ("correct", "incorrect", "unverified")


@dataclass(frozen=True)
class VerifierSpec:
    """How to check a candidate solution.

    kind:
      exact_answer     -- payload is the expected answer string
      mcq_letter       -- payload is the expected choice letter
      external_command -- payload is a command template run against the
                          candidate program; timeout in seconds applies
    """

    kind: str
    payload: str
    timeout: Optional[float] = None

    def __post_init__(self):
        if self.kind not in VERIFIER_KINDS:
            raise DatasetError(f"unknown verifier kind: {self.kind!r}")
        if self.kind == "mcq_letter":
            if len(self.payload) != 1 or not self.payload.isalpha():
                raise DatasetError(f"mcq_letter payload must be one letter, got {self.payload!r}")
        if self.kind == "external_command":
            if self.timeout is None or self.timeout <= 0:
                raise DatasetError("external_command verifier needs a timeout > 0")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "payload": self.payload}
        if self.timeout is not None:
            d["timeout"] = self.timeout
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VerifierSpec":
        return cls(kind=d["kind"], payload=d["payload"], timeout=d.get("timeout"))


@dataclass(frozen=True)
class Question:
    """One benchmark instance: prompt text plus how to verify answers."""

    id: str
    text: str
    domain_kind: str
    ground_truth: VerifierSpec
    options: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if not self.id:
            raise DatasetError("question id must be non-empty")
        if not self.text:
            raise DatasetError(f"question {self.id}: text must be non-empty")
        if self.domain_kind not in DOMAIN_KINDS:
            raise DatasetError(f"question {self.id}: unknown domain_kind {self.domain_kind!r}")
        if (self.domain_kind == "mcq") != (self.options is not None):
            raise DatasetError(f"question {self.id}: options must be present iff domain_kind is mcq")
        if self.options is not None:
            object.__setattr__(self, "options", tuple(self.options))
            if not self.options:
                raise DatasetError(f"question {self.id}: empty options list")
            if self.ground_truth.kind == "mcq_letter":
                idx = ord(self.ground_truth.payload.upper()) - ord("A")
                if not 0 <= idx < len(self.options):
                    raise DatasetError(
                        f"question {self.id}: expected letter {self.ground_truth.payload!r} "
                        f"outside the {len(self.options)} options"
                    )

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "text": self.text,
            "domain_kind": self.domain_kind,
            "ground_truth": self.ground_truth.to_dict(),
        }
        if self.options is not None:
            d["options"] = list(self.options)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Question":
        options = d.get("options")
        return cls(
            id=d["id"],
            text=d["text"],
            domain_kind=d["domain_kind"],
            ground_truth=VerifierSpec.from_dict(d["ground_truth"]),
            options=tuple(options) if options is not None else None,
        )


def load_questions(path: str | Path) -> list[Question]:
    """Read a JSONL dataset, one question per line; ids must be unique."""
    questions: list[Question] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
            q = Question.from_dict(record)
            if q.id in seen:
                raise DatasetError(f"{path}:{lineno}: duplicate question id {q.id!r}")
            seen.add(q.id)
            questions.append(q)
    if not questions:
        raise DatasetError(f"{path}: dataset is empty")
    return questions


@dataclass(frozen=True)
class Concept:
    """One exploration-phase output: a named theorem/technique."""

    index: int  # 1-based position within the concept set
    text: str
    generator_fingerprint: str = ""

    def __post_init__(self):
        if self.index < 1:
            raise DatasetError("concept index is 1-based")
        if not self.text.strip():
            raise DatasetError("concept text must be non-empty")


@dataclass(frozen=True)
class Candidate:
    """One sampled solution, possibly tied to the concept that guided it."""

    question_id: str
    concept_index: Optional[int]  # None for plain repeated sampling
    sample_index: int  # 1-based within its concept (or within the RS run)
    text: str
    extracted_answer: Optional[str] = None
    verdict: str = "unverified"
    judge_concept: Optional[str] = None
    note: Optional[str] = None

    def __post_init__(self):
        if self.sample_index < 1:
            raise DatasetError("sample index is 1-based")
        if self.verdict not in VERDICTS:
            raise DatasetError(f"unknown verdict {self.verdict!r}")

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "concept_index": self.concept_index,
            "sample_index": self.sample_index,
            "text": self.text,
            "extracted_answer": self.extracted_answer,
            "verdict": self.verdict,
            "judge_concept": self.judge_concept,
            "note": self.note,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Candidate":
        return cls(
            question_id=d["question_id"],
            concept_index=d.get("concept_index"),
            sample_index=d["sample_index"],
            text=d["text"],
            extracted_answer=d.get("extracted_answer"),
            verdict=d.get("verdict", "unverified"),
            judge_concept=d.get("judge_concept"),
            note=d.get("note"),
        )


@dataclass(frozen=True)
class Budget:
    """Compute allocation for one run.

    total_generation_calls is the generation budget (exploration is metered
    separately). max_concepts == 0 means plain repeated sampling with
    n = total_generation_calls and an empty per_concept; otherwise
    per_concept must sum to the total.
    """

    total_generation_calls: int
    max_concepts: int
    per_concept: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "per_concept", tuple(self.per_concept))
        if self.total_generation_calls < 1:
            raise BudgetError("total_generation_calls must be >= 1")
        if self.max_concepts < 0:
            raise BudgetError("max_concepts must be >= 0")
        if self.max_concepts == 0:
            if self.per_concept:
                raise BudgetError("RS mode (max_concepts=0) takes no per-concept split")
            return
        if len(self.per_concept) > self.max_concepts:
            raise BudgetError("per_concept longer than max_concepts")
        if any(m < 1 for m in self.per_concept):
            raise BudgetError("per-concept counts must be >= 1")
        if sum(self.per_concept) != self.total_generation_calls:
            raise BudgetError(
                f"per_concept sums to {sum(self.per_concept)}, "
                f"expected {self.total_generation_calls}"
            )

    @property
    def is_rs(self) -> bool:
        return self.max_concepts == 0

    def to_dict(self) -> dict:
        return {
            "total_generation_calls": self.total_generation_calls,
            "max_concepts": self.max_concepts,
            "per_concept": list(self.per_concept),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Budget":
        return cls(
            total_generation_calls=d["total_generation_calls"],
            max_concepts=d["max_concepts"],
            per_concept=tuple(d.get("per_concept", ())),
        )


def allocate_budget(total_generation_calls: int, requested_concepts: int) -> Budget:
    """Split a generation budget evenly over the requested concept count.

    The remainder of an uneven split is front-loaded one call at a time, so
    entries never differ by more than 1 and the split is independent of what
    the concepts turn out to be. requested_concepts == 0 yields RS mode.
    """
    if total_generation_calls < 1:
        raise BudgetError("total_generation_calls must be >= 1")
    if requested_concepts < 0:
        raise BudgetError("requested_concepts must be >= 0")
    if requested_concepts > total_generation_calls:
        raise BudgetError(
            f"cannot spread {total_generation_calls} calls over "
            f"{requested_concepts} concepts (less than one call each)"
        )
    if requested_concepts == 0:
        return Budget(total_generation_calls, 0, ())
    base, remainder = divmod(total_generation_calls, requested_concepts)
    per = tuple(base + 1 if i < remainder else base for i in range(requested_concepts))
    return Budget(total_generation_calls, requested_concepts, per)


@dataclass(frozen=True)
class PassKQuery:
    """n samples, c of them correct, selecting k."""

    n: int
    c: int
    k: int

    def __post_init__(self):
        if self.n < 1:
            raise QueryError("n must be >= 1")
        if not 0 <= self.c <= self.n:
            raise QueryError(f"c must be in [0, n], got c={self.c}, n={self.n}")
        if not 1 <= self.k <= self.n:
            raise QueryError(f"k must be in [1, n], got k={self.k}, n={self.n}")


def pass_at_k(q: PassKQuery) -> float:
    """Probability that a uniform size-k subset of n samples hits a correct one.

    Exactly 1 - C(n-c, k) / C(n, k), evaluated with integer combinatorics and
    converted to float once, so the result is the correctly rounded value of
    the true rational (no overflow, exact up to n = 10,000 and beyond).
    """
    n, c, k = q.n, q.c, q.k
    if c == 0:
        return 0.0
    if n - c < k:
        # every size-k subset must contain a correct sample
        return 1.0
    miss = Fraction(math.comb(n - c, k), math.comb(n, k))
    return float(1 - miss)


def macro_pass_at_k(per_question: Sequence[PassKQuery], k: int) -> float:
    """Unweighted mean of pass@k across questions at a shared k."""
    if not per_question:
        raise QueryError("macro_pass_at_k over an empty question list")
    total = 0.0
    for q in per_question:
        if q.n < k:
            raise QueryError(f"k={k} exceeds n={q.n} for one of the questions")
        total += pass_at_k(PassKQuery(q.n, q.c, k))
    return total / len(per_question)


def derive_seed(root: int, *labels: str) -> int:
    """Deterministic 63-bit seed for a named substream of the root seed."""
    tag = "/".join([str(root), *labels])
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1
