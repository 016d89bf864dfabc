"""Training-corpus construction from verified run artifacts.

Two record regimes are supported. The direct regime (``fa``) maps a question
straight to a correct solution and drops the concept that guided it. The
concept-aware regime (``caa``) renders the full concept list, an explicit
choice line naming which concept the solution uses, the solution, and the
final answer, in a fixed grammar that parse_caa() inverts exactly.
"""

from __future__ import annotations

import json
import logging
import re
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .core import Candidate, Concept, Question
from .errors import CorpusError, LabelOverflowError, RejectedCandidateError
from .prompts import format_options
from .sampler import RunArtifact

logger = logging.getLogger(__name__)

REGIMES = ("fa", "caa")
SELECTION_POLICIES = ("first_correct", "all_correct", "one_per_concept")

CAA_HEADER = "I have a few ideas to solve this problem."
CAA_CHOICE_PREFIX = "To solve the problem I will use the idea "
CAA_ANSWER_MARKER = "\n\n**Final Answer**\n"

_LABEL_LINE = re.compile(r"([a-z])\) (.+)")
_MAX_LABELS = 26


@dataclass(frozen=True)
class TrainingRecord:
    question_text: str
    target_text: str
    regime: str
    run_id: str
    question_id: str
    concept_index: Optional[int]
    sample_index: int
    verified: bool = True

    def to_dict(self) -> dict:
        return {
            "question_text": self.question_text,
            "target_text": self.target_text,
            "regime": self.regime,
            "provenance": {
                "run_id": self.run_id,
                "question_id": self.question_id,
                "concept_index": self.concept_index,
                "sample_index": self.sample_index,
            },
            "verified": self.verified,
        }


@dataclass(frozen=True)
class CaaParts:
    concepts: tuple[str, ...]
    chosen_index: int
    solution: str
    final_answer: str


def _label(index: int) -> str:
    return chr(ord("a") + index - 1)


def render_caa(
    concepts: Sequence[str], chosen_index: int, solution: str, final_answer: str
) -> str:
    """Render the concept-aware target text.

    Grammar: a header line, one "a) Concept" line per concept, a blank line,
    a choice line repeating the chosen label and concept, a blank line, the
    solution verbatim, then a final-answer marker and the answer on its own
    line. Inputs that would break the grammar (multi-line concepts or answer,
    empty fields) are rejected so the round trip through parse_caa is exact.
    """
    concepts = list(concepts)
    if not concepts:
        raise CorpusError("concept list is empty")
    if len(concepts) > _MAX_LABELS:
        raise LabelOverflowError(
            f"{len(concepts)} concepts exceed the {_MAX_LABELS} single-letter labels"
        )
    for pos, concept in enumerate(concepts, start=1):
        if not concept or not concept.strip() or "\n" in concept:
            raise CorpusError(f"concept {pos} must be a single non-empty line")
    if not 1 <= chosen_index <= len(concepts):
        raise CorpusError(f"chosen_index {chosen_index} outside 1..{len(concepts)}")
    if not solution or not solution.strip():
        raise CorpusError("solution is empty")
    if not final_answer or "\n" in final_answer:
        raise CorpusError("final answer must be a single non-empty line")
    listing = "\n".join(f"{_label(i)}) {c}" for i, c in enumerate(concepts, start=1))
    choice = (
        f"{CAA_CHOICE_PREFIX}{_label(chosen_index)}) {concepts[chosen_index - 1]}:"
    )
    return (
        f"{CAA_HEADER}\n{listing}\n\n{choice}\n\n{solution}"
        f"{CAA_ANSWER_MARKER}{final_answer}"
    )


def parse_caa(text: str) -> CaaParts:
    """Invert render_caa exactly.

    The final-answer boundary is the last occurrence of the marker, so a
    solution that itself quotes the marker parses correctly (the answer on
    emit is single-line and cannot contain it).
    """
    idx = text.rfind(CAA_ANSWER_MARKER)
    if idx < 0:
        raise CorpusError("no final-answer marker found")
    final_answer = text[idx + len(CAA_ANSWER_MARKER):]
    if not final_answer or "\n" in final_answer:
        raise CorpusError("final answer is not a single non-empty line")
    lines = text[:idx].split("\n")
    if not lines or lines[0] != CAA_HEADER:
        raise CorpusError("missing header line")
    concepts: list[str] = []
    i = 1
    while i < len(lines) and lines[i] != "":
        m = _LABEL_LINE.fullmatch(lines[i])
        if m is None:
            raise CorpusError(f"malformed concept line: {lines[i]!r}")
        if ord(m.group(1)) - ord("a") != len(concepts):
            raise CorpusError(f"concept labels out of order at {lines[i]!r}")
        concepts.append(m.group(2))
        i += 1
    if not concepts:
        raise CorpusError("empty concept list")
    if i >= len(lines) or lines[i] != "":
        raise CorpusError("expected a blank line after the concept list")
    i += 1
    if i >= len(lines):
        raise CorpusError("missing choice line")
    choice = lines[i]
    if not choice.startswith(CAA_CHOICE_PREFIX) or not choice.endswith(":"):
        raise CorpusError(f"malformed choice line: {choice!r}")
    m = _LABEL_LINE.fullmatch(choice[len(CAA_CHOICE_PREFIX):-1])
    if m is None:
        raise CorpusError(f"malformed choice line: {choice!r}")
    chosen_index = ord(m.group(1)) - ord("a") + 1
    if chosen_index > len(concepts):
        raise CorpusError(f"choice label {m.group(1)}) has no matching concept")
    if m.group(2) != concepts[chosen_index - 1]:
        raise CorpusError("choice line disagrees with the concept list")
    i += 1
    if i >= len(lines) or lines[i] != "":
        raise CorpusError("expected a blank line before the solution")
    i += 1
    solution = "\n".join(lines[i:])
    if not solution.strip():
        raise CorpusError("empty solution body")
    return CaaParts(tuple(concepts), chosen_index, solution, final_answer)


def _question_prompt(q: Question) -> str:
    return q.text + format_options(q.options)


def build_fa(q: Question, cand: Candidate, *, run_id: str = "") -> TrainingRecord:
    """Direct record: question in, correct solution out, concept discarded."""
    if cand.verdict != "correct":
        raise RejectedCandidateError(
            f"candidate {q.id}#{cand.sample_index} has verdict {cand.verdict!r}"
        )
    if not cand.text.strip():
        raise RejectedCandidateError(f"candidate {q.id}#{cand.sample_index} has empty text")
    return TrainingRecord(
        question_text=_question_prompt(q),
        target_text=cand.text,
        regime="fa",
        run_id=run_id,
        question_id=q.id,
        concept_index=cand.concept_index,
        sample_index=cand.sample_index,
    )


def build_caa(
    q: Question,
    concepts: Sequence[Concept],
    chosen_index: int,
    cand: Candidate,
    final_answer: str,
    *,
    run_id: str = "",
) -> TrainingRecord:
    """Concept-aware record over the full concept list for the question."""
    if cand.verdict != "correct":
        raise RejectedCandidateError(
            f"candidate {q.id}#{cand.sample_index} has verdict {cand.verdict!r}"
        )
    if cand.concept_index != chosen_index:
        raise CorpusError(
            f"chosen_index {chosen_index} does not match candidate "
            f"concept_index {cand.concept_index}"
        )
    target = render_caa([c.text for c in concepts], chosen_index, cand.text, final_answer)
    return TrainingRecord(
        question_text=_question_prompt(q),
        target_text=target,
        regime="caa",
        run_id=run_id,
        question_id=q.id,
        concept_index=chosen_index,
        sample_index=cand.sample_index,
    )


def _derivable_answer(cand: Candidate, q: Question) -> Optional[str]:
    if cand.extracted_answer:
        return cand.extracted_answer
    if q.ground_truth.kind in ("exact_answer", "mcq_letter"):
        return str(q.ground_truth.payload)
    return None


def synthesize(
    artifact: RunArtifact,
    questions: Sequence[Question],
    regime: str,
    selection: str = "one_per_concept",
) -> tuple[list[TrainingRecord], dict]:
    """Build a corpus from an artifact's correct candidates.

    Eligibility is shared between regimes: a candidate must be correct and
    must yield a final answer (its own extracted answer, else the ground
    truth when the verifier stores one). Both regimes therefore emit the same
    record count and question coverage for a given artifact and policy. Zero
    eligible candidates produces an empty corpus with a warning, not an
    error.
    """
    if regime not in REGIMES:
        raise CorpusError(f"regime must be one of {REGIMES}, got {regime!r}")
    if selection not in SELECTION_POLICIES:
        raise CorpusError(f"selection must be one of {SELECTION_POLICIES}, got {selection!r}")
    guided = artifact.strategy == "guided"
    if regime == "caa" and not guided:
        raise CorpusError(
            "concept-aware records need concept lists; this artifact was a "
            "plain repeated-sampling run"
        )
    by_id = {q.id: q for q in questions}
    missing = sorted(set(artifact.per_question) - set(by_id))
    if missing:
        raise CorpusError(f"artifact references unknown questions: {missing[:5]}")
    records: list[TrainingRecord] = []
    concept_counts: list[int] = []
    for qid in sorted(artifact.per_question):
        qr = artifact.per_question[qid]
        q = by_id[qid]
        if guided and qr.exploration is None:
            # this question fell back to plain sampling; no concept list exists
            continue
        eligible: list[tuple[Candidate, str]] = []
        for cand in qr.candidates:
            if cand.verdict != "correct":
                continue
            if guided and cand.concept_index is None:
                continue
            answer = _derivable_answer(cand, q)
            if answer is None:
                continue
            eligible.append((cand, answer))
        if not eligible:
            continue
        if selection == "first_correct":
            chosen = eligible[:1]
        elif selection == "all_correct":
            chosen = eligible
        else:
            chosen = []
            seen: set[Optional[int]] = set()
            for cand, answer in eligible:
                if cand.concept_index in seen:
                    continue
                seen.add(cand.concept_index)
                chosen.append((cand, answer))
        n_concepts = len(qr.exploration.concepts) if qr.exploration is not None else 0
        for cand, answer in chosen:
            if regime == "fa":
                record = build_fa(q, cand, run_id=artifact.run_id)
            else:
                record = build_caa(
                    q,
                    qr.exploration.concepts,
                    cand.concept_index,
                    cand,
                    answer,
                    run_id=artifact.run_id,
                )
            records.append(record)
            concept_counts.append(n_concepts)
    if not records:
        logger.warning("no eligible candidates in run %s; corpus is empty", artifact.run_id)
    stats = {
        "regime": regime,
        "selection": selection,
        "run_id": artifact.run_id,
        "records": len(records),
        "questions_covered": len({r.question_id for r in records}),
        "mean_concepts_per_record": (
            round(statistics.fmean(concept_counts), 6) if concept_counts else 0.0
        ),
    }
    return records, stats


def write_corpus(
    records: Sequence[TrainingRecord], stats: dict, out_dir: str | Path
) -> dict[str, Path]:
    """Emit the corpus in chat and plain-pair formats plus full records and stats."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "chat": out_dir / "corpus_chat.jsonl",
        "pairs": out_dir / "corpus_pairs.jsonl",
        "records": out_dir / "records.jsonl",
        "stats": out_dir / "stats.json",
    }
    with open(paths["chat"], "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {
                        "messages": [
                            {"role": "user", "content": r.question_text},
                            {"role": "assistant", "content": r.target_text},
                        ]
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
    with open(paths["pairs"], "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {"prompt": r.question_text, "completion": r.target_text},
                    ensure_ascii=False,
                )
                + "\n"
            )
    with open(paths["records"], "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
    with open(paths["stats"], "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths
