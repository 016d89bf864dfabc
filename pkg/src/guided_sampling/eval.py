"""Verdict assignment, concept tagging, diversity counting, pass@k reports.

Answer verification is deliberately shallow string matching: extract, apply a
small set of normalizations, compare. Anything that cannot be extracted stays
"unverified" rather than being counted wrong, and the reports surface an
extraction-coverage rate so parsing quality never masquerades as model
quality.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import subprocess
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .backend import Backend, CompletionRequest
from .core import Candidate, PassKQuery, VerifierSpec, macro_pass_at_k
from .errors import EmptyReportError, GuidedSamplingError, VerificationError
from .prompts import CONCEPT_TAGGER

logger = logging.getLogger(__name__)

FINAL_ANSWER_MARKER = "**Final Answer**"


def extract_boxed(text: str) -> Optional[str]:
    """Content of the last \\boxed{...}, with balanced inner braces."""
    marker = "\\boxed{"
    start = text.rfind(marker)
    if start == -1:
        return None
    depth = 1
    i = start + len(marker)
    out = []
    while i < len(text) and depth > 0:
        ch = text[i]
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                break
        out.append(ch)
        i += 1
    if depth != 0:
        return None
    return "".join(out)


def extract_final_answer(text: str, strict_boxed_only: bool = False) -> Optional[str]:
    """Pull the answer out of a solution.

    Priority: last \\boxed{...}, then whatever follows the last
    "**Final Answer**" marker, then the last non-empty line. Returns None
    when nothing usable is found.
    """
    boxed = extract_boxed(text)
    if boxed is not None and boxed.strip():
        return boxed
    if strict_boxed_only:
        return None
    pos = text.rfind(FINAL_ANSWER_MARKER)
    if pos != -1:
        tail = text[pos + len(FINAL_ANSWER_MARKER):].strip()
        if tail:
            return tail
        return None
    lines = [line for line in text.splitlines() if line.strip()]
    if lines:
        return lines[-1]
    return None


_FRAC = re.compile(r"\\[dt]?frac\{([^{}]+)\}\{([^{}]+)\}")
_THOUSANDS = re.compile(r"(\d),(\d{3})(?!\d)")
_WS = re.compile(r"\s+")


def _normalize_once(s: str) -> str:
    s = s.strip()
    s = _WS.sub(" ", s)
    if len(s) >= 2 and s.startswith("$") and s.endswith("$"):
        s = s[1:-1].strip()
    s = _FRAC.sub(r"\1/\2", s)
    s = _THOUSANDS.sub(r"\1\2", s)
    return s


def normalize_answer(s: str) -> str:
    """Canonicalize an answer string; idempotent (runs to a fixed point)."""
    prev = None
    current = s
    # each pass strictly shrinks or stabilizes, so this terminates
    while current != prev:
        prev = current
        current = _normalize_once(current)
    return current


_MCQ_LETTER = re.compile(r"\(([A-Za-z])\)|(?<![A-Za-z])([A-Z])(?![A-Za-z])")


def extract_mcq_letter(text: str) -> Optional[str]:
    """Last parenthesized letter or standalone uppercase letter token."""
    last = None
    for match in _MCQ_LETTER.finditer(text):
        last = match.group(1) or match.group(2)
    return last.upper() if last else None


_FENCE = re.compile(r"```(?:[\w+-]*)\n(.*?)```", re.DOTALL)


def extract_code_block(text: str) -> str:
    """Last fenced code block; bare text is treated as the program itself."""
    blocks = _FENCE.findall(text)
    if blocks:
        return blocks[-1]
    return text


def _verify_external(text: str, spec: VerifierSpec) -> tuple[str, Optional[str]]:
    program = extract_code_block(text)
    if not program.strip():
        return "unverified", None
    command = spec.payload
    tmp_path: Optional[str] = None
    try:
        if "{file}" in command:
            with tempfile.NamedTemporaryFile(
                "w", suffix=".py", delete=False, encoding="utf-8"
            ) as fh:
                fh.write(program)
                tmp_path = fh.name
            command = command.replace("{file}", tmp_path)
            stdin_data = None
        else:
            stdin_data = program
        try:
            proc = subprocess.run(
                command,
                shell=True,
                input=stdin_data,
                capture_output=True,
                text=True,
                timeout=spec.timeout,
            )
        except subprocess.TimeoutExpired:
            return "incorrect", f"verifier timed out after {spec.timeout}s"
        except OSError as exc:
            return "unverified", f"verifier could not run: {exc}"
        if proc.returncode == 0:
            return "correct", None
        return "incorrect", f"verifier exit code {proc.returncode}"
    finally:
        if tmp_path:
            try:
                Path(tmp_path).unlink()
            except OSError:
                pass


def verify(cand: Candidate, spec: VerifierSpec, strict_boxed_only: bool = False) -> str:
    """Assign a verdict to one candidate; extraction failure is 'unverified'."""
    text = cand.text
    if spec.kind == "exact_answer":
        answer = extract_final_answer(text, strict_boxed_only=strict_boxed_only)
        if answer is None:
            return "unverified"
        if normalize_answer(answer) == normalize_answer(spec.payload):
            return "correct"
        return "incorrect"
    if spec.kind == "mcq_letter":
        letter = extract_mcq_letter(text)
        if letter is None:
            return "unverified"
        return "correct" if letter == spec.payload.upper() else "incorrect"
    verdict, _note = _verify_external(text, spec)
    return verdict


def verify_candidate(
    cand: Candidate, spec: VerifierSpec, strict_boxed_only: bool = False
) -> Candidate:
    """verify(), but returning the candidate updated with verdict + extraction."""
    if spec.kind == "exact_answer":
        extracted = extract_final_answer(cand.text, strict_boxed_only=strict_boxed_only)
        extracted = normalize_answer(extracted) if extracted is not None else None
    elif spec.kind == "mcq_letter":
        extracted = extract_mcq_letter(cand.text)
    else:
        extracted = None
    note = cand.note
    if spec.kind == "external_command":
        verdict, vnote = _verify_external(cand.text, spec)
        note = vnote if vnote is not None else note
    else:
        verdict = verify(cand, spec, strict_boxed_only=strict_boxed_only)
    return replace(cand, verdict=verdict, extracted_answer=extracted, note=note)


_SMALL_WORDS = frozenset(
    "a an and as at but by for in of on or the to via with".split()
)


def _capitalize_segmented(word: str) -> str:
    # hyphenated words get each segment capitalized: cauchy-schwarz -> Cauchy-Schwarz
    return "-".join(seg[:1].upper() + seg[1:] if seg else seg for seg in word.split("-"))


def normalize_concept_label(raw: str) -> str:
    """Title Case with small-word exceptions, then naive singularization.

    Words containing capitals beyond the first character (AM-GM, LCMs) are
    kept verbatim; only the final word is singularized, and only when it is
    long enough that stripping a trailing 's' is safe-ish. The whole thing is
    a documented approximation of "Title Case and the singular form".
    """
    words = _WS.sub(" ", raw).strip().strip(".,:;!?\"'`").strip().split(" ")
    out = []
    for i, word in enumerate(words):
        if not word:
            continue
        has_inner_caps = any(ch.isupper() for ch in word[1:])
        if has_inner_caps:
            out.append(word)
        elif i > 0 and word.lower() in _SMALL_WORDS:
            out.append(word.lower())
        else:
            out.append(_capitalize_segmented(word.lower()))
    if out:
        last = out[-1]
        if len(last) > 3 and last.endswith("s") and not last.endswith("ss"):
            out[-1] = last[:-1]
    return " ".join(out)


def extract_concept(
    cand: Candidate,
    judge_backend: Backend,
    cache: Optional[dict[str, Optional[str]]] = None,
    temperature: float = 0.0,
    max_tokens: int = 64,
) -> Optional[str]:
    """Ask the judge which single concept a solution relies on.

    Returns the normalized label, or None when the judge fails or answers
    with nothing usable (callers exclude those from diversity counts and
    report them as coverage).
    """
    cache_key = None
    if cache is not None:
        cache_key = hashlib.sha256(cand.text.encode("utf-8")).hexdigest()
        if cache_key in cache:
            return cache[cache_key]
    req = CompletionRequest(
        messages=(("system", CONCEPT_TAGGER), ("user", cand.text)),
        temperature=temperature,
        max_tokens=max_tokens,
    )
    label: Optional[str] = None
    try:
        response = judge_backend.complete(req)
    except GuidedSamplingError as exc:
        logger.warning("judge failed on %s #%s: %s", cand.question_id, cand.sample_index, exc)
    else:
        for line in response.text.splitlines():
            if line.strip():
                label = normalize_concept_label(line) or None
                break
    if cache is not None and cache_key is not None:
        cache[cache_key] = label
    return label


@dataclass(frozen=True)
class QuestionDiversity:
    distinct: int
    frequencies: dict[str, int]


@dataclass(frozen=True)
class DiversityReport:
    """Distinct judge-extracted concepts per question, plus the histogram."""

    per_question: dict[str, QuestionDiversity]
    histogram: dict[int, int]  # distinct-count -> number of questions
    mean_distinct: float
    label_coverage: float  # labeled candidates / all candidates

    def to_dict(self) -> dict:
        return {
            "per_question": {
                qid: {"distinct": qd.distinct, "frequencies": dict(sorted(qd.frequencies.items()))}
                for qid, qd in sorted(self.per_question.items())
            },
            "histogram": {str(k): v for k, v in sorted(self.histogram.items())},
            "mean_distinct": self.mean_distinct,
            "label_coverage": self.label_coverage,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def diversity_report(candidates_by_question: Mapping[str, Sequence[Candidate]]) -> DiversityReport:
    """Count distinct concept labels per question.

    Candidates without a judge_concept are excluded from the counts and only
    lower the coverage rate. Questions whose candidates are all unlabeled are
    excluded entirely; if that removes everything, the report is an error.
    """
    per_question: dict[str, QuestionDiversity] = {}
    total = 0
    labeled = 0
    for qid, cands in candidates_by_question.items():
        freqs: dict[str, int] = {}
        for cand in cands:
            total += 1
            if cand.judge_concept is None:
                continue
            labeled += 1
            freqs[cand.judge_concept] = freqs.get(cand.judge_concept, 0) + 1
        if freqs:
            per_question[qid] = QuestionDiversity(distinct=len(freqs), frequencies=freqs)
    if not per_question:
        raise EmptyReportError("no labeled candidates to report on")
    histogram: dict[int, int] = {}
    for qd in per_question.values():
        histogram[qd.distinct] = histogram.get(qd.distinct, 0) + 1
    mean = sum(qd.distinct for qd in per_question.values()) / len(per_question)
    return DiversityReport(
        per_question=per_question,
        histogram=histogram,
        mean_distinct=mean,
        label_coverage=labeled / total if total else 0.0,
    )


@dataclass(frozen=True)
class PassKReport:
    """Macro-averaged pass@k table for one run."""

    strategy: str
    rows: tuple[tuple[int, float], ...]  # (k, macro pass@k)
    per_question: dict[str, tuple[int, int]]  # question id -> (c, n)
    metadata: dict

    def to_csv(self) -> str:
        lines = ["k,strategy,pass_at_k"]
        for k, value in self.rows:
            lines.append(f"{k},{self.strategy},{value!r}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "rows": [{"k": k, "pass_at_k": v} for k, v in self.rows],
            "per_question": {
                qid: {"c": c, "n": n} for qid, (c, n) in sorted(self.per_question.items())
            },
            "metadata": dict(self.metadata),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def passk_report(
    candidates_by_question: Mapping[str, Sequence[Candidate]],
    ks: Sequence[int],
    strategy: str,
    exclude_unverified: bool = False,
) -> PassKReport:
    """Build the pass@k table over verified candidates.

    Any candidate still carrying verdict 'unverified' is an error naming the
    offenders, unless exclude_unverified drops them from their question's n.
    """
    offenders = [
        f"{qid}#{cand.sample_index}"
        for qid, cands in candidates_by_question.items()
        for cand in cands
        if cand.verdict == "unverified"
    ]
    if offenders and not exclude_unverified:
        raise VerificationError(
            f"{len(offenders)} candidates are unverified", offenders=tuple(offenders)
        )
    per_question: dict[str, tuple[int, int]] = {}
    total_candidates = 0
    used_candidates = 0
    for qid, cands in candidates_by_question.items():
        total_candidates += len(cands)
        usable = [c for c in cands if c.verdict != "unverified"]
        used_candidates += len(usable)
        if not usable:
            continue
        correct = sum(1 for c in usable if c.verdict == "correct")
        per_question[qid] = (correct, len(usable))
    if not per_question:
        raise EmptyReportError("no verified candidates to report on")
    rows = []
    for k in ks:
        queries = [PassKQuery(n=n, c=c, k=k) for c, n in per_question.values()]
        rows.append((k, macro_pass_at_k(queries, k)))
    coverage = used_candidates / total_candidates if total_candidates else 0.0
    return PassKReport(
        strategy=strategy,
        rows=tuple(rows),
        per_question=per_question,
        metadata={"averaging": "macro", "extraction_coverage": coverage},
    )
