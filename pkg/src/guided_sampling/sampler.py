"""Two-phase sampling orchestration.

explore() elicits concepts one at a time, each prompt conditioned on every
concept accepted so far, until the model answers with the early-stop sentinel
or the concept cap is reached. generate() then spends the generation budget
across the realized concepts. repeated_sample() is the unguided baseline.
run_experiment() drives both over a dataset with persistence and resume.

Persistence contract: every backend response is written to the store before
the run advances past it, keyed by its position in the run plus prompt and
parameter hashes. Re-running with the same run id therefore replays stored
responses and only calls the backend for what is missing.
"""

from __future__ import annotations

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

from .backend import Backend, CompletionRequest, CompletionResponse, params_hash, prompt_hash
from .core import (
    Budget,
    Candidate,
    Concept,
    Question,
    allocate_budget,
    derive_seed,
)
from .errors import (
    BackendUnavailable,
    DatasetError,
    EmptyExplorationError,
    ExplorationFailed,
    GuidedSamplingError,
    StoreError,
)
from .prompts import (
    PromptTemplates,
    format_existing_concepts,
    format_options,
    sentinel_matches,
    templates_for,
)
from .store import SampleKey, SampleStore

logger = logging.getLogger(__name__)

# signature shared by live and store-backed completion paths
Completer = Callable[[CompletionRequest, str, str, Optional[int], int], CompletionResponse]


@dataclass(frozen=True)
class DecodingParams:
    temperature: float = 1.0
    max_tokens: int = 1024
    stop: Optional[tuple[str, ...]] = None

    def request(self, prompt: str, seed: Optional[int]) -> CompletionRequest:
        return CompletionRequest(
            messages=(("user", prompt),),
            temperature=self.temperature,
            max_tokens=self.max_tokens,
            seed=seed,
            stop=self.stop,
        )


@dataclass(frozen=True)
class ExplorationResult:
    """Concepts found for one question, plus the loop's accounting."""

    concepts: tuple[Concept, ...]
    stopped_early: bool
    exploration_calls: int
    duplicates_discarded: int

    def __post_init__(self):
        object.__setattr__(self, "concepts", tuple(self.concepts))
        expected = len(self.concepts) + self.duplicates_discarded + (1 if self.stopped_early else 0)
        if self.exploration_calls != expected:
            raise DatasetError(
                f"exploration_calls={self.exploration_calls} inconsistent with "
                f"{len(self.concepts)} concepts + {self.duplicates_discarded} discards"
                f"{' + sentinel' if self.stopped_early else ''}"
            )

    def to_dict(self) -> dict:
        return {
            "concepts": [
                {"index": c.index, "text": c.text, "generator_fingerprint": c.generator_fingerprint}
                for c in self.concepts
            ],
            "stopped_early": self.stopped_early,
            "exploration_calls": self.exploration_calls,
            "duplicates_discarded": self.duplicates_discarded,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExplorationResult":
        return cls(
            concepts=tuple(
                Concept(c["index"], c["text"], c.get("generator_fingerprint", ""))
                for c in d["concepts"]
            ),
            stopped_early=d["stopped_early"],
            exploration_calls=d["exploration_calls"],
            duplicates_discarded=d["duplicates_discarded"],
        )


def _normalize_for_dedup(text: str) -> str:
    return " ".join(text.split()).casefold()


def _direct_completer(backend: Backend) -> Completer:
    def run(req: CompletionRequest, _qid, _phase, _concept_index, _sample_index):
        return backend.complete(req)

    return run


def explore(
    q: Question,
    backend: Backend,
    k_max: int,
    templates: Optional[PromptTemplates] = None,
    *,
    decoding: DecodingParams = DecodingParams(),
    seed: Optional[int] = None,
    keep_duplicates: bool = False,
    completer: Optional[Completer] = None,
) -> ExplorationResult:
    """Sequentially elicit concepts for one question, at most k_max calls.

    The first call renders the initial template; every later call renders the
    subsequent template with all previously accepted concepts in its
    EXISTING CONCEPTS slot. A sentinel response stops the loop early. Exact
    duplicates (case-insensitive, whitespace-normalized) and blank responses
    are discarded: they consume one of the k_max calls without occupying a
    concept slot. Zero accepted concepts is an error; the caller decides
    whether to fall back to plain repeated sampling.
    """
    if k_max < 1:
        raise DatasetError("k_max must be >= 1")
    templates = templates or templates_for(q.domain_kind)
    run = completer or _direct_completer(backend)
    options = format_options(q.options)
    concepts: list[Concept] = []
    seen: set[str] = set()
    calls = 0
    discards = 0
    stopped_early = False
    while calls < k_max:
        if not concepts:
            prompt = templates.render_initial(q.text, options)
        else:
            existing = format_existing_concepts([c.text for c in concepts])
            prompt = templates.render_subsequent(q.text, existing, options)
        call_seed = derive_seed(seed, "exploration", q.id, str(calls)) if seed is not None else None
        req = decoding.request(prompt, call_seed)
        try:
            response = run(req, q.id, "exploration", None, calls + 1)
        except GuidedSamplingError as exc:
            raise ExplorationFailed(
                f"backend failed after {calls} exploration calls on {q.id}: {exc}",
                concepts=tuple(concepts),
                calls=calls,
            ) from exc
        calls += 1
        text = response.text.strip()
        if sentinel_matches(text):
            stopped_early = True
            break
        key = _normalize_for_dedup(text)
        if not key or (key in seen and not keep_duplicates):
            discards += 1
            continue
        seen.add(key)
        concepts.append(
            Concept(
                index=len(concepts) + 1,
                text=text,
                generator_fingerprint=response.backend_fingerprint,
            )
        )
    if not concepts:
        raise EmptyExplorationError(
            f"no concepts obtained for question {q.id}", calls=calls
        )
    return ExplorationResult(
        concepts=tuple(concepts),
        stopped_early=stopped_early,
        exploration_calls=calls,
        duplicates_discarded=discards,
    )


def _effective_allocation(budget: Budget, realized: int) -> tuple[int, ...]:
    """Align the budget with the concepts that actually materialized."""
    if realized == len(budget.per_concept) and budget.per_concept:
        return budget.per_concept
    return allocate_budget(budget.total_generation_calls, realized).per_concept


def generate(
    q: Question,
    exploration: ExplorationResult,
    budget: Budget,
    backend: Backend,
    templates: Optional[PromptTemplates] = None,
    *,
    decoding: DecodingParams = DecodingParams(),
    seed: Optional[int] = None,
    completer: Optional[Completer] = None,
) -> list[Candidate]:
    """Spend the generation budget across the explored concepts.

    Concept k receives its slice of the budget; every candidate records which
    concept guided it. A backend-unavailable failure on one sample becomes a
    failed candidate (verdict incorrect, note set) so budget accounting stays
    exact; misconfiguration errors propagate.
    """
    templates = templates or templates_for(q.domain_kind)
    run = completer or _direct_completer(backend)
    options = format_options(q.options)
    allocation = _effective_allocation(budget, len(exploration.concepts))
    candidates: list[Candidate] = []
    for concept, quota in zip(exploration.concepts, allocation):
        prompt = templates.render_generation(q.text, concept.text, options)
        for m in range(1, quota + 1):
            call_seed = (
                derive_seed(seed, "generation", q.id, str(concept.index), str(m))
                if seed is not None
                else None
            )
            req = decoding.request(prompt, call_seed)
            candidates.append(
                _sample_candidate(run, req, q.id, concept.index, m)
            )
    return candidates


def repeated_sample(
    q: Question,
    n: int,
    backend: Backend,
    templates: Optional[PromptTemplates] = None,
    *,
    decoding: DecodingParams = DecodingParams(),
    seed: Optional[int] = None,
    completer: Optional[Completer] = None,
) -> list[Candidate]:
    """Draw n independent samples from the same direct prompt."""
    if n < 1:
        raise DatasetError("n must be >= 1")
    templates = templates or templates_for(q.domain_kind)
    run = completer or _direct_completer(backend)
    prompt = templates.render_direct(q.text, format_options(q.options))
    candidates = []
    for m in range(1, n + 1):
        call_seed = derive_seed(seed, "generation", q.id, "rs", str(m)) if seed is not None else None
        req = decoding.request(prompt, call_seed)
        candidates.append(_sample_candidate(run, req, q.id, None, m))
    return candidates


def _sample_candidate(
    run: Completer,
    req: CompletionRequest,
    question_id: str,
    concept_index: Optional[int],
    sample_index: int,
) -> Candidate:
    try:
        response = run(req, question_id, "generation", concept_index, sample_index)
    except BackendUnavailable as exc:
        logger.error("sample %s/%s/%s failed: %s", question_id, concept_index, sample_index, exc)
        return Candidate(
            question_id=question_id,
            concept_index=concept_index,
            sample_index=sample_index,
            text="",
            verdict="incorrect",
            note=f"backend unavailable: {exc}",
        )
    return Candidate(
        question_id=question_id,
        concept_index=concept_index,
        sample_index=sample_index,
        text=response.text,
    )


@dataclass(frozen=True)
class QuestionRun:
    exploration: Optional[ExplorationResult]
    candidates: tuple[Candidate, ...]


@dataclass(frozen=True)
class RunArtifact:
    """Everything one run produced, as written to its directory.

    path is where the artifact lives on this machine; it is deliberately not
    part of the manifest so artifacts stay byte-portable across hosts.
    """

    run_id: str
    strategy: str
    budget: Budget
    per_question: dict[str, QuestionRun]
    manifest: dict
    path: Optional[Path] = None

    def candidates_by_question(self) -> dict[str, tuple[Candidate, ...]]:
        return {qid: qr.candidates for qid, qr in self.per_question.items()}


def _utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _candidate_sort_key(c: Candidate):
    return (c.concept_index if c.concept_index is not None else 0, c.sample_index)


class _StoredCompleter:
    """Store-through completion: serve from disk, else call and persist."""

    def __init__(self, backend: Backend, store: SampleStore, run_id: str):
        self.backend = backend
        self.store = store
        self.run_id = run_id
        self.issued = 0
        self._lock = threading.Lock()

    def __call__(
        self,
        req: CompletionRequest,
        question_id: str,
        phase: str,
        concept_index: Optional[int],
        sample_index: int,
    ) -> CompletionResponse:
        key = SampleKey(
            run_id=self.run_id,
            question_id=question_id,
            phase=phase,
            concept_index=concept_index,
            sample_index=sample_index,
            prompt_hash=prompt_hash(req.messages),
            params_hash=params_hash(req),
        )
        cached = self.store.get(key)
        if cached is not None:
            return cached
        response = self.backend.complete(req)
        self.store.put(key, response)
        with self._lock:
            self.issued += 1
        return response


def run_experiment(
    dataset: Sequence[Question],
    strategy: str,
    budget: Budget,
    backend: Backend,
    templates: Optional[Mapping[str, PromptTemplates]] = None,
    store: Optional[SampleStore] = None,
    *,
    run_id: str = "run",
    seed: int = 0,
    decoding: DecodingParams = DecodingParams(),
    parallelism: int = 8,
    keep_duplicates: bool = False,
    on_empty_exploration: str = "rs",
    clock: Callable[[], str] = _utc_now,
    config_snapshot: Optional[dict] = None,
) -> RunArtifact:
    """Run one strategy over a dataset, persisting as it goes.

    A budget with max_concepts == 0 degenerates to plain repeated sampling
    with n = total_generation_calls regardless of the requested strategy, and
    the artifact is labeled accordingly. Re-invoking with the same run id and
    store resumes: stored responses are replayed and only missing samples
    reach the backend.
    """
    if not dataset:
        raise DatasetError("dataset must be non-empty")
    if strategy not in ("rs", "guided"):
        raise DatasetError(f"strategy must be 'rs' or 'guided', got {strategy!r}")
    if on_empty_exploration not in ("rs", "error"):
        raise DatasetError("on_empty_exploration must be 'rs' or 'error'")
    ids = [q.id for q in dataset]
    if len(set(ids)) != len(ids):
        raise DatasetError("dataset contains duplicate question ids")
    if budget.is_rs:
        strategy = "rs"

    templates = dict(templates) if templates else None
    store = store or SampleStore(Path.cwd() / "runs")
    run_dir = store.root / run_id
    completer = _StoredCompleter(backend, store, run_id)
    started_at = clock()
    _write_manifest_stub(run_dir, run_id, strategy, budget, seed, started_at)

    def tpl(q: Question) -> PromptTemplates:
        if templates is not None:
            try:
                return templates[q.domain_kind]
            except KeyError:
                raise DatasetError(f"no templates supplied for domain {q.domain_kind!r}") from None
        return templates_for(q.domain_kind)

    per_question: dict[str, QuestionRun] = {}
    fallbacks = 0
    exploration_calls_total = 0

    # exploration is sequential per question (each prompt depends on the last)
    explorations: dict[str, Optional[ExplorationResult]] = {}
    if strategy == "guided":
        for q in dataset:
            try:
                result = explore(
                    q,
                    backend,
                    budget.max_concepts,
                    tpl(q),
                    decoding=decoding,
                    seed=seed,
                    keep_duplicates=keep_duplicates,
                    completer=completer,
                )
            except EmptyExplorationError as exc:
                if on_empty_exploration == "error":
                    raise
                logger.warning("%s: falling back to repeated sampling", q.id)
                fallbacks += 1
                exploration_calls_total += exc.calls
                result = None
            else:
                exploration_calls_total += result.exploration_calls
            explorations[q.id] = result
    else:
        explorations = {q.id: None for q in dataset}

    # generation parallelizes across questions under one shared pool
    def gen_for(q: Question) -> list[Candidate]:
        exploration = explorations[q.id]
        if strategy == "guided" and exploration is not None:
            return generate(
                q, exploration, budget, backend, tpl(q),
                decoding=decoding, seed=seed, completer=completer,
            )
        return repeated_sample(
            q, budget.total_generation_calls, backend, tpl(q),
            decoding=decoding, seed=seed, completer=completer,
        )

    if parallelism > 1 and len(dataset) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(gen_for, dataset))
    else:
        results = [gen_for(q) for q in dataset]

    generation_calls_total = 0
    for q, candidates in zip(dataset, results):
        candidates = sorted(candidates, key=_candidate_sort_key)
        generation_calls_total += len(candidates)
        per_question[q.id] = QuestionRun(
            exploration=explorations[q.id], candidates=tuple(candidates)
        )

    manifest = {
        "run_id": run_id,
        "strategy": strategy,
        "budget": budget.to_dict(),
        "seed": seed,
        "decoding": {
            "temperature": decoding.temperature,
            "max_tokens": decoding.max_tokens,
            "stop": list(decoding.stop) if decoding.stop else None,
        },
        "backend_fingerprint": backend.fingerprint_id,
        "keep_duplicates": keep_duplicates,
        "on_empty_exploration": on_empty_exploration,
        "rs_fallbacks": fallbacks,
        "exploration_calls": exploration_calls_total,
        "generation_calls": generation_calls_total,
        "questions": len(dataset),
        "started_at": started_at,
        "completed_at": clock(),
        "status": "complete",
        "config": config_snapshot or {},
    }
    artifact = RunArtifact(
        run_id=run_id,
        strategy=strategy,
        budget=budget,
        per_question=per_question,
        manifest=manifest,
        path=run_dir,
    )
    write_artifact(artifact, run_dir, dataset)
    return artifact


def _write_manifest_stub(
    run_dir: Path, run_id: str, strategy: str, budget: Budget, seed: int, started_at: str
) -> None:
    """Minimal manifest written before any sampling, so an aborted run is
    identifiable and resumable from disk."""
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
        stub = {
            "run_id": run_id,
            "strategy": strategy,
            "budget": budget.to_dict(),
            "seed": seed,
            "started_at": started_at,
            "status": "running",
        }
        _atomic_write_text(run_dir / "manifest.json", json.dumps(stub, indent=2) + "\n")
    except OSError as exc:
        raise StoreError(f"store is not writable: {exc}") from exc


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(f".tmp-{path.name}")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def _dump_jsonl(records: Sequence[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in records)


def write_artifact(artifact: RunArtifact, run_dir: Path, dataset: Sequence[Question]) -> None:
    """Lay the artifact out on disk (manifest, questions, exploration, candidates)."""
    run_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write_text(
        run_dir / "manifest.json", json.dumps(artifact.manifest, indent=2, sort_keys=True) + "\n"
    )
    _atomic_write_text(run_dir / "questions.jsonl", _dump_jsonl([q.to_dict() for q in dataset]))
    if artifact.strategy == "guided":
        rows = []
        for qid in sorted(artifact.per_question):
            exploration = artifact.per_question[qid].exploration
            row = {"question_id": qid}
            row["exploration"] = exploration.to_dict() if exploration is not None else None
            rows.append(row)
        _atomic_write_text(run_dir / "exploration.jsonl", _dump_jsonl(rows))
    cand_dir = run_dir / "candidates"
    cand_dir.mkdir(exist_ok=True)
    for qid in sorted(artifact.per_question):
        records = [c.to_dict() for c in artifact.per_question[qid].candidates]
        _atomic_write_text(cand_dir / f"{qid}.jsonl", _dump_jsonl(records))


def read_artifact(run_dir: str | Path) -> tuple[RunArtifact, list[Question]]:
    """Load an artifact directory back into memory (with its questions)."""
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise StoreError(f"{run_dir} has no manifest.json")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("status") != "complete":
        raise StoreError(f"run {manifest.get('run_id')} is not complete (status: "
                         f"{manifest.get('status')!r}); re-run it to resume")
    questions = []
    with open(run_dir / "questions.jsonl", "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                questions.append(Question.from_dict(json.loads(line)))
    explorations: dict[str, Optional[ExplorationResult]] = {}
    exploration_path = run_dir / "exploration.jsonl"
    if exploration_path.exists():
        with open(exploration_path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    row = json.loads(line)
                    explorations[row["question_id"]] = (
                        ExplorationResult.from_dict(row["exploration"])
                        if row["exploration"] is not None
                        else None
                    )
    per_question: dict[str, QuestionRun] = {}
    for q in questions:
        cand_path = run_dir / "candidates" / f"{q.id}.jsonl"
        candidates = []
        with open(cand_path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    candidates.append(Candidate.from_dict(json.loads(line)))
        per_question[q.id] = QuestionRun(
            exploration=explorations.get(q.id), candidates=tuple(candidates)
        )
    artifact = RunArtifact(
        run_id=manifest["run_id"],
        strategy=manifest["strategy"],
        budget=Budget.from_dict(manifest["budget"]),
        per_question=per_question,
        manifest=manifest,
        path=run_dir,
    )
    return artifact, questions


def update_artifact_candidates(
    run_dir: str | Path, per_question: Mapping[str, Sequence[Candidate]]
) -> None:
    """Rewrite candidate files after verification or judging."""
    run_dir = Path(run_dir)
    cand_dir = run_dir / "candidates"
    for qid, candidates in per_question.items():
        records = [c.to_dict() for c in sorted(candidates, key=_candidate_sort_key)]
        _atomic_write_text(cand_dir / f"{qid}.jsonl", _dump_jsonl(records))
