"""Shared fixtures and scripted-backend helpers for the test suite."""

from __future__ import annotations

import itertools
import threading

import pytest

from guided_sampling.backend import Backend, CompletionRequest, CompletionResponse
from guided_sampling.core import Question, VerifierSpec


def make_question(
    qid: str = "q1",
    text: str = "Convert the point (0,3) in rectangular coordinates to polar coordinates.",
    domain_kind: str = "math",
    answer: str = "42",
    kind: str = "exact_answer",
    options=None,
) -> Question:
    return Question(
        id=qid,
        text=text,
        domain_kind=domain_kind,
        ground_truth=VerifierSpec(kind=kind, payload=answer),
        options=options,
    )


class CountingBackend:
    """Wrap a backend, counting calls and optionally failing after a cutoff.

    fail_after=N makes the N+1-th and later fresh calls raise, which stands
    in for a process killed mid-run.
    """

    def __init__(self, inner: Backend, fail_after: int | None = None):
        self.inner = inner
        self.fail_after = fail_after
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        with self._lock:
            if self.fail_after is not None and self.calls >= self.fail_after:
                raise KilledRun(f"cut off after {self.fail_after} calls")
            self.calls += 1
        return self.inner.complete(req)

    @property
    def fingerprint_id(self) -> str:
        return self.inner.fingerprint_id


class KilledRun(RuntimeError):
    """Simulated hard kill; deliberately not a backend error type."""


def fixed_clock(start: str = "2026-01-01T00:00:00Z"):
    """A clock that always answers the same instant (byte-stable manifests)."""

    def clock() -> str:
        return start

    return clock


def ticking_clock():
    counter = itertools.count()

    def clock() -> str:
        return f"2026-01-01T00:00:{next(counter):02d}Z"

    return clock


@pytest.fixture
def question():
    return make_question()


@pytest.fixture
def mcq_question():
    return make_question(
        qid="m1",
        text="Which planet is largest?",
        domain_kind="mcq",
        answer="B",
        kind="mcq_letter",
        options=("Mars", "Jupiter", "Venus"),
    )
