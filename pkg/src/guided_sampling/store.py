"""Content-addressed, resumable persistence for backend responses.

Layout under the store root:

    <root>/<run_id>/samples/<question_id>/<key-digest>.json
    <root>/<run_id>/index.tsv        (digest, relative path, byte length)

Writes go to a temp file in the destination directory and are renamed into
place, so a killed process leaves either a complete record or nothing.
list_missing consults the actual files, never just the index; the index is an
append-only convenience for humans and external tooling.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .backend import CompletionResponse
from .errors import StoreConflict, StoreError

PHASES = ("exploration", "generation")


@dataclass(frozen=True)
class SampleKey:
    """Identity of one backend response within a run.

    The digest is a pure function of the fields, so two semantically identical
    requests (same slot in the run, same prompt, same decoding params) collide
    on purpose.
    """

    run_id: str
    question_id: str
    phase: str
    concept_index: Optional[int]
    sample_index: int
    prompt_hash: str
    params_hash: str

    def __post_init__(self):
        if self.phase not in PHASES:
            raise StoreError(f"unknown phase {self.phase!r}")

    def digest(self) -> str:
        blob = json.dumps(
            {
                "run_id": self.run_id,
                "question_id": self.question_id,
                "phase": self.phase,
                "concept_index": self.concept_index,
                "sample_index": self.sample_index,
                "prompt_hash": self.prompt_hash,
                "params_hash": self.params_hash,
            },
            sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class SampleStore:
    """Filesystem-backed sample store; safe for concurrent writers."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._lock = threading.Lock()

    def _sample_path(self, key: SampleKey) -> Path:
        return self.root / key.run_id / "samples" / key.question_id / f"{key.digest()}.json"

    def _index_path(self, run_id: str) -> Path:
        return self.root / run_id / "index.tsv"

    def put(self, key: SampleKey, response: CompletionResponse) -> Path:
        """Persist one response; idempotent for identical re-puts.

        Returns the file path as the stored receipt. Re-putting a different
        value under an existing key raises StoreConflict.
        """
        path = self._sample_path(key)
        payload = json.dumps(response.to_dict(), sort_keys=True, ensure_ascii=False)
        if path.exists():
            existing = path.read_text(encoding="utf-8")
            if existing == payload:
                return path
            raise StoreConflict(f"key {key.digest()} already stored with a different value")
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp_name = tempfile.mkstemp(prefix=".tmp-", dir=path.parent)
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as fh:
                    fh.write(payload)
                    fh.flush()
                    os.fsync(fh.fileno())
                os.replace(tmp_name, path)
            except BaseException:
                try:
                    os.unlink(tmp_name)
                except OSError:
                    pass
                raise
        except OSError as exc:
            raise StoreError(f"failed to store sample: {exc}") from exc
        self._append_index(key, path, len(payload.encode("utf-8")))
        return path

    def _append_index(self, key: SampleKey, path: Path, nbytes: int) -> None:
        rel = path.relative_to(self.root / key.run_id)
        line = f"{key.digest()}\t{rel.as_posix()}\t{nbytes}\n"
        index = self._index_path(key.run_id)
        with self._lock:
            try:
                with open(index, "a", encoding="utf-8") as fh:
                    fh.write(line)
            except OSError as exc:
                raise StoreError(f"failed to append index: {exc}") from exc

    def get(self, key: SampleKey) -> Optional[CompletionResponse]:
        path = self._sample_path(key)
        try:
            raw = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            return None
        except OSError as exc:
            raise StoreError(f"failed to read sample: {exc}") from exc
        return CompletionResponse.from_dict(json.loads(raw))

    def contains(self, key: SampleKey) -> bool:
        return self._sample_path(key).exists()

    def list_missing(self, run_id: str, expected_keys: Iterable[SampleKey]) -> list[SampleKey]:
        """Exactly the expected keys whose samples are not on disk."""
        missing = []
        for key in expected_keys:
            if key.run_id != run_id:
                raise StoreError(f"key for run {key.run_id!r} passed to run {run_id!r}")
            if not self.contains(key):
                missing.append(key)
        return missing
