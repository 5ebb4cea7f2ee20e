"""Run persistence: checkpoints, dataset records, run log, run clock.

A run directory holds one manifest (everything needed to resume), one
checkpoint file per work item, and a run log with stage counters. Dataset
output is JSONL appended strictly in input order; on resume the file is
rebuilt from completed checkpoints and then appending continues, which makes
an interrupted-plus-resumed run byte-identical to an uninterrupted one.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import logging
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator

from .errors import ConfigError

log = logging.getLogger(__name__)

TERMINAL_STAGES = ("done", "failed")
FIXED_EPOCH = "1970-01-01T00:00:00+00:00"


def slug(text: str) -> str:
    """Filesystem-safe, collision-resistant name for a work item key."""
    base = re.sub(r"[^A-Za-z0-9._-]+", "-", text).strip("-.").lower() or "x"
    digest = hashlib.sha1(text.encode("utf-8")).hexdigest()[:8]
    return f"{base[:48]}-{digest}"


def canonical_line(record: dict[str, Any]) -> str:
    """One JSONL line with stable field order (insertion order, compact)."""
    return json.dumps(record, ensure_ascii=False, separators=(", ", ": "))


@dataclass
class Checkpoint:
    pipeline: str
    seed_key: str
    stage: str
    state_blob: str
    cassette_namespace: str

    def to_dict(self) -> dict[str, str]:
        return {
            "pipeline": self.pipeline,
            "seed_key": self.seed_key,
            "stage": self.stage,
            "state_blob": self.state_blob,
            "cassette_namespace": self.cassette_namespace,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Checkpoint":
        return cls(
            pipeline=str(data["pipeline"]),
            seed_key=str(data["seed_key"]),
            stage=str(data["stage"]),
            state_blob=str(data["state_blob"]),
            cassette_namespace=str(data["cassette_namespace"]),
        )


class CheckpointStore:
    """One JSON checkpoint file per work item, written atomically."""

    def __init__(self, directory: Path | str) -> None:
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _path(self, seed_key: str) -> Path:
        return self.directory / f"{slug(seed_key)}.json"

    def save(self, checkpoint: Checkpoint) -> None:
        path = self._path(checkpoint.seed_key)
        with self._lock:
            tmp = path.with_suffix(".json.tmp")
            tmp.write_text(
                json.dumps(checkpoint.to_dict(), ensure_ascii=False, indent=1), encoding="utf-8"
            )
            tmp.replace(path)

    def load(self, seed_key: str) -> Checkpoint | None:
        """Read a checkpoint; a corrupted file is dropped with a warning so
        the item restarts from the beginning."""
        path = self._path(seed_key)
        if not path.exists():
            return None
        try:
            return Checkpoint.from_dict(json.loads(path.read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            log.warning("corrupted checkpoint %s (%s); restarting this item", path, exc)
            try:
                path.unlink()
            except OSError:
                pass
            return None


class OrderedWriter:
    """Appends each item's lines to a JSONL file in input-index order.

    Workers may complete out of order; lines buffer until every earlier
    index has flushed. Each flush appends whole lines and fsyncs, so a crash
    can at worst lose buffered items, never interleave them.
    """

    def __init__(self, path: Path | str) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("w", encoding="utf-8")
        self._lock = threading.Lock()
        self._pending: dict[int, list[str]] = {}
        self._next = 0

    def complete(self, index: int, lines: list[str]) -> None:
        with self._lock:
            if index < self._next or index in self._pending:
                raise ValueError(f"index {index} already written")
            self._pending[index] = lines
            while self._next in self._pending:
                for line in self._pending.pop(self._next):
                    self._fh.write(line + "\n")
                self._next += 1
            self._fh.flush()

    def close(self) -> None:
        with self._lock:
            if self._pending:
                log.warning("closing writer with %d items still pending", len(self._pending))
            self._fh.close()


def read_jsonl(path: Path | str) -> Iterator[dict[str, Any]]:
    """Yield parsed objects from a JSONL file, skipping a torn final line."""
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            stripped = line.strip()
            if not stripped:
                continue
            try:
                yield json.loads(stripped)
            except json.JSONDecodeError:
                log.warning("%s:%d: unparseable line skipped", path, lineno)


def export_jsonl(
    records: Iterable[dict[str, Any]],
    out_path: Path | str,
    *,
    release_only: bool = True,
) -> int:
    """Write dataset records to ``out_path``, filtered for release by default.

    A record is release-eligible when its final diagnosis passed every check;
    records that never carried a diagnosis are not eligible. Returns the
    number of lines written.
    """
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    written = 0
    with out.open("w", encoding="utf-8") as fh:
        for record in records:
            if release_only and not record_release_eligible(record):
                continue
            fh.write(canonical_line(record) + "\n")
            written += 1
    return written


def record_release_eligible(record: dict[str, Any]) -> bool:
    verdicts = record.get("provenance", {}).get("verdicts", {})
    final = verdicts.get("final")
    if not isinstance(final, dict):
        return False
    return (
        bool(final.get("entailment_ok"))
        and bool(final.get("sanity_ok"))
        and not final.get("shortcut_found", True)
    )


class RunClock:
    """Timestamps for provenance; frozen in replay mode.

    Replay runs must be byte-identical across invocations, so wall-clock
    values never reach dataset records there.
    """

    def __init__(self, deterministic: bool) -> None:
        self.deterministic = deterministic

    def timestamp(self) -> str:
        if self.deterministic:
            return FIXED_EPOCH
        return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


class RunLog:
    """Thread-safe stage counters plus run metadata, dumped as JSON."""

    def __init__(self, path: Path | str, *, mode: str, rng_seed: int) -> None:
        self.path = Path(path)
        self._lock = threading.Lock()
        self._counts: dict[str, int] = {}
        self._times: dict[str, float] = {}
        self._meta: dict[str, Any] = {"mode": mode, "rng_seed": rng_seed}
        self._started = time.monotonic()

    def bump(self, counter: str, amount: int = 1) -> None:
        with self._lock:
            self._counts[counter] = self._counts.get(counter, 0) + amount

    def add_time(self, stage: str, seconds: float) -> None:
        with self._lock:
            self._times[stage] = self._times.get(stage, 0.0) + seconds

    def counts(self) -> dict[str, int]:
        with self._lock:
            return dict(self._counts)

    def write(self) -> None:
        with self._lock:
            payload = {
                **self._meta,
                "elapsed_s": round(time.monotonic() - self._started, 3),
                "counters": dict(sorted(self._counts.items())),
                "stage_s": {k: round(v, 3) for k, v in sorted(self._times.items())},
            }
            self.path.parent.mkdir(parents=True, exist_ok=True)
            tmp = self.path.with_suffix(".json.tmp")
            tmp.write_text(json.dumps(payload, indent=1, ensure_ascii=False), encoding="utf-8")
            tmp.replace(self.path)


@dataclass
class RunManifest:
    """Everything a resume needs, written once at run start."""

    kind: str
    out_path: str
    items: list[dict[str, Any]]
    config: dict[str, Any]
    created_at: str = ""
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "out_path": self.out_path,
            "items": self.items,
            "config": self.config,
            "created_at": self.created_at,
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunManifest":
        return cls(
            kind=str(data["kind"]),
            out_path=str(data["out_path"]),
            items=list(data["items"]),
            config=dict(data["config"]),
            created_at=str(data.get("created_at", "")),
            extra=dict(data.get("extra", {})),
        )


def write_manifest(run_dir: Path | str, manifest: RunManifest) -> None:
    path = Path(run_dir) / "run.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(manifest.to_dict(), ensure_ascii=False, indent=1), encoding="utf-8")
    tmp.replace(path)


def read_manifest(run_dir: Path | str) -> RunManifest:
    path = Path(run_dir) / "run.json"
    try:
        return RunManifest.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"run directory {run_dir} has no usable manifest: {exc}") from exc
