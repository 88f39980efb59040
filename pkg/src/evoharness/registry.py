"""Append-only candidate history and evaluation records.

Evaluation records live in a newline-delimited store. Each line is the
canonical JSON of one record (fixed key order, no whitespace) ending in a
``chain_digest``::

    chain_digest = sha256(previous_digest + canonical_record_without_digest)

with the all-zero digest as the root. Opening a store re-derives every line and
every digest, so any edit, truncation inside a line or reordering is caught.

Only the holder of the registered writer token (the gateway) can append.
Candidates live under ``candidates/candidate_<round>/``.
"""

from __future__ import annotations

import fcntl
import hashlib
import json
import math
import os
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator

from evoharness.errors import (
    AuthorizationError,
    LineageError,
    ReplayRefusedError,
    TamperError,
)
from evoharness.tasks import MINIMIZE, get_task

GENESIS_DIGEST = "0" * 64
CANDIDATES_DIR = "candidates"
STORE_NAME = ".eval.db"
LOCAL_STORE_NAME = ".eval.local.db"
OFFICIAL = "official"
SESSION = "session"


@dataclass(frozen=True)
class Candidate:
    round: int
    parent_round: int | None
    artifact_dir: str
    mechanism_id: str
    segment_id: int
    created_at: str

    @property
    def folder(self) -> str:
        return str(Path(self.artifact_dir).parent)


@dataclass(frozen=True)
class EvalRecord:
    round: int
    task: str
    validity: float
    combined_score: float
    metrics: dict = field(default_factory=dict)
    error: str | None = None
    eval_time_s: float = 0.0
    program_hash: str = ""
    origin: str = OFFICIAL
    seq: int = -1
    chain_digest: str = ""

    @property
    def valid(self) -> bool:
        return self.validity == 1.0

    def value(self, metric: str) -> float | None:
        if metric == "combined_score":
            return self.combined_score
        return self.metrics.get(metric)


@dataclass(frozen=True)
class CostRecord:
    round: int
    n_in: int = 0
    n_cache: int = 0
    n_out: int = 0
    p_in: float = 0.0
    p_cache: float = 0.0
    p_out: float = 0.0

    @property
    def round_cost(self) -> float:
        return self.p_in * self.n_in + self.p_cache * self.n_cache + self.p_out * self.n_out


@dataclass
class RoundContext:
    candidate: Candidate
    eval: EvalRecord | None = None
    logs: list[str] = field(default_factory=list)
    cost: CostRecord | None = None


def _body(record: EvalRecord) -> dict:
    return {
        "seq": record.seq,
        "round": record.round,
        "task": record.task,
        "origin": record.origin,
        "validity": float(record.validity),
        "combined_score": float(record.combined_score),
        "metrics": {k: float(record.metrics[k]) for k in sorted(record.metrics)},
        "error": record.error,
        "eval_time_s": float(record.eval_time_s),
        "program_hash": record.program_hash,
    }


def _dumps(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=True, allow_nan=False)


def canonical(record: EvalRecord) -> str:
    """Canonical serialization of ``record`` without its digest."""
    return _dumps(_body(record))


def chain(previous: str, record: EvalRecord) -> str:
    return hashlib.sha256((previous + canonical(record)).encode("ascii")).hexdigest()


def _line(record: EvalRecord) -> str:
    body = _body(record)
    body["chain_digest"] = record.chain_digest
    return _dumps(body) + "\n"


def _record_from(obj: dict) -> EvalRecord:
    return EvalRecord(
        round=obj["round"],
        task=obj["task"],
        validity=obj["validity"],
        combined_score=obj["combined_score"],
        metrics=dict(obj["metrics"]),
        error=obj["error"],
        eval_time_s=obj["eval_time_s"],
        program_hash=obj["program_hash"],
        origin=obj["origin"],
        seq=obj["seq"],
        chain_digest=obj["chain_digest"],
    )


class WriterToken:
    """Capability object; only the registered instance may append records."""

    __slots__ = ()


_writer: WriterToken | None = None


def register_writer(token: WriterToken) -> None:
    global _writer
    if _writer is not None and token is not _writer:
        raise AuthorizationError("an evaluation writer is already registered")
    _writer = token


def _check_token(token) -> None:
    if _writer is None or token is not _writer:
        raise AuthorizationError("only the evaluation gateway may write evaluation records")


@contextmanager
def _locked(path: Path) -> Iterator[None]:
    lock_path = Path(str(path) + ".lock")
    lock_path.parent.mkdir(parents=True, exist_ok=True)
    with open(lock_path, "a") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


class EvalStore:
    """One chain-verified record file. Opening verifies the whole chain."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.records()

    def records(self) -> list[EvalRecord]:
        if not self.path.exists():
            return []
        data = self.path.read_bytes()
        if not data:
            return []
        if not data.endswith(b"\n"):
            raise TamperError(f"{self.path}: truncated final record")
        try:
            text = data.decode("ascii")
        except UnicodeDecodeError:
            raise TamperError(f"{self.path}: non-ASCII bytes in store") from None
        out = []
        previous = GENESIS_DIGEST
        for index, line in enumerate(text.split("\n")[:-1]):
            try:
                rec = _record_from(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise TamperError(f"{self.path}: record {index} unreadable ({exc})") from None
            if rec.seq != index:
                raise TamperError(f"{self.path}: record {index} has seq {rec.seq}")
            try:
                rebuilt = _line(rec)
            except (ValueError, TypeError):
                raise TamperError(f"{self.path}: record {index} not canonical") from None
            if rebuilt != line + "\n":
                raise TamperError(f"{self.path}: record {index} not canonical")
            if chain(previous, rec) != rec.chain_digest:
                raise TamperError(f"{self.path}: chain broken at record {index}")
            previous = rec.chain_digest
            out.append(rec)
        return out

    def __len__(self) -> int:
        return len(self.records())

    def head(self) -> str:
        recs = self.records()
        return recs[-1].chain_digest if recs else GENESIS_DIGEST

    def append(self, record: EvalRecord, token: WriterToken) -> int:
        _check_token(token)
        return self._append([record])[0]

    def _append(self, records: list[EvalRecord]) -> list[int]:
        with _locked(self.path):
            existing = self.records()
            previous = existing[-1].chain_digest if existing else GENESIS_DIGEST
            seqs = []
            lines = []
            for offset, rec in enumerate(records):
                rec = replace(rec, seq=len(existing) + offset, chain_digest="")
                rec = replace(rec, chain_digest=chain(previous, rec))
                previous = rec.chain_digest
                lines.append(_line(rec))
                seqs.append(rec.seq)
            with open(self.path, "a", encoding="ascii") as fh:
                fh.write("".join(lines))
                fh.flush()
                os.fsync(fh.fileno())
            return seqs


def replay(local_store: str | Path, workspace_store: str | Path) -> int:
    """Append every record of a session-local store to the workspace store.

    Records keep their fields verbatim and are re-sequenced and re-chained in
    the workspace. A ``.replayed`` marker next to the local store makes a
    second replay of the same session fail.
    """
    local_path = Path(local_store)
    marker = Path(str(local_path) + ".replayed")
    if marker.exists():
        raise ReplayRefusedError(f"{local_path} was already replayed")
    local = EvalStore(local_path)
    target = EvalStore(workspace_store)
    rows = local.records()
    if rows:
        target._append(rows)
    marker.write_text(f"{len(rows)}\n")
    return len(rows)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class Registry:
    """Candidates and evaluation records of one workspace."""

    def __init__(self, root: str | Path, task: str):
        self.root = Path(root)
        self.task = task
        self.candidates_dir = self.root / CANDIDATES_DIR
        self.store = EvalStore(self.root / STORE_NAME)

    # candidates -----------------------------------------------------------

    def _meta_path(self, round_: int) -> Path:
        return self.candidates_dir / f"candidate_{round_}" / "candidate.json"

    def candidates(self) -> list[Candidate]:
        if not self.candidates_dir.exists():
            return []
        found = []
        for meta in self.candidates_dir.glob("candidate_*/candidate.json"):
            found.append(Candidate(**json.loads(meta.read_text())))
        return sorted(found, key=lambda c: c.round)

    def rounds(self) -> list[int]:
        return [c.round for c in self.candidates()]

    def get(self, round_: int) -> Candidate:
        meta = self._meta_path(round_) if isinstance(round_, int) and round_ >= 1 else None
        if meta is None or not meta.exists():
            raise LineageError(f"no candidate for round {round_}")
        return Candidate(**json.loads(meta.read_text()))

    def latest(self) -> Candidate | None:
        cands = self.candidates()
        return cands[-1] if cands else None

    def new_candidate(
        self, parent_round: int | None = None, mechanism_id: str = "manual", segment_id: int = 0
    ) -> Candidate:
        rounds = self.rounds()
        if parent_round is not None and parent_round not in rounds:
            raise LineageError(f"parent round {parent_round} does not exist")
        round_ = (max(rounds) + 1) if rounds else 1
        folder = self.candidates_dir / f"candidate_{round_}"
        (folder / "artifacts").mkdir(parents=True)
        cand = Candidate(
            round=round_,
            parent_round=parent_round,
            artifact_dir=f"{CANDIDATES_DIR}/candidate_{round_}/artifacts",
            mechanism_id=mechanism_id,
            segment_id=segment_id,
            created_at=_now(),
        )
        self._meta_path(round_).write_text(json.dumps(asdict(cand), indent=2) + "\n")
        return cand

    def artifact_path(self, cand: Candidate, name: str | None = None) -> Path:
        base = self.root / cand.artifact_dir
        return base / (name or get_task(self.task).artifact_name)

    def write_artifact(self, cand: Candidate, name: str, content: str | bytes) -> Path:
        path = self.artifact_path(cand, name)
        if isinstance(content, bytes):
            path.write_bytes(content)
        else:
            path.write_text(content)
        return path

    def append_log(self, round_: int, lines: list[str]) -> None:
        self.get(round_)
        with open(self.candidates_dir / f"candidate_{round_}" / "round.log", "a") as fh:
            fh.writelines(line.rstrip("\n") + "\n" for line in lines)

    def logs(self, round_: int) -> list[str]:
        path = self.candidates_dir / f"candidate_{round_}" / "round.log"
        return path.read_text().splitlines() if path.exists() else []

    def record_cost(self, cost: CostRecord) -> None:
        self.get(cost.round)
        path = self.candidates_dir / f"candidate_{cost.round}" / "cost.json"
        path.write_text(json.dumps(asdict(cost)) + "\n")

    def cost(self, round_: int) -> CostRecord | None:
        path = self.candidates_dir / f"candidate_{round_}" / "cost.json"
        return CostRecord(**json.loads(path.read_text())) if path.exists() else None

    # evaluations ----------------------------------------------------------

    def record_eval(self, record: EvalRecord, token: WriterToken) -> int:
        _check_token(token)
        self.get(record.round)
        return self.store.append(record, token)

    def records(self) -> list[EvalRecord]:
        return self.store.records()

    def official(self) -> dict[int, EvalRecord]:
        """Latest official record per round."""
        latest: dict[int, EvalRecord] = {}
        for rec in self.records():
            if rec.origin == OFFICIAL:
                latest[rec.round] = rec
        return latest

    def _ranked(self, metric: str, upto: int | None = None) -> list[tuple[float, int]]:
        minimize = get_task(self.task).direction(metric) == MINIMIZE
        ranked = []
        for round_, rec in self.official().items():
            if upto is not None and round_ > upto:
                continue
            value = rec.value(metric)
            if not rec.valid or value is None or math.isnan(value):
                continue
            ranked.append((-value if minimize else value, round_))
        ranked.sort(reverse=True)
        return ranked

    def best(self, metric: str = "combined_score") -> Candidate | None:
        ranked = self._ranked(metric)
        return self.get(ranked[0][1]) if ranked else None

    def ranked_candidates(self, metric: str = "combined_score") -> list[Candidate]:
        """Valid candidates, best first (ties: larger round first)."""
        return [self.get(r) for _, r in self._ranked(metric)]

    def read_metrics(self, round_: int) -> dict:
        self.get(round_)
        rec = self.official().get(round_)
        return dict(rec.metrics) if rec else {}

    def best_so_far(self, metric: str = "combined_score") -> list[tuple[int, float | None]]:
        """``(round, best value among valid rounds <= round)`` for every round."""
        minimize = get_task(self.task).direction(metric) == MINIMIZE
        official = self.official()
        out = []
        best = None
        for round_ in self.rounds():
            rec = official.get(round_)
            if rec is not None and rec.valid and rec.value(metric) is not None:
                v = rec.value(metric)
                if best is None or (v < best if minimize else v > best):
                    best = v
            out.append((round_, best))
        return out

    def contexts(self) -> list[RoundContext]:
        official = self.official()
        return [
            RoundContext(c, official.get(c.round), self.logs(c.round), self.cost(c.round))
            for c in self.candidates()
        ]
