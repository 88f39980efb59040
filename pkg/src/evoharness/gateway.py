"""The evaluation gateway: the only code path that authors evaluation records.

Callers hand over an artifact path; the gateway checks the quota, runs the task
evaluator, appends the record and returns a short report. Evaluator internals
(instance data, reference outputs) never leave this boundary; the report is::

    Status: success
    Problem: vliw
    Combined Score: 129.8189806678383
    Validity: 1.0
    Eval Time: 0.0312s
    Remaining Evals: 95
    Session Evals Remaining: 9
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

from evoharness.errors import FormatError, QuotaRefused
from evoharness.registry import (
    OFFICIAL,
    CostRecord,
    EvalRecord,
    EvalStore,
    Registry,
    WriterToken,
    register_writer,
)
from evoharness.tasks import get_task

DEFAULT_GLOBAL_BUDGET = 100
DEFAULT_SESSION_BUDGET = 15

_TOKEN = WriterToken()
register_writer(_TOKEN)

__all__ = [
    "CostRecord",
    "Gateway",
    "Quota",
    "cost_per_round",
    "format_report",
    "remaining",
]


@dataclass
class Quota:
    global_remaining: int = DEFAULT_GLOBAL_BUDGET
    session_remaining: int = DEFAULT_SESSION_BUDGET

    def permits(self) -> bool:
        return self.global_remaining > 0 and self.session_remaining > 0

    def consume(self) -> None:
        self.global_remaining -= 1
        self.session_remaining -= 1

    def reset_session(self, budget: int) -> None:
        self.session_remaining = budget


def remaining(quota: Quota) -> tuple[int, int]:
    return quota.global_remaining, quota.session_remaining


def cost_per_round(history: Iterable[CostRecord], rounds: int) -> float:
    """Average cost per round over rounds 1..R; rounds without a record cost 0."""
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    total = math.fsum(c.round_cost for c in history if 1 <= c.round <= rounds)
    return total / rounds


def format_report(record: EvalRecord, quota: Quota) -> str:
    status = "success" if record.valid else ("error" if record.error else "invalid")
    lines = [
        f"Status: {status}",
        f"Problem: {record.task}",
        f"Combined Score: {record.combined_score!r}",
        f"Validity: {float(record.validity)!r}",
        f"Eval Time: {record.eval_time_s!r}s",
        f"Remaining Evals: {quota.global_remaining}",
        f"Session Evals Remaining: {quota.session_remaining}",
    ]
    if record.error:
        lines.append(f"Error: {record.error}")
    return "\n".join(lines) + "\n"


def _quota_message(quota: Quota) -> str:
    return (
        f"evaluation refused: Remaining Evals: {quota.global_remaining}, "
        f"Session Evals Remaining: {quota.session_remaining}"
    )


class Gateway:
    """Evaluates artifacts and appends records to a workspace registry or a bare store."""

    def __init__(self, quota: Quota | None = None, clock: Callable[[], float] = time.perf_counter):
        self.quota = quota if quota is not None else Quota()
        self.clock = clock

    def _append(self, target: Registry | EvalStore, record: EvalRecord) -> EvalRecord:
        if isinstance(target, Registry):
            seq = target.record_eval(record, _TOKEN)
            recs = target.records()
        else:
            seq = target.append(record, _TOKEN)
            recs = target.records()
        self.quota.consume()
        return recs[seq]

    def evaluate(
        self,
        program: str | Path,
        task: str,
        target: Registry | EvalStore,
        round_: int,
        origin: str = OFFICIAL,
    ) -> tuple[EvalRecord, str]:
        spec = get_task(task)
        if not self.quota.permits():
            raise QuotaRefused(_quota_message(self.quota))
        path = Path(program)
        if not path.is_file():
            raise FormatError(f"program file not found: {path}")
        if isinstance(target, Registry):
            target.get(round_)
        data = path.read_bytes()
        start = self.clock()
        try:
            result = spec.evaluate(path)
            error = result.get("error")
        except Exception as exc:  # evaluator failure is data, not control flow
            result = {"validity": 0, "combined_score": 0.0, "metrics": {}}
            error = f"{type(exc).__name__}: {exc}"
        elapsed = max(0.0, self.clock() - start)
        validity = float(result["validity"])
        score = float(result["combined_score"])
        metrics = {k: float(v) for k, v in result.get("metrics", {}).items()}
        if not math.isfinite(score) or not all(math.isfinite(v) for v in metrics.values()):
            validity, score, error = 0.0, 0.0, error or "non-finite score"
            metrics = {}
        if validity != 1.0:
            score = 0.0
            metrics["combined_score"] = 0.0
        record = EvalRecord(
            round=round_,
            task=task,
            validity=validity,
            combined_score=score,
            metrics=metrics,
            error=error,
            eval_time_s=elapsed,
            program_hash=hashlib.sha256(data).hexdigest(),
            origin=origin,
        )
        record = self._append(target, record)
        return record, format_report(record, self.quota)

    def record_failure(
        self,
        task: str,
        target: Registry | EvalStore,
        round_: int,
        error: str,
        origin: str = OFFICIAL,
    ) -> tuple[EvalRecord, str]:
        """Record a round that produced nothing to evaluate (timeout, crash, no artifact)."""
        get_task(task)
        if not self.quota.permits():
            raise QuotaRefused(_quota_message(self.quota))
        if isinstance(target, Registry):
            target.get(round_)
        record = EvalRecord(
            round=round_,
            task=task,
            validity=0.0,
            combined_score=0.0,
            metrics={"combined_score": 0.0},
            error=error,
            eval_time_s=0.0,
            program_hash="",
            origin=origin,
        )
        record = self._append(target, record)
        return record, format_report(record, self.quota)
