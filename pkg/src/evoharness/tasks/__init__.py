"""Task table: artifact file name, metric directions and evaluator per task."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from evoharness.errors import HarnessError

MAXIMIZE = "maximize"
MINIMIZE = "minimize"


@dataclass(frozen=True)
class Task:
    name: str
    artifact_name: str
    evaluate: Callable[[Path], dict]
    directions: dict[str, str] = field(default_factory=dict)
    target_score: float | None = None

    def direction(self, metric: str) -> str:
        return self.directions.get(metric, MAXIMIZE)


def _eval_cp26(path):
    from evoharness.tasks.packing import evaluate_packing_file

    return evaluate_packing_file(path)


def _eval_ac2(path):
    from evoharness.tasks.autocorr import evaluate_function_file

    return evaluate_function_file(path)


def _eval_vliw(path):
    from evoharness.vliw.evaluate import evaluate_kernel

    res = evaluate_kernel(path)
    return {
        "validity": res.validity,
        "combined_score": res.combined_score,
        "metrics": {"combined_score": res.combined_score, "cycles": float(res.cycles)},
        "error": res.error,
    }


TASKS: dict[str, Task] = {
    "cp26": Task(
        "cp26",
        "packing.txt",
        _eval_cp26,
        {"combined_score": MAXIMIZE, "sum_radii": MAXIMIZE},
        target_score=2.6359,
    ),
    "ac2": Task(
        "ac2",
        "function.txt",
        _eval_ac2,
        {"combined_score": MAXIMIZE, "ratio": MAXIMIZE},
        target_score=0.9459,
    ),
    "vliw": Task(
        "vliw",
        "kernel.asm",
        _eval_vliw,
        {"combined_score": MAXIMIZE, "cycles": MINIMIZE},
    ),
}


def get_task(name: str) -> Task:
    try:
        return TASKS[name]
    except KeyError:
        raise HarnessError(f"unknown task {name!r}; known: {', '.join(TASKS)}") from None
