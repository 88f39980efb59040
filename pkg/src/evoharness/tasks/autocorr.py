"""Second autocorrelation ratio of a non-negative step function on [-1/4, 1/4].

With ``g = f * f`` the score is ``||g||_2^2 / (||g||_1 * ||g||_inf)``. A
function is given by N samples on a uniform grid of step ``h = 1/(2N)``; the
self-convolution and all norms use left-endpoint Riemann sums with that step.

Artifact file: first line N, then N decimal samples, one per line.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

from evoharness import _backend
from evoharness.errors import FormatError

DEFAULT_N = 1024
TARGET_SCORE = 0.9459


def step(n: int) -> float:
    return 0.5 / n


def _check(samples: Sequence[float]) -> None:
    if len(samples) < 2:
        raise FormatError(f"need at least 2 samples, got {len(samples)}")
    if not all(math.isfinite(v) for v in samples):
        raise FormatError("non-finite sample")


def autocorrelate(samples: Sequence[float]) -> list[float]:
    """``g[k] = h * sum_j f[j] f[k-j]`` on [-1/2, 1/2], 2N-1 points."""
    _check(samples)
    h = step(len(samples))
    return [h * v for v in _backend.self_convolve(samples)]


def ac2_ratio(samples: Sequence[float]) -> tuple[int, float]:
    """``(validity, R)``; invalid (R = 0) for negative samples or a zero function."""
    _check(samples)
    if any(v < 0 for v in samples):
        return 0, 0.0
    g = autocorrelate(samples)
    h = step(len(samples))
    peak = max(g)
    if peak <= 0:
        return 0, 0.0
    l2_sq = h * math.fsum(v * v for v in g)
    l1 = h * math.fsum(abs(v) for v in g)
    return 1, l2_sq / (l1 * peak)


def parse_function(text: str) -> list[float]:
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append((lineno, line))
    if not lines:
        raise FormatError("empty function file")
    lineno, head = lines[0]
    try:
        n = int(head)
    except ValueError:
        raise FormatError(f"first line must be the sample count, got {head!r}", lineno) from None
    body = lines[1:]
    if len(body) != n:
        raise FormatError(f"header says {n} samples, found {len(body)}")
    samples = []
    for lineno, line in body:
        try:
            samples.append(float(line))
        except ValueError:
            raise FormatError(f"malformed sample {line!r}", lineno) from None
    _check(samples)
    return samples


def format_function(samples: Sequence[float]) -> str:
    return f"{len(samples)}\n" + "".join(f"{v!r}\n" for v in samples)


def constant_function(n: int = DEFAULT_N) -> list[float]:
    return [1.0] * n


def evaluate_function_file(path: str | Path) -> dict:
    samples = parse_function(Path(path).read_text())
    validity, ratio = ac2_ratio(samples)
    error = None
    if not validity:
        error = "negative sample" if any(v < 0 for v in samples) else "zero autoconvolution"
    return {
        "validity": validity,
        "combined_score": ratio,
        "metrics": {"combined_score": ratio, "ratio": ratio},
        "error": error,
    }
