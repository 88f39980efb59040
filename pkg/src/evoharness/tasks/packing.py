"""Circle packing: 26 circles in the unit square, maximize the sum of radii.

Artifact file: 26 lines ``x y r`` (whitespace separated decimals), ``#``
comments and blank lines ignored.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

from evoharness.errors import FormatError

N_CIRCLES = 26
TOLERANCE = 1e-9
TARGET_SCORE = 2.6359

Circle = tuple[float, float, float]


def parse_packing(text: str) -> list[Circle]:
    circles = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"expected 'x y r', got {line!r}", lineno)
        try:
            row = tuple(float(p) for p in parts)
        except ValueError:
            raise FormatError(f"malformed number in {line!r}", lineno) from None
        if not all(math.isfinite(v) for v in row):
            raise FormatError(f"non-finite value in {line!r}", lineno)
        circles.append(row)
    if len(circles) != N_CIRCLES:
        raise FormatError(f"expected {N_CIRCLES} circles, got {len(circles)}")
    return circles


def format_packing(circles: Sequence[Circle]) -> str:
    return "".join(f"{x!r} {y!r} {r!r}\n" for x, y, r in circles)


def packing_violations(circles: Sequence[Circle], tol: float = TOLERANCE) -> list[str]:
    problems = []
    for i, (x, y, r) in enumerate(circles):
        if not r > 0:
            problems.append(f"circle {i}: radius {r} not positive")
        if x - r < -tol or x + r > 1 + tol or y - r < -tol or y + r > 1 + tol:
            problems.append(f"circle {i}: outside the unit square")
    for i in range(len(circles)):
        xi, yi, ri = circles[i]
        for j in range(i + 1, len(circles)):
            xj, yj, rj = circles[j]
            if math.hypot(xi - xj, yi - yj) < ri + rj - tol:
                problems.append(f"circles {i} and {j} overlap")
    return problems


def score_packing(circles: Sequence[Circle], tol: float = TOLERANCE) -> tuple[int, float]:
    """``(validity, score)``; score is the radius sum when valid, else 0."""
    if len(circles) != N_CIRCLES:
        raise FormatError(f"expected {N_CIRCLES} circles, got {len(circles)}")
    if packing_violations(circles, tol):
        return 0, 0.0
    return 1, math.fsum(r for _, _, r in circles)


def grid_packing() -> list[Circle]:
    """6 columns x 5 rows of cell centres, first 26 cells, radius 1/12."""
    r = 1 / 12
    cells = [((2 * i + 1) / 12, (2 * j + 1) / 10) for j in range(5) for i in range(6)]
    return [(x, y, r) for x, y in cells[:N_CIRCLES]]


def evaluate_packing_file(path: str | Path) -> dict:
    circles = parse_packing(Path(path).read_text())
    problems = packing_violations(circles)
    validity, score = score_packing(circles)
    metrics = {"combined_score": score, "sum_radii": math.fsum(r for _, _, r in circles)}
    return {
        "validity": validity,
        "combined_score": score,
        "metrics": metrics,
        "error": "; ".join(problems[:5]) if problems else None,
    }
