from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

from evoharness.errors import FormatError, SimulationError
from evoharness.vliw.asm import Program, parse_program
from evoharness.vliw.benchmark import (
    OFFICIAL_SEED,
    BenchmarkInstance,
    generate_instance,
    reference_output,
)
from evoharness.vliw.isa import check_bundle
from evoharness.vliw.machine import MachineState, execute

# Scoring constant: combined score = SCORE_NUMERATOR / cycles.
SCORE_NUMERATOR = 147734


@dataclass(frozen=True)
class KernelResult:
    validity: int
    cycles: int
    combined_score: float
    error: str | None = None


def combined_score(cycles: int) -> float:
    return SCORE_NUMERATOR / cycles


@lru_cache(maxsize=4)
def _instance(seed: int) -> tuple[BenchmarkInstance, tuple[int, ...]]:
    inst = generate_instance(seed)
    return inst, reference_output(inst)


def run_kernel(program: Program, inst: BenchmarkInstance, backend=None) -> tuple[int, tuple[int, ...]]:
    """Simulate ``program`` on ``inst``; returns (cycles, output region)."""
    state = MachineState()
    inst.write_memory(state.memory)
    cycles, memory = execute(program, state, backend=backend)
    out = tuple(memory[inst.values_ptr:inst.values_ptr + inst.batch])
    return cycles, out


def evaluate_program(program: Program, seed: int = OFFICIAL_SEED, backend=None) -> KernelResult:
    for index, bundle in enumerate(program.bundles):
        violations = check_bundle(bundle)
        if violations:
            raise FormatError(
                f"bundle {index} exceeds slot limits: " + "; ".join(map(str, violations))
            )
    inst, expected = _instance(seed)
    state = MachineState()
    inst.write_memory(state.memory)
    try:
        cycles, memory = execute(program, state, backend=backend)
    except SimulationError as exc:
        return KernelResult(0, state.cycle, 0.0, str(exc))
    out = tuple(memory[inst.values_ptr:inst.values_ptr + inst.batch])
    if out != expected:
        wrong = sum(a != b for a, b in zip(out, expected))
        return KernelResult(0, cycles, 0.0, f"output mismatch in {wrong} of {inst.batch} elements")
    if cycles == 0:
        return KernelResult(0, 0, 0.0, "empty program")
    return KernelResult(1, cycles, combined_score(cycles))


def evaluate_kernel(path: str | Path, seed: int = OFFICIAL_SEED) -> KernelResult:
    """Parse and score the kernel program at ``path`` on the official instance."""
    text = Path(path).read_text()
    return evaluate_program(parse_program(text), seed)
