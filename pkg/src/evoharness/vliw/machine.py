"""Cycle-accurate execution of straight-line bundle programs.

One bundle issues per cycle. Every operand of a bundle is read from the
memory as it stood at the start of the cycle, then all writes commit
together; two writes to one address in the same bundle is an error.
"""

from __future__ import annotations

from array import array
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from evoharness import _backend
from evoharness.errors import SimulationError
from evoharness.vliw.asm import Program
from evoharness.vliw.isa import (
    ENCODED_WIDTH,
    MAIN_WORDS,
    MEM_WORDS,
    Bundle,
    check_bundle,
    check_direct_range,
    encode,
)


def new_memory(size: int = MEM_WORDS) -> array:
    return array("I", bytes(4 * size))


@dataclass
class MachineState:
    memory: array = field(default_factory=new_memory)
    cycle: int = 0
    halted: bool = False

    def load_constants(self, program: Program) -> None:
        for addr, values in program.constants:
            self.memory[addr:addr + len(values)] = array("I", values)


def encode_bundles(bundles: Sequence[Bundle], mem_words: int = MEM_WORDS) -> tuple[array, array]:
    """Flatten bundles for the backends; rejects slot overflows and bad addresses up front."""
    code = array("q")
    starts = array("q", [0])
    n = 0
    for index, bundle in enumerate(bundles):
        violations = check_bundle(bundle)
        if violations:
            detail = "; ".join(str(v) for v in violations)
            raise SimulationError(f"bundle {index} exceeds slot limits ({detail})")
        for ins in bundle.instructions:
            bad = check_direct_range(ins, mem_words)
            if bad is not None:
                raise SimulationError(f"bundle {index}: address {bad} out of range in `{ins}`")
            code.extend(encode(ins))
            n += 1
        starts.append(n)
    assert len(code) == n * ENCODED_WIDTH
    return code, starts


def execute(program: Program | Iterable[Bundle], state: MachineState, backend=None):
    """Run ``program`` on ``state``; returns ``(cycles, memory)``.

    A :class:`Program` has its constants loaded first. Every bundle is slot-
    checked before the first one issues, so an over-full program never runs.
    """
    if isinstance(program, Program):
        bundles = program.bundles
        state.load_constants(program)
    else:
        bundles = tuple(program)
    code, starts = encode_bundles(bundles, len(state.memory))
    runner = backend.run_bundles if backend is not None else _backend.run_bundles
    status, cycles, info, halted = runner(
        state.memory, code, starts, min(MAIN_WORDS, len(state.memory))
    )
    state.cycle += cycles
    state.halted = bool(halted)
    if status == 1:
        raise SimulationError(f"cycle {state.cycle}: two writes to address {info} in one bundle")
    if status == 2:
        raise SimulationError(
            f"cycle {state.cycle}: indirect address {info} outside main memory [0, {MAIN_WORDS})"
        )
    return cycles, state.memory
