"""VLIW SIMD machine: ISA, assembly, simulator, scheduler and the kernel task."""

from evoharness.vliw.asm import Program, format_program, parse_program
from evoharness.vliw.benchmark import (
    BenchmarkInstance,
    generate_instance,
    hash_reference,
    reference_output,
)
from evoharness.vliw.evaluate import SCORE_NUMERATOR, KernelResult, evaluate_kernel, evaluate_program
from evoharness.vliw.isa import SLOT_LIMITS, VLEN, Bundle, Instruction, check_bundle
from evoharness.vliw.kernel import build_baseline_kernel, build_baseline_program
from evoharness.vliw.machine import MachineState, execute
from evoharness.vliw.scheduler import schedule

__all__ = [
    "SCORE_NUMERATOR",
    "SLOT_LIMITS",
    "VLEN",
    "BenchmarkInstance",
    "Bundle",
    "Instruction",
    "KernelResult",
    "MachineState",
    "Program",
    "build_baseline_kernel",
    "build_baseline_program",
    "check_bundle",
    "evaluate_kernel",
    "evaluate_program",
    "execute",
    "format_program",
    "generate_instance",
    "hash_reference",
    "parse_program",
    "reference_output",
    "schedule",
]
