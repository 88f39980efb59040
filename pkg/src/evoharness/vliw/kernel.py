"""Naive but correct baseline kernel for the tree-traversal benchmark.

The kernel is emitted round-major, tile-minor, fully unrolled, and handed to
the list scheduler. Per tile and round it gathers the 8 node words with
``load_offset``, runs the six hash stages on ``valu`` and updates the index by
parity. The leaf wrap is branch-free::

    over = (idx + 1) >> (height + 1)     # 1 exactly when idx >= n_nodes
    idx  = idx * (1 - over)

All working state lives in scratch (addresses >= MAIN_WORDS); inputs are read
and outputs written with direct vector ops on the main-memory regions.
"""

from __future__ import annotations

from functools import lru_cache

from evoharness.vliw.asm import Program, format_program
from evoharness.vliw.benchmark import (
    FOREST_BASE,
    HASH_C1,
    HASH_C2,
    HASH_C3,
    HASH_C4,
    HASH_C5,
    HASH_C6,
    BenchmarkInstance,
)
from evoharness.vliw.isa import MAIN_WORDS, VLEN, WORD_MASK, Instruction
from evoharness.vliw.scheduler import schedule

SCRATCH_BASE = MAIN_WORDS


class KernelBuilder:
    """Collects an instruction stream plus scratch constants."""

    def __init__(self, scratch_base: int = SCRATCH_BASE):
        self.stream: list[Instruction] = []
        self.constants: list[tuple[int, tuple[int, ...]]] = []
        self._next = scratch_base
        self._vectors: dict[int, int] = {}

    def alloc(self, words: int = VLEN) -> int:
        addr = self._next
        self._next += words
        return addr

    def vconst(self, value: int) -> int:
        """Address of a broadcast vector holding ``value`` (shared per value)."""
        value &= WORD_MASK
        if value not in self._vectors:
            addr = self.alloc(VLEN)
            self.constants.append((addr, (value,) * VLEN))
            self._vectors[value] = addr
        return self._vectors[value]

    def valu(self, op: str, dest: int, a: int, b: int) -> None:
        self.stream.append(Instruction("valu", op, (dest, a, b)))

    def madd(self, dest: int, a: int, b: int, c: int) -> None:
        self.stream.append(Instruction("valu", "multiply_add", (dest, a, b, c)))

    def load_offset(self, dest: int, base: int, lane: int) -> None:
        self.stream.append(Instruction("load", "load_offset", (dest, base, lane)))

    def emit_hash(self, val: int, tmp: int) -> None:
        self.madd(val, val, self.vconst(4097), self.vconst(HASH_C1))
        self.valu(">>", tmp, val, self.vconst(19))
        self.valu("^", val, val, self.vconst(HASH_C2))
        self.valu("^", val, val, tmp)
        self.madd(val, val, self.vconst(33), self.vconst(HASH_C3))
        self.valu("<<", tmp, val, self.vconst(9))
        self.valu("+", val, val, self.vconst(HASH_C4))
        self.valu("^", val, val, tmp)
        self.madd(val, val, self.vconst(9), self.vconst(HASH_C5))
        self.valu(">>", tmp, val, self.vconst(16))
        self.valu("^", val, val, self.vconst(HASH_C6))
        self.valu("^", val, val, tmp)

    def program(self) -> Program:
        return Program(tuple(self.constants), tuple(schedule(self.stream)))


def build_baseline_program(inst: BenchmarkInstance) -> Program:
    # the program depends on the layout only, never on node or input values
    return _build(inst.forest_height, inst.tiles, inst.rounds, inst.indices_ptr, inst.values_ptr)


@lru_cache(maxsize=8)
def _build(forest_height: int, n_tiles: int, rounds: int, indices_ptr: int, values_ptr: int) -> Program:
    kb = KernelBuilder()
    zero = kb.vconst(0)
    one = kb.vconst(1)
    two = kb.vconst(2)
    forest_base = kb.vconst(FOREST_BASE)
    wrap_shift = kb.vconst(forest_height + 1)

    tiles = range(n_tiles)
    idxs = [kb.alloc() for _ in tiles]
    vals = [kb.alloc() for _ in tiles]
    addrs = [kb.alloc() for _ in tiles]
    tmps = [kb.alloc() for _ in tiles]
    spare = [kb.alloc() for _ in tiles]

    for t in tiles:
        kb.valu("+", idxs[t], indices_ptr + VLEN * t, zero)
        kb.valu("+", vals[t], values_ptr + VLEN * t, zero)

    for _ in range(rounds):
        for t in tiles:
            kb.valu("+", addrs[t], idxs[t], forest_base)
            for lane in range(VLEN):
                kb.load_offset(tmps[t], addrs[t], lane)
            kb.valu("^", vals[t], vals[t], tmps[t])
            kb.emit_hash(vals[t], spare[t])
            # idx = 2*idx + 1 + parity
            kb.valu("&", tmps[t], vals[t], one)
            kb.valu("+", tmps[t], tmps[t], one)
            kb.madd(idxs[t], idxs[t], two, tmps[t])
            kb.valu("+", spare[t], idxs[t], one)
            kb.valu(">>", spare[t], spare[t], wrap_shift)
            kb.valu("-", spare[t], one, spare[t])
            kb.valu("*", idxs[t], idxs[t], spare[t])

    for t in tiles:
        kb.valu("+", values_ptr + VLEN * t, vals[t], zero)
    return kb.program()


def build_baseline_kernel(inst: BenchmarkInstance) -> str:
    """Assembly text of the scheduled baseline kernel."""
    return format_program(build_baseline_program(inst))
