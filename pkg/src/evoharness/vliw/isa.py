"""Instruction set of the simulated VLIW SIMD machine.

Every operand is a direct word address into one flat memory. ``load``,
``load_offset`` and ``store`` additionally dereference a pointer held in
memory; those indirect targets must fall inside the main region
``[0, MAIN_WORDS)``. Keeping indirect traffic confined there is what lets the
scheduler reason about aliasing without knowing pointer values.

Engine / opcode table::

    alu    + - ^ & | << >> *            dest, a, b           (scalar)
    valu   + - ^ & | << >> *            dest, a, b           (8 lanes)
    valu   multiply_add                 dest, a, b, c        (a*b + c, 8 lanes)
    load   load                         dest, addr           mem[dest] = mem[mem[addr]]
    load   load_offset                  dest, base, lane     mem[dest+lane] = mem[mem[base+lane]]
    store  store                        addr, src            mem[mem[addr]] = mem[src]
    flow   vselect                      dest, cond, a, b     lanewise cond != 0 ? a : b
    flow   halt
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import NamedTuple

from evoharness.errors import FormatError

VLEN = 8
WORD_BITS = 32
WORD_MASK = (1 << WORD_BITS) - 1
MEM_WORDS = 1 << 20
MAIN_WORDS = 4096

SLOT_LIMITS = {"alu": 12, "valu": 6, "load": 2, "store": 2, "flow": 1}
ENGINES = tuple(SLOT_LIMITS)

ARITH_OPS = ("+", "-", "^", "&", "|", "<<", ">>", "*")

# Encoded instruction kinds, shared with both execution backends.
K_ALU, K_VALU, K_MADD, K_LOAD, K_LOAD_OFFSET, K_STORE, K_VSELECT, K_HALT = range(8)
ENCODED_WIDTH = 6  # kind, op, dest, a, b, c

# (engine, opcode) -> (kind, number of operands)
OPCODES: dict[tuple[str, str], tuple[int, int]] = {}
for _op in ARITH_OPS:
    OPCODES[("alu", _op)] = (K_ALU, 3)
    OPCODES[("valu", _op)] = (K_VALU, 3)
OPCODES[("valu", "multiply_add")] = (K_MADD, 4)
OPCODES[("load", "load")] = (K_LOAD, 2)
OPCODES[("load", "load_offset")] = (K_LOAD_OFFSET, 3)
OPCODES[("store", "store")] = (K_STORE, 2)
OPCODES[("flow", "vselect")] = (K_VSELECT, 4)
OPCODES[("flow", "halt")] = (K_HALT, 0)


@dataclass(frozen=True)
class Instruction:
    engine: str
    opcode: str
    operands: tuple[int, ...] = ()

    def __post_init__(self):
        key = (self.engine, self.opcode)
        if key not in OPCODES:
            if self.engine not in SLOT_LIMITS:
                raise FormatError(f"unknown engine {self.engine!r}")
            raise FormatError(f"unknown opcode {self.engine}.{self.opcode}")
        arity = OPCODES[key][1]
        if len(self.operands) != arity:
            raise FormatError(
                f"{self.engine}.{self.opcode} takes {arity} operands, got {len(self.operands)}"
            )
        for value in self.operands:
            if not isinstance(value, int) or value < 0:
                raise FormatError(f"malformed address {value!r}")
        if self.opcode == "load_offset" and self.operands[2] >= VLEN:
            raise FormatError(f"lane {self.operands[2]} outside 0..{VLEN - 1}")

    @property
    def kind(self) -> int:
        return OPCODES[(self.engine, self.opcode)][0]

    def __str__(self) -> str:
        head = f"{self.engine}.{self.opcode}"
        if not self.operands:
            return head
        return head + " " + ", ".join(str(v) for v in self.operands)


@dataclass(frozen=True)
class Bundle:
    instructions: tuple[Instruction, ...] = ()

    def __len__(self):
        return len(self.instructions)

    def __iter__(self):
        return iter(self.instructions)


class SlotViolation(NamedTuple):
    engine: str
    count: int
    limit: int

    def __str__(self):
        return f"{self.engine}: {self.count} slots used, limit {self.limit}"


def check_bundle(bundle: Bundle) -> list[SlotViolation]:
    """Return the per-engine overflows of ``bundle``; an empty list means accept."""
    counts = Counter(ins.engine for ins in bundle.instructions)
    return [
        SlotViolation(engine, counts[engine], limit)
        for engine, limit in SLOT_LIMITS.items()
        if counts[engine] > limit
    ]


class Footprint(NamedTuple):
    reads: tuple[int, ...]
    writes: tuple[int, ...]
    indirect_read: bool
    indirect_write: bool
    barrier: bool


def _span(base: int) -> tuple[int, ...]:
    return tuple(range(base, base + VLEN))


def footprint(ins: Instruction) -> Footprint:
    """Direct addresses read/written, and whether main memory is touched indirectly."""
    k = ins.kind
    ops = ins.operands
    if k == K_ALU:
        d, a, b = ops
        return Footprint((a, b), (d,), False, False, False)
    if k == K_VALU:
        d, a, b = ops
        return Footprint(_span(a) + _span(b), _span(d), False, False, False)
    if k == K_MADD:
        d, a, b, c = ops
        return Footprint(_span(a) + _span(b) + _span(c), _span(d), False, False, False)
    if k == K_LOAD:
        d, addr = ops
        return Footprint((addr,), (d,), True, False, False)
    if k == K_LOAD_OFFSET:
        d, base, lane = ops
        return Footprint((base + lane,), (d + lane,), True, False, False)
    if k == K_STORE:
        addr, src = ops
        return Footprint((addr, src), (), False, True, False)
    if k == K_VSELECT:
        d, cond, a, b = ops
        return Footprint(_span(cond) + _span(a) + _span(b), _span(d), False, False, False)
    return Footprint((), (), False, False, True)


def encode(ins: Instruction) -> tuple[int, int, int, int, int, int]:
    k = ins.kind
    ops = ins.operands
    if k in (K_ALU, K_VALU):
        return (k, ARITH_OPS.index(ins.opcode), ops[0], ops[1], ops[2], 0)
    padded = tuple(ops) + (0,) * (4 - len(ops))
    return (k, 0) + padded


def check_direct_range(ins: Instruction, mem_words: int) -> int | None:
    """First direct address of ``ins`` outside ``[0, mem_words)``, if any."""
    fp = footprint(ins)
    for addr in fp.reads + fp.writes:
        if addr >= mem_words:
            return addr
    return None
