"""Line-oriented assembly for the VLIW machine.

::

    # comments run to end of line
    const 4096 1 x8            # broadcast: 8 words of value 1 at 4096..4103
    const 4200 5 6 7           # consecutive words
    bundle:
        valu.^ 5000, 5000, 5008
        load.load_offset 5100, 5200, 3
    bundle:                    # an empty bundle is a stall cycle

Constants must precede the first ``bundle:``. Addresses and values are
decimal. ``format_program`` emits the canonical form, and
``parse_program(format_program(p)) == p``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from evoharness.errors import FormatError
from evoharness.vliw.isa import MEM_WORDS, WORD_MASK, Bundle, Instruction

_INT = re.compile(r"\d+\Z")
_REPEAT = re.compile(r"x(\d+)\Z")


@dataclass(frozen=True)
class Program:
    constants: tuple[tuple[int, tuple[int, ...]], ...] = ()
    bundles: tuple[Bundle, ...] = field(default_factory=tuple)

    def instruction_count(self) -> int:
        return sum(len(b) for b in self.bundles)


def _int(token: str, lineno: int, what: str) -> int:
    if not _INT.match(token):
        raise FormatError(f"malformed {what} {token!r}", lineno)
    return int(token)


def _parse_const(tokens: list[str], lineno: int) -> tuple[int, tuple[int, ...]]:
    if len(tokens) < 2:
        raise FormatError("const needs an address and at least one value", lineno)
    addr = _int(tokens[0], lineno, "address")
    rest = tokens[1:]
    repeat = _REPEAT.match(rest[-1]) if len(rest) == 2 else None
    if repeat:
        count = int(repeat.group(1))
        if count < 1:
            raise FormatError("repeat count must be positive", lineno)
        values = (_int(rest[0], lineno, "value"),) * count
    else:
        values = tuple(_int(t, lineno, "value") for t in rest)
    for v in values:
        if v > WORD_MASK:
            raise FormatError(f"value {v} does not fit in a 32-bit word", lineno)
    if addr + len(values) > MEM_WORDS:
        raise FormatError(f"const block at {addr} runs past memory end", lineno)
    return addr, values


def _parse_instruction(line: str, lineno: int) -> Instruction:
    head, _, tail = line.partition(" ")
    engine, dot, opcode = head.partition(".")
    if not dot or not engine or not opcode:
        raise FormatError(f"expected <engine>.<opcode>, got {head!r}", lineno)
    tail = tail.strip()
    operands: tuple[int, ...] = ()
    if tail:
        operands = tuple(_int(t.strip(), lineno, "address") for t in tail.split(","))
    try:
        return Instruction(engine, opcode, operands)
    except FormatError as exc:
        raise FormatError(str(exc), lineno) from None


def parse_program(text: str) -> Program:
    constants: list[tuple[int, tuple[int, ...]]] = []
    bundles: list[list[Instruction]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line == "bundle:":
            bundles.append([])
            continue
        tokens = line.split()
        if tokens[0] == "const":
            if bundles:
                raise FormatError("const after the first bundle", lineno)
            constants.append(_parse_const(tokens[1:], lineno))
            continue
        if not bundles:
            raise FormatError("instruction outside a bundle", lineno)
        bundles[-1].append(_parse_instruction(line, lineno))
    return Program(tuple(constants), tuple(Bundle(tuple(b)) for b in bundles))


def format_program(program: Program) -> str:
    lines = []
    for addr, values in program.constants:
        if len(values) > 1 and len(set(values)) == 1:
            lines.append(f"const {addr} {values[0]} x{len(values)}")
        else:
            lines.append(f"const {addr} " + " ".join(str(v) for v in values))
    for bundle in program.bundles:
        lines.append("bundle:")
        lines.extend(f"    {ins}" for ins in bundle.instructions)
    return "\n".join(lines) + "\n" if lines else ""
