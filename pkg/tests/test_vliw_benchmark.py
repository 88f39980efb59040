from __future__ import annotations

import random
from dataclasses import replace
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from evoharness.errors import FormatError
from evoharness.vliw import benchmark as bm
from evoharness.vliw.asm import format_program, parse_program
from evoharness.vliw.evaluate import (
    SCORE_NUMERATOR,
    combined_score,
    evaluate_kernel,
    evaluate_program,
    run_kernel,
)
from evoharness.vliw.isa import Bundle, Instruction
from evoharness.vliw.kernel import build_baseline_kernel, build_baseline_program

MASK = 0xFFFFFFFF
C = (0x7ED55D17, 0xC761C23D, 0x165667B1, 0xD3A2646D, 0xFD7046C5, 0xB55A4F09)


def straight_line_hash(v):
    # the twelve stages transcribed one per line
    v = (v * 4097 + C[0]) % 2**32
    t = v // 2**19
    v = v ^ C[1]
    v = v ^ t
    v = (v * 33 + C[2]) % 2**32
    t = (v * 2**9) % 2**32
    v = (v + C[3]) % 2**32
    v = v ^ t
    v = (v * 9 + C[4]) % 2**32
    t = v // 2**16
    v = v ^ C[5]
    v = v ^ t
    return v


def test_hash_of_zero_matches_transcription():
    assert bm.hash_reference(0) == straight_line_hash(0)


@pytest.mark.slow
def test_hash_matches_transcription_on_a_million_words():
    rng = random.Random(0)
    for _ in range(10**6):
        v = rng.getrandbits(32)
        assert bm.hash_reference(v) == straight_line_hash(v)


@given(st.integers(0, MASK))
def test_hash_is_pure_and_word_sized(v):
    assert bm.hash_reference(v) == bm.hash_reference(v) < 2**32


def test_hash_stage_constants():
    assert bm.HASH_CONSTANTS == C
    assert tuple(zip(bm.HASH_MULTIPLIERS, bm.HASH_SHIFTS)) == ((4097, 19), (33, 9), (9, 16))


def test_instance_layout():
    inst = bm.generate_instance()
    assert inst.n_nodes == 2047 and len(inst.nodes) == 2047
    assert inst.indices_ptr == 2054 and inst.values_ptr == 2310
    assert inst.tiles == 32 and inst.rounds == 16 and inst.batch == 256
    assert inst.header() == (10, 2047, 2054, 2310, 256, 16, 0)
    assert all(0 <= i < 2047 for i in inst.indices)
    assert bm.generate_instance() == inst


def reference_by_hand(inst):
    out = []
    for idx, val in zip(inst.indices, inst.values):
        for _ in range(inst.rounds):
            val = straight_line_hash(val ^ inst.nodes[idx])
            idx = 2 * idx + (1 if val % 2 == 0 else 2)
            if idx >= inst.n_nodes:
                idx = 0
        out.append(val)
    return tuple(out)


def test_reference_output_matches_independent_loop():
    inst = bm.generate_instance(7)
    assert bm.reference_output(inst) == reference_by_hand(inst)


def test_zero_rounds_returns_inputs():
    inst = bm.generate_instance(3, rounds=0)
    assert bm.reference_output(inst) == inst.values


def test_leaf_wraps_to_root_and_depth_period_is_eleven():
    inst = bm.generate_instance(11)
    idx, val = 0, inst.values[0]
    depths = []
    for _ in range(33):
        depths.append((idx + 1).bit_length() - 1)
        val = bm.hash_reference(val ^ inst.nodes[idx])
        idx = 2 * idx + 1 + (val & 1)
        if idx >= inst.n_nodes:
            idx = 0
    assert depths == list(range(11)) * 3


def test_baseline_kernel_is_valid(backend):
    inst = bm.generate_instance()
    prog = build_baseline_program(inst)
    cycles, out = run_kernel(prog, inst, backend=backend)
    assert out == bm.reference_output(inst)
    assert cycles == len(prog.bundles)


def test_baseline_text_round_trips():
    text = build_baseline_kernel(bm.generate_instance())
    assert format_program(parse_program(text)) == text


def test_baseline_score_is_numerator_over_cycles():
    res = evaluate_program(build_baseline_program(bm.generate_instance()))
    assert res.validity == 1
    assert res.combined_score == SCORE_NUMERATOR / res.cycles
    assert res.combined_score * res.cycles == pytest.approx(SCORE_NUMERATOR, rel=2**-52)


@pytest.mark.parametrize(
    "cycles, expected",
    [(1138, 129.8189806678383), (147734, 1.0)],
)
def test_combined_score_exact(cycles, expected):
    assert combined_score(cycles) == expected


def test_combined_score_at_1140():
    assert combined_score(1140) == pytest.approx(129.59, abs=5e-3)


def test_wrong_output_is_invalid():
    inst = bm.generate_instance()
    prog = build_baseline_program(inst)
    out = range(inst.values_ptr, inst.values_ptr + inst.batch)
    # drop the bundles that copy results into the output region
    kept = tuple(b for b in prog.bundles if not any(i.operands[0] in out for i in b))
    broken = replace(prog, bundles=kept)
    res = evaluate_program(broken)
    assert res.validity == 0 and res.combined_score == 0.0
    assert "mismatch" in res.error and res.cycles == len(broken.bundles)


def test_simulation_error_is_invalid_with_text():
    prog = parse_program("bundle:\n    alu.+ 1, 2, 2\n    alu.+ 1, 3, 3\n")
    res = evaluate_program(prog)
    assert res.validity == 0 and "two writes" in res.error


def test_slot_overflow_is_a_format_error():
    prog = parse_program("bundle:\n" + "    load.load 4096, 1\n" * 3)
    with pytest.raises(FormatError):
        evaluate_program(prog)


def test_empty_program_is_invalid():
    assert evaluate_program(parse_program("")).validity == 0


def test_evaluate_kernel_from_file(tmp_path: Path):
    path = tmp_path / "kernel.asm"
    path.write_text(build_baseline_kernel(bm.generate_instance()))
    res = evaluate_kernel(path)
    assert res.validity == 1 and res.cycles > 0
    path.write_text("bundle:\n    nope\n")
    with pytest.raises(FormatError):
        evaluate_kernel(path)


def test_halted_program_output_checked():
    inst = bm.generate_instance()
    prog = build_baseline_program(inst)
    halted = replace(prog, bundles=(Bundle((Instruction("flow", "halt"),)),) + prog.bundles)
    assert evaluate_program(halted).validity == 0
