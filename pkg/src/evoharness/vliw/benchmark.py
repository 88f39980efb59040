"""The tree-traversal benchmark: instance layout, hash and reference interpreter.

Each of ``batch`` elements walks a perfect binary tree of node words for
``rounds`` steps::

    val = hash(val ^ node[idx])
    idx = 2 * idx + 1 + (val & 1)        # +1 when even, +2 when odd
    if idx >= n_nodes: idx = 0           # a leaf's child wraps to the root

so from the root the visited depth cycles with period ``height + 1``.
Final values overwrite the input-values region.

Memory layout (word addresses)::

    [0, 7)                        header: height, n_nodes, indices_ptr,
                                  values_ptr, batch, rounds, 0
    [7, 7 + n_nodes)              node values
    [indices_ptr, +batch)         input indices
    [values_ptr, +batch)          input values / outputs

Instances are drawn from :class:`random.Random` (Mersenne Twister) seeded with
the integer seed: ``n_nodes`` node words via ``getrandbits(32)``, then ``batch``
indices via ``randrange(n_nodes)``, then ``batch`` values via ``getrandbits(32)``.
"""

from __future__ import annotations

import random
from array import array
from dataclasses import dataclass

from evoharness.vliw.isa import VLEN, WORD_MASK

FOREST_HEIGHT = 10
BATCH_SIZE = 256
ROUNDS = 16
FOREST_BASE = 7
HEADER_WORDS = 7
OFFICIAL_SEED = 20240611

# Additive / xor constants of the six hash stages. Frozen: the interpreter,
# the evaluator and the baseline kernel all read them from here.
HASH_C1 = 0x7ED55D17
HASH_C2 = 0xC761C23D
HASH_C3 = 0x165667B1
HASH_C4 = 0xD3A2646D
HASH_C5 = 0xFD7046C5
HASH_C6 = 0xB55A4F09
HASH_CONSTANTS = (HASH_C1, HASH_C2, HASH_C3, HASH_C4, HASH_C5, HASH_C6)
HASH_MULTIPLIERS = (4097, 33, 9)
HASH_SHIFTS = (19, 9, 16)


def hash_reference(v: int) -> int:
    v = (v * 4097 + HASH_C1) & WORD_MASK
    t = v >> 19
    v ^= HASH_C2
    v ^= t
    v = (v * 33 + HASH_C3) & WORD_MASK
    t = (v << 9) & WORD_MASK
    v = (v + HASH_C4) & WORD_MASK
    v ^= t
    v = (v * 9 + HASH_C5) & WORD_MASK
    t = v >> 16
    v ^= HASH_C6
    v ^= t
    return v


@dataclass(frozen=True)
class BenchmarkInstance:
    seed: int
    forest_height: int = FOREST_HEIGHT
    batch: int = BATCH_SIZE
    rounds: int = ROUNDS
    nodes: tuple[int, ...] = ()
    indices: tuple[int, ...] = ()
    values: tuple[int, ...] = ()

    @property
    def n_nodes(self) -> int:
        return 2 ** (self.forest_height + 1) - 1

    @property
    def indices_ptr(self) -> int:
        return FOREST_BASE + self.n_nodes

    @property
    def values_ptr(self) -> int:
        return self.indices_ptr + self.batch

    @property
    def tiles(self) -> int:
        return self.batch // VLEN

    def header(self) -> tuple[int, ...]:
        return (
            self.forest_height,
            self.n_nodes,
            self.indices_ptr,
            self.values_ptr,
            self.batch,
            self.rounds,
            0,
        )

    def write_memory(self, memory: array) -> None:
        memory[0:HEADER_WORDS] = array("I", self.header())
        memory[FOREST_BASE:FOREST_BASE + self.n_nodes] = array("I", self.nodes)
        memory[self.indices_ptr:self.indices_ptr + self.batch] = array("I", self.indices)
        memory[self.values_ptr:self.values_ptr + self.batch] = array("I", self.values)


def generate_instance(
    seed: int = OFFICIAL_SEED,
    forest_height: int = FOREST_HEIGHT,
    batch: int = BATCH_SIZE,
    rounds: int = ROUNDS,
) -> BenchmarkInstance:
    if batch % VLEN:
        raise ValueError(f"batch must be a multiple of {VLEN}")
    rng = random.Random(seed)
    n_nodes = 2 ** (forest_height + 1) - 1
    nodes = tuple(rng.getrandbits(32) for _ in range(n_nodes))
    indices = tuple(rng.randrange(n_nodes) for _ in range(batch))
    values = tuple(rng.getrandbits(32) for _ in range(batch))
    return BenchmarkInstance(seed, forest_height, batch, rounds, nodes, indices, values)


def reference_output(inst: BenchmarkInstance) -> tuple[int, ...]:
    nodes = inst.nodes
    n_nodes = inst.n_nodes
    out = []
    for idx, val in zip(inst.indices, inst.values):
        for _ in range(inst.rounds):
            val = hash_reference(val ^ nodes[idx])
            idx = 2 * idx + 1 + (val & 1)
            if idx >= n_nodes:
                idx = 0
        out.append(val)
    return tuple(out)
