"""Greedy list scheduler: packs a sequential instruction stream into bundles.

Each instruction, in emission order, goes to the earliest cycle at or after
its ready cycle that still has a free slot on its engine. Ready cycles come
from address-level dependences:

* read-after-write and write-after-write: strictly after the earlier write;
* write-after-read: no earlier than the earlier read (reads see cycle-start
  memory, so sharing the cycle is fine).

Indirect accesses (load targets, store targets) may hit any main-memory word,
so they are ordered against every main-memory access that could alias them.
Scratch addresses (>= MAIN_WORDS) are never reached indirectly and only carry
exact dependences.
"""

from __future__ import annotations

from typing import Iterable

from evoharness.vliw.isa import MAIN_WORDS, SLOT_LIMITS, Bundle, Instruction, footprint


def schedule(stream: Iterable[Instruction], main_words: int = MAIN_WORDS) -> list[Bundle]:
    write_cycle: dict[int, int] = {}
    read_cycle: dict[int, int] = {}
    wget = write_cycle.get
    rget = read_cycle.get
    main_write_any = -1  # latest direct write into main memory or store
    main_write_store = -1
    main_read_any = -1  # latest direct read of main memory or indirect load
    main_read_indirect = -1
    latest = -1
    halt_cycle = -1

    cycles: list[list[Instruction]] = []
    used = {engine: [] for engine in SLOT_LIMITS}  # engine -> slots taken per cycle
    first_free = dict.fromkeys(SLOT_LIMITS, 0)

    for ins in stream:
        reads, writes, indirect_read, indirect_write, barrier = footprint(ins)
        ready = halt_cycle + 1
        reads_main = False
        for a in reads:
            w = wget(a, -1) + 1
            if w > ready:
                ready = w
            if a < main_words:
                reads_main = True
        writes_main = False
        for a in writes:
            w = wget(a, -1) + 1
            if w > ready:
                ready = w
            r = rget(a, -1)
            if r > ready:
                ready = r
            if a < main_words:
                writes_main = True
        if reads_main or writes_main:
            ready = max(ready, main_write_store + 1)
        if writes_main:
            ready = max(ready, main_read_indirect)
        if indirect_read:
            ready = max(ready, main_write_any + 1)
        if indirect_write:
            ready = max(ready, main_write_any + 1, main_read_any)
        if barrier:
            ready = max(ready, latest)

        engine = ins.engine
        limit = SLOT_LIMITS[engine]
        counts = used[engine]
        c = max(ready, first_free[engine])
        n = len(counts)
        while c < n and counts[c] >= limit:
            c += 1
        if c >= len(cycles):
            grow = c + 1 - len(cycles)
            cycles.extend([] for _ in range(grow))
            for lst in used.values():
                lst.extend([0] * grow)
        cycles[c].append(ins)
        counts[c] += 1
        f = first_free[engine]
        n = len(counts)
        while f < n and counts[f] >= limit:
            f += 1
        first_free[engine] = f

        for a in reads:
            if rget(a, -1) < c:
                read_cycle[a] = c
        for a in writes:
            write_cycle[a] = c
        if (reads_main or indirect_read) and c > main_read_any:
            main_read_any = c
        if (writes_main or indirect_write) and c > main_write_any:
            main_write_any = c
        if indirect_read and c > main_read_indirect:
            main_read_indirect = c
        if indirect_write and c > main_write_store:
            main_write_store = c
        if barrier:
            halt_cycle = c
        if c > latest:
            latest = c

    return [Bundle(tuple(b)) for b in cycles]
