"""Time the compiled core against the pure-Python kernels.

    python benchmarks/bench_backends.py [--repeat N]

Kernels: ``run_bundles`` on the scheduled baseline kernel and
``self_convolve`` on a 1024-sample function. Outputs are cross-checked.
"""

from __future__ import annotations

import argparse
import random
import timeit
from array import array

from evoharness import _backend
from evoharness.vliw.benchmark import generate_instance
from evoharness.vliw.isa import MEM_WORDS, MAIN_WORDS
from evoharness.vliw.kernel import build_baseline_program
from evoharness.vliw.machine import MachineState, encode_bundles, new_memory


def _vliw_case():
    inst = generate_instance()
    prog = build_baseline_program(inst)
    code, starts = encode_bundles(prog.bundles, MEM_WORDS)
    state = MachineState(new_memory(MEM_WORDS))
    inst.write_memory(state.memory)
    state.load_constants(prog)
    base = state.memory

    def run(be):
        mem = array(base.typecode, base)
        status, cycles, _, _ = be.run_bundles(mem, code, starts, MAIN_WORDS)
        return status, cycles, mem.tobytes()

    return run, len(prog.bundles)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    backends = _backend.available()
    if "cython" not in backends:
        print("compiled core not built; only the pure-Python kernels are available")

    run_vliw, cycles = _vliw_case()
    f = [random.Random(0).random() for _ in range(1024)]
    cases = {
        f"run_bundles ({cycles} cycles)": lambda be: run_vliw(be),
        "self_convolve (N=1024)": lambda be: be.self_convolve(f),
    }

    print(f"{'kernel':32} {'backend':8} {'best of ' + str(args.repeat):>14}")
    for label, fn in cases.items():
        times = {}
        outputs = {}
        for name, be in backends.items():
            outputs[name] = fn(be)
            times[name] = min(timeit.repeat(lambda: fn(be), number=1, repeat=args.repeat))
            print(f"{label:32} {name:8} {times[name] * 1e3:11.2f} ms")
        if len(outputs) == 2:
            a, b = outputs.values()
            same = array("d", a).tobytes() == array("d", b).tobytes() if label.startswith("self") else a == b
            print(f"{'':32} speedup {times['python'] / times['cython']:8.1f}x  outputs identical: {same}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
