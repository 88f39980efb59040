"""The compiled core and the pure fallback must agree bit for bit."""

from __future__ import annotations

import os
import random
import subprocess
import sys
from array import array

import pytest

import oracles
from evoharness import _backend
from evoharness.vliw.isa import Bundle
from evoharness.vliw.machine import encode_bundles, new_memory

needs_compiled = pytest.mark.skipif(_backend.compiled is None, reason="extension not built")


def test_fallback_always_available():
    assert "python" in _backend.available()
    assert _backend.NAME in _backend.available()


def test_env_var_forces_fallback():
    code = "from evoharness import _backend; print(_backend.NAME)"
    env = dict(os.environ, EVOHARNESS_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def _encoded(seed):
    rng = random.Random(seed)
    init = oracles.initial_memory(rng)
    # one instruction per bundle plus some packed bundles, conflicts included
    stream = oracles.random_stream(rng, 120)
    bundles = []
    i = 0
    while i < len(stream):
        k = rng.randint(1, 3)
        group = stream[i:i + k]
        engines = [x.engine for x in group]
        if all(engines.count(e) <= {"flow": 1, "load": 2, "store": 2}.get(e, 6) for e in engines):
            bundles.append(Bundle(tuple(group)))
        else:
            bundles.extend(Bundle((x,)) for x in group)
        i += k
    return init, encode_bundles(bundles, 2 * oracles.MAIN)


@needs_compiled
@pytest.mark.parametrize("seed", range(60))
def test_run_bundles_agree(seed):
    init, (code, starts) = _encoded(seed)
    results = []
    for be in (_backend.pure, _backend.compiled):
        mem = new_memory(2 * oracles.MAIN)
        for a, v in init.items():
            mem[a] = v
        status = be.run_bundles(mem, code, starts, oracles.MAIN)
        results.append((status, bytes(mem)))
    assert results[0] == results[1]


@needs_compiled
@pytest.mark.parametrize("n", [2, 3, 17, 256, 1024])
def test_self_convolve_agrees_bitwise(n):
    rng = random.Random(n)
    f = [rng.random() * 3 for _ in range(n)]
    a = _backend.pure.self_convolve(f)
    b = _backend.compiled.self_convolve(f)
    assert array("d", a).tobytes() == array("d", b).tobytes()


def test_self_convolve_close_to_exact(backend):
    rng = random.Random(9)
    f = [rng.random() for _ in range(100)]
    got = backend.self_convolve(f)
    want = oracles.direct_self_convolution(f)
    assert all(abs(x - y) <= 1e-12 * max(want) for x, y in zip(got, want))
