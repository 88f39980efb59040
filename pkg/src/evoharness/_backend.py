"""Pick the compiled core when available, else the pure-Python kernels.

Set ``EVOHARNESS_PURE_PYTHON=1`` to force the fallback. Both implementations
stay importable (``pure`` and ``compiled``) so they can be cross-checked.
"""

from __future__ import annotations

import os

from evoharness import _purekernels as pure

try:
    from evoharness import _speedups as compiled
except ImportError:  # extension not built
    compiled = None

if compiled is not None and not os.environ.get("EVOHARNESS_PURE_PYTHON"):
    active = compiled
    NAME = "cython"
else:
    active = pure
    NAME = "python"


def available() -> dict:
    """Backends importable in this process, by name."""
    found = {"python": pure}
    if compiled is not None:
        found["cython"] = compiled
    return found


def run_bundles(memory, code, starts, main_words):
    return active.run_bundles(memory, code, starts, main_words)


def self_convolve(samples):
    return active.self_convolve(samples)
