"""Pure-Python hot kernels. Semantics must match ``_speedups.pyx`` exactly."""

from __future__ import annotations

import operator
from itertools import islice

MASK = 0xFFFFFFFF
VLEN = 8

STATUS_OK = 0
STATUS_WRITE_CONFLICT = 1
STATUS_INDIRECT_RANGE = 2


def _shl(x, y):
    return (x << y) & MASK if y < 32 else 0


def _shr(x, y):
    return x >> y if y < 32 else 0


def _sub(x, y):
    return (x - y) & MASK


def _add(x, y):
    return (x + y) & MASK


def _mul(x, y):
    return (x * y) & MASK


# Indexed by the op code of isa.ARITH_OPS.
_OPS = (_add, _sub, operator.xor, operator.and_, operator.or_, _shl, _shr, _mul)


def run_bundles(memory, code, starts, main_words):
    """Execute encoded bundles in place on ``memory``.

    Returns ``(status, cycles, info, halted)``. ``cycles`` counts bundles whose
    writes were committed; on error ``info`` carries the offending address.
    """
    mem = memory
    n_bundles = len(starts) - 1
    for bi in range(n_bundles):
        addrs = []
        vals = []
        halt = False
        for i in range(starts[bi], starts[bi + 1]):
            o = i * 6
            kind = code[o]
            d = code[o + 2]
            a = code[o + 3]
            b = code[o + 4]
            if kind == 0:  # alu
                addrs.append(d)
                vals.append(_OPS[code[o + 1]](mem[a], mem[b]))
            elif kind == 1:  # valu
                f = _OPS[code[o + 1]]
                addrs.extend(range(d, d + VLEN))
                vals.extend(map(f, mem[a:a + VLEN], mem[b:b + VLEN]))
            elif kind == 2:  # multiply_add
                c = code[o + 5]
                addrs.extend(range(d, d + VLEN))
                vals.extend(
                    (x * y + z) & MASK
                    for x, y, z in zip(mem[a:a + VLEN], mem[b:b + VLEN], mem[c:c + VLEN])
                )
            elif kind == 3:  # load
                p = mem[a]
                if p >= main_words:
                    return STATUS_INDIRECT_RANGE, bi, p, 0
                addrs.append(d)
                vals.append(mem[p])
            elif kind == 4:  # load_offset
                p = mem[a + b]
                if p >= main_words:
                    return STATUS_INDIRECT_RANGE, bi, p, 0
                addrs.append(d + b)
                vals.append(mem[p])
            elif kind == 5:  # store
                p = mem[d]
                if p >= main_words:
                    return STATUS_INDIRECT_RANGE, bi, p, 0
                addrs.append(p)
                vals.append(mem[a])
            elif kind == 6:  # vselect
                c = code[o + 5]
                addrs.extend(range(d, d + VLEN))
                vals.extend(
                    x if cnd else y
                    for cnd, x, y in zip(mem[a:a + VLEN], mem[b:b + VLEN], mem[c:c + VLEN])
                )
            else:  # halt
                halt = True
        if len(set(addrs)) != len(addrs):
            seen = set()
            for addr in addrs:
                if addr in seen:
                    return STATUS_WRITE_CONFLICT, bi, addr, 0
                seen.add(addr)
        for addr, v in zip(addrs, vals):
            mem[addr] = v
        if halt:
            return STATUS_OK, bi + 1, 0, 1
    return STATUS_OK, n_bundles, 0, 0


def self_convolve(samples):
    """Raw discrete self-convolution ``out[k] = sum_j f[j] * f[k - j]``, length 2N-1."""
    f = [float(x) for x in samples]
    n = len(f)
    if n == 0:
        return []
    rev = f[::-1]
    out = []
    for k in range(2 * n - 1):
        lo = max(0, k - n + 1)
        hi = min(k, n - 1)
        # f[k - j] for j in lo..hi is rev[n-1-k+j]
        start = n - 1 - k + lo
        acc = 0.0
        for x, y in zip(islice(f, lo, hi + 1), islice(rev, start, start + hi - lo + 1)):
            acc += x * y
        out.append(acc)
    return out
