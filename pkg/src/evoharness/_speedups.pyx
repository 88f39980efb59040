# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Semantics mirror ``_purekernels`` exactly."""

from array import array

from libc.stdlib cimport calloc, free
from libc.stdint cimport uint32_t, int64_t

cdef enum:
    VLEN = 8
    # widest single instruction writes one vector
    MAX_WRITES_PER_INSTR = 8


cdef inline uint32_t _arith(int op, uint32_t x, uint32_t y) nogil:
    if op == 0:
        return x + y
    elif op == 1:
        return x - y
    elif op == 2:
        return x ^ y
    elif op == 3:
        return x & y
    elif op == 4:
        return x | y
    elif op == 5:
        return x << y if y < 32 else 0
    elif op == 6:
        return x >> y if y < 32 else 0
    return x * y


def run_bundles(unsigned int[::1] memory, long long[::1] code, long long[::1] starts,
                long long main_words):
    """Execute encoded bundles in place. Returns ``(status, cycles, info, halted)``."""
    cdef Py_ssize_t n_mem = memory.shape[0]
    cdef Py_ssize_t n_bundles = starts.shape[0] - 1
    cdef Py_ssize_t bi, i, o, lane, w, nw, max_w
    cdef long long kind, op, d, a, b, c
    cdef uint32_t p
    cdef int halt
    cdef int64_t *stamp
    cdef int64_t *waddr
    cdef uint32_t *wval
    cdef Py_ssize_t widest = 0

    if n_bundles <= 0:
        return 0, 0, 0, 0
    for bi in range(n_bundles):
        if starts[bi + 1] - starts[bi] > widest:
            widest = starts[bi + 1] - starts[bi]
    max_w = widest * MAX_WRITES_PER_INSTR + 1

    stamp = <int64_t *> calloc(n_mem, sizeof(int64_t))
    waddr = <int64_t *> calloc(max_w, sizeof(int64_t))
    wval = <uint32_t *> calloc(max_w, sizeof(uint32_t))
    if stamp == NULL or waddr == NULL or wval == NULL:
        free(stamp); free(waddr); free(wval)
        raise MemoryError()
    try:
        for bi in range(n_bundles):
            nw = 0
            halt = 0
            for i in range(starts[bi], starts[bi + 1]):
                o = i * 6
                kind = code[o]
                op = code[o + 1]
                d = code[o + 2]
                a = code[o + 3]
                b = code[o + 4]
                c = code[o + 5]
                if kind == 0:
                    waddr[nw] = d
                    wval[nw] = _arith(<int> op, memory[a], memory[b])
                    nw += 1
                elif kind == 1:
                    for lane in range(VLEN):
                        waddr[nw] = d + lane
                        wval[nw] = _arith(<int> op, memory[a + lane], memory[b + lane])
                        nw += 1
                elif kind == 2:
                    for lane in range(VLEN):
                        waddr[nw] = d + lane
                        wval[nw] = memory[a + lane] * memory[b + lane] + memory[c + lane]
                        nw += 1
                elif kind == 3:
                    p = memory[a]
                    if p >= main_words:
                        return 2, bi, p, 0
                    waddr[nw] = d
                    wval[nw] = memory[p]
                    nw += 1
                elif kind == 4:
                    p = memory[a + b]
                    if p >= main_words:
                        return 2, bi, p, 0
                    waddr[nw] = d + b
                    wval[nw] = memory[p]
                    nw += 1
                elif kind == 5:
                    p = memory[d]
                    if p >= main_words:
                        return 2, bi, p, 0
                    waddr[nw] = p
                    wval[nw] = memory[a]
                    nw += 1
                elif kind == 6:
                    for lane in range(VLEN):
                        waddr[nw] = d + lane
                        wval[nw] = memory[b + lane] if memory[a + lane] != 0 else memory[c + lane]
                        nw += 1
                else:
                    halt = 1
            for w in range(nw):
                if stamp[waddr[w]] == bi + 1:
                    return 1, bi, waddr[w], 0
                stamp[waddr[w]] = bi + 1
            for w in range(nw):
                memory[waddr[w]] = wval[w]
            if halt:
                return 0, bi + 1, 0, 1
        return 0, n_bundles, 0, 0
    finally:
        free(stamp)
        free(waddr)
        free(wval)


def self_convolve(samples):
    """Raw discrete self-convolution ``out[k] = sum_j f[j] * f[k - j]``, length 2N-1."""
    cdef double[::1] f = array("d", [float(x) for x in samples])
    cdef Py_ssize_t n = f.shape[0]
    cdef Py_ssize_t k, j, lo, hi
    cdef double acc
    if n == 0:
        return []
    out = array("d", bytes(8 * (2 * n - 1)))
    cdef double[::1] g = out
    for k in range(2 * n - 1):
        lo = k - n + 1 if k - n + 1 > 0 else 0
        hi = k if k < n - 1 else n - 1
        acc = 0.0
        for j in range(lo, hi + 1):
            acc += f[j] * f[k - j]
        g[k] = acc
    return list(out)
