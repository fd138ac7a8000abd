"""Numba-compiled kernels.

Same contracts as `_kernels_numpy`. Loops accumulate left to right in float64
so the codec kernels are bit-identical to the numpy twins; membrane kernels
evaluate the recurrence sequentially (the numpy twin uses a prefix scan and
agrees within 1e-6 relative).
"""

from __future__ import annotations

import numpy as np
from numba import njit

NAME = "numba"

_JIT = dict(cache=True, nogil=True)


@njit(**_JIT)
def running_cumsum(x):
    c = np.empty(x.shape[0], dtype=np.float64)
    acc = 0.0
    for i in range(x.shape[0]):
        acc += x[i]
        c[i] = acc
    return c


@njit(**_JIT)
def bits_from_cumsum(c, prev, th):
    out = np.empty(c.shape[0], dtype=np.uint8)
    fp = np.floor(prev / th)
    for i in range(c.shape[0]):
        f = np.floor(c[i] / th)
        out[i] = 1 if f > fp else 0
        fp = f
    return out


@njit(**_JIT)
def seq_pm1(x, qe):
    y = np.empty(x.shape[0], dtype=np.int8)
    for n in range(x.shape[0]):
        qe += x[n]
        if qe > 0.0:
            y[n] = 1
            qe -= 1.0
        else:
            y[n] = -1
            qe += 1.0
    return y, qe


@njit(**_JIT)
def seq_mod(x, qe):
    y = np.empty(x.shape[0], dtype=np.uint8)
    for n in range(x.shape[0]):
        qe += x[n]
        if qe > 0.0:
            y[n] = 1
            qe -= 1.0
        else:
            y[n] = 0
    return y, qe


@njit(**_JIT)
def seq_if(x, qe, th):
    y = np.empty(x.shape[0], dtype=np.uint8)
    for n in range(x.shape[0]):
        qe += x[n]
        if qe >= th:
            y[n] = 1
            qe -= th
        else:
            y[n] = 0
    return y, qe


@njit(**_JIT)
def membrane_forward(cur, beta):
    T, C = cur.shape
    v = np.empty((T, C), dtype=np.float64)
    prev = np.zeros(C, dtype=np.float64)
    one_m = 1.0 - beta
    for t in range(T):
        for c in range(C):
            prev[c] = beta * prev[c] + one_m * cur[t, c]
            v[t, c] = prev[c]
    return v


@njit(**_JIT)
def membrane_backward(gv, beta):
    T, C = gv.shape
    gi = np.empty((T, C), dtype=np.float64)
    acc = np.zeros(C, dtype=np.float64)
    one_m = 1.0 - beta
    for t in range(T - 1, -1, -1):
        for c in range(C):
            acc[c] = beta * acc[c] + gv[t, c]
            gi[t, c] = one_m * acc[c]
    return gi


@njit(**_JIT)
def conv_scatter_add(contrib, gx, stride, dilation, kernel_size):
    l_out = contrib.shape[0]
    cin = gx.shape[1]
    for i in range(l_out):
        base = i * stride
        for k in range(kernel_size):
            row = base + k * dilation
            off = k * cin
            for c in range(cin):
                gx[row, c] += contrib[i, off + c]


@njit(**_JIT)
def recurrent_forward(cur, wr, br, beta):
    T, C = cur.shape
    v = np.empty((T, C), dtype=np.float64)
    prev = np.zeros(C, dtype=np.float64)
    relu = np.zeros(C, dtype=np.float64)
    one_m = 1.0 - beta
    for t in range(T):
        for c in range(C):
            acc = cur[t, c] + br[c]
            for j in range(C):
                acc += wr[c, j] * relu[j]
            vv = beta * prev[c] + one_m * acc
            v[t, c] = vv
            prev[c] = vv
        for c in range(C):
            relu[c] = prev[c] if prev[c] > 0.0 else 0.0
    return v


@njit(**_JIT)
def recurrent_backward(v, gv_direct, wr, beta):
    T, C = v.shape
    gi = np.empty((T, C), dtype=np.float64)
    gwr = np.zeros((C, C), dtype=np.float64)
    gbr = np.zeros(C, dtype=np.float64)
    carry = np.zeros(C, dtype=np.float64)
    gv = np.empty(C, dtype=np.float64)
    gieff = np.empty(C, dtype=np.float64)
    one_m = 1.0 - beta
    for t in range(T - 1, -1, -1):
        for c in range(C):
            gv[c] = gv_direct[t, c] + carry[c]
            gieff[c] = one_m * gv[c]
            gi[t, c] = gieff[c]
            gbr[c] += gieff[c]
        if t > 0:
            for c in range(C):
                vp = v[t - 1, c]
                relu_prev = vp if vp > 0.0 else 0.0
                if relu_prev != 0.0:
                    for i in range(C):
                        gwr[i, c] += gieff[i] * relu_prev
                back = 0.0
                for i in range(C):
                    back += wr[i, c] * gieff[i]
                carry[c] = beta * gv[c] + (back if vp > 0.0 else 0.0)
    return gi, gwr, gbr
