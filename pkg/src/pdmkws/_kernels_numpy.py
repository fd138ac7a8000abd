"""Pure numpy/python kernels.

Reference implementations of the hot loops. The sequential modulators run as
interpreted per-sample loops (they are the honest sequential algorithm); the
membrane kernels use a vectorized log-offset scan equivalent to the sequential
recurrence within 1e-6 relative.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def running_cumsum(x: np.ndarray) -> np.ndarray:
    # np.cumsum accumulates strictly left to right, matching the scalar loop
    # in the numba twin bit for bit.
    return np.cumsum(x, dtype=np.float64)


def bits_from_cumsum(c: np.ndarray, prev: float, th: float) -> np.ndarray:
    f = np.floor(c / th)
    out = np.empty(f.shape[0], dtype=np.uint8)
    if f.shape[0] == 0:
        return out
    out[0] = f[0] > np.floor(prev / th)
    np.greater(f[1:], f[:-1], out=out[1:].view(bool))
    return out


def seq_pm1(x: np.ndarray, qe: float) -> tuple[np.ndarray, float]:
    y = np.empty(len(x), dtype=np.int8)
    for n, v in enumerate(x.tolist()):
        qe += v
        if qe > 0.0:
            y[n] = 1
            qe -= 1.0
        else:
            y[n] = -1
            qe += 1.0
    return y, qe


def seq_mod(x: np.ndarray, qe: float) -> tuple[np.ndarray, float]:
    y = np.empty(len(x), dtype=np.uint8)
    for n, v in enumerate(x.tolist()):
        qe += v
        if qe > 0.0:
            y[n] = 1
            qe -= 1.0
        else:
            y[n] = 0
    return y, qe


def seq_if(x: np.ndarray, qe: float, th: float) -> tuple[np.ndarray, float]:
    y = np.empty(len(x), dtype=np.uint8)
    for n, v in enumerate(x.tolist()):
        qe += v
        if qe >= th:
            y[n] = 1
            qe -= th
        else:
            y[n] = 0
    return y, qe


def membrane_forward(cur: np.ndarray, beta: float) -> np.ndarray:
    # V[t] = sum_{s<=t} beta^(t-s) (1-beta) I[s], built by offset doubling.
    v = (1.0 - beta) * np.asarray(cur, dtype=np.float64)
    return _scan_inplace(np.ascontiguousarray(v), beta)


def _scan_inplace(v: np.ndarray, beta: float) -> np.ndarray:
    n = v.shape[0]
    d, s = 1, beta
    while d < n and s != 0.0:
        v[d:] += s * v[:-d]
        d *= 2
        s = s * s
    return v


def membrane_backward(gv: np.ndarray, beta: float) -> np.ndarray:
    g = (1.0 - beta) * np.asarray(gv, dtype=np.float64)[::-1]
    g = _scan_inplace(np.ascontiguousarray(g), beta)
    return g[::-1].copy()


def conv_scatter_add(
    contrib: np.ndarray, gx: np.ndarray, stride: int, dilation: int, kernel_size: int
) -> None:
    # contrib is (Lout, K*Cin); adds tap k's block at rows i*stride + k*dilation.
    l_out = contrib.shape[0]
    cin = gx.shape[1]
    for k in range(kernel_size):
        start = k * dilation
        stop = start + (l_out - 1) * stride + 1
        gx[start:stop:stride] += contrib[:, k * cin : (k + 1) * cin]


def recurrent_forward(
    cur: np.ndarray, wr: np.ndarray, br: np.ndarray, beta: float
) -> np.ndarray:
    T, C = cur.shape
    v = np.empty((T, C), dtype=np.float64)
    prev = np.zeros(C)
    for t in range(T):
        i_eff = cur[t] + wr @ np.maximum(prev, 0.0) + br
        prev = beta * prev + (1.0 - beta) * i_eff
        v[t] = prev
    return v


def recurrent_backward(
    v: np.ndarray, gv_direct: np.ndarray, wr: np.ndarray, beta: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    T, C = v.shape
    gi = np.empty((T, C), dtype=np.float64)
    gwr = np.zeros((C, C), dtype=np.float64)
    gbr = np.zeros(C, dtype=np.float64)
    carry = np.zeros(C)
    one_m_beta = 1.0 - beta
    for t in range(T - 1, -1, -1):
        gv = gv_direct[t] + carry
        gieff = one_m_beta * gv
        gi[t] = gieff
        gbr += gieff
        if t > 0:
            relu_prev = np.maximum(v[t - 1], 0.0)
            gwr += np.outer(gieff, relu_prev)
            carry = beta * gv + (v[t - 1] > 0.0) * (wr.T @ gieff)
    return gi, gwr, gbr
