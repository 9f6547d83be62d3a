"""Numba-compiled twins of :mod:`cfkgr._kernels_numpy` (same signatures and results)."""
from __future__ import annotations

import math

import numpy as np
from numba import njit

NAME = "numba"


@njit(cache=True)
def transe_score(E, R, h, r, t):
    n, d = len(h), E.shape[1]
    out = np.empty(n)
    for i in range(n):
        acc = 0.0
        for k in range(d):
            v = E[h[i], k] + R[r[i], k] - E[t[i], k]
            acc += v * v
        out[i] = -math.sqrt(acc)
    return out


@njit(cache=True)
def transe_grad(E, R, h, r, t, w):
    n, d = len(h), E.shape[1]
    dE = np.zeros_like(E)
    dR = np.zeros_like(R)
    v = np.empty(d)
    for i in range(n):
        acc = 0.0
        for k in range(d):
            v[k] = E[h[i], k] + R[r[i], k] - E[t[i], k]
            acc += v[k] * v[k]
        norm = math.sqrt(acc)
        if norm == 0.0:
            continue
        s = w[i] / norm
        for k in range(d):
            g = -v[k] * s
            dE[h[i], k] += g
            dE[t[i], k] -= g
            dR[r[i], k] += g
    return dE, dR


@njit(cache=True)
def complex_score(E, R, h, r, t):
    n, d = len(h), E.shape[1] // 2
    out = np.empty(n)
    for i in range(n):
        hi, ri, ti = h[i], r[i], t[i]
        acc = 0.0
        for k in range(d):
            hre, him = E[hi, k], E[hi, d + k]
            tre, tim = E[ti, k], E[ti, d + k]
            acc += R[ri, k] * (hre * tre + him * tim) + R[ri, d + k] * (hre * tim - him * tre)
        out[i] = acc
    return out


@njit(cache=True)
def complex_grad(E, R, h, r, t, w):
    n, d = len(h), E.shape[1] // 2
    dE = np.zeros_like(E)
    dR = np.zeros_like(R)
    for i in range(n):
        hi, ri, ti, wi = h[i], r[i], t[i], w[i]
        for k in range(d):
            hre, him = E[hi, k], E[hi, d + k]
            tre, tim = E[ti, k], E[ti, d + k]
            rre, rim = R[ri, k], R[ri, d + k]
            dE[hi, k] += wi * (rre * tre + rim * tim)
            dE[hi, d + k] += wi * (rre * tim - rim * tre)
            dE[ti, k] += wi * (rre * hre - rim * him)
            dE[ti, d + k] += wi * (rre * him + rim * hre)
            dR[ri, k] += wi * (hre * tre + him * tim)
            dR[ri, d + k] += wi * (hre * tim - him * tre)
    return dE, dR


@njit(cache=True, fastmath=True)
def bilinear_score(E, M, h, r, t):
    n, d = len(h), E.shape[1]
    out = np.empty(n)
    for i in range(n):
        hi, ri, ti = h[i], r[i], t[i]
        acc = 0.0
        for a in range(d):
            row = 0.0
            for b in range(d):
                row += M[ri, a, b] * E[ti, b]
            acc += E[hi, a] * row
        out[i] = acc
    return out


@njit(cache=True, fastmath=True)
def bilinear_grad(E, M, h, r, t, w):
    n, d = len(h), E.shape[1]
    dE = np.zeros_like(E)
    dM = np.zeros_like(M)
    for i in range(n):
        hi, ri, ti, wi = h[i], r[i], t[i], w[i]
        for a in range(d):
            ha = E[hi, a] * wi
            acc = 0.0
            for b in range(d):
                m = M[ri, a, b]
                acc += m * E[ti, b]
                dE[ti, b] += ha * m
                dM[ri, a, b] += ha * E[ti, b]
            dE[hi, a] += wi * acc
    return dE, dM
