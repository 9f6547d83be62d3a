"""Vectorised numpy scoring and gradient kernels.

All kernels take embedding tables ``E`` (entities) and ``R`` (relations) and
int64 index arrays ``h, r, t`` into them. ``*_grad`` kernels return the
gradient of ``sum_i w[i] * score_i`` with respect to the tables, as dense
arrays shaped like the inputs (callers pass compacted tables, so dense here
means dense over touched rows only).
"""
from __future__ import annotations

import numpy as np

NAME = "numpy"


def transe_score(E, R, h, r, t):
    v = E[h] + R[r] - E[t]
    return -np.sqrt(np.einsum("ij,ij->i", v, v))


def transe_grad(E, R, h, r, t, w):
    v = E[h] + R[r] - E[t]
    norm = np.sqrt(np.einsum("ij,ij->i", v, v))
    scale = np.divide(w, norm, out=np.zeros_like(norm), where=norm > 0)
    g = -v * scale[:, None]
    dE = np.zeros_like(E)
    dR = np.zeros_like(R)
    np.add.at(dE, h, g)
    np.add.at(dE, t, -g)
    np.add.at(dR, r, g)
    return dE, dR


def _split(x):
    d = x.shape[1] // 2
    return x[:, :d], x[:, d:]


def complex_score(E, R, h, r, t):
    hr, hi = _split(E[h])
    rr, ri = _split(R[r])
    tr, ti = _split(E[t])
    return np.einsum("ij,ij->i", rr, hr * tr + hi * ti) + np.einsum("ij,ij->i", ri, hr * ti - hi * tr)


def complex_grad(E, R, h, r, t, w):
    hr, hi = _split(E[h])
    rr, ri = _split(R[r])
    tr, ti = _split(E[t])
    w = w[:, None]
    dh = np.concatenate([rr * tr + ri * ti, rr * ti - ri * tr], axis=1) * w
    dt = np.concatenate([rr * hr - ri * hi, rr * hi + ri * hr], axis=1) * w
    dr = np.concatenate([hr * tr + hi * ti, hr * ti - hi * tr], axis=1) * w
    dE = np.zeros_like(E)
    dR = np.zeros_like(R)
    np.add.at(dE, h, dh)
    np.add.at(dE, t, dt)
    np.add.at(dR, r, dr)
    return dE, dR


def _groups(r):
    order = np.argsort(r, kind="stable")
    rs = r[order]
    cuts = np.flatnonzero(np.diff(rs)) + 1
    starts = np.concatenate([[0], cuts])
    ends = np.concatenate([cuts, [len(rs)]])
    return [(int(rs[s]), order[s:e]) for s, e in zip(starts, ends)] if len(rs) else []


def bilinear_score(E, M, h, r, t):
    """``score_i = E[h_i]^T M[r_i] E[t_i]`` with ``M`` of shape (n, d, d)."""
    out = np.empty(len(h))
    for rel, idx in _groups(r):
        out[idx] = np.einsum("ij,ij->i", E[h[idx]] @ M[rel], E[t[idx]])
    return out


def bilinear_grad(E, M, h, r, t, w):
    dE = np.zeros_like(E)
    dM = np.zeros_like(M)
    for rel, idx in _groups(r):
        H = E[h[idx]]
        T = E[t[idx]]
        wi = w[idx][:, None]
        np.add.at(dE, h[idx], (T @ M[rel].T) * wi)
        np.add.at(dE, t[idx], (H @ M[rel]) * wi)
        dM[rel] = (H * wi).T @ T
    return dE, dM
