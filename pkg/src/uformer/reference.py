"""Brute-force loop oracles for the attention blocks.

These deliberately share no code with the vectorised implementations in
`attention.py`: plain loops over positions and heads, numpy scalars only.
They exist so that the fast path can always be cross-checked against an
independent route, both in the test suite and in the CLI self-check.
"""

from __future__ import annotations

import numpy as np


def softmax_1d(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - np.max(x))
    return e / e.sum()


def sdp_reference(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                  scale_len: int | None = None) -> np.ndarray:
    """Scaled dot-product attention, one row of the map at a time."""
    length, _ = q.shape
    if length == 0:
        raise ValueError("attention over an empty sequence")
    scale = 1.0 / np.sqrt(scale_len if scale_len is not None else length)
    out = np.zeros((length, v.shape[1]), dtype=np.float64)
    for p in range(length):
        logits = np.array([np.dot(q[p], k[c]) * scale for c in range(length)])
        w = softmax_1d(logits)
        for c in range(length):
            out[p] += w[c] * v[c]
    return out


def axial_reference(x: np.ndarray, wq: np.ndarray, wk: np.ndarray, wv: np.ndarray,
                    wo: np.ndarray, rq: np.ndarray, rk: np.ndarray, rv: np.ndarray,
                    *, scale_by_dk: bool = False,
                    span: int | None = None) -> np.ndarray:
    """Position-sensitive multi-head attention for a single [n, d] slice.

    Tables are per head, indexed by relative offset c - p + n - 1.  The whole
    logit sum (content + both positional terms) shares one scale factor.
    """
    n, _ = x.shape
    heads, _, dk = rq.shape
    q = (x @ wq).reshape(n, heads, dk)
    k = (x @ wk).reshape(n, heads, dk)
    v = (x @ wv).reshape(n, heads, dk)
    scale = 1.0 / np.sqrt(dk if scale_by_dk else n)
    half = None if span is None else span // 2
    head_out = np.zeros((n, heads, dk), dtype=np.float64)
    for h in range(heads):
        for p in range(n):
            allowed = [c for c in range(n) if half is None or abs(c - p) <= half]
            logits = np.empty(len(allowed))
            for j, c in enumerate(allowed):
                off = c - p + n - 1
                logits[j] = (np.dot(q[p, h], k[c, h])
                             + np.dot(q[p, h], rq[h, off])
                             + np.dot(k[c, h], rk[h, off])) * scale
            w = softmax_1d(logits)
            for j, c in enumerate(allowed):
                off = c - p + n - 1
                head_out[p, h] += w[j] * (v[c, h] + rv[h, off])
    return head_out.reshape(n, heads * dk) @ wo
