"""Position-sensitive axial attention and the frequency-band-aware blocks.

Attention always runs along one axis of the time-frequency map; the other
axis is treated as a batch of independent slices sharing the same
parameters.  The band-aware block splits the frequency axis at 4 kHz
(bin F/2) and gives the low band its own richly parameterised attention
while the high band uses a single shared offset table.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as tc
from .tensor import Module, Tensor


def effective_heads(d_layer: int, heads: int) -> int:
    """Largest head count <= `heads` (halving) that divides `d_layer`."""
    if heads < 1 or d_layer < 1:
        raise ValueError(f"bad attention sizing: d_layer={d_layer}, heads={heads}")
    h = min(heads, d_layer)
    while d_layer % h:
        h = max(1, h // 2)
    return h


def scaled_dot_product(q: Tensor, k: Tensor, v: Tensor,
                       scale_len: int | None = None) -> Tensor:
    """Softmax(Q K^T / sqrt(L)) V; the denominator is the sequence length
    unless an explicit `scale_len` overrides it."""
    length = q.shape[-2]
    if length == 0:
        raise ValueError("attention over an empty sequence")
    if k.shape[-2] != length or v.shape[-2] != length:
        raise ValueError(
            f"q/k/v lengths disagree: {q.shape}, {k.shape}, {v.shape}"
        )
    scale = 1.0 / math.sqrt(scale_len if scale_len is not None else length)
    weights = tc.softmax(tc.mul(tc.matmul(q, tc.swap_last(k)), scale), axis=-1)
    return tc.matmul(weights, v)


class RelPosTable(Module):
    """Role-specific relative-offset tables r^Q, r^K, r^V, one per head.

    Offsets c - p span [-(n-1), n-1], so each table holds 2n-1 vectors of
    width d_k per head.  Zero-initialised: the block starts as plain
    content-based attention.
    """

    def __init__(self, heads: int, length: int, d_k: int, dtype=np.float32):
        super().__init__()
        shape = (heads, 2 * length - 1, d_k)
        self.rq = Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)
        self.rk = Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)
        self.rv = Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    def roles(self):
        return self.rq, self.rk, self.rv


class SharedPosTable(Module):
    """One offset table reused for the query, key and value roles."""

    def __init__(self, heads: int, length: int, d_k: int, dtype=np.float32):
        super().__init__()
        self.table = Tensor(np.zeros((heads, 2 * length - 1, d_k), dtype=dtype),
                            requires_grad=True)

    def roles(self):
        return self.table, self.table, self.table


class AxialAttention(Module):
    """Multi-head attention along one axis with relative-position terms.

    Per head: logits(p, c) = (q_p.k_c + q_p.rQ_{c-p} + k_c.rK_{c-p}) / scale,
    weights = softmax over c, out_p = sum_c weights(p,c) (v_c + rV_{c-p}).
    Heads are concatenated and projected by an output matrix.
    """

    def __init__(self, d_layer: int, heads: int, length: int,
                 rng: np.random.Generator, *, shared_table: bool = False,
                 span: int | None = None, scale_by_dk: bool = False,
                 dtype=np.float32):
        super().__init__()
        if length < 1:
            raise ValueError("attention axis must have positive length")
        if span is not None and (span < 1 or span % 2 == 0):
            raise ValueError(f"span must be odd and positive, got {span}")
        self.d_layer = d_layer
        self.heads = effective_heads(d_layer, heads)
        self.d_k = d_layer // self.heads
        self.length = length
        self.span = span
        self.scale_by_dk = scale_by_dk
        proj = (d_layer, self.heads * self.d_k)
        self.wq = Tensor(tc.glorot_uniform(rng, proj, d_layer, proj[1], dtype),
                         requires_grad=True)
        self.wk = Tensor(tc.glorot_uniform(rng, proj, d_layer, proj[1], dtype),
                         requires_grad=True)
        self.wv = Tensor(tc.glorot_uniform(rng, proj, d_layer, proj[1], dtype),
                         requires_grad=True)
        self.wo = Tensor(tc.glorot_uniform(rng, (proj[1], d_layer), proj[1], d_layer, dtype),
                         requires_grad=True)
        table_cls = SharedPosTable if shared_table else RelPosTable
        self.table = table_cls(self.heads, length, self.d_k, dtype=dtype)
        if span is None:
            self._span_mask = None
        else:
            p = np.arange(length)[:, None]
            c = np.arange(length)[None, :]
            self._span_mask = np.where(np.abs(c - p) <= span // 2, 0.0,
                                       -1e30).astype(dtype)

    def _split_heads(self, t: Tensor) -> Tensor:
        # [..., n, H*dk] -> [..., H, n, dk]
        out = tc.reshape(t, t.shape[:-1] + (self.heads, self.d_k))
        axes = list(range(out.ndim))
        axes[-3], axes[-2] = axes[-2], axes[-3]
        return tc.transpose(out, axes)

    def __call__(self, x: Tensor) -> Tensor:
        n = x.shape[-2]
        if n != self.length:
            raise ValueError(
                f"axis length {n} does not match table length {self.length}"
            )
        if x.shape[-1] != self.d_layer:
            raise ValueError(
                f"feature width {x.shape[-1]} does not match d_layer {self.d_layer}"
            )
        q = self._split_heads(tc.matmul(x, self.wq))
        k = self._split_heads(tc.matmul(x, self.wk))
        v = self._split_heads(tc.matmul(x, self.wv))
        rq, rk, rv = self.table.roles()

        scores = tc.matmul(q, tc.swap_last(k))                      # [..., H, n, n]
        term_q = tc.rel_gather(tc.matmul(q, tc.swap_last(rq)))      # q_p . rQ_{c-p}
        gathered = tc.rel_gather(tc.flip_last(tc.matmul(k, tc.swap_last(rk))))
        term_k = tc.swap_last(gathered)                             # k_c . rK_{c-p}
        scale = 1.0 / math.sqrt(self.d_k if self.scale_by_dk else n)
        logits = tc.mul(tc.add(tc.add(scores, term_q), term_k), scale)
        if self._span_mask is not None:
            logits = tc.add(logits, Tensor(self._span_mask))
        weights = tc.softmax(logits, axis=-1)

        out = tc.add(tc.matmul(weights, v), tc.matmul(tc.rel_scatter(weights), rv))
        axes = list(range(out.ndim))
        axes[-3], axes[-2] = axes[-2], axes[-3]
        merged = tc.reshape(tc.transpose(out, axes),
                            out.shape[:-3] + (n, self.heads * self.d_k))
        return tc.matmul(merged, self.wo)


def axial_attention(x: Tensor, att: AxialAttention) -> Tensor:
    """Functional alias: apply `att` along the second-to-last axis of x."""
    return att(x)


def multi_head_time(x: Tensor, att: AxialAttention) -> Tensor:
    """Attend along the time axis of a [..., T, F, d] map; frequency rows are
    independent batch slices sharing parameters."""
    axes = list(range(x.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    rows = tc.transpose(x, axes)          # [..., F, T, d]
    out = att(rows)
    return tc.transpose(out, axes)


def multi_head_freq(x: Tensor, att: AxialAttention) -> Tensor:
    """Attend along the frequency axis of a [..., T, F, d] map."""
    return att(x)


def band_split(x: Tensor):
    """Split [..., T, F, d] into low/high halves along frequency (bin F/2)."""
    f = x.shape[-2]
    if f % 2:
        raise ValueError(f"frequency axis must be even to split, got {f}")
    half = f // 2
    low = tc.getitem(x, (Ellipsis, slice(0, half), slice(None)))
    high = tc.getitem(x, (Ellipsis, slice(half, f), slice(None)))
    return low, high


def band_join(low: Tensor, high: Tensor) -> Tensor:
    """Inverse of band_split: concatenate along the frequency axis."""
    if low.shape[:-2] != high.shape[:-2] or low.shape[-1] != high.shape[-1]:
        raise ValueError(f"band halves disagree: {low.shape} vs {high.shape}")
    return tc.concat([low, high], axis=-2)


class TFAttentionBlock(Module):
    """Two-branch attention: full-axis time attention plus full-axis
    frequency attention, summed."""

    def __init__(self, d_layer: int, frames: int, freq_bins: int, heads_time: int,
                 rng: np.random.Generator, *, span: int | None = None,
                 scale_by_dk: bool = False, dtype=np.float32):
        super().__init__()
        self.time_att = AxialAttention(d_layer, heads_time, frames, rng,
                                       span=span, scale_by_dk=scale_by_dk, dtype=dtype)
        self.freq_att = AxialAttention(d_layer, heads_time, freq_bins, rng,
                                       span=span, scale_by_dk=scale_by_dk, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return tc.add(multi_head_time(x, self.time_att),
                      multi_head_freq(x, self.freq_att))


class FATAttentionBlock(Module):
    """Frequency-band-aware attention.

    Time attention over the full map, plus frequency attention applied
    separately to the low band (many heads, role-specific tables) and the
    high band (few heads, one shared table); band outputs are rejoined and
    summed with the time branch.
    """

    def __init__(self, d_layer: int, frames: int, freq_bins: int,
                 heads_time: int, heads_high: int, heads_low: int,
                 rng: np.random.Generator, *, span: int | None = None,
                 scale_by_dk: bool = False, dtype=np.float32):
        super().__init__()
        if freq_bins % 2:
            raise ValueError(f"freq_bins must be even, got {freq_bins}")
        half = freq_bins // 2
        self.time_att = AxialAttention(d_layer, heads_time, frames, rng,
                                       span=span, scale_by_dk=scale_by_dk, dtype=dtype)
        self.low_att = AxialAttention(d_layer, heads_low, half, rng,
                                      span=span, scale_by_dk=scale_by_dk, dtype=dtype)
        self.high_att = AxialAttention(d_layer, heads_high, half, rng,
                                       shared_table=True, span=span,
                                       scale_by_dk=scale_by_dk, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        mt = multi_head_time(x, self.time_att)
        low, high = band_split(x)
        m_low = multi_head_freq(low, self.low_att)
        m_high = multi_head_freq(high, self.high_att)
        return tc.add(mt, band_join(m_low, m_high))
