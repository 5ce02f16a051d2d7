"""U-shaped masking network: attention sub-layers around a gated bottleneck.

Channels halve down the encoder and double back up the decoder; the time and
frequency axes are never downsampled.  The output head squashes the last
feature map into a (0, 1) time-frequency mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .attention import FATAttentionBlock, TFAttentionBlock
from .tensor import Module, Tensor

VARIANTS = ("fat", "tf")


@dataclass
class ModelConfig:
    variant: str = "fat"
    d_layers: tuple = (64, 32, 16, 8)
    heads_time: int = 8
    heads_high: int = 2
    heads_low: int = 16
    freq_bins: int = 256
    frames: int = 64
    span: int | None = None
    scale_by_dk: bool = False

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown attention variant '{self.variant}'")
        ds = tuple(int(d) for d in self.d_layers)
        if len(ds) != 4:
            raise ValueError(f"d_layers must have 4 entries, got {ds}")
        for i, d in enumerate(ds):
            if d < 2 or d % 2:
                raise ValueError(f"d_layers entries must be even and >= 2, got {ds}")
            if i and ds[i] != ds[i - 1] // 2:
                raise ValueError(
                    f"d_layers must halve at each sub-layer (channel projection"
                    f" is d -> d/2), got {ds}"
                )
        if self.freq_bins < 2 or self.freq_bins % 2:
            raise ValueError(f"freq_bins must be even and >= 2, got {self.freq_bins}")
        if self.frames < 1:
            raise ValueError(f"frames must be >= 1, got {self.frames}")
        if self.span is not None and (self.span < 1 or self.span % 2 == 0):
            raise ValueError(f"span must be odd, got {self.span}")
        for h in (self.heads_time, self.heads_high, self.heads_low):
            if h < 1:
                raise ValueError("head counts must be >= 1")

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "d_layers": list(self.d_layers),
            "heads_time": self.heads_time,
            "heads_high": self.heads_high,
            "heads_low": self.heads_low,
            "freq_bins": self.freq_bins,
            "frames": self.frames,
            "span": self.span,
            "scale_by_dk": self.scale_by_dk,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        cfg = cls(
            variant=d["variant"],
            d_layers=tuple(d["d_layers"]),
            heads_time=int(d["heads_time"]),
            heads_high=int(d["heads_high"]),
            heads_low=int(d["heads_low"]),
            freq_bins=int(d["freq_bins"]),
            frames=int(d["frames"]),
            span=d.get("span"),
            scale_by_dk=bool(d.get("scale_by_dk", False)),
        )
        cfg.validate()
        return cfg


def _affine(rng, d_in, d_out, dtype):
    w = Tensor(tc.glorot_uniform(rng, (d_in, d_out), d_in, d_out, dtype),
               requires_grad=True)
    b = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)
    return w, b


def _norm_params(d, dtype):
    gain = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
    bias = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
    return gain, bias


class FeedForward(Module):
    """GRU scan along the time axis per frequency bin, ReLU, then a
    pointwise affine back to width d."""

    def __init__(self, d_in: int, d: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.d = d
        for gate in ("z", "r", "h"):
            w = Tensor(tc.glorot_uniform(rng, (d_in, d), d_in, d, dtype),
                       requires_grad=True)
            u = Tensor(tc.glorot_uniform(rng, (d, d), d, d, dtype),
                       requires_grad=True)
            b = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
            setattr(self, f"w{gate}", w)
            setattr(self, f"u{gate}", u)
            setattr(self, f"b{gate}", b)
        self.w_out, self.b_out = _affine(rng, d, d, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        # x: [..., T, F, d_in] -> [..., T, F, d]
        t_len = x.shape[-3]
        h = Tensor(np.zeros(x.shape[:-3] + x.shape[-2:-1] + (self.d,),
                            dtype=x.dtype))
        states = []
        for t in range(t_len):
            xt = tc.getitem(x, (Ellipsis, t, slice(None), slice(None)))
            h = tc.gru_cell(xt, h, self.wz, self.uz, self.bz,
                            self.wr, self.ur, self.br,
                            self.wh, self.uh, self.bh)
            states.append(h)
        seq = tc.stack(states, axis=-3)
        return tc.add(tc.matmul(tc.relu(seq), self.w_out), self.b_out)


def _make_block(cfg: ModelConfig, d: int, rng, dtype) -> Module:
    if cfg.variant == "fat":
        return FATAttentionBlock(d, cfg.frames, cfg.freq_bins, cfg.heads_time,
                                 cfg.heads_high, cfg.heads_low, rng,
                                 span=cfg.span, scale_by_dk=cfg.scale_by_dk,
                                 dtype=dtype)
    return TFAttentionBlock(d, cfg.frames, cfg.freq_bins, cfg.heads_time, rng,
                            span=cfg.span, scale_by_dk=cfg.scale_by_dk,
                            dtype=dtype)


class EncoderSubLayer(Module):
    """Attention + GRU feed-forward with residual norms, then a pointwise
    channel projection d -> d/2."""

    def __init__(self, cfg: ModelConfig, d: int, rng, dtype=np.float32):
        super().__init__()
        self.block = _make_block(cfg, d, rng, dtype)
        self.ffn = FeedForward(d, d, rng, dtype)
        self.ln1_g, self.ln1_b = _norm_params(d, dtype)
        self.ln2_g, self.ln2_b = _norm_params(d, dtype)
        self.proj_w, self.proj_b = _affine(rng, d, d // 2, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        y1 = tc.layer_norm(tc.add(x, self.block(x)), self.ln1_g, self.ln1_b)
        y2 = tc.layer_norm(tc.add(y1, self.ffn(y1)), self.ln2_g, self.ln2_b)
        return tc.add(tc.matmul(y2, self.proj_w), self.proj_b)


class DecoderSubLayer(Module):
    """Attention on the decoder path; the skip map joins inside the
    feed-forward stage (concat 2d -> d); channels then double."""

    def __init__(self, cfg: ModelConfig, d: int, rng, dtype=np.float32):
        super().__init__()
        self.block = _make_block(cfg, d, rng, dtype)
        self.ffn = FeedForward(2 * d, d, rng, dtype)
        self.ln1_g, self.ln1_b = _norm_params(d, dtype)
        self.ln2_g, self.ln2_b = _norm_params(d, dtype)
        self.up_w, self.up_b = _affine(rng, d, 2 * d, dtype)

    def __call__(self, x: Tensor, skip: Tensor) -> Tensor:
        if x.shape != skip.shape:
            raise ValueError(
                f"decoder input {x.shape} and skip {skip.shape} must match"
            )
        a = tc.layer_norm(tc.add(x, self.block(x)), self.ln1_g, self.ln1_b)
        f = self.ffn(tc.concat([a, skip], axis=-1))
        y2 = tc.layer_norm(tc.add(a, f), self.ln2_g, self.ln2_b)
        return tc.add(tc.matmul(y2, self.up_w), self.up_b)


class MaskingModule(Module):
    """Bottleneck gate: two 3x3 convolutions (ReLU then PReLU) produce a
    multiplicative gate applied to the bottleneck map."""

    def __init__(self, channels: int, rng, dtype=np.float32):
        super().__init__()
        fan = channels * 9
        self.k1 = Tensor(tc.glorot_uniform(rng, (channels, channels, 3, 3),
                                           fan, fan, dtype), requires_grad=True)
        self.b1 = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.k2 = Tensor(tc.glorot_uniform(rng, (channels, channels, 3, 3),
                                           fan, fan, dtype), requires_grad=True)
        self.b2 = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.alpha = Tensor(np.full(channels, 0.25, dtype=dtype), requires_grad=True)

    def __call__(self, z: Tensor) -> Tensor:
        # z: [..., T, F, c]; convs run channel-first.
        axes_in = list(range(z.ndim))
        axes_in = axes_in[:-3] + [axes_in[-1], axes_in[-3], axes_in[-2]]
        m = tc.transpose(z, axes_in)                          # [..., c, T, F]
        g = tc.relu(tc.conv2d(m, self.k1, self.b1))
        g = tc.prelu(tc.conv2d(g, self.k2, self.b2), self.alpha, channel_axis=-3)
        axes_out = list(range(z.ndim))
        axes_out = axes_out[:-3] + [axes_out[-2], axes_out[-1], axes_out[-3]]
        gate = tc.transpose(g, axes_out)                      # [..., T, F, c]
        return tc.mul(z, gate)


class UTransformer(Module):
    """Input projection, 4 encoder sub-layers, masking gate, 4 decoder
    sub-layers with skips, sigmoid mask head."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.dtype = dtype
        d1, d2, d3, d4 = cfg.d_layers
        self.embed_k = Tensor(tc.glorot_uniform(rng, (d1, 1, 3, 3), 9, d1 * 9, dtype),
                              requires_grad=True)
        self.embed_b = Tensor(np.zeros(d1, dtype=dtype), requires_grad=True)
        self.encoders = [EncoderSubLayer(cfg, d, rng, dtype) for d in (d1, d2, d3, d4)]
        self.masking = MaskingModule(d4 // 2, rng, dtype)
        self.decoders = [DecoderSubLayer(cfg, d, rng, dtype)
                         for d in (d4 // 2, d4, d3, d2)]
        self.head_w, self.head_b = _affine(rng, d1, 1, dtype)

    def _check_input(self, mag: np.ndarray) -> None:
        t, f = mag.shape[-2], mag.shape[-1]
        if t != self.cfg.frames or f != self.cfg.freq_bins:
            raise ValueError(
                f"input map {t}x{f} does not match configured "
                f"{self.cfg.frames}x{self.cfg.freq_bins}"
            )

    def forward(self, mag) -> Tensor:
        """Magnitude map [T, F] (or [B, T, F]) -> mask of the same shape,
        entries in (0, 1)."""
        x = mag if isinstance(mag, Tensor) else Tensor(np.asarray(mag, dtype=self.dtype))
        if x.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype))
        if x.ndim not in (2, 3):
            raise ValueError(f"expected [T, F] or [B, T, F], got {x.shape}")
        self._check_input(x.data)
        batched = x.ndim == 3
        planes = tc.reshape(x, (x.shape[0], 1) + x.shape[1:] if batched
                            else (1,) + x.shape)
        fmap = tc.conv2d(planes, self.embed_k, self.embed_b)  # [..., d1, T, F]
        axes = list(range(fmap.ndim))
        axes = axes[:-3] + [axes[-2], axes[-1], axes[-3]]
        h = tc.transpose(fmap, axes)                          # [..., T, F, d1]
        skips = []
        for enc in self.encoders:
            h = enc(h)
            skips.append(h)
        h = self.masking(h)
        for dec, skip in zip(self.decoders, reversed(skips)):
            h = dec(h, skip)
        logits = tc.add(tc.matmul(h, self.head_w), self.head_b)
        mask = tc.sigmoid(tc.reshape(logits, logits.shape[:-1]))
        return mask

    __call__ = forward


def init_model(cfg: ModelConfig, seed: int, dtype=np.float32) -> UTransformer:
    """Deterministically build and initialise a model from a seed."""
    return UTransformer(cfg, np.random.default_rng(seed), dtype=dtype)
