"""Training loop, losses, evaluation and binary checkpoints."""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tc
from .data import Dataset, Segment
from .metrics import MetricReport, fwsnrseg, stoi
from .model import ModelConfig, UTransformer, init_model
from .signal import StftConfig, Waveform, reconstruct
from .tensor import Adam, Tensor, no_grad

LOSS_KINDS = ("magnitude_mse", "irm_mse")


class NumericalAbort(RuntimeError):
    """Raised when the loss stops being finite; carries the failing step."""

    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step


@dataclass
class TrainConfig:
    lr: float = 8e-4
    epochs: int = 100
    batch_size: int = 4
    seed: int = 0
    loss_kind: str = "magnitude_mse"
    clip_norm: float = 5.0
    checkpoint_every: int = 1    # epochs

    def validate(self) -> None:
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss '{self.loss_kind}' (expected {LOSS_KINDS})")
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("bad training config: need epochs >= 0, "
                             "batch_size >= 1, lr > 0")


@dataclass
class HistoryRow:
    step: int
    train_loss: float
    dev_loss: float | None = None


def history_csv(rows) -> str:
    lines = ["step,train_loss,dev_loss"]
    for r in rows:
        dev = "" if r.dev_loss is None else f"{r.dev_loss:.8f}"
        lines.append(f"{r.step},{r.train_loss:.8f},{dev}")
    return "\n".join(lines) + "\n"


def segment_loss(mask: Tensor, seg: Segment, kind: str, dtype=np.float32) -> Tensor:
    """Loss over the valid (un-padded) frames of one segment.

    magnitude_mse: mean((mask * noisy_mag - clean_mag)^2)
    irm_mse:       mean((mask - irm_target)^2)
    """
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss '{kind}' (expected {LOSS_KINDS})")
    v = seg.valid
    if v == 0:
        raise ValueError("segment has no valid frames")
    m = mask if v == mask.shape[0] else mask[:v]
    if kind == "magnitude_mse":
        noisy = Tensor(seg.noisy_mag[:v].astype(dtype))
        clean = Tensor(seg.clean_mag[:v].astype(dtype))
        diff = tc.add(tc.mul(m, noisy), tc.mul(clean, -1.0))
    else:
        target = Tensor(seg.irm_target[:v].astype(dtype))
        diff = tc.add(m, tc.mul(target, -1.0))
    return tc.tmean(tc.mul(diff, diff))


def _batch_loss(model: UTransformer, batch: list, kind: str) -> Tensor:
    noisy = np.stack([s.noisy_mag for s in batch]).astype(model.dtype)
    masks = model.forward(noisy)
    per_seg = [segment_loss(masks[i], seg, kind, model.dtype)
               for i, seg in enumerate(batch)]
    total = per_seg[0]
    for extra in per_seg[1:]:
        total = tc.add(total, extra)
    return tc.mul(total, 1.0 / len(batch))


def dataset_loss(model: UTransformer, segments: list, kind: str,
                 batch_size: int) -> float:
    """Forward-only mean loss over a segment list (dev evaluation)."""
    if not segments:
        raise ValueError("no segments to evaluate")
    total = 0.0
    with no_grad():
        for i in range(0, len(segments), batch_size):
            batch = segments[i : i + batch_size]
            total += float(_batch_loss(model, batch, kind).data) * len(batch)
    return total / len(segments)


def train_loop(model: UTransformer, dataset: Dataset, cfg: TrainConfig,
               out_dir=None, resume=None, log=None) -> list:
    """Adam training with gradient clipping and epoch checkpoints.

    Deterministic for a fixed seed; `resume` (a checkpoint path or object)
    restores parameters, optimiser moments and the shuffling RNG so the loss
    sequence continues exactly as an uninterrupted run.
    """
    cfg.validate()
    params = model.parameter_dict()
    opt = Adam(params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    start_epoch = 0
    step = 0
    if resume is not None:
        ck = resume if isinstance(resume, Checkpoint) else load_checkpoint(resume)
        restore_model(model, ck)
        opt.load_state_dict({"t": ck.adam_t, "m": ck.adam_m, "v": ck.adam_v})
        rng.bit_generator.state = ck.rng_state
        start_epoch = ck.epoch
        step = ck.step

    train_segments = dataset.segments("train")
    if not train_segments and cfg.epochs > start_epoch:
        raise ValueError("training split produced no segments")
    dev_segments = dataset.segments("dev")

    history: list[HistoryRow] = []
    for epoch in range(start_epoch, cfg.epochs):
        order = rng.permutation(len(train_segments))
        for lo in range(0, len(order), cfg.batch_size):
            batch = [train_segments[i] for i in order[lo : lo + cfg.batch_size]]
            loss = _batch_loss(model, batch, cfg.loss_kind)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericalAbort(step, value)
            model.zero_grad()
            loss.backward()
            tc.clip_grad_norm(params.values(), cfg.clip_norm)
            opt.step()
            step += 1
            history.append(HistoryRow(step, value))
            if log:
                log(f"step {step}: loss {value:.6f}")
        if dev_segments:
            dev = dataset_loss(model, dev_segments, cfg.loss_kind, cfg.batch_size)
            history[-1].dev_loss = dev
            if log:
                log(f"epoch {epoch + 1}: dev loss {dev:.6f}")
        if out_dir is not None and (epoch + 1) % cfg.checkpoint_every == 0:
            path = Path(out_dir) / f"checkpoint_epoch{epoch + 1:04d}.ckpt"
            save_checkpoint(path, model, opt, dataset.stft_cfg,
                            step=step, epoch=epoch + 1,
                            rng_state=rng.bit_generator.state)
    return history


# -- inference / evaluation ------------------------------------------------------


def predict_mask(model: UTransformer, noisy_mag: np.ndarray) -> np.ndarray:
    """Mask for a full [T, F] magnitude map by windowing to the configured
    segment length, batching the forward pass and stitching the valid
    frames back together."""
    frames = model.cfg.frames
    total = noisy_mag.shape[0]
    windows, valids = [], []
    for start in range(0, total, frames):
        stop = min(start + frames, total)
        v = stop - start
        w = noisy_mag[start:stop]
        if v < frames:
            w = np.pad(w, ((0, frames - v), (0, 0)))
        windows.append(w)
        valids.append(v)
    stacked = np.stack(windows).astype(model.dtype)
    with no_grad():
        masks = model.forward(stacked).data
    return np.concatenate([masks[i][:v] for i, v in enumerate(valids)], axis=0)


def evaluate(model: UTransformer | None, dataset: Dataset, split: str,
             threads: int = 1) -> MetricReport:
    """Score every utterance of a split: enhanced vs clean, and the
    unprocessed mixture vs clean (id suffix `:unprocessed`).

    `model=None` evaluates the identity mask (mask of ones)."""
    examples = dataset.examples(split)
    if not examples:
        raise ValueError(f"split '{split}' is empty")

    def score(ex):
        if model is None:
            mask = np.ones_like(ex.noisy_mag)
        else:
            mask = predict_mask(model, ex.noisy_mag)
        enhanced = reconstruct(ex.noisy_spec, mask)
        n = min(len(enhanced), len(ex.clean), len(ex.mixture))
        clean = Waveform(ex.clean.samples[:n], ex.clean.sample_rate)
        enh = Waveform(enhanced.samples[:n], enhanced.sample_rate)
        mix = Waveform(ex.mixture.samples[:n], ex.mixture.sample_rate)
        return (
            (ex.utterance_id, ex.snr_db, stoi(clean, enh), fwsnrseg(clean, enh)),
            (f"{ex.utterance_id}:unprocessed", ex.snr_db,
             stoi(clean, mix), fwsnrseg(clean, mix)),
        )

    report = MetricReport()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(score, examples))
    else:
        results = [score(ex) for ex in examples]
    for enhanced_row, raw_row in results:
        report.add(*enhanced_row)
        report.add(*raw_row)
    return report


# -- checkpoints -------------------------------------------------------------------

_MAGIC = b"UFRMCKPT"
_VERSION = 1
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class CheckpointError(RuntimeError):
    """Corrupt or truncated checkpoint file."""


@dataclass
class Checkpoint:
    model_cfg: dict
    stft_cfg: dict
    step: int
    epoch: int
    rng_state: dict
    params: dict = field(default_factory=dict)
    adam_t: int = 0
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)


def _code_of(arr: np.ndarray) -> int:
    if arr.dtype == np.float32:
        return 0
    if arr.dtype == np.float64:
        return 1
    raise CheckpointError(f"unsupported parameter dtype {arr.dtype}")


def _write_array(fh, arr: np.ndarray) -> None:
    fh.write(struct.pack("<BB", _code_of(arr), arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    data = np.ascontiguousarray(arr)
    if data.dtype.byteorder == ">":
        data = data.byteswap().view(data.dtype.newbyteorder("<"))
    fh.write(data.tobytes())


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint: wanted {n} bytes, got {len(buf)}")
    return buf


def _read_array(fh) -> np.ndarray:
    code, ndim = struct.unpack("<BB", _read_exact(fh, 2))
    if code not in _DTYPE_CODES:
        raise CheckpointError(f"unknown dtype code {code}")
    shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
    dtype = _DTYPE_CODES[code]
    count = int(np.prod(shape)) if ndim else 1
    raw = _read_exact(fh, count * dtype.itemsize)
    return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def _write_blob(fh, payload: bytes) -> None:
    fh.write(struct.pack("<I", len(payload)))
    fh.write(payload)


def _read_blob(fh) -> bytes:
    (n,) = struct.unpack("<I", _read_exact(fh, 4))
    return _read_exact(fh, n)


def save_checkpoint(path, model: UTransformer, opt: Adam | None,
                    stft_cfg: StftConfig, *, step: int, epoch: int,
                    rng_state: dict) -> None:
    """Little-endian binary container: config, counters, RNG state, named
    parameter arrays, then Adam moments."""
    params = model.parameter_dict()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        header = {
            "model": model.cfg.to_dict(),
            "stft": stft_cfg.to_dict(),
        }
        _write_blob(fh, json.dumps(header).encode())
        fh.write(struct.pack("<QI", step, epoch))
        _write_blob(fh, json.dumps(rng_state).encode())
        fh.write(struct.pack("<I", len(params)))
        for name, p in params.items():
            _write_blob(fh, name.encode())
            _write_array(fh, p.data)
        if opt is None:
            fh.write(struct.pack("<B", 0))
        else:
            fh.write(struct.pack("<B", 1))
            fh.write(struct.pack("<Q", opt.t))
            for name in params:
                _write_array(fh, opt.m[name])
                _write_array(fh, opt.v[name])


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != _VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        header = json.loads(_read_blob(fh).decode())
        step, epoch = struct.unpack("<QI", _read_exact(fh, 12))
        rng_state = json.loads(_read_blob(fh).decode())
        (n_params,) = struct.unpack("<I", _read_exact(fh, 4))
        params = {}
        for _ in range(n_params):
            name = _read_blob(fh).decode()
            params[name] = _read_array(fh)
        (has_adam,) = struct.unpack("<B", _read_exact(fh, 1))
        adam_t, adam_m, adam_v = 0, {}, {}
        if has_adam:
            (adam_t,) = struct.unpack("<Q", _read_exact(fh, 8))
            for name in params:
                adam_m[name] = _read_array(fh)
                adam_v[name] = _read_array(fh)
        trailing = fh.read(1)
        if trailing:
            raise CheckpointError(f"{path}: trailing bytes after checkpoint payload")
    return Checkpoint(model_cfg=header["model"], stft_cfg=header["stft"],
                      step=step, epoch=epoch, rng_state=rng_state,
                      params=params, adam_t=adam_t, adam_m=adam_m, adam_v=adam_v)


def restore_model(model: UTransformer, ck: Checkpoint) -> None:
    params = model.parameter_dict()
    if set(params) != set(ck.params):
        missing = set(params) ^ set(ck.params)
        raise CheckpointError(f"parameter set mismatch; offending names: {sorted(missing)[:5]}")
    for name, p in params.items():
        arr = ck.params[name]
        if tuple(arr.shape) != tuple(p.shape):
            raise CheckpointError(
                f"shape mismatch for '{name}': {arr.shape} vs {p.shape}"
            )
        p.data = arr.astype(p.dtype, copy=True)


def model_from_checkpoint(ck: Checkpoint, dtype=np.float32) -> UTransformer:
    cfg = ModelConfig.from_dict(ck.model_cfg)
    model = init_model(cfg, seed=0, dtype=dtype)
    restore_model(model, ck)
    return model
