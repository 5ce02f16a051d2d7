"""Objective speech quality/intelligibility metrics.

Both metrics are hand-written on numpy: frequency-weighted segmental SNR
over 25 critical-band Gaussian filters (clamped to [-10, 35] dB per band),
and the short-time objective intelligibility measure at its native 10 kHz
rate with 15 one-third-octave bands and clipped normalised correlations.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import resample_poly

from .signal import Waveform

_EPS = np.finfo(np.float64).eps

# Critical-band centre frequencies and bandwidths (Hz) of the classic
# 25-filter bank used by frequency-weighted segmental measures.
_CENT_FREQ = np.array([
    50.0, 120.0, 190.0, 260.0, 330.0, 400.0, 470.0, 540.0, 617.372,
    703.378, 798.717, 904.128, 1020.38, 1148.30, 1288.72, 1442.54,
    1610.70, 1794.16, 1993.93, 2211.08, 2446.71, 2701.97, 2978.04,
    3276.17, 3597.63,
])
_BANDWIDTH = np.array([
    70.0, 70.0, 70.0, 70.0, 70.0, 70.0, 70.0, 77.3724, 86.0056,
    95.3398, 105.411, 116.256, 127.914, 140.423, 153.823, 168.154,
    183.457, 199.776, 217.153, 235.631, 255.255, 276.072, 298.126,
    321.465, 346.136,
])

SNR_FLOOR_DB = -10.0
SNR_CEIL_DB = 35.0
_GAMMA = 0.2


def _hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(1, n + 1) / (n + 1))


def _critical_filters(fs: int, n_fft: int) -> np.ndarray:
    """Gaussian critical-band filters over the positive-frequency bins."""
    half = n_fft // 2
    j = np.arange(half)
    max_freq = fs / 2.0
    min_factor = np.exp(-30.0 / (2.0 * 2.303))
    filters = np.zeros((len(_CENT_FREQ), half))
    bw_min = _BANDWIDTH[0]
    for i, (cf, bw_hz) in enumerate(zip(_CENT_FREQ, _BANDWIDTH)):
        f0 = (cf / max_freq) * half
        bw = (bw_hz / max_freq) * half
        norm = np.log(bw_min) - np.log(bw_hz)
        resp = np.exp(-11.0 * (((j - np.floor(f0)) / bw) ** 2) + norm)
        filters[i] = resp * (resp > min_factor)
    return filters


def fwsnrseg(clean: Waveform, test: Waveform) -> float:
    """Frequency-weighted segmental SNR in dB, averaged over frames.

    Per frame and critical band: 10 log10(E_c^2 / (E_c - E_t)^2), clamped to
    [-10, 35]; zero band error maps to the upper clamp.  Band weights are
    E_c^0.2.  Frames with no clean energy are skipped.
    """
    if clean.sample_rate != test.sample_rate:
        raise ValueError("fwsnrseg: sample rates differ")
    fs = clean.sample_rate
    n = min(len(clean), len(test))
    if n == 0:
        raise ValueError("fwsnrseg: empty input")
    x = clean.samples[:n]
    y = test.samples[:n]
    win_len = round(0.03 * fs)
    skip = win_len // 4
    n_fft = int(2 ** np.ceil(np.log2(2 * win_len)))
    if n < win_len:
        raise ValueError(f"fwsnrseg: input shorter than one {win_len}-sample frame")
    filters = _critical_filters(fs, n_fft)
    window = _hann(win_len)
    n_frames = 1 + (n - win_len) // skip

    scores = []
    for m in range(n_frames):
        seg_x = x[m * skip : m * skip + win_len] * window
        seg_y = y[m * skip : m * skip + win_len] * window
        spec_x = np.abs(np.fft.rfft(seg_x, n_fft))[: n_fft // 2]
        spec_y = np.abs(np.fft.rfft(seg_y, n_fft))[: n_fft // 2]
        sum_x = spec_x.sum()
        sum_y = spec_y.sum()
        if sum_x <= 0.0:
            continue
        spec_x = spec_x / sum_x
        spec_y = spec_y / max(sum_y, _EPS)
        e_clean = filters @ spec_x
        e_test = filters @ spec_y
        err = (e_clean - e_test) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            snr = 10.0 * np.log10(e_clean ** 2 / err)
        snr = np.where(err <= 0.0, np.inf, snr)
        snr = np.clip(snr, SNR_FLOOR_DB, SNR_CEIL_DB)
        weights = e_clean ** _GAMMA
        wsum = weights.sum()
        if wsum <= 0.0:
            continue
        scores.append(float((weights * snr).sum() / wsum))
    if not scores:
        raise ValueError("fwsnrseg: no frames with clean energy")
    return float(np.mean(scores))


# -- STOI ----------------------------------------------------------------------

_STOI_FS = 10000
_STOI_FRAME = 256
_STOI_HOP = 128
_STOI_NFFT = 512
_STOI_BANDS = 15
_STOI_LOW_CF = 150.0
_STOI_SEG = 30          # 30 frames = 384 ms at 10 kHz / hop 128
_STOI_DYN_RANGE = 40.0
_STOI_BETA_DB = -15.0


def _third_octave_matrix() -> np.ndarray:
    """Boolean bin-grouping matrix for 15 one-third-octave bands."""
    freqs = np.arange(_STOI_NFFT // 2 + 1) * _STOI_FS / _STOI_NFFT
    cf = _STOI_LOW_CF * 2.0 ** (np.arange(_STOI_BANDS) / 3.0)
    lo = cf * 2.0 ** (-1.0 / 6.0)
    hi = cf * 2.0 ** (1.0 / 6.0)
    obm = np.zeros((_STOI_BANDS, len(freqs)))
    for b in range(_STOI_BANDS):
        obm[b] = (freqs >= lo[b]) & (freqs < hi[b])
    return obm


def _frame(x: np.ndarray, win: np.ndarray) -> np.ndarray:
    n_frames = 1 + (len(x) - _STOI_FRAME) // _STOI_HOP
    return np.stack([
        x[m * _STOI_HOP : m * _STOI_HOP + _STOI_FRAME] * win
        for m in range(n_frames)
    ])


def stoi(clean: Waveform, test: Waveform) -> float:
    """Short-time objective intelligibility in [0, 1].

    Resamples to 10 kHz, removes frames more than 40 dB below the loudest
    clean frame, folds 512-point spectra into 15 one-third-octave envelopes
    and averages clipped, normalised correlations over 384 ms segments.
    """
    if clean.sample_rate != test.sample_rate:
        raise ValueError("stoi: sample rates differ")
    n = min(len(clean), len(test))
    if n == 0:
        raise ValueError("stoi: empty input")
    fs = clean.sample_rate
    if fs == _STOI_FS:
        x, y = clean.samples[:n], test.samples[:n]
    else:
        if fs % 2000:
            raise ValueError(f"stoi: unsupported sample rate {fs}")
        up, down = _STOI_FS // 2000, fs // 2000
        x = resample_poly(clean.samples[:n], up, down)
        y = resample_poly(test.samples[:n], up, down)

    if len(x) < _STOI_FRAME:
        raise ValueError("stoi: input shorter than one analysis frame")
    win = _hann(_STOI_FRAME)
    frames_x = _frame(x, win)
    frames_y = _frame(y, win)

    # silent-frame removal keyed on the clean signal
    energy = 20.0 * np.log10(np.linalg.norm(frames_x, axis=1) + _EPS)
    keep = energy > energy.max() - _STOI_DYN_RANGE
    frames_x = frames_x[keep]
    frames_y = frames_y[keep]
    if frames_x.shape[0] < _STOI_SEG:
        raise ValueError(
            f"stoi: only {frames_x.shape[0]} active frames; need >= {_STOI_SEG}"
            " (384 ms of active speech)"
        )

    obm = _third_octave_matrix()
    spec_x = np.abs(np.fft.rfft(frames_x, _STOI_NFFT, axis=1)) ** 2
    spec_y = np.abs(np.fft.rfft(frames_y, _STOI_NFFT, axis=1)) ** 2
    env_x = np.sqrt(spec_x @ obm.T)       # [frames, bands]
    env_y = np.sqrt(spec_y @ obm.T)

    clip_gain = 10.0 ** (-_STOI_BETA_DB / 20.0)
    correlations = []
    for m in range(_STOI_SEG, env_x.shape[0] + 1):
        seg_x = env_x[m - _STOI_SEG : m]   # [30, bands]
        seg_y = env_y[m - _STOI_SEG : m]
        alpha = np.linalg.norm(seg_x, axis=0) / (np.linalg.norm(seg_y, axis=0) + _EPS)
        seg_y2 = np.minimum(seg_y * alpha, seg_x * (1.0 + clip_gain))
        cx = seg_x - seg_x.mean(axis=0)
        cy = seg_y2 - seg_y2.mean(axis=0)
        denom = np.linalg.norm(cx, axis=0) * np.linalg.norm(cy, axis=0) + _EPS
        correlations.append((cx * cy).sum(axis=0) / denom)
    return float(np.mean(correlations))


# -- reporting -----------------------------------------------------------------


@dataclass
class MetricRow:
    utterance_id: str
    snr_db: float
    stoi: float
    fwsnrseg: float


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)

    def add(self, utterance_id: str, snr_db: float, stoi_score: float,
            fwsnrseg_score: float) -> None:
        self.rows.append(MetricRow(utterance_id, snr_db, stoi_score, fwsnrseg_score))

    def mean(self, unprocessed: bool = False) -> tuple[float, float]:
        """(mean stoi, mean fwsnrseg) over per-utterance rows of one condition."""
        picked = [r for r in self.rows
                  if r.utterance_id.endswith(":unprocessed") == unprocessed
                  and not r.utterance_id.startswith("mean")]
        if not picked:
            raise ValueError("no rows to aggregate")
        return (float(np.mean([r.stoi for r in picked])),
                float(np.mean([r.fwsnrseg for r in picked])))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["utterance_id", "snr_db", "stoi", "fwsnrseg"])
        for r in self.rows:
            writer.writerow([r.utterance_id, f"{r.snr_db:g}",
                             f"{r.stoi:.10f}", f"{r.fwsnrseg:.10f}"])
        return buf.getvalue()
