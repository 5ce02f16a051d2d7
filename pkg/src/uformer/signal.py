"""Waveform <-> spectrogram plumbing: STFT, ideal ratio masks, SNR mixing.

Analysis and synthesis both use a square-root Hann taper, so the effective
per-frame weighting is a periodic Hann window and the overlap-add
normaliser (`cola_profile`) is exactly 1 over interior samples at 50% hop.
The Nyquist bin is carried through the spectrogram but hidden from the
network: masks act on the first nfft/2 bins and the noisy Nyquist column is
re-attached at synthesis.
"""

from __future__ import annotations

import wave as wave_io
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def _sqrt_hann(n: int) -> np.ndarray:
    # periodic Hann under the square root; the analysis*synthesis product is
    # then a true periodic Hann, which sums to 1 at 50% hop.
    return np.sqrt(0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n))


@dataclass(frozen=True)
class StftConfig:
    sample_rate: int = 16000
    nfft: int = 512
    hop: int = 256

    def __post_init__(self):
        if self.nfft < 4 or self.nfft % 2:
            raise ValueError(f"nfft must be even and >= 4, got {self.nfft}")
        if not 0 < self.hop <= self.nfft:
            raise ValueError(f"hop must be in (0, nfft], got {self.hop}")

    @property
    def bins(self) -> int:
        """Bins the network sees (Nyquist excluded)."""
        return self.nfft // 2

    @property
    def window(self) -> np.ndarray:
        return _sqrt_hann(self.nfft)

    def bin_hz(self, k: int) -> float:
        return k * self.sample_rate / self.nfft

    def band_split_bin(self) -> int:
        """First bin of the high band; sits at 4 kHz for any nfft at 16 kHz."""
        return self.bins // 2

    def to_dict(self) -> dict:
        return {"sample_rate": self.sample_rate, "nfft": self.nfft, "hop": self.hop}

    @classmethod
    def from_dict(cls, d: dict) -> "StftConfig":
        return cls(sample_rate=int(d["sample_rate"]), nfft=int(d["nfft"]),
                   hop=int(d["hop"]))


def cola_profile(cfg: StftConfig, frames: int = 16) -> np.ndarray:
    """Sum of shifted analysis*synthesis window products over interior
    samples -- the constant that overlap-add reconstruction divides by."""
    w2 = cfg.window * cfg.window
    length = cfg.nfft + (frames - 1) * cfg.hop
    acc = np.zeros(length)
    for m in range(frames):
        acc[m * cfg.hop : m * cfg.hop + cfg.nfft] += w2
    return acc[cfg.nfft : length - cfg.nfft]


@dataclass
class Spectrogram:
    """Complex frames [T, nfft/2 + 1]; the last column is the Nyquist bin."""

    frames: np.ndarray
    cfg: StftConfig = field(default_factory=StftConfig)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def magnitude(self) -> np.ndarray:
        """|frames| over the network bins only: [T, nfft/2]."""
        return np.abs(self.frames[:, : self.cfg.bins])

    def phase(self) -> np.ndarray:
        return np.angle(self.frames[:, : self.cfg.bins])

    def nyquist(self) -> np.ndarray:
        return self.frames[:, -1]


def stft(wave: Waveform, cfg: StftConfig | None = None) -> Spectrogram:
    cfg = cfg or StftConfig()
    if wave.sample_rate != cfg.sample_rate:
        raise ValueError(
            f"waveform rate {wave.sample_rate} != configured {cfg.sample_rate}"
        )
    x = wave.samples
    if len(x) < cfg.nfft:
        raise ValueError(
            f"input of {len(x)} samples is shorter than one {cfg.nfft}-sample frame"
        )
    n_frames = 1 + (len(x) - cfg.nfft) // cfg.hop
    win = cfg.window
    out = np.empty((n_frames, cfg.nfft // 2 + 1), dtype=np.complex128)
    for m in range(n_frames):
        seg = x[m * cfg.hop : m * cfg.hop + cfg.nfft]
        out[m] = np.fft.rfft(seg * win)
    return Spectrogram(out, cfg)


def istft(spec: Spectrogram) -> Waveform:
    """Weighted overlap-add synthesis with per-sample normalisation."""
    cfg = spec.cfg
    win = cfg.window
    t = spec.n_frames
    length = cfg.nfft + (t - 1) * cfg.hop
    acc = np.zeros(length)
    norm = np.zeros(length)
    for m in range(t):
        seg = np.fft.irfft(spec.frames[m], n=cfg.nfft)
        sl = slice(m * cfg.hop, m * cfg.hop + cfg.nfft)
        acc[sl] += seg * win
        norm[sl] += win * win
    out = acc / np.maximum(norm, 1e-10)
    return Waveform(out, cfg.sample_rate)


def irm(clean_mag: np.ndarray, noise_mag: np.ndarray,
        beta: float = 0.5, eps: float = 1e-12) -> np.ndarray:
    """Ideal ratio mask (S^2 / (S^2 + N^2))^beta, guarded against 0/0."""
    if clean_mag.shape != noise_mag.shape:
        raise ValueError(
            f"clean {clean_mag.shape} and noise {noise_mag.shape} shapes differ"
        )
    s2 = clean_mag.astype(np.float64) ** 2
    n2 = noise_mag.astype(np.float64) ** 2
    return (s2 / (s2 + n2 + eps)) ** beta


def _fit_length(noise: np.ndarray, n: int) -> np.ndarray:
    if len(noise) >= n:
        return noise[:n]
    reps = int(np.ceil(n / len(noise)))
    return np.tile(noise, reps)[:n]


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float):
    """Scale `noise` so the mixture hits `snr_db` exactly; returns
    (mixture, scaled_noise).  Both sources are kept for mask targets."""
    if clean.sample_rate != noise.sample_rate:
        raise ValueError(
            f"sample rates differ: clean {clean.sample_rate}, noise {noise.sample_rate}"
        )
    if not np.isfinite(snr_db):
        raise ValueError(f"snr_db must be finite, got {snr_db}")
    c = clean.samples
    n = _fit_length(noise.samples, len(c))
    p_clean = float(np.mean(c ** 2))
    p_noise = float(np.mean(n ** 2))
    if p_clean <= 0.0:
        raise ValueError("clean signal is silent; SNR undefined")
    if p_noise <= 0.0:
        raise ValueError("interference signal is silent; SNR undefined")
    alpha = np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    scaled = alpha * n
    return Waveform(c + scaled, clean.sample_rate), Waveform(scaled, clean.sample_rate)


def measure_snr(clean: Waveform, noise: Waveform) -> float:
    return 10.0 * np.log10(np.mean(clean.samples ** 2) / np.mean(noise.samples ** 2))


def reconstruct(noisy: Spectrogram, mask: np.ndarray) -> Waveform:
    """Apply a [T, bins] mask to the noisy magnitude, keep the noisy phase
    and Nyquist column, and invert."""
    bins = noisy.cfg.bins
    if mask.shape != (noisy.n_frames, bins):
        raise ValueError(
            f"mask shape {mask.shape} != spectrogram {(noisy.n_frames, bins)}"
        )
    low = noisy.frames[:, :bins]
    enhanced = (mask * np.abs(low)) * np.exp(1j * np.angle(low))
    frames = np.concatenate([enhanced, noisy.frames[:, bins:]], axis=1)
    return istft(Spectrogram(frames, noisy.cfg))


# -- file I/O ------------------------------------------------------------------


def read_wav(path, expect_rate: int = 16000) -> Waveform:
    """Load 16-bit PCM mono WAV at the expected rate; anything else is
    rejected with a descriptive error."""
    with wave_io.open(str(path), "rb") as fh:
        channels = fh.getnchannels()
        width = fh.getsampwidth()
        rate = fh.getframerate()
        if channels != 1:
            raise ValueError(f"{path}: expected mono audio, got {channels} channels")
        if width != 2:
            raise ValueError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
        if rate != expect_rate:
            raise ValueError(f"{path}: expected {expect_rate} Hz, got {rate} Hz")
        raw = fh.readframes(fh.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    return Waveform(pcm / 32768.0, rate)


def write_wav(path, wave: Waveform) -> None:
    pcm = np.clip(np.round(wave.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave_io.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(wave.sample_rate)
        fh.writeframes(pcm.tobytes())


def write_pgm(path, mag: np.ndarray, floor_db: float = 80.0) -> None:
    """Binary P5 image of a log-magnitude spectrogram.

    Time runs along x (width = T), frequency along y (height = bins) with
    the lowest bin at the bottom row; dynamic range is `floor_db` below the
    peak, mapped to 0..255.
    """
    if mag.ndim != 2:
        raise ValueError(f"expected a [T, F] magnitude map, got {mag.shape}")
    db = 20.0 * np.log10(np.maximum(np.asarray(mag, dtype=np.float64), 1e-12))
    top = db.max()
    scaled = np.clip((db - (top - floor_db)) / floor_db, 0.0, 1.0)
    img = np.round(scaled * 255.0).astype(np.uint8)
    # [T, F] -> rows are frequency, top row = highest bin
    img = img.T[::-1]
    header = f"P5\n{mag.shape[0]} {mag.shape[1]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(img.tobytes())
