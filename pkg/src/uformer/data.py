"""Dataset manifests, synthetic fixtures and segmentation.

A manifest is a line-oriented TSV of (utterance_id, clean_path,
interference_path, snr_db, split) records plus a `#seed=` header.  Noise
references may carry a `#h0` / `#h1` fragment selecting the first or second
half of the clip, which keeps training interference disjoint from dev/test
interference when both come from the same files.  `fixture:` pseudo-paths
address deterministic synthetic examples, so smoke training needs no audio
on disk.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .signal import (Spectrogram, StftConfig, Waveform, irm, mix_at_snr,
                     read_wav, stft)

SPLITS = ("train", "dev", "test")
FIXTURE_KINDS = ("sine_mix", "chirp_mix", "multitone_mix")


class DataError(RuntimeError):
    """Bad manifest, missing file or malformed audio reference."""


@dataclass
class ManifestRecord:
    utterance_id: str
    clean_path: str
    interference_path: str
    snr_db: float
    split: str


@dataclass
class Manifest:
    records: list = field(default_factory=list)
    seed: int = 0

    def split(self, name: str) -> list:
        if name not in SPLITS:
            raise DataError(f"unknown split '{name}' (expected one of {SPLITS})")
        return [r for r in self.records if r.split == name]

    def save(self, path) -> None:
        lines = [f"#seed={self.seed}"]
        for r in self.records:
            lines.append("\t".join([
                r.utterance_id, r.clean_path, r.interference_path,
                f"{r.snr_db:g}", r.split,
            ]))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        if not path.exists():
            raise DataError(f"manifest not found: {path}")
        seed = 0
        records = []
        for ln, line in enumerate(path.read_text().splitlines(), start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("#seed="):
                    seed = int(line.split("=", 1)[1])
                continue
            fields = line.split("\t")
            if len(fields) != 5:
                raise DataError(f"{path}:{ln}: expected 5 tab-separated fields, "
                                f"got {len(fields)}")
            uid, clean, noise, snr, split = fields
            try:
                snr_val = float(snr)
            except ValueError:
                raise DataError(f"{path}:{ln}: bad snr_db '{snr}'") from None
            if not np.isfinite(snr_val):
                raise DataError(f"{path}:{ln}: non-finite snr_db")
            if split not in SPLITS:
                raise DataError(f"{path}:{ln}: unknown split '{split}'")
            for ref in (clean, noise):
                if not ref.startswith("fixture:"):
                    file_part = ref.split("#", 1)[0]
                    if not Path(file_part).exists():
                        raise DataError(f"{path}:{ln}: missing file {file_part}")
            records.append(ManifestRecord(uid, clean, noise, snr_val, split))
        return cls(records=records, seed=seed)


def scan_dataset(clean_dir, noise_dir, snrs=(-5.0, 0.0, 5.0),
                 fractions=(10, 1, 1), seed: int = 0) -> Manifest:
    """Deterministically pair clean files with interference and SNR levels.

    Splits follow `fractions` (default 10/1/1 twelfths).  Training rows use
    the first half of each interference clip (#h0); dev/test rows use the
    second half (#h1), mirroring the disjoint-halves protocol.
    """
    clean_files = sorted(Path(clean_dir).glob("*.wav"))
    noise_files = sorted(Path(noise_dir).glob("*.wav"))
    if not clean_files:
        raise DataError(f"no .wav files in clean dir {clean_dir}")
    if not noise_files:
        raise DataError(f"no .wav files in noise dir {noise_dir}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(clean_files))
    total = sum(fractions)
    n = len(clean_files)
    n_train = round(n * fractions[0] / total)
    n_dev = round(n * fractions[1] / total)
    records = []
    for pos, idx in enumerate(order):
        clean = clean_files[idx]
        split = ("train" if pos < n_train
                 else "dev" if pos < n_train + n_dev
                 else "test")
        noise = noise_files[int(rng.integers(len(noise_files)))]
        snr = float(snrs[int(rng.integers(len(snrs)))])
        half = "#h0" if split == "train" else "#h1"
        records.append(ManifestRecord(
            utterance_id=clean.stem,
            clean_path=str(clean),
            interference_path=str(noise) + half,
            snr_db=snr,
            split=split,
        ))
    return Manifest(records=records, seed=seed)


def load_audio_ref(ref: str) -> Waveform:
    """Resolve a manifest audio reference: a WAV path with an optional
    `#h0`/`#h1` half-fragment."""
    if "#" in ref:
        file_part, frag = ref.split("#", 1)
        if frag not in ("h0", "h1"):
            raise DataError(f"unknown fragment '#{frag}' in {ref}")
        wave = read_wav(file_part)
        mid = len(wave) // 2
        if mid == 0:
            raise DataError(f"{file_part}: too short to halve")
        samples = wave.samples[:mid] if frag == "h0" else wave.samples[mid:]
        return Waveform(samples, wave.sample_rate)
    return read_wav(ref)


# -- synthetic fixtures ----------------------------------------------------------


def _tone_bank(rng: np.random.Generator, t: np.ndarray, n_tones: int) -> np.ndarray:
    freqs = rng.uniform(200.0, 3800.0, size=n_tones)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_tones)
    amps = rng.uniform(0.4, 1.0, size=n_tones)
    sig = np.zeros_like(t)
    for f, ph, a in zip(freqs, phases, amps):
        sig += a * np.sin(2.0 * np.pi * f * t + ph)
    return sig


def _clean_signal(kind: str, rng: np.random.Generator, t: np.ndarray) -> np.ndarray:
    if kind == "sine_mix":
        sig = _tone_bank(rng, t, 3)
    elif kind == "multitone_mix":
        sig = _tone_bank(rng, t, 6)
    elif kind == "chirp_mix":
        f0 = rng.uniform(200.0, 1200.0)
        f1 = rng.uniform(2000.0, 3800.0)
        dur = t[-1] if len(t) > 1 else 1.0
        sig = np.sin(2.0 * np.pi * (f0 * t + (f1 - f0) * t ** 2 / (2.0 * dur)))
    else:
        raise DataError(f"unknown fixture kind '{kind}' (expected {FIXTURE_KINDS})")
    # slow amplitude modulation so the tonal content is not constant-power
    rate = rng.uniform(1.0, 3.0)
    envelope = 0.55 + 0.45 * np.sin(2.0 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
    sig = sig * envelope
    return 0.5 * sig / np.max(np.abs(sig))


@dataclass
class MixtureExample:
    """A clean/interference pair mixed at a known SNR, featurised once."""

    utterance_id: str
    clean: Waveform
    interference: Waveform          # scaled to the mixing level
    mixture: Waveform
    snr_db: float
    noisy_spec: Spectrogram
    noisy_mag: np.ndarray           # [T, bins]
    clean_mag: np.ndarray
    irm_target: np.ndarray

    @classmethod
    def build(cls, utterance_id: str, clean: Waveform, noise: Waveform,
              snr_db: float, cfg: StftConfig) -> "MixtureExample":
        mixture, scaled_noise = mix_at_snr(clean, noise, snr_db)
        noisy_spec = stft(mixture, cfg)
        clean_spec = stft(clean, cfg)
        noise_spec = stft(scaled_noise, cfg)
        clean_mag = clean_spec.magnitude()
        return cls(
            utterance_id=utterance_id,
            clean=clean,
            interference=scaled_noise,
            mixture=mixture,
            snr_db=snr_db,
            noisy_spec=noisy_spec,
            noisy_mag=noisy_spec.magnitude(),
            clean_mag=clean_mag,
            irm_target=irm(clean_mag, noise_spec.magnitude()),
        )


def synth_fixture(kind: str, seed: int, snr_db: float = 0.0,
                  cfg: StftConfig | None = None,
                  duration: float | None = None) -> MixtureExample:
    """Deterministic synthetic mixture: tonal clean content below 4 kHz plus
    full-band white interference, 1-2 s at 16 kHz."""
    cfg = cfg or StftConfig()
    rng = np.random.default_rng((zlib.crc32(kind.encode()) & 0xFFFF) * 100003 + seed)
    dur = duration if duration is not None else float(rng.uniform(1.0, 2.0))
    if dur < 1.0 - 1e-9:
        raise DataError(f"fixture duration must be >= 1 s, got {dur}")
    n = int(round(dur * cfg.sample_rate))
    t = np.arange(n) / cfg.sample_rate
    clean = Waveform(_clean_signal(kind, rng, t), cfg.sample_rate)
    noise = Waveform(0.3 * rng.standard_normal(n), cfg.sample_rate)
    return MixtureExample.build(f"{kind}-{seed}", clean, noise, snr_db, cfg)


def fixture_manifest(count: int, snrs=(-5.0, 0.0, 5.0), seed: int = 0,
                     dev_count: int = 0) -> Manifest:
    """Manifest of `fixture:` pseudo-records cycling over the three kinds."""
    records = []
    for i in range(count + dev_count):
        kind = FIXTURE_KINDS[i % len(FIXTURE_KINDS)]
        # stride the SNR cycle so every kind sees every level
        snr = float(snrs[(i // len(FIXTURE_KINDS)) % len(snrs)])
        split = "train" if i < count else "dev"
        records.append(ManifestRecord(
            utterance_id=f"{kind}-{seed + i}",
            clean_path=f"fixture:{kind}:{seed + i}",
            interference_path=f"fixture:{kind}:{seed + i}",
            snr_db=snr,
            split=split,
        ))
    return Manifest(records=records, seed=seed)


def load_example(record: ManifestRecord, cfg: StftConfig,
                 fixture_duration: float | None = None) -> MixtureExample:
    if record.clean_path.startswith("fixture:"):
        parts = record.clean_path.split(":")
        if len(parts) != 3:
            raise DataError(f"bad fixture reference '{record.clean_path}'")
        _, kind, seed = parts
        ex = synth_fixture(kind, int(seed), record.snr_db, cfg,
                           duration=fixture_duration)
        return ex
    clean = load_audio_ref(record.clean_path)
    noise = load_audio_ref(record.interference_path)
    return MixtureExample.build(record.utterance_id, clean, noise,
                                record.snr_db, cfg)


# -- segmentation ----------------------------------------------------------------


@dataclass
class Segment:
    """A fixed-length window of an example's feature maps.

    `valid` counts the real frames; a zero-padded tail (valid < frames) is
    flagged so the padded rows never enter the loss.
    """

    utterance_id: str
    noisy_mag: np.ndarray
    clean_mag: np.ndarray
    irm_target: np.ndarray
    valid: int

    @property
    def padded(self) -> bool:
        return self.valid < self.noisy_mag.shape[0]


def segment_example(ex: MixtureExample, frames: int) -> list:
    """Chop an example into non-overlapping `frames`-long segments,
    zero-padding the final partial window."""
    if frames < 1:
        raise ValueError(f"segment length must be >= 1, got {frames}")
    total = ex.noisy_mag.shape[0]
    segments = []
    for start in range(0, total, frames):
        stop = min(start + frames, total)
        valid = stop - start
        pad = frames - valid

        def cut(arr):
            part = arr[start:stop]
            if pad:
                part = np.pad(part, ((0, pad), (0, 0)))
            return part

        segments.append(Segment(
            utterance_id=ex.utterance_id,
            noisy_mag=cut(ex.noisy_mag),
            clean_mag=cut(ex.clean_mag),
            irm_target=cut(ex.irm_target),
            valid=valid,
        ))
    return segments


class Dataset:
    """Examples + segments for the training loop, built from a manifest."""

    def __init__(self, manifest: Manifest, stft_cfg: StftConfig, frames: int,
                 fixture_duration: float | None = None):
        self.manifest = manifest
        self.stft_cfg = stft_cfg
        self.frames = frames
        self.fixture_duration = fixture_duration
        self._examples: dict[str, list] = {}

    def examples(self, split: str) -> list:
        if split not in self._examples:
            records = self.manifest.split(split)
            self._examples[split] = [
                load_example(r, self.stft_cfg, self.fixture_duration)
                for r in records
            ]
        return self._examples[split]

    def segments(self, split: str) -> list:
        out = []
        for ex in self.examples(split):
            out.extend(segment_example(ex, self.frames))
        return out
