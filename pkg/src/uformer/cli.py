"""Command-line front end: train, enhance, evaluate, verify.

Configuration is a line-oriented ``key = value`` file; every key has a
default, unknown keys are rejected.  Exit codes: 0 success, 1 verification
failure, 2 configuration error, 3 data error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .data import DataError, Dataset, Manifest, fixture_manifest, scan_dataset
from .model import ModelConfig, init_model
from .signal import StftConfig, read_wav, reconstruct, stft, write_pgm, write_wav
from .train import (CheckpointError, NumericalAbort, TrainConfig, evaluate,
                    history_csv, load_checkpoint, model_from_checkpoint,
                    predict_mask, train_loop)
from .verify import CORRUPTIBLE, run_verification


class ConfigError(ValueError):
    """Bad config file, unknown key, or invalid value."""


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"expected a boolean, got '{s}'")


def _parse_int_list(s: str) -> tuple:
    try:
        return tuple(int(p) for p in s.split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got '{s}'") from None


def _parse_float_list(s: str) -> tuple:
    try:
        return tuple(float(p) for p in s.split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got '{s}'") from None


def _parse_opt_int(s: str):
    return None if s.strip().lower() == "none" else int(s)


def _parse_opt_float(s: str):
    return None if s.strip().lower() == "none" else float(s)


@dataclass
class RunConfig:
    """Merged view of the model / STFT / training / data settings."""

    # model
    variant: str = "fat"
    d_layers: tuple = (64, 32, 16, 8)
    heads_time: int = 8
    heads_high: int = 2
    heads_low: int = 16
    frames: int = 64
    span: int | None = None
    scale_by_dk: bool = False
    # stft
    sample_rate: int = 16000
    nfft: int = 512
    hop: int = 256
    # training
    lr: float = 8e-4
    epochs: int = 100
    batch_size: int = 4
    seed: int = 0
    loss_kind: str = "magnitude_mse"
    clip_norm: float = 5.0
    checkpoint_every: int = 1
    # data
    snrs: tuple = (-5.0, 0.0, 5.0)
    fixture_count: int = 6
    fixture_dev_count: int = 2
    fixture_duration: float | None = None

    def model_config(self) -> ModelConfig:
        cfg = ModelConfig(
            variant=self.variant,
            d_layers=tuple(self.d_layers),
            heads_time=self.heads_time,
            heads_high=self.heads_high,
            heads_low=self.heads_low,
            freq_bins=self.nfft // 2,
            frames=self.frames,
            span=self.span,
            scale_by_dk=self.scale_by_dk,
        )
        cfg.validate()
        return cfg

    def stft_config(self) -> StftConfig:
        return StftConfig(sample_rate=self.sample_rate, nfft=self.nfft, hop=self.hop)

    def train_config(self) -> TrainConfig:
        cfg = TrainConfig(
            lr=self.lr,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            loss_kind=self.loss_kind,
            clip_norm=self.clip_norm,
            checkpoint_every=self.checkpoint_every,
        )
        cfg.validate()
        return cfg


_PARSERS = {
    "variant": str,
    "d_layers": _parse_int_list,
    "heads_time": int,
    "heads_high": int,
    "heads_low": int,
    "frames": int,
    "span": _parse_opt_int,
    "scale_by_dk": _parse_bool,
    "sample_rate": int,
    "nfft": int,
    "hop": int,
    "lr": float,
    "epochs": int,
    "batch_size": int,
    "seed": int,
    "loss_kind": str,
    "clip_norm": float,
    "checkpoint_every": int,
    "snrs": _parse_float_list,
    "fixture_count": int,
    "fixture_dev_count": int,
    "fixture_duration": _parse_opt_float,
}

assert set(_PARSERS) == {f.name for f in fields(RunConfig)}


def apply_setting(cfg: RunConfig, key: str, raw: str, where: str) -> None:
    if key not in _PARSERS:
        raise ConfigError(f"{where}: unknown config key '{key}'")
    try:
        value = _PARSERS[key](raw)
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(f"{where}: bad value '{raw}' for key '{key}'") from None
    setattr(cfg, key, value)


def load_run_config(path, overrides=()) -> RunConfig:
    """Defaults <- config file (if any) <- key=value overrides."""
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        for ln, line in enumerate(p.read_text().splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{p}:{ln}: expected 'key = value', got '{stripped}'")
            key, raw = stripped.split("=", 1)
            apply_setting(cfg, key.strip(), raw.strip(), where=f"{p}:{ln}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got '{item}'")
        key, raw = item.split("=", 1)
        apply_setting(cfg, key.strip(), raw.strip(), where="--set")
    return cfg


def _threads_from_env() -> int:
    raw = os.environ.get("UFORMER_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"UFORMER_THREADS must be an integer, got '{raw}'") from None
    if n < 1:
        raise ConfigError(f"UFORMER_THREADS must be >= 1, got {n}")
    return n


# -- subcommands -------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.set or ())
    if args.seed is not None:
        cfg.seed = args.seed
    if args.epochs is not None:
        cfg.epochs = args.epochs

    sources = sum([bool(args.fixtures), args.clean_dir is not None,
                   args.manifest is not None])
    if sources != 1:
        raise ConfigError(
            "exactly one data source required: --fixtures, --manifest, "
            "or --clean-dir with --noise-dir"
        )
    if (args.clean_dir is None) != (args.noise_dir is None):
        raise ConfigError("--clean-dir and --noise-dir go together")

    if args.fixtures:
        manifest = fixture_manifest(cfg.fixture_count, snrs=cfg.snrs,
                                    seed=cfg.seed, dev_count=cfg.fixture_dev_count)
    elif args.manifest is not None:
        manifest = Manifest.load(args.manifest)
    else:
        manifest = scan_dataset(args.clean_dir, args.noise_dir,
                                snrs=cfg.snrs, seed=cfg.seed)

    stft_cfg = cfg.stft_config()
    model_cfg = cfg.model_config()
    train_cfg = cfg.train_config()
    dataset = Dataset(manifest, stft_cfg, model_cfg.frames,
                      fixture_duration=cfg.fixture_duration)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest.save(out_dir / "manifest.tsv")

    model = init_model(model_cfg, seed=cfg.seed)
    resume = load_checkpoint(args.resume) if args.resume else None
    history = train_loop(model, dataset, train_cfg, out_dir=out_dir,
                         resume=resume, log=print)
    (out_dir / "history.csv").write_text(history_csv(history))
    print(f"wrote {out_dir / 'history.csv'} ({len(history)} steps)")
    return 0


def _load_model(args):
    """(model_or_None, stft_cfg) from --checkpoint / --identity-mask."""
    if args.identity_mask:
        cfg = load_run_config(getattr(args, "config", None),
                              getattr(args, "set", None) or ())
        return None, cfg.stft_config()
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required (or pass --identity-mask)")
    ck = load_checkpoint(args.checkpoint)
    return model_from_checkpoint(ck), StftConfig.from_dict(ck.stft_cfg)


def cmd_enhance(args) -> int:
    model, stft_cfg = _load_model(args)
    noisy = read_wav(args.wav_in, expect_rate=stft_cfg.sample_rate)
    spec = stft(noisy, stft_cfg)
    if model is None:
        mask = np.ones((spec.n_frames, stft_cfg.bins))
    else:
        mask = predict_mask(model, spec.magnitude())
    enhanced = reconstruct(spec, mask)
    write_wav(args.wav_out, enhanced)
    if args.emit_spectrograms:
        img_dir = Path(args.emit_spectrograms)
        img_dir.mkdir(parents=True, exist_ok=True)
        write_pgm(img_dir / "noisy.pgm", spec.magnitude())
        write_pgm(img_dir / "enhanced.pgm", mask * spec.magnitude())
        print(f"wrote spectrograms to {img_dir}")
    print(f"wrote {args.wav_out} "
          f"({len(enhanced)} samples at {enhanced.sample_rate} Hz)")
    return 0


def cmd_evaluate(args) -> int:
    rc = load_run_config(args.config, args.set or ())
    model, stft_cfg = _load_model(args)
    manifest = Manifest.load(args.manifest)
    frames = model.cfg.frames if model is not None else rc.frames
    dataset = Dataset(manifest, stft_cfg, frames,
                      fixture_duration=rc.fixture_duration)
    report = evaluate(model, dataset, args.split, threads=_threads_from_env())

    stoi_mean, fw_mean = report.mean(unprocessed=False)
    raw_stoi, raw_fw = report.mean(unprocessed=True)
    report.add("mean", float("nan"), stoi_mean, fw_mean)
    report.add("mean:unprocessed", float("nan"), raw_stoi, raw_fw)

    csv_text = report.to_csv()
    if args.out:
        Path(args.out).write_text(csv_text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(csv_text)
    label = "identity mask" if model is None else "enhanced"
    print(f"{label}:    STOI {100.0 * stoi_mean:.1f}%  fwSNRseg {fw_mean:.2f} dB")
    print(f"unprocessed: STOI {100.0 * raw_stoi:.1f}%  fwSNRseg {raw_fw:.2f} dB")
    return 0


def cmd_verify(args) -> int:
    ok = run_verification(corrupt=args.corrupt, log=print)
    print("verification PASSED" if ok else "verification FAILED")
    return 0 if ok else 1


# -- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uformer",
        description="Frequency-band-aware axial-attention speech enhancer.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="train a model on fixtures or WAV dirs")
    tr.add_argument("--config", help="key = value config file")
    tr.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="override one config key (repeatable)")
    tr.add_argument("--fixtures", action="store_true",
                    help="train on deterministic synthetic fixtures")
    tr.add_argument("--manifest", help="existing manifest TSV")
    tr.add_argument("--clean-dir", help="directory of clean WAV files")
    tr.add_argument("--noise-dir", help="directory of interference WAV files")
    tr.add_argument("--out", required=True, help="output directory")
    tr.add_argument("--seed", type=int, help="override the config seed")
    tr.add_argument("--epochs", type=int, help="override the config epoch count")
    tr.add_argument("--resume", help="checkpoint to resume from")
    tr.set_defaults(func=cmd_train)

    en = sub.add_parser("enhance", help="denoise one WAV file")
    en.add_argument("--checkpoint", help="trained checkpoint")
    en.add_argument("--identity-mask", action="store_true",
                    help="debug path: all-ones mask instead of a model")
    en.add_argument("--config", help="config file (identity-mask runs only)")
    en.add_argument("--set", action="append", metavar="KEY=VALUE")
    en.add_argument("--in", dest="wav_in", required=True, help="noisy input WAV")
    en.add_argument("--out", dest="wav_out", required=True, help="enhanced output WAV")
    en.add_argument("--emit-spectrograms", metavar="DIR",
                    help="write noisy/enhanced log-magnitude PGM images here")
    en.set_defaults(func=cmd_enhance)

    ev = sub.add_parser("evaluate", help="score a manifest split")
    ev.add_argument("--checkpoint", help="trained checkpoint")
    ev.add_argument("--identity-mask", action="store_true",
                    help="score the unprocessed path through an all-ones mask")
    ev.add_argument("--config", help="config file (identity-mask runs only)")
    ev.add_argument("--set", action="append", metavar="KEY=VALUE")
    ev.add_argument("--manifest", required=True, help="manifest TSV")
    ev.add_argument("--split", default="test", choices=("train", "dev", "test"))
    ev.add_argument("--out", help="CSV output path (default: stdout)")
    ev.set_defaults(func=cmd_evaluate)

    vf = sub.add_parser("verify", help="run the numerical self-check suite")
    vf.add_argument("--corrupt", choices=(CORRUPTIBLE,),
                    help="test hook: damage one check to exercise the failure path")
    vf.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except NumericalAbort as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except (DataError, CheckpointError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
