"""Frequency-band-aware axial-attention U-Transformer for single-channel
speech enhancement, on a self-contained numpy autodiff core."""

from .attention import (AxialAttention, FATAttentionBlock, TFAttentionBlock,
                        band_join, band_split, effective_heads,
                        scaled_dot_product)
from .data import (Dataset, DataError, Manifest, ManifestRecord,
                   MixtureExample, Segment, fixture_manifest, load_example,
                   scan_dataset, segment_example, synth_fixture)
from .metrics import MetricReport, fwsnrseg, stoi
from .model import ModelConfig, UTransformer, init_model
from .signal import (Spectrogram, StftConfig, Waveform, irm, istft,
                     measure_snr, mix_at_snr, read_wav, reconstruct, stft,
                     write_pgm, write_wav)
from .tensor import Adam, Module, Tensor, no_grad
from .train import (Checkpoint, CheckpointError, NumericalAbort, TrainConfig,
                    evaluate, load_checkpoint, model_from_checkpoint,
                    predict_mask, restore_model, save_checkpoint, train_loop)

__version__ = "0.1.0"

__all__ = [
    "Adam", "AxialAttention", "Checkpoint", "CheckpointError", "DataError",
    "Dataset", "FATAttentionBlock", "Manifest", "ManifestRecord",
    "MetricReport", "MixtureExample", "ModelConfig", "Module",
    "NumericalAbort", "Segment", "Spectrogram", "StftConfig",
    "TFAttentionBlock", "Tensor", "TrainConfig", "UTransformer", "Waveform",
    "band_join", "band_split", "effective_heads", "evaluate",
    "fixture_manifest", "fwsnrseg", "init_model", "irm", "istft",
    "load_checkpoint", "load_example", "measure_snr", "mix_at_snr",
    "model_from_checkpoint", "no_grad", "predict_mask", "read_wav",
    "reconstruct", "restore_model", "save_checkpoint", "scaled_dot_product",
    "scan_dataset", "segment_example", "stft", "stoi", "synth_fixture",
    "train_loop", "write_pgm", "write_wav",
]
