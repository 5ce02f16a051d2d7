"""Runtime self-checks: gradient integrity, attention oracles, signal
round trips.  These re-run the dual-route verifications (fast path vs
independent oracle / finite differences) on small instances so a user can
validate an installation without the test suite."""

from __future__ import annotations

import time

import numpy as np

from . import tensor as tc
from .attention import AxialAttention, band_join, band_split, scaled_dot_product
from .gradcheck import finite_difference_check
from .model import ModelConfig, init_model
from .reference import axial_reference, sdp_reference
from .signal import StftConfig, Waveform, cola_profile, irm, istft, measure_snr, mix_at_snr, stft
from .tensor import Adam, Tensor

CORRUPTIBLE = "axial-attention-grad"


def _check_matmul_grad(_):
    rng = np.random.default_rng(11)
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True, dtype=np.float64)
    b = Tensor(rng.standard_normal((4, 5)), requires_grad=True, dtype=np.float64)
    err = finite_difference_check(lambda: tc.tsum(tc.mul(tc.matmul(a, b),
                                                         tc.matmul(a, b))), [a, b])
    return err < 1e-6, f"max rel err {err:.2e}"


def _check_softmax_grad(_):
    rng = np.random.default_rng(12)
    x = Tensor(rng.standard_normal((5, 7)), requires_grad=True, dtype=np.float64)
    w = Tensor(rng.standard_normal((5, 7)), dtype=np.float64)
    err = finite_difference_check(lambda: tc.tsum(tc.mul(tc.softmax(x, axis=-1), w)),
                                  [x])
    return err < 1e-6, f"max rel err {err:.2e}"


def _check_layer_norm_grad(_):
    rng = np.random.default_rng(13)
    x = Tensor(rng.standard_normal((4, 6)), requires_grad=True, dtype=np.float64)
    g = Tensor(rng.standard_normal(6), requires_grad=True, dtype=np.float64)
    b = Tensor(rng.standard_normal(6), requires_grad=True, dtype=np.float64)
    y = lambda: tc.tsum(tc.mul(tc.layer_norm(x, g, b), tc.layer_norm(x, g, b)))
    err = finite_difference_check(y, [x, g, b])
    return err < 1e-5, f"max rel err {err:.2e}"


def _check_conv2d_grad(_):
    rng = np.random.default_rng(14)
    x = Tensor(rng.standard_normal((2, 5, 6)), requires_grad=True, dtype=np.float64)
    k = Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True, dtype=np.float64)
    b = Tensor(rng.standard_normal(3), requires_grad=True, dtype=np.float64)
    err = finite_difference_check(
        lambda: tc.tsum(tc.mul(tc.conv2d(x, k, b), tc.conv2d(x, k, b))), [x, k, b])
    return err < 1e-5, f"max rel err {err:.2e}"


def _check_gru_grad(_):
    rng = np.random.default_rng(15)
    d_in, d = 3, 4
    x = Tensor(rng.standard_normal((6, 2, d_in)), requires_grad=True, dtype=np.float64)
    mats = {}
    for gate in ("z", "r", "h"):
        mats[f"w{gate}"] = Tensor(0.4 * rng.standard_normal((d_in, d)),
                                  requires_grad=True, dtype=np.float64)
        mats[f"u{gate}"] = Tensor(0.4 * rng.standard_normal((d, d)),
                                  requires_grad=True, dtype=np.float64)
        mats[f"b{gate}"] = Tensor(0.1 * rng.standard_normal(d),
                                  requires_grad=True, dtype=np.float64)

    def run():
        h = Tensor(np.zeros((2, d), dtype=np.float64))
        for t in range(x.shape[0]):
            h = tc.gru_cell(x[t], h, mats["wz"], mats["uz"], mats["bz"],
                            mats["wr"], mats["ur"], mats["br"],
                            mats["wh"], mats["uh"], mats["bh"])
        return tc.tsum(tc.mul(h, h))

    err = finite_difference_check(run, [x, *mats.values()])
    return err < 1e-4, f"max rel err {err:.2e} (BPTT through 6 steps)"


def _check_axial_grad(corrupt: bool):
    rng = np.random.default_rng(16)
    att = AxialAttention(6, 2, 5, rng, dtype=np.float64)
    for _, p in att.named_parameters():
        if p.data.std() == 0:
            p.data = 0.3 * rng.standard_normal(p.shape)
    x = Tensor(rng.standard_normal((5, 6)), requires_grad=True, dtype=np.float64)
    table_params = list(att.table.parameters())
    err = finite_difference_check(lambda: tc.tsum(tc.mul(att(x), att(x))),
                                  [x, *table_params])
    if corrupt:
        # test hook: pretend the positional-table gradient came out wrong
        err += 1.0
    return err < 1e-5, f"max rel err {err:.2e}"


def _check_sdp_oracle(_):
    rng = np.random.default_rng(17)
    worst = 0.0
    for _ in range(5):
        q = rng.standard_normal((6, 3))
        k = rng.standard_normal((6, 3))
        v = rng.standard_normal((6, 4))
        fast = scaled_dot_product(Tensor(q, dtype=np.float64),
                                  Tensor(k, dtype=np.float64),
                                  Tensor(v, dtype=np.float64)).data
        worst = max(worst, float(np.max(np.abs(fast - sdp_reference(q, k, v)))))
    return worst < 1e-6, f"max abs dev {worst:.2e}"


def _check_axial_oracle(_):
    rng = np.random.default_rng(18)
    worst = 0.0
    for _ in range(5):
        att = AxialAttention(8, 2, 6, rng, dtype=np.float64)
        for _, p in att.named_parameters():
            p.data = 0.5 * rng.standard_normal(p.shape)
        x = rng.standard_normal((6, 8))
        fast = att(Tensor(x, dtype=np.float64)).data
        ref = axial_reference(x, att.wq.data, att.wk.data, att.wv.data, att.wo.data,
                              att.table.rq.data, att.table.rk.data, att.table.rv.data)
        worst = max(worst, float(np.max(np.abs(fast - ref))))
    return worst < 1e-6, f"max abs dev {worst:.2e}"


def _check_band_partition(_):
    rng = np.random.default_rng(19)
    x = Tensor(rng.standard_normal((3, 8, 4)), dtype=np.float64)
    low, high = band_split(x)
    joined = band_join(low, high)
    same = np.array_equal(joined.data, x.data)
    return same, "split+join bit-exact" if same else "split+join mismatch"


def _check_stft_roundtrip(_):
    rng = np.random.default_rng(20)
    cfg = StftConfig()
    wave = Waveform(rng.uniform(-0.5, 0.5, 16000), cfg.sample_rate)
    back = istft(stft(wave, cfg))
    n = min(len(wave), len(back))
    lo, hi = cfg.nfft, n - cfg.nfft
    err = wave.samples[lo:hi] - back.samples[lo:hi]
    snr = 10.0 * np.log10(np.mean(wave.samples[lo:hi] ** 2) / np.mean(err ** 2))
    return snr > 50.0, f"round-trip SNR {snr:.1f} dB"


def _check_cola(_):
    prof = cola_profile(StftConfig())
    dev = float(np.max(np.abs(prof - 1.0)))
    return dev < 1e-10, f"max deviation from 1: {dev:.2e}"


def _check_irm(_):
    cases = [
        (1.0, 1.0, np.sqrt(0.5)),
        (1.0, 0.0, 1.0),
        (1.0, np.sqrt(3.0), 0.5),
    ]
    worst = max(abs(float(irm(np.array([[s]]), np.array([[n]]))[0, 0]) - want)
                for s, n, want in cases)
    return worst < 1e-9, f"max abs dev {worst:.2e}"


def _check_mix_snr(_):
    rng = np.random.default_rng(21)
    clean = Waveform(np.sin(2 * np.pi * 440 * np.arange(8000) / 16000.0))
    noise = Waveform(rng.standard_normal(8000))
    worst = 0.0
    for snr in (-5.0, 0.0, 5.0):
        _, scaled = mix_at_snr(clean, noise, snr)
        worst = max(worst, abs(measure_snr(clean, scaled) - snr))
    return worst < 0.01, f"max SNR deviation {worst:.4f} dB"


def _check_adam(_):
    target = np.array([1.5, -2.0, 0.5])
    p = Tensor(np.zeros(3), requires_grad=True, dtype=np.float64)
    opt = Adam({"p": p}, lr=0.05)
    for _ in range(400):
        diff = tc.add(p, Tensor(-target, dtype=np.float64))
        loss = tc.tsum(tc.mul(diff, diff))
        p.grad = None
        loss.backward()
        opt.step()
    dev = float(np.max(np.abs(p.data - target)))
    return dev < 1e-3, f"quadratic minimised to {dev:.2e}"


def _check_model_grad(_):
    cfg = ModelConfig(variant="fat", d_layers=(16, 8, 4, 2),
                      heads_time=2, heads_high=1, heads_low=4,
                      freq_bins=8, frames=4)
    model = init_model(cfg, seed=3, dtype=np.float64)
    rng = np.random.default_rng(22)
    mag = np.abs(rng.standard_normal((4, 8)))
    target = rng.uniform(0, 1, (4, 8))

    def run():
        mask = model.forward(mag)
        diff = tc.add(mask, Tensor(-target, dtype=np.float64))
        return tc.tmean(tc.mul(diff, diff))

    err = finite_difference_check(run, list(model.parameter_dict().values()),
                                  sample=12, rng=rng)
    return err < 1e-3, f"max rel err {err:.2e} (12 sampled params)"


CHECKS = [
    ("matmul-grad", _check_matmul_grad),
    ("softmax-grad", _check_softmax_grad),
    ("layer-norm-grad", _check_layer_norm_grad),
    ("conv2d-grad", _check_conv2d_grad),
    ("gru-bptt-grad", _check_gru_grad),
    ("axial-attention-grad", _check_axial_grad),
    ("sdp-oracle", _check_sdp_oracle),
    ("axial-oracle", _check_axial_oracle),
    ("band-partition", _check_band_partition),
    ("stft-roundtrip", _check_stft_roundtrip),
    ("cola", _check_cola),
    ("irm-analytic", _check_irm),
    ("mix-snr", _check_mix_snr),
    ("adam-descent", _check_adam),
    ("model-end-to-end-grad", _check_model_grad),
]


def run_verification(corrupt: str | None = None, log=print) -> bool:
    """Run every self-check; returns True only if all pass.

    `corrupt` names a check whose measurement is deliberately damaged (test
    hook for the failure path); only `axial-attention-grad` supports it.
    """
    if corrupt is not None and corrupt != CORRUPTIBLE:
        raise ValueError(f"corruption hook supports only '{CORRUPTIBLE}'")
    all_ok = True
    for name, fn in CHECKS:
        start = time.perf_counter()
        ok, detail = fn(corrupt == name)
        elapsed = time.perf_counter() - start
        all_ok &= ok
        log(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail} ({elapsed:.2f}s)")
    return all_ok
