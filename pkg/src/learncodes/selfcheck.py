"""Built-in verification suites shared by the ``selfcheck`` command and the tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import GruLayerParams, Tensor, check_gradients
from .channels import ChannelSpec, NoiseStream, apply_channel
from .conv import (
    ConvCodeSpec,
    ConvEncoder,
    Metric,
    all_messages,
    bpsk_modulate,
    ml_decode_bruteforce,
    viterbi_decode,
)

GRAD_TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    value: float
    passed: bool


def _grad_cases(rng: np.random.Generator) -> dict:
    """Case name -> (scalar function of tensors, input arrays)."""
    r = lambda *s: rng.standard_normal(s)  # noqa: E731
    pos = lambda *s: rng.uniform(0.5, 2.0, s)  # noqa: E731
    w = lambda x: ad.tsum(x * Tensor(np.linspace(-1.0, 1.5, x.size).reshape(x.shape)))  # noqa: E731
    gru = ad.init_gru(rng, 2, 3, np.float64)
    bits = rng.random((3, 4)) < 0.5
    return {
        "add(broadcast)": (lambda a, b: w(a + b), [r(3, 4), r(4)]),
        "sub(broadcast)": (lambda a, b: w(a - b), [r(3, 1), r(1, 4)]),
        "mul": (lambda a, b: w(a * b), [r(3, 4), r(3, 4)]),
        "div": (lambda a, b: w(a / b), [r(3, 4), pos(3, 4)]),
        "neg": (lambda a: w(-a), [r(5)]),
        "matmul(2d)": (lambda a, b: w(ad.matmul(a, b)), [r(3, 4), r(4, 2)]),
        "matmul(batched)": (lambda a, b: w(ad.matmul(a, b)), [r(2, 3, 4), r(4, 2)]),
        "concat": (lambda a, b: w(ad.concat([a, b], axis=1)), [r(2, 3), r(2, 2)]),
        "stack": (lambda a, b: w(ad.stack([a, b], axis=1)), [r(2, 3), r(2, 3)]),
        "slice(basic)": (lambda a: w(a[:, 1:3]), [r(3, 4)]),
        "slice(fancy)": (lambda a: w(a[:, np.array([0, 2, 2, 1])]), [r(3, 4)]),
        "reshape": (lambda a: w(ad.reshape(a, (4, 3))), [r(3, 4)]),
        "sum(axis)": (lambda a: w(ad.tsum(a, axis=0)), [r(3, 4)]),
        "mean(keepdims)": (lambda a: w(ad.mean(a, axis=1, keepdims=True)), [r(3, 4)]),
        "sigmoid": (lambda a: w(ad.sigmoid(a)), [r(3, 4)]),
        "tanh": (lambda a: w(ad.tanh(a)), [r(3, 4)]),
        "sqrt": (lambda a: w(ad.sqrt(a)), [pos(3, 4)]),
        "square": (lambda a: w(ad.square(a)), [r(3, 4)]),
        "log": (lambda a: w(ad.log(a)), [pos(3, 4)]),
        "clip": (lambda a: w(ad.clip(a, -0.5, 0.5)), [np.array([-1.3, -0.2, 0.1, 0.4, 0.9])]),
        "min_pairwise_sq_distance": (lambda a: ad.min_pairwise_sq_distance(a), [r(5, 3)]),
        "bce": (lambda a: ad.bce_loss(ad.sigmoid(a), bits), [r(3, 4)]),
        "mse": (lambda a: ad.mse_loss(a, np.ones((3, 4))), [r(3, 4)]),
        "gru_sequence": (
            lambda x, W, U, b, h: w(ad.gru_sequence(x, W, U, b, h)),
            [r(2, 4, 2), gru["W"], gru["U"], r(9) * 0.1, r(2, 3)]),
        "gru_sequence(reverse)": (
            lambda x, W, U, b, h: w(ad.gru_sequence(x, W, U, b, h, reverse=True)),
            [r(2, 4, 2), gru["W"], gru["U"], r(9) * 0.1, r(2, 3)]),
        "gru_cell": (
            lambda x, W, U, b, h: w(ad.gru_cell(GruLayerParams(W, U, b), x, h)),
            [r(2, 2), gru["W"], gru["U"], r(9) * 0.1, r(2, 3)]),
    }


def stack_case(rng: np.random.Generator, fused: bool = True):
    """2-layer GRU + dense + BCE network with under 10^3 parameters."""
    l0 = ad.init_gru(rng, 1, 6, np.float64)
    l1 = ad.init_gru(rng, 6, 6, np.float64)
    dw = ad.init_dense(rng, 6, 1, np.float64)
    x = rng.standard_normal((3, 5, 1))
    target = (rng.random((3, 5)) < 0.5).astype(np.float64)

    def fn(W0, U0, b0, W1, U1, b1, Wd, bd):
        h, _ = ad.gru_forward(GruLayerParams(W0, U0, b0), Tensor(x), fused=fused)
        h, _ = ad.gru_forward(GruLayerParams(W1, U1, b1), h, fused=fused)
        p = ad.sigmoid(ad.dense(h, Wd, bd))
        return ad.bce_loss(ad.reshape(p, (3, 5)), target)

    arrays = [l0["W"], l0["U"], l0["b"] + 0.05, l1["W"], l1["U"], l1["b"] - 0.05,
              dw["W"], dw["b"]]
    return fn, arrays


def gradient_suite(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    for name, (fn, arrays) in _grad_cases(rng).items():
        err = check_gradients(fn, arrays)
        out.append(CheckResult(name, err, err <= GRAD_TOLERANCE))
    for fused in (True, False):
        fn, arrays = stack_case(rng, fused)
        err = check_gradients(fn, arrays)
        label = "2-layer GRU + dense + BCE" + ("" if fused else " (composite cells)")
        out.append(CheckResult(label, err, err <= GRAD_TOLERANCE))
    return out


def viterbi_oracle_suite(K: int = 12, realizations: int = 10, snr_db: float = 1.0,
                         seed: int = 0) -> CheckResult:
    """Full-window Viterbi vs. brute-force ML on every K-bit message."""
    spec = ConvCodeSpec.from_octal(("5", "7"), "7", m=2)
    msgs = all_messages(K)
    x = bpsk_modulate(ConvEncoder(spec).encode(msgs))
    channel = ChannelSpec("awgn", snr_db)
    metric = Metric.matched(channel)
    mismatches = 0
    for r in range(realizations):
        y = apply_channel(x, channel, NoiseStream(seed, 0x0AC1, r))
        a = viterbi_decode(y, spec, metric)
        b = ml_decode_bruteforce(y, spec, metric)
        mismatches += int(np.count_nonzero(np.any(a != b, axis=1)))
    return CheckResult(f"viterbi == brute-force ML (K={K}, {realizations}x{len(msgs)} blocks)",
                       float(mismatches), mismatches == 0)


def run_all(quick: bool = True) -> list[CheckResult]:
    results = gradient_suite()
    results.append(viterbi_oracle_suite(K=8 if quick else 12, realizations=2 if quick else 10))
    return results
