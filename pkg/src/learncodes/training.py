"""Alternating encoder/decoder training with an SNR mixture and plateau decay."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .channels import ChannelSpec, NoiseStream, apply_channel
from .conv import all_messages, parse_rate
from .errors import ConfigurationError, DivergenceError, UsageError
from .neural import (
    CALIBRATION_BLOCKS,
    ModelParams,
    apply_power_constraint,
    calibrate_power,
    decode,
    encode,
    encoder_raw,
)
from .neural import (
    init_model as _init_model,
)

# train-SNR intervals (dB) keyed by 1/rate
TRAIN_SNR_RANGES = {2: (0.0, 8.0), 3: (-1.0, 2.0), 4: (-2.0, 2.0)}
DEFAULT_EPOCHS = {"channel_ae": 250, "learn": 120}
DEFAULT_LAMBDA = {"channel_ae": 0.001, "learn": 0.0}
MAX_REG_WINDOW = 12

# stream tags for NoiseStream keys
_DEC, _ENC, _TEST, _TEST_NOISE, _SNR = 1, 2, 3, 4, 5


@dataclass
class TrainConfig:
    batch_size: int = 1000
    epochs: int | None = None           # None -> per-architecture default
    batches_per_epoch: int = 100
    lr: float = 1e-3
    lr_decay: float = 0.1
    plateau_patience: int = 10
    plateau_tol: float = 1e-4
    optimizer: str = "adam"
    loss: str = "bce"
    dec_steps: int = 5
    enc_steps: int = 1
    snr_range: tuple | None = None      # None -> rate default
    reg_lambda: float | None = None     # None -> per-architecture default
    reg_window: int = 10
    test_batches: int = 10
    probe_snr: float | None = None      # None -> midpoint of the train range
    calibration_blocks: int = CALIBRATION_BLOCKS
    divergence_factor: float = 10.0
    divergence_patience: int = 5
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.batch_size < 2:
            raise ConfigurationError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.dec_steps < 1 or self.enc_steps < 1 or self.dec_steps < self.enc_steps:
            raise ConfigurationError("step ratio must satisfy dec_steps >= enc_steps >= 1")
        if self.epochs is not None and self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.batches_per_epoch < 1 or self.test_batches < 1:
            raise ConfigurationError("batches_per_epoch and test_batches must be >= 1")
        if not self.lr > 0 or not 0 < self.lr_decay < 1:
            raise ConfigurationError("need lr > 0 and 0 < lr_decay < 1")
        if self.optimizer != "adam":
            raise ConfigurationError(f"unsupported optimizer {self.optimizer!r}")
        if self.loss not in ("bce", "mse"):
            raise ConfigurationError(f"loss must be 'bce' or 'mse', got {self.loss!r}")
        if self.snr_range is not None:
            lo, hi = self.snr_range
            if lo > hi:
                raise ConfigurationError(f"snr_range {self.snr_range} is reversed")
        if self.reg_lambda is not None and self.reg_lambda < 0:
            raise ConfigurationError("reg_lambda must be >= 0")
        return self

    def resolved(self, arch: str, n: int) -> "TrainConfig":
        """Copy with every per-architecture / per-rate default filled in."""
        out = TrainConfig(**asdict(self))
        if out.epochs is None:
            out.epochs = DEFAULT_EPOCHS[arch]
        if out.reg_lambda is None:
            out.reg_lambda = DEFAULT_LAMBDA[arch]
        if out.snr_range is None:
            out.snr_range = snr_range_for(n)
        out.snr_range = (float(out.snr_range[0]), float(out.snr_range[1]))
        if out.probe_snr is None:
            out.probe_snr = 0.5 * (out.snr_range[0] + out.snr_range[1])
        return out.validate()

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["snr_range"] is not None:
            d["snr_range"] = list(d["snr_range"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown training keys {sorted(unknown)}")
        d = dict(d)
        if d.get("snr_range") is not None:
            d["snr_range"] = tuple(float(v) for v in d["snr_range"])
        return cls(**d)


def snr_range_for(rate) -> tuple[float, float]:
    n = parse_rate(rate) if not isinstance(rate, int) else rate
    if n not in TRAIN_SNR_RANGES:
        raise ConfigurationError(f"no default train-SNR range for rate 1/{n}")
    return TRAIN_SNR_RANGES[n]


def sample_train_snr(rate, rng, snr_range: tuple | None = None) -> float:
    """Uniform dB draw from the rate's training interval (or ``snr_range``)."""
    lo, hi = snr_range if snr_range is not None else snr_range_for(rate)
    gen = rng.rng if isinstance(rng, NoiseStream) else rng
    if lo == hi:
        return float(lo)
    return float(gen.uniform(lo, hi))


@dataclass
class TrainHistory:
    epoch: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    test_loss: list = field(default_factory=list)
    probe_ber: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    wall_clock: list = field(default_factory=list)
    initial_test_loss: float | None = None

    COLUMNS = ("epoch", "train_loss", "test_loss", "probe_ber", "lr")

    def append(self, epoch, train_loss, test_loss, probe_ber, lr, wall):
        if self.epoch and epoch <= self.epoch[-1]:
            raise UsageError("history epochs must increase")
        self.epoch.append(int(epoch))
        self.train_loss.append(float(train_loss))
        self.test_loss.append(float(test_loss))
        self.probe_ber.append(float(probe_ber))
        self.lr.append(float(lr))
        self.wall_clock.append(float(wall))

    def __len__(self) -> int:
        return len(self.epoch)

    def rows(self) -> list[tuple]:
        return list(zip(self.epoch, self.train_loss, self.test_loss, self.probe_ber, self.lr))

    def to_csv(self) -> str:
        # wall-clock stays out of the file so reruns are byte-identical
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for row in self.rows():
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())


# --------------------------------------------------------------------------
# loss pieces


def _messages(rng, batch: int, K: int) -> np.ndarray:
    return rng.integers(0, 2, size=(batch, K), dtype=np.int8)


def _recon_loss(kind: str, probs: Tensor, msg: np.ndarray) -> Tensor:
    if kind == "mse":
        return ad.mse_loss(probs, msg.astype(probs.dtype))
    return ad.bce_loss(probs, msg)


def min_distance_regularizer(encoder, L: int, power_mode: str | None = "bitwise") -> Tensor:
    """Minimum squared distance between encodings of all 2^L distinct messages.

    ``encoder`` is a :class:`ModelParams`, a dict of leaf tensors together
    with the model (``(model, tensors)``), or any callable mapping a (B, L)
    bit array to raw (B, L, n) symbols.  Messages start from the zero state
    and are normalized with training-phase statistics over the full
    enumeration batch; ``power_mode=None`` skips normalization.
    """
    if not 1 <= L <= MAX_REG_WINDOW:
        raise UsageError(f"regularizer window L={L} outside [1, {MAX_REG_WINDOW}]: "
                         f"pairwise cost grows as C(2^L, 2)")
    if isinstance(encoder, ModelParams):
        model, tensors = encoder, encoder.tensors()
        fn = lambda m: encoder_raw(tensors, model.config, m)  # noqa: E731
    elif isinstance(encoder, tuple):
        model, tensors = encoder
        fn = lambda m: encoder_raw(tensors, model.config, m)  # noqa: E731
    elif callable(encoder):
        fn = encoder
    else:
        raise UsageError("encoder must be a ModelParams, (model, tensors) or a callable")
    msgs = all_messages(L).astype(np.int8)
    raw = fn(msgs)
    raw = raw if isinstance(raw, Tensor) else Tensor(np.asarray(raw, dtype=np.float64))
    x = raw if power_mode is None else apply_power_constraint(raw, power_mode, "train")
    flat = ad.reshape(x, (x.shape[0], -1))
    return ad.min_pairwise_sq_distance(flat)


def _check_finite(loss: Tensor, what: str, seed_key: tuple) -> float:
    value = float(loss.data)
    if not math.isfinite(value):
        raise DivergenceError(f"non-finite {what} loss ({value}) at batch stream {seed_key}",
                              batch_seed=seed_key)
    return value


def _forward_loss(model: ModelParams, tensors: dict, msg, spec: ChannelSpec, rng, kind: str):
    x = encode(model, msg, "train", tensors)
    noise = apply_channel(np.zeros(x.shape, dtype=x.data.dtype), spec, rng)
    y = x + Tensor(noise)
    probs = decode(model, y, tensors)
    return _recon_loss(kind, probs, msg), probs


def _step(model: ModelParams, prefix: str, msg, spec, rng, kind: str, state: ad.AdamState,
          seed_key: tuple, reg: tuple | None = None) -> float:
    tensors = model.tensors(trainable=prefix)
    with ad.Tape() as tape:
        loss, _ = _forward_loss(model, tensors, msg, spec, rng, kind)
        total = loss
        if reg is not None:
            lam, L = reg
            d = min_distance_regularizer((model, tensors), L, model.config.power
                                         if model.config.power != "hard_tanh" else None)
            total = loss - Tensor(np.asarray(lam, dtype=loss.data.dtype)) * d
    value = _check_finite(total, "decoder" if prefix == "dec." else "encoder", seed_key)
    grads = ad.backward(tape, total)
    names = model.names(prefix)
    leaves = {k: tensors[k] for k in names}
    ad.adam_step({k: model.arrays[k] for k in names},
                 {k: grads.get(leaves[k], np.zeros_like(model.arrays[k])) for k in names}, state)
    return value


def train_decoder_step(model: ModelParams, msg, channel: ChannelSpec, rng, loss: str = "bce",
                       state: ad.AdamState | None = None, seed_key: tuple = ()) -> float:
    """One Adam step on ``dec.*`` parameters; encoder arrays are untouched."""
    state = state if state is not None else ad.AdamState()
    return _step(model, "dec.", msg, channel, rng, loss, state, seed_key)


def train_encoder_step(model: ModelParams, msg, channel: ChannelSpec, rng, loss: str = "bce",
                       lam: float = 0.0, L: int = 10, state: ad.AdamState | None = None,
                       seed_key: tuple = ()) -> float:
    """One Adam step on ``enc.*`` parameters against reconstruction - lam * d(u_L)."""
    state = state if state is not None else ad.AdamState()
    reg = (lam, L) if lam > 0 else None
    return _step(model, "enc.", msg, channel, rng, loss, state, seed_key, reg)


# --------------------------------------------------------------------------
# epoch loop


@dataclass
class _TestSet:
    msgs: list
    snrs: list


def _make_test_set(cfg: TrainConfig, rate: int, K: int) -> _TestSet:
    rng = NoiseStream(cfg.seed, _TEST).rng
    msgs = [_messages(rng, cfg.batch_size, K) for _ in range(cfg.test_batches)]
    snrs = [sample_train_snr(rate, rng, cfg.snr_range) for _ in range(cfg.test_batches)]
    return _TestSet(msgs, snrs)


def _evaluate(model: ModelParams, test: _TestSet, channel: ChannelSpec, cfg: TrainConfig,
              epoch: int) -> tuple[float, float]:
    tensors = model.tensors()
    losses, errors, bits = [], 0, 0
    for i, msg in enumerate(test.msgs):
        rng = NoiseStream(cfg.seed, _TEST_NOISE, epoch, i).rng
        loss, _ = _forward_loss(model, tensors, msg, channel.at(test.snrs[i]), rng, cfg.loss)
        losses.append(float(loss.data))
        _, probs = _forward_loss(model, tensors, msg, channel.at(cfg.probe_snr), rng, cfg.loss)
        errors += int(np.count_nonzero((probs.data > 0.5) != (msg == 1)))
        bits += msg.size
    return float(np.mean(losses)), errors / bits


def train(config: TrainConfig, channel: ChannelSpec, arch: str | None = None,
          model_config=None, init=None, mode: str = "full",
          on_epoch: Callable | None = None) -> tuple[ModelParams, TrainHistory]:
    """Train a neural code; returns the calibrated model and its history.

    Either ``init`` (a :class:`ModelParams` to continue from) or
    ``model_config`` must be given.  ``mode="decoder_only"`` runs only the
    decoder steps, so encoder arrays keep their exact bytes.
    """
    if mode not in ("full", "decoder_only"):
        raise ConfigurationError(f"training mode must be 'full' or 'decoder_only', got {mode!r}")
    if init is None and model_config is None:
        raise UsageError("train needs a model config or an initial model")
    channel.validate()
    model = init.copy() if init is not None else _init_model(model_config, seed=config.seed)
    mcfg = model.config
    if arch is not None and arch != mcfg.arch:
        raise ConfigurationError(f"arch {arch!r} does not match model config {mcfg.arch!r}")
    cfg = config.resolved(mcfg.arch, mcfg.n)
    rate, K, B = mcfg.n, mcfg.block_length, cfg.batch_size
    reg = cfg.reg_lambda if mode == "full" else 0.0

    dec_state = ad.AdamState(lr=cfg.lr)
    enc_state = ad.AdamState(lr=cfg.lr)
    test = _make_test_set(cfg, rate, K)
    history = TrainHistory()
    history.initial_test_loss, _ = _evaluate(model, test, channel, cfg, 0)
    best, wait, bad = history.initial_test_loss, 0, 0
    lr = cfg.lr

    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        train_losses = []
        for it in range(cfg.batches_per_epoch):
            for s in range(cfg.dec_steps):
                key = (cfg.seed, _DEC, epoch, it, s)
                rng = NoiseStream(*key).rng
                spec = channel.at(sample_train_snr(rate, rng, cfg.snr_range))
                train_losses.append(train_decoder_step(
                    model, _messages(rng, B, K), spec, rng, cfg.loss, dec_state, key))
            if mode == "full":
                for s in range(cfg.enc_steps):
                    key = (cfg.seed, _ENC, epoch, it, s)
                    rng = NoiseStream(*key).rng
                    spec = channel.at(sample_train_snr(rate, rng, cfg.snr_range))
                    train_encoder_step(model, _messages(rng, B, K), spec, rng, cfg.loss,
                                       reg, cfg.reg_window, enc_state, key)
        test_loss, probe_ber = _evaluate(model, test, channel, cfg, epoch)
        history.append(epoch, np.mean(train_losses), test_loss, probe_ber, lr,
                       time.perf_counter() - start)
        if on_epoch is not None:
            on_epoch(epoch, history)

        if not math.isfinite(test_loss):
            raise DivergenceError(f"test loss became non-finite at epoch {epoch}", history)
        bad = bad + 1 if test_loss > cfg.divergence_factor * history.initial_test_loss else 0
        if bad >= cfg.divergence_patience:
            raise DivergenceError(
                f"test loss above {cfg.divergence_factor}x its initial value for "
                f"{bad} epochs", history)
        if test_loss < best - cfg.plateau_tol:
            best, wait = test_loss, 0
        else:
            wait += 1
            if wait >= cfg.plateau_patience:
                lr *= cfg.lr_decay
                dec_state.lr = enc_state.lr = lr
                wait = 0

    if mode == "decoder_only" and init is not None and init.power.frozen:
        model.power = init.copy().power
    else:
        model = calibrate_power(model, cfg.calibration_blocks, seed=cfg.seed)
    model.lineage = dict(model.lineage)
    model.lineage["training"] = {"mode": mode, "channel": channel.to_dict(),
                                 "config": cfg.to_dict(), "epochs_run": len(history)}
    return model, history
