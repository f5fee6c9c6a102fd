"""Learned code families: Bi-GRU channel autoencoder and low-latency LEARN.

Both map K message bits to a (K, n) block of real symbols and back to K bit
probabilities.  LEARN's encoder is causal and its decoder reads two forward
GRU stacks: one stopped at step t, one run ahead to step t + D.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import GruLayerParams, Tensor
from .conv import parse_rate
from .errors import ConfigurationError, DegenerateEncoderError, InputError, UsageError

POWER_MODES = ("bitwise", "blockwise", "hard_tanh")
FORMAT_VERSION = 1
MAGIC = b"LRNCKPT\x00"
CALIBRATION_BLOCKS = 10_000


@dataclass(frozen=True)
class ChannelAEConfig:
    block_length: int = 100
    n: int = 2
    enc_units: int = 25
    enc_layers: int = 2
    dec_units: int = 100
    dec_layers: int = 2
    power: str = "bitwise"

    arch = "channel_ae"

    def validate(self):
        _check_common(self)
        return self

    def to_dict(self) -> dict:
        return {"arch": self.arch, **asdict(self)}


@dataclass(frozen=True)
class LearnConfig:
    block_length: int = 100
    n: int = 2
    delay: int = 1
    enc_units: int = 25
    enc_layers: int = 2
    dec_units: int = 100
    dec_layers: int = 2
    power: str = "bitwise"

    arch = "learn"

    def validate(self):
        _check_common(self)
        if self.delay < 0:
            raise ConfigurationError(f"LEARN delay must be >= 0, got {self.delay}")
        if self.power == "blockwise":
            raise ConfigurationError("blockwise normalization mixes positions and breaks causality")
        return self

    def to_dict(self) -> dict:
        return {"arch": self.arch, **asdict(self)}


def _check_common(cfg) -> None:
    if cfg.n not in (2, 3, 4):
        raise ConfigurationError(f"code rate must be 1/2, 1/3 or 1/4 (n={cfg.n})")
    if cfg.block_length < 1:
        raise ConfigurationError(f"block length must be positive, got {cfg.block_length}")
    if cfg.power not in POWER_MODES:
        raise ConfigurationError(f"power mode {cfg.power!r} not in {POWER_MODES}")
    if min(cfg.enc_units, cfg.dec_units, cfg.enc_layers, cfg.dec_layers) < 1:
        raise ConfigurationError("layer and unit counts must be positive")


def config_from_dict(d: dict):
    d = dict(d)
    arch = d.pop("arch", "channel_ae")
    if "rate" in d:
        d["n"] = parse_rate(d.pop("rate"))
    cls = {"channel_ae": ChannelAEConfig, "learn": LearnConfig}.get(arch)
    if cls is None:
        raise ConfigurationError(f"unknown neural architecture {arch!r}")
    known = set(cls.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ConfigurationError(f"unknown {arch} config keys {sorted(unknown)}")
    return cls(**d).validate()


# --------------------------------------------------------------------------
# parameters


@dataclass
class PowerStats:
    mode: str = "bitwise"
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    frozen: bool = False


@dataclass
class ModelParams:
    config: ChannelAEConfig | LearnConfig
    arrays: dict = field(default_factory=dict)
    power: PowerStats = field(default_factory=PowerStats)
    lineage: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def copy(self) -> "ModelParams":
        p = self.power
        power = PowerStats(p.mode, None if p.mean is None else p.mean.copy(),
                           None if p.std is None else p.std.copy(), p.frozen)
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()},
                           power, dict(self.lineage), self.format_version)

    def names(self, prefix: str = "") -> list[str]:
        return [k for k in self.arrays if k.startswith(prefix)]

    def tensors(self, trainable: str | None = None) -> dict:
        """Leaf tensors; names starting with ``trainable`` require grad."""
        return {k: Tensor(v, requires_grad=trainable is not None and k.startswith(trainable))
                for k, v in self.arrays.items()}

    def n_params(self) -> int:
        return int(sum(v.size for v in self.arrays.values()))


def _gru_plan(prefix: str, in_width: int, units: int, layers: int, bidirectional: bool):
    plan = []
    width = in_width
    for layer in range(layers):
        dirs = ("fwd", "bwd") if bidirectional else ("",)
        for d in dirs:
            base = f"{prefix}.l{layer}" + (f".{d}" if d else "")
            plan.append((base, "gru", width, units))
        width = units * len(dirs)
    return plan, width


def layer_plan(cfg) -> list[tuple]:
    """Ordered ``(name, kind, in_width, out_width)`` entries for a config."""
    bi = cfg.arch == "channel_ae"
    enc, w = _gru_plan("enc.gru", 1, cfg.enc_units, cfg.enc_layers, bi)
    plan = enc + [("enc.out", "dense", w, cfg.n)]
    if bi:
        dec, w = _gru_plan("dec.gru", cfg.n, cfg.dec_units, cfg.dec_layers, True)
        plan += dec + [("dec.out", "dense", w, 1)]
    else:
        g1, w1 = _gru_plan("dec.gru1", cfg.n, cfg.dec_units, cfg.dec_layers, False)
        g2, w2 = _gru_plan("dec.gru2", cfg.n, cfg.dec_units, cfg.dec_layers, False)
        plan += g1 + g2 + [("dec.out", "dense", w1 + w2, 1)]
    return plan


def init_model(cfg, seed: int = 0, dtype=np.float32) -> ModelParams:
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x1417,)))
    arrays = {}
    for name, kind, fan_in, width in layer_plan(cfg):
        part = ad.init_gru(rng, fan_in, width, dtype) if kind == "gru" \
            else ad.init_dense(rng, fan_in, width, dtype)
        for k, v in part.items():
            arrays[f"{name}.{k}"] = v
    return ModelParams(cfg, arrays, PowerStats(cfg.power), {"init_seed": int(seed)})


def _gru(t: dict, base: str) -> GruLayerParams:
    return GruLayerParams(t[base + ".W"], t[base + ".U"], t[base + ".b"])


def _stack(t: dict, prefix: str, x: Tensor, layers: int, bidirectional: bool) -> Tensor:
    for layer in range(layers):
        if bidirectional:
            x = ad.bigru_forward(_gru(t, f"{prefix}.l{layer}.fwd"),
                                 _gru(t, f"{prefix}.l{layer}.bwd"), x)
        else:
            x, _ = ad.gru_forward(_gru(t, f"{prefix}.l{layer}"), x)
    return x


# --------------------------------------------------------------------------
# power constraint


def _degenerate_check(std: np.ndarray, mean: np.ndarray) -> None:
    if not np.all(np.isfinite(std)) or np.any(std <= 1e-6 * np.maximum(1.0, np.abs(mean))):
        raise DegenerateEncoderError("encoder output has a zero-variance position (collapsed code)")


def apply_power_constraint(raw: Tensor, mode: str, phase: str = "train",
                           stats: PowerStats | None = None) -> Tensor:
    """Normalize encoder output (B, K, n) to unit power.

    ``bitwise`` standardizes every (step, stream) position over the batch,
    ``blockwise`` standardizes all positions jointly, ``hard_tanh`` is tanh in
    training and a sign decision in evaluation.  Evaluation uses frozen
    statistics from :func:`calibrate_power`.
    """
    if mode not in POWER_MODES:
        raise ConfigurationError(f"power mode {mode!r} not in {POWER_MODES}")
    if phase not in ("train", "eval"):
        raise ConfigurationError(f"phase must be 'train' or 'eval', got {phase!r}")
    if mode == "hard_tanh":
        if phase == "train":
            return ad.tanh(raw)
        return Tensor(np.where(raw.data >= 0, 1.0, -1.0).astype(raw.dtype))
    if phase == "eval":
        if stats is None or not stats.frozen or stats.mean is None:
            raise UsageError("evaluation-phase normalization needs frozen calibration statistics")
        mean = stats.mean.astype(raw.dtype)
        std = stats.std.astype(raw.dtype)
        if mode == "bitwise" and mean.shape != raw.shape[1:]:
            raise UsageError(
                f"calibration statistics {mean.shape} were computed for another block shape "
                f"than {raw.shape[1:]}")
        return (raw - Tensor(mean)) / Tensor(std)
    if raw.shape[0] < 2:
        raise InputError("training-phase normalization needs a batch of at least 2 blocks")
    axis = 0 if mode == "bitwise" else None
    mu = ad.mean(raw, axis=axis, keepdims=True)
    centered = raw - mu
    std = ad.sqrt(ad.mean(ad.square(centered), axis=axis, keepdims=True))
    _degenerate_check(std.data, mu.data)
    return centered / std


def calibrate_power(model: ModelParams, nblocks: int = CALIBRATION_BLOCKS, seed: int = 0,
                    chunk: int = 1000) -> ModelParams:
    """Freeze power statistics estimated on ``nblocks`` fresh random messages."""
    if nblocks < 1000:
        raise ConfigurationError(f"calibration needs at least 1000 blocks, got {nblocks}")
    cfg = model.config
    if cfg.power == "hard_tanh":
        out = model.copy()
        out.power = PowerStats("hard_tanh", None, None, True)
        return out
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xCA1,)))
    t = model.tensors()
    K, n = cfg.block_length, cfg.n
    s1 = np.zeros((K, n))
    s2 = np.zeros((K, n))
    done = 0
    while done < nblocks:
        b = min(chunk, nblocks - done)
        msg = rng.integers(0, 2, size=(b, K))
        raw = encoder_raw(t, cfg, msg).data.astype(np.float64)
        s1 += raw.sum(axis=0)
        s2 += (raw * raw).sum(axis=0)
        done += b
    if cfg.power == "bitwise":
        mean = s1 / nblocks
        var = s2 / nblocks - mean * mean
    else:
        mean = np.array([s1.sum() / (nblocks * K * n)])
        var = np.array([s2.sum() / (nblocks * K * n)]) - mean * mean
    std = np.sqrt(np.maximum(var, 0.0))
    _degenerate_check(std, mean)
    out = model.copy()
    out.power = PowerStats(cfg.power, mean.astype(np.float32), std.astype(np.float32), True)
    out.lineage["calibration"] = {"nblocks": int(nblocks), "seed": int(seed)}
    return out


# --------------------------------------------------------------------------
# forward passes


def _message_tensor(msg, dtype) -> Tensor:
    msg = np.asarray(msg)
    if msg.ndim == 1:
        msg = msg[None, :]
    if msg.ndim != 2 or not np.all((msg == 0) | (msg == 1)):
        raise InputError("message must be a (B, K) array of bits")
    return Tensor((2.0 * msg - 1.0).astype(dtype)[:, :, None])


def encoder_raw(t: dict, cfg, msg) -> Tensor:
    """Encoder output before the power constraint: (B, K, n)."""
    dtype = t["enc.out.W"].dtype
    x = _message_tensor(msg, dtype)
    h = _stack(t, "enc.gru", x, cfg.enc_layers, cfg.arch == "channel_ae")
    return ad.dense(h, t["enc.out.W"], t["enc.out.b"])


def encode(model: ModelParams, msg, phase: str = "eval", tensors: dict | None = None) -> Tensor:
    t = tensors if tensors is not None else model.tensors()
    raw = encoder_raw(t, model.config, msg)
    return apply_power_constraint(raw, model.config.power, phase, model.power)


def _check_received(y: Tensor, cfg) -> Tensor:
    y = y if isinstance(y, Tensor) else Tensor(np.asarray(y))
    if y.ndim != 3 or y.shape[2] != cfg.n:
        raise InputError(f"decoder expects (B, K, {cfg.n}) symbols, got {y.shape}")
    return y


def decode(model: ModelParams, y, tensors: dict | None = None, delay: int | None = None) -> Tensor:
    """Bit probabilities (B, K) from received symbols (B, K, n)."""
    t = tensors if tensors is not None else model.tensors()
    cfg = model.config
    y = _check_received(y, cfg)
    if y.dtype != t["dec.out.W"].dtype:
        y = Tensor(y.data.astype(t["dec.out.W"].dtype))
    if cfg.arch == "channel_ae":
        h = _stack(t, "dec.gru", y, cfg.dec_layers, True)
    else:
        D = cfg.delay if delay is None else int(delay)
        if D < 0:
            raise ConfigurationError(f"delay must be >= 0, got {D}")
        K = y.shape[1]
        h1 = _stack(t, "dec.gru1", y, cfg.dec_layers, False)
        h2 = _stack(t, "dec.gru2", y, cfg.dec_layers, False)
        ahead = np.minimum(np.arange(K) + D, K - 1)
        h = ad.concat([h1, h2[:, ahead]], axis=-1)
    p = ad.sigmoid(ad.dense(h, t["dec.out.W"], t["dec.out.b"]))
    return ad.reshape(p, p.shape[:2])


def _require(model: ModelParams, arch: str) -> None:
    if model.config.arch != arch:
        raise ConfigurationError(f"expected a {arch} model, got {model.config.arch}")


def encode_ae(model: ModelParams, msg, phase: str = "eval") -> Tensor:
    _require(model, "channel_ae")
    return encode(model, msg, phase)


def decode_ae(model: ModelParams, y) -> Tensor:
    _require(model, "channel_ae")
    return decode(model, y)


def learn_encode(model: ModelParams, msg, phase: str = "eval") -> Tensor:
    _require(model, "learn")
    return encode(model, msg, phase)


def learn_decode(model: ModelParams, y, D: int | None = None) -> Tensor:
    _require(model, "learn")
    return decode(model, y, delay=D)


class NeuralCodec:
    """Evaluation wrapper: bits in, symbols out, and back, in chunks."""

    def __init__(self, model: ModelParams, chunk: int = 2000):
        if model.config.power != "hard_tanh" and not model.power.frozen:
            raise UsageError("model has no frozen power statistics; run calibrate_power first")
        self.model = model
        self.chunk = chunk
        self._t = model.tensors()

    @property
    def block_length(self) -> int:
        return self.model.config.block_length

    @property
    def n(self) -> int:
        return self.model.config.n

    @property
    def label(self) -> str:
        cfg = self.model.config
        extra = f",D={cfg.delay}" if cfg.arch == "learn" else ""
        return f"{cfg.arch}(K={cfg.block_length},R=1/{cfg.n}{extra})"

    def encode(self, bits: np.ndarray) -> np.ndarray:
        parts = [encode(self.model, bits[i:i + self.chunk], "eval", self._t).data
                 for i in range(0, len(bits), self.chunk)]
        return np.concatenate(parts)

    def probabilities(self, y: np.ndarray) -> np.ndarray:
        parts = [decode(self.model, Tensor(y[i:i + self.chunk]), self._t).data
                 for i in range(0, len(y), self.chunk)]
        return np.concatenate(parts)

    def decode(self, y: np.ndarray, channel=None) -> np.ndarray:
        return (self.probabilities(y) > 0.5).astype(np.int8)


# --------------------------------------------------------------------------
# checkpoints


def _checkpoint_arrays(model: ModelParams) -> list[tuple[str, np.ndarray]]:
    items = list(model.arrays.items())
    if model.power.mean is not None:
        items += [("power.mean", model.power.mean), ("power.std", model.power.std)]
    return items


def checkpoint_bytes(model: ModelParams) -> bytes:
    """Serialized checkpoint: magic, header length, JSON header, <f4 payload."""
    items = _checkpoint_arrays(model)
    header = {
        "format_version": model.format_version,
        "config": model.config.to_dict(),
        "power": {"mode": model.power.mode, "frozen": bool(model.power.frozen)},
        "lineage": model.lineage,
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in items],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(head)))
    buf.write(head)
    for _, v in items:
        buf.write(np.ascontiguousarray(v, dtype="<f4").tobytes())
    return buf.getvalue()


def checkpoint_from_bytes(data: bytes) -> ModelParams:
    if data[:8] != MAGIC:
        raise InputError("not a learncodes checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", data[8:12])
    try:
        header = json.loads(data[12:12 + hlen])
    except (ValueError, UnicodeDecodeError):
        raise InputError("checkpoint header is not valid JSON") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise InputError(f"unsupported checkpoint version {header.get('format_version')}")
    offset = 12 + hlen
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        if offset + 4 * count > len(data):
            raise InputError(f"checkpoint truncated inside array {entry['name']!r}")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(shape)
        arrays[entry["name"]] = arr.astype(np.float32)
        offset += 4 * count
    if offset != len(data):
        raise InputError("checkpoint payload size does not match its header")
    power = PowerStats(header["power"]["mode"], arrays.pop("power.mean", None),
                       arrays.pop("power.std", None), header["power"]["frozen"])
    cfg = config_from_dict(header["config"])
    model = ModelParams(cfg, arrays, power, header["lineage"], header["format_version"])
    expected = {f"{name}.{k}" for name, kind, *_ in layer_plan(cfg)
                for k in (("W", "U", "b") if kind == "gru" else ("W", "b"))}
    if set(arrays) != expected:
        raise InputError("checkpoint parameter names do not match the config's layer plan")
    return model


def save_checkpoint(model: ModelParams, path) -> str:
    data = checkpoint_bytes(model)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path) -> ModelParams:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read checkpoint {path}: {exc}") from None
    return checkpoint_from_bytes(data)


def checkpoint_hash(model: ModelParams) -> str:
    return hashlib.sha256(checkpoint_bytes(model)).hexdigest()


def replace_config(model: ModelParams, **changes) -> ModelParams:
    """Same weights under a modified config (e.g. another block length)."""
    out = model.copy()
    out.config = replace(model.config, **changes).validate()
    if "block_length" in changes and out.power.mode == "bitwise":
        out.power = PowerStats(out.power.mode, None, None, False)
    return out
