"""Monte-Carlo BER/BLER estimation, sweeps, adaptivity drivers and probes."""

from __future__ import annotations

import csv
import io
import json
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .channels import SNR_CONVENTION, ChannelSpec, NoiseStream, apply_channel
from .conv import ConvCodeSpec, ConvEncoder, DelayConstraint, Metric, bpsk_modulate, viterbi_decode
from .errors import ConfigurationError, InputError
from .neural import ModelParams, NeuralCodec, checkpoint_hash, decode, encode

MIN_BIT_ERRORS = 100
CSV_COLUMNS = ("snr_db", "ber", "bler", "bits", "bit_errors", "blocks")


# --------------------------------------------------------------------------
# codecs


class UncodedBPSK:
    """Rate-1 reference: bits map to +-1, hard sign decision."""

    n = 1

    def __init__(self, block_length: int = 100):
        self.block_length = int(block_length)

    @property
    def label(self) -> str:
        return f"uncoded_bpsk(K={self.block_length})"

    def encode(self, bits):
        return bpsk_modulate(bits)

    def decode(self, y, channel=None):
        return (np.asarray(y) > 0).astype(np.int8)


class ConvCodec:
    """Convolutional code with Viterbi decoding.

    ``metric`` is ``"matched"`` (true channel law), ``"gaussian"`` (noise
    variance known, Gaussian assumed), ``"radar_clip"`` or a fixed
    :class:`Metric`.  ``delay`` selects windowed (streaming) decoding.
    """

    def __init__(self, spec: ConvCodeSpec, block_length: int = 100, metric="matched",
                 delay: int | None = None):
        self.spec = spec
        self.block_length = int(block_length)
        self.metric = metric
        self.delay = None if delay is None else DelayConstraint(int(delay)).D
        self._enc = ConvEncoder(spec)
        # tail-biting is impossible for some (code, K); encoder then starts from zero
        self.tail_biting_fallback = bool(spec.tail_biting and not self._enc.tail_biting_ok(
            self.block_length))

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def label(self) -> str:
        d = "" if self.delay is None else f",w={self.delay}"
        m = self.metric if isinstance(self.metric, str) else self.metric.kind
        return f"conv({self.spec.label()},K={self.block_length},{m}{d})"

    def metric_for(self, channel: ChannelSpec | None) -> Metric:
        if isinstance(self.metric, Metric):
            return self.metric
        ch = channel or ChannelSpec()
        if self.metric == "matched":
            return Metric.matched(ch)
        if self.metric == "gaussian":
            return Metric("gaussian", sigma=max(ch.sigma, 1e-12))
        if self.metric == "radar_clip":
            return Metric.radar_heuristic(ch)
        raise ConfigurationError(f"unknown metric {self.metric!r}")

    def encode(self, bits):
        return bpsk_modulate(self._enc.encode(bits))

    def decode(self, y, channel=None):
        return viterbi_decode(y, self.spec, self.metric_for(channel), delay=self.delay)


class RandomGuess:
    """Decoder that ignores the channel output; BER 0.5 by construction."""

    n = 1

    def __init__(self, block_length: int = 100, seed: int = 0):
        self.block_length = int(block_length)
        self._rng = np.random.default_rng(seed)

    label = "random_guess"

    def encode(self, bits):
        return bpsk_modulate(bits)

    def decode(self, y, channel=None):
        return self._rng.integers(0, 2, size=np.shape(y), dtype=np.int8)


def as_codec(obj):
    if isinstance(obj, ModelParams):
        return NeuralCodec(obj)
    if not all(hasattr(obj, a) for a in ("encode", "decode", "block_length")):
        raise InputError("codec needs encode, decode and block_length")
    return obj


# --------------------------------------------------------------------------
# BER estimation


@dataclass(frozen=True)
class StopRule:
    """Stop after ``min_bit_errors`` errors (None: never early) or ``max_blocks``."""

    min_bit_errors: int | None = MIN_BIT_ERRORS
    max_blocks: int = 100_000
    chunk: int = 1000

    def __post_init__(self):
        if self.max_blocks < 1 or self.chunk < 1:
            raise ConfigurationError("max_blocks and chunk must be >= 1")


@dataclass
class BerCounts:
    bits: int = 0
    bit_errors: int = 0
    blocks: int = 0
    block_errors: int = 0

    def __iadd__(self, other: "BerCounts") -> "BerCounts":
        self.bits += other.bits
        self.bit_errors += other.bit_errors
        self.blocks += other.blocks
        self.block_errors += other.block_errors
        return self

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits if self.bits else 0.0

    @property
    def bler(self) -> float:
        return self.block_errors / self.blocks if self.blocks else 0.0


def _stream_key(codec, seed: int, row: int, paired: bool) -> tuple:
    # independent streams per codec unless paired, always per row
    tag = 0 if paired else zlib.crc32(str(codec.label).encode()) & 0x7FFFFFFF
    return (int(seed), 0xBE, tag, int(row))


def _run_chunk(codec, channel: ChannelSpec, key: tuple, index: int, size: int) -> BerCounts:
    rng = NoiseStream(*key, index).rng
    msg = rng.integers(0, 2, size=(size, codec.block_length), dtype=np.int8)
    x = codec.encode(msg)
    y = apply_channel(x, channel, rng)
    est = np.asarray(codec.decode(y, channel)).reshape(msg.shape)
    wrong = est != msg
    per_block = wrong.sum(axis=1)
    return BerCounts(msg.size, int(per_block.sum()), size, int(np.count_nonzero(per_block)))


def _chunk_sizes(stop: StopRule):
    done = 0
    while done < stop.max_blocks:
        size = min(stop.chunk, stop.max_blocks - done)
        yield size
        done += size


def _enough(total: BerCounts, stop: StopRule) -> bool:
    return stop.min_bit_errors is not None and total.bit_errors >= stop.min_bit_errors


def measure_ber(codec, channel: ChannelSpec, snr_db: float | None = None,
                stop: StopRule | None = None, seed: int = 0, row: int = 0,
                paired: bool = False, workers: int = 1) -> BerCounts:
    """Simulate fresh blocks until the stop rule fires; returns the counts.

    Chunk ``i`` always draws from stream ``(seed, codec, row, i)`` and chunks
    are merged in index order with the stop test applied after each, so
    the result does not depend on ``workers``.
    """
    codec = as_codec(codec)
    stop = stop or StopRule()
    spec = (channel.at(snr_db) if snr_db is not None else channel).validate()
    key = _stream_key(codec, seed, row, paired)
    sizes = list(_chunk_sizes(stop))
    total = BerCounts()
    if workers <= 1:
        for i, size in enumerate(sizes):
            total += _run_chunk(codec, spec, key, i, size)
            if _enough(total, stop):
                break
        return total
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for lo in range(0, len(sizes), workers):
            idx = range(lo, min(lo + workers, len(sizes)))
            parts = list(pool.map(_run_chunk, [codec] * len(idx), [spec] * len(idx),
                                  [key] * len(idx), idx, [sizes[i] for i in idx]))
            for part in parts:
                total += part
                if _enough(total, stop):
                    return total
    return total


# --------------------------------------------------------------------------
# reports


@dataclass
class ReportRow:
    snr_db: float
    ber: float
    bler: float
    bits: int
    bit_errors: int
    blocks: int

    def undersampled(self, min_errors: int = MIN_BIT_ERRORS) -> bool:
        return self.bit_errors < min_errors


@dataclass
class EvalReport:
    metadata: dict
    rows: list = field(default_factory=list)

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: r.snr_db)
        for r in self.rows:
            if r.bits and r.ber != r.bit_errors / r.bits:
                raise InputError("report row ber does not equal bit_errors / bits")
            if not 0.0 <= r.ber <= 1.0:
                raise InputError("report row ber outside [0, 1]")

    def row_at(self, snr_db: float) -> ReportRow:
        for r in self.rows:
            if r.snr_db == snr_db:
                return r
        raise KeyError(snr_db)

    def to_dict(self) -> dict:
        return {"metadata": self.metadata, "rows": [asdict(r) for r in self.rows]}


def _metadata(codec, channel: ChannelSpec, seed: int, stop: StopRule, **extra) -> dict:
    meta = {
        "code": codec.label,
        "rate": f"1/{codec.n}",
        "block_length": codec.block_length,
        "delay": getattr(codec, "delay", None),
        "channel": {k: v for k, v in channel.to_dict().items() if k != "snr_db"},
        "seed": int(seed),
        "snr_convention": SNR_CONVENTION,
        "stop": asdict(stop),
    }
    if isinstance(codec, ConvCodec):
        meta["tail_biting_fallback"] = codec.tail_biting_fallback
    if isinstance(codec, NeuralCodec):
        cfg = codec.model.config
        meta["delay"] = getattr(cfg, "delay", None)
        meta["checkpoint_sha256"] = checkpoint_hash(codec.model)
        meta["config"] = cfg.to_dict()
    meta.update(extra)
    return meta


def snr_sweep(codec, channel: ChannelSpec, snrs, stop: StopRule | None = None, seed: int = 0,
              paired: bool = False, workers: int = 1, **meta) -> EvalReport:
    """One :func:`measure_ber` row per SNR, each on its own noise stream."""
    snrs = [float(s) for s in snrs]
    if not snrs:
        raise ConfigurationError("snr_sweep needs at least one SNR")
    codec = as_codec(codec)
    stop = stop or StopRule()
    if isinstance(channel, str):
        channel = ChannelSpec(channel)
    rows = []
    for i, snr in enumerate(snrs):
        c = measure_ber(codec, channel, snr, stop, seed, row=i, paired=paired, workers=workers)
        rows.append(ReportRow(snr, c.ber, c.bler, c.bits, c.bit_errors, c.blocks))
    meta.setdefault("tag", "sweep")
    meta["paired"] = bool(paired)
    report = EvalReport(_metadata(codec, channel, seed, stop, **meta), rows)
    floor = stop.min_bit_errors if stop.min_bit_errors is not None else MIN_BIT_ERRORS
    report.metadata["undersampled_snr"] = [r.snr_db for r in report.rows if r.undersampled(floor)]
    return report


def robustness_eval(model, test_channel: ChannelSpec, snrs, stop: StopRule | None = None,
                    seed: int = 0, workers: int = 1, paired: bool = False) -> EvalReport:
    """Sweep a frozen model on a channel it may not have been trained on."""
    trained_on = model.lineage.get("training", {}).get("channel") if isinstance(
        model, ModelParams) else None
    return snr_sweep(model, test_channel, snrs, stop, seed, paired, workers,
                     tag="robustness", trained_on=trained_on)


def adaptivity_eval(model: ModelParams, target: ChannelSpec, mode: str, train_config, snrs,
                    stop: StopRule | None = None, seed: int = 0, workers: int = 1,
                    paired: bool = False):
    """Retrain on ``target`` (``decoder_only`` or ``full``), then sweep.

    Returns ``(report, retrained_model, history)``.
    """
    from .training import train

    if mode not in ("decoder_only", "full"):
        raise ConfigurationError(f"adaptivity mode must be decoder_only or full, got {mode!r}")
    retrained, history = train(train_config, target, init=model, mode=mode)
    report = snr_sweep(retrained, target, snrs, stop, seed, paired, workers,
                       tag="adaptivity", mode=mode, parent_sha256=checkpoint_hash(model))
    return report, retrained, history


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def report_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    buf.write("# " + json.dumps(report.metadata, sort_keys=True, separators=(",", ":")) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in report.rows:
        w.writerow([_fmt(float(r.snr_db)), _fmt(float(r.ber)), _fmt(float(r.bler)),
                    r.bits, r.bit_errors, r.blocks])
    return buf.getvalue()


def report_json(report: EvalReport) -> str:
    return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"


def export_report(report: EvalReport, path, fmt: str | None = None) -> Path:
    """Write ``report`` as CSV (``# {json}`` metadata line) or JSON."""
    path = Path(path)
    fmt = fmt or ("json" if path.suffix == ".json" else "csv")
    if fmt not in ("csv", "json"):
        raise ConfigurationError(f"report format must be csv or json, got {fmt!r}")
    text = report_csv(report) if fmt == "csv" else report_json(report)
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write report {path}: {exc}") from exc
    return path


def parse_report(text: str, fmt: str = "csv") -> EvalReport:
    if fmt == "json":
        d = json.loads(text)
        return EvalReport(d["metadata"], [ReportRow(**r) for r in d["rows"]])
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# "):
        raise InputError("report CSV lacks its metadata line")
    meta = json.loads(lines[0][2:])
    reader = csv.reader(lines[1:])
    header = next(reader)
    if tuple(header) != CSV_COLUMNS:
        raise InputError(f"unexpected report columns {header}")
    rows = [ReportRow(float(a), float(b), float(c), int(d), int(e), int(f))
            for a, b, c, d, e, f in reader]
    return EvalReport(meta, rows)


def read_report(path) -> EvalReport:
    path = Path(path)
    return parse_report(path.read_text(encoding="utf-8"),
                        "json" if path.suffix == ".json" else "csv")


# --------------------------------------------------------------------------
# interpretability probes


@dataclass
class ProbeProfile:
    kind: str
    position: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if np.any(self.values < 0):
            raise InputError("probe profile values must be non-negative")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("position", "mean_abs_diff"))
        for i, v in enumerate(self.values):
            w.writerow((i, repr(float(v))))
        return buf.getvalue()

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_csv(), encoding="utf-8")
        return path


def _probe_messages(K: int, batch: int, seed: int) -> np.ndarray:
    return NoiseStream(seed, 0x9B).rng.integers(0, 2, size=(batch, K), dtype=np.int8)


def probe_encoder_flip(model: ModelParams, position: int, batch: int = 1000,
                       seed: int = 0) -> ProbeProfile:
    """Per-step mean |x1 - x2| between codewords of messages differing at ``position``.

    The difference is averaged over the batch and over the coded streams;
    both batches use the frozen evaluation normalization.
    """
    K = model.config.block_length
    if not 0 <= position < K:
        raise ConfigurationError(f"probe position {position} outside [0, {K})")
    u1 = _probe_messages(K, batch, seed)
    u2 = u1.copy()
    u2[:, position] ^= 1
    t = model.tensors()
    x1 = encode(model, u1, "eval", t).data.astype(np.float64)
    x2 = encode(model, u2, "eval", t).data.astype(np.float64)
    return ProbeProfile("encoder-flip", position, np.abs(x1 - x2).mean(axis=(0, 2)))


def probe_decoder_pulse(model: ModelParams, position: int, pulse: float = 5.0,
                        batch: int = 1000, seed: int = 0) -> ProbeProfile:
    """Per-bit mean |p1 - p2| of decoder outputs when one step gets a pulse.

    Inputs are noiseless codewords; the perturbed copy adds ``pulse`` to every
    stream of step ``position``.
    """
    K = model.config.block_length
    if not 0 <= position < K:
        raise ConfigurationError(f"probe position {position} outside [0, {K})")
    if not np.isfinite(pulse):
        raise ConfigurationError("probe pulse must be finite")
    t = model.tensors()
    x = encode(model, _probe_messages(K, batch, seed), "eval", t).data
    y = x.copy()
    y[:, position, :] += np.asarray(pulse, dtype=y.dtype)
    p1 = decode(model, y, t).data.astype(np.float64)
    p2 = decode(model, x, t).data.astype(np.float64)
    return ProbeProfile("decoder-pulse", position, np.abs(p1 - p2).mean(axis=0))
