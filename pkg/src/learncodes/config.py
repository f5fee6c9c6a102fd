"""Run configuration: schema, named presets, YAML loading and flag overrides."""

from __future__ import annotations

import copy
from pathlib import Path

import yaml

from .errors import ConfigurationError

ARCHS = ("channel_ae", "learn", "conv_baseline", "uncoded")
COMMANDS = ("train", "eval", "sweep", "probe", "baseline", "calibrate", "selfcheck")

# Every accepted key with its default; nested dicts are sections.
DEFAULTS: dict = {
    "command": None,
    "preset": None,
    "arch": "channel_ae",
    "rate": "1/2",
    "block_length": 100,
    "delay": None,
    "seed": 0,
    "output_dir": "runs/out",
    "format": "csv",
    "workers": 1,
    "checkpoint": None,
    "snr": "0:8:1",
    "channel": {"kind": "awgn", "nu": 3.0, "p": 0.05, "sigma2_sq": 5.0},
    "model": {"enc_units": 25, "enc_layers": 2, "dec_units": 100, "dec_layers": 2,
              "power": "bitwise"},
    "conv": {"m": 2, "tail_biting": True, "metric": "matched"},
    "train": {
        "batch_size": 1000, "epochs": None, "batches_per_epoch": 100, "lr": 0.001,
        "lr_decay": 0.1, "plateau_patience": 10, "plateau_tol": 0.0001, "optimizer": "adam",
        "loss": "bce", "dec_steps": 5, "enc_steps": 1, "snr_range": None,
        "reg_lambda": None, "reg_window": 10, "test_batches": 10, "probe_snr": None,
        "calibration_blocks": 10000, "divergence_factor": 10.0, "divergence_patience": 5,
    },
    "eval": {"mode": "robustness", "min_bit_errors": 100, "max_blocks": 100000,
             "chunk": 1000, "paired": False},
    "probe": {"kind": "encoder-flip", "position": 0, "pulse": 5.0, "batch": 1000},
}

# Value types per key path; None-able keys accept YAML null.
_NULLABLE = {"command", "preset", "delay", "checkpoint", "train.epochs", "train.snr_range",
             "train.reg_lambda", "train.probe_snr", "eval.min_bit_errors"}
_TYPES = {
    "block_length": int, "delay": int, "seed": int, "workers": int,
    "channel.nu": float, "channel.p": float, "channel.sigma2_sq": float,
    "model.enc_units": int, "model.enc_layers": int, "model.dec_units": int,
    "model.dec_layers": int, "conv.m": int, "conv.tail_biting": bool,
    "train.batch_size": int, "train.epochs": int, "train.batches_per_epoch": int,
    "train.lr": float, "train.lr_decay": float, "train.plateau_patience": int,
    "train.plateau_tol": float, "train.dec_steps": int, "train.enc_steps": int,
    "train.snr_range": list, "train.reg_lambda": float, "train.reg_window": int,
    "train.test_batches": int, "train.probe_snr": float, "train.calibration_blocks": int,
    "train.divergence_factor": float, "train.divergence_patience": int,
    "eval.min_bit_errors": int, "eval.max_blocks": int, "eval.chunk": int, "eval.paired": bool,
    "probe.position": int, "probe.pulse": float, "probe.batch": int,
}
_CHOICES = {
    "command": COMMANDS, "arch": ARCHS, "format": ("csv", "json"),
    "channel.kind": ("awgn", "atn", "radar"),
    "model.power": ("bitwise", "blockwise", "hard_tanh"),
    "conv.metric": ("matched", "gaussian", "radar_clip"),
    "train.loss": ("bce", "mse"), "train.optimizer": ("adam",),
    "eval.mode": ("robustness", "decoder_only", "full"),
    "probe.kind": ("encoder-flip", "decoder-pulse"),
}

# Desk-scale schedule used by the acceptance proxies and the desk_* presets.
_DESK_TRAIN = {"batch_size": 500, "epochs": 20, "batches_per_epoch": 10,
               "calibration_blocks": 10000, "probe_snr": 2.0}


def _learn(rate: str, D: int, kind: str = "awgn", **channel) -> dict:
    n = rate.split("/")[1]
    return {"arch": "learn", "rate": rate, "delay": D,
            "channel": {"kind": kind, **channel}, "snr": _SNR_AXIS[n]}


_SNR_AXIS = {"2": "0:4:0.5", "3": "-1:2:0.5", "4": "-2:2:0.5"}

PRESETS: dict[str, dict] = {
    # block Channel AE on AWGN, one per rate
    "ae_r12_awgn": {"arch": "channel_ae", "rate": "1/2", "snr": "0:4:0.5"},
    "ae_r13_awgn": {"arch": "channel_ae", "rate": "1/3", "snr": "-1:2:0.5"},
    "ae_r14_awgn": {"arch": "channel_ae", "rate": "1/4", "snr": "-2:2:0.5"},
    # non-AWGN robustness / adaptivity for the block AE
    "ae_r12_atn3": {"arch": "channel_ae", "rate": "1/2", "channel": {"kind": "atn", "nu": 3.0},
                    "snr": "0:4:0.5"},
    "ae_r13_radar": {"arch": "channel_ae", "rate": "1/3",
                     "channel": {"kind": "radar", "p": 0.05, "sigma2_sq": 5.0},
                     "snr": "-1:2:0.5"},
    "ae_r14_atn3": {"arch": "channel_ae", "rate": "1/4", "channel": {"kind": "atn", "nu": 3.0},
                    "snr": "-2:2:0.5"},
    # LEARN under delay constraints
    "learn_r12_d1_awgn": _learn("1/2", 1),
    "learn_r12_d10_awgn": _learn("1/2", 10),
    "learn_r13_d1_awgn": _learn("1/3", 1),
    "learn_r13_d10_awgn": _learn("1/3", 10),
    "learn_r14_d1_awgn": _learn("1/4", 1),
    "learn_r14_d10_awgn": _learn("1/4", 10),
    "learn_r12_d10_atn3": _learn("1/2", 10, "atn", nu=3.0),
    "learn_r13_d2_atn3": _learn("1/3", 2, "atn", nu=3.0),
    "learn_r14_d10_radar": _learn("1/4", 10, "radar", p=0.05, sigma2_sq=5.0),
    # RSC / TBCC baselines
    **{f"tbcc_r1{n}_m{m}": {"arch": "conv_baseline", "rate": f"1/{n}", "conv": {"m": m},
                            "snr": _SNR_AXIS[str(n)]}
       for n in (2, 3, 4) for m in range(1, 8)},
    **{f"rsc_r12_m{m}_w{w}": {"arch": "conv_baseline", "rate": "1/2", "delay": w,
                              "conv": {"m": m, "tail_biting": False}, "snr": "0:6:1"}
       for m in (2, 5) for w in (1, 3, 10)},
    # desk-scale stand-ins for the acceptance proxies
    "desk_ae_k10_awgn": {"arch": "channel_ae", "rate": "1/2", "block_length": 10,
                         "train": dict(_DESK_TRAIN), "snr": "2:2:1"},
    "desk_ae_k10_atn3": {"arch": "channel_ae", "rate": "1/2", "block_length": 10,
                         "channel": {"kind": "atn", "nu": 3.0},
                         "train": dict(_DESK_TRAIN), "snr": "2:2:1"},
    "desk_learn_k10_d1": {"arch": "learn", "rate": "1/2", "block_length": 10, "delay": 1,
                          "train": {**_DESK_TRAIN, "epochs": 3}, "snr": "0:4:2"},
}


def _walk(d: dict, prefix: str = ""):
    for k, v in d.items():
        path = f"{prefix}{k}"
        if isinstance(v, dict):
            yield from _walk(v, path + ".")
        else:
            yield path, v


def _coerce(path: str, value):
    if value is None:
        if path in _NULLABLE:
            return None
        raise ConfigurationError(f"config key '{path}' may not be null")
    want = _TYPES.get(path)
    try:
        if want is bool:
            if isinstance(value, str):
                low = value.lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                value = low in ("true", "1", "yes")
            elif not isinstance(value, bool):
                raise ValueError(value)
        elif want is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            value = int(value)
        elif want is float:
            if isinstance(value, bool):
                raise ValueError(value)
            value = float(value)
        elif want is list:
            if isinstance(value, str):
                value = [float(v) for v in value.split(",")]
            if not isinstance(value, (list, tuple)) or len(value) != 2:
                raise ValueError(value)
            value = [float(v) for v in value]
        else:
            if path == "rate" and isinstance(value, (int, float)):
                value = str(value)
            if not isinstance(value, str):
                raise ValueError(value)
    except (TypeError, ValueError):
        raise ConfigurationError(
            f"config key '{path}' has invalid value {value!r}"
            + (f" (expected {want.__name__})" if want else "")) from None
    choices = _CHOICES.get(path)
    if choices is not None and value not in choices:
        raise ConfigurationError(f"config key '{path}' must be one of {list(choices)}, "
                                 f"got {value!r}")
    return value


def _merge(base: dict, over: dict, prefix: str = "") -> None:
    for k, v in over.items():
        path = f"{prefix}{k}"
        if k not in base:
            raise ConfigurationError(f"unknown config key '{path}'")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigurationError(f"config key '{path}' must be a mapping")
            _merge(base[k], v, path + ".")
        else:
            if isinstance(v, dict):
                raise ConfigurationError(f"config key '{path}' must be a scalar")
            base[k] = _coerce(path, v)


def set_path(d: dict, path: str, value) -> None:
    """Nested override helper: ``set_path(cfg, "train.lr", 5e-4)``."""
    parts = path.split(".")
    node = {}
    root = node
    for p in parts[:-1]:
        node[p] = {}
        node = node[p]
    node[parts[-1]] = value
    _merge(d, root)


def read_config_file(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config {path} is not valid YAML: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"config {path} must be a mapping at top level")
    return data


def load_config(path=None, overrides: dict | None = None, preset: str | None = None) -> dict:
    """Resolve defaults <- preset <- file <- flag overrides.

    ``overrides`` maps dotted key paths to values.  Unknown keys and type
    mismatches raise :class:`ConfigurationError` naming the key.
    """
    cfg = copy.deepcopy(DEFAULTS)
    file_data = read_config_file(path) if path is not None else {}
    overrides = dict(overrides or {})
    name = overrides.get("preset") or preset or file_data.get("preset")
    if name is not None:
        if name not in PRESETS:
            raise ConfigurationError(f"unknown preset '{name}' (see --list-presets)")
        _merge(cfg, copy.deepcopy(PRESETS[name]))
        cfg["preset"] = name
    _merge(cfg, file_data)
    for key, value in overrides.items():
        set_path(cfg, key, value)
    check_consistency(cfg)
    return cfg


def check_consistency(cfg: dict) -> None:
    if cfg["delay"] is not None:
        if cfg["arch"] not in ("learn", "conv_baseline"):
            raise ConfigurationError("config key 'delay' applies only to learn or conv_baseline")
        if cfg["delay"] < 0:
            raise ConfigurationError("config key 'delay' must be >= 0")
    if cfg["block_length"] < 1:
        raise ConfigurationError("config key 'block_length' must be >= 1")
    if cfg["workers"] < 1:
        raise ConfigurationError("config key 'workers' must be >= 1")
    from .conv import parse_rate

    try:
        parse_rate(cfg["rate"])
    except ConfigurationError as exc:
        raise ConfigurationError(f"config key 'rate': {exc}") from None
    parse_snr_grid(cfg["snr"])


def parse_snr_grid(text) -> list[float]:
    """``"start:stop:step"`` (inclusive), a comma list, or a single value."""
    if isinstance(text, (int, float)):
        return [float(text)]
    s = str(text).strip()
    try:
        if ":" in s:
            parts = [float(p) for p in s.split(":")]
            if len(parts) != 3:
                raise ValueError
            start, stop, step = parts
            if step <= 0 or stop < start:
                raise ValueError
            count = int(round((stop - start) / step)) + 1
            grid = [round(start + i * step, 10) for i in range(count)]
            if grid[-1] > stop + 1e-9:
                grid.pop()
            return grid
        return [float(p) for p in s.split(",")]
    except ValueError:
        raise ConfigurationError(f"config key 'snr' has invalid grid {text!r} "
                                 "(use start:stop:step)") from None


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=False)
