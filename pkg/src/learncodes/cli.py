"""Command-line front end: ``learncodes <command> [--config FILE] [flags]``.

Exit codes: 0 success, 1 runtime failure, 2 bad configuration or usage.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import yaml

from . import config as C
from .channels import ChannelSpec
from .conv import ConvCodeSpec, parse_rate
from .errors import ConfigurationError, LearnCodesError
from .evaluation import (
    ConvCodec,
    StopRule,
    UncodedBPSK,
    adaptivity_eval,
    export_report,
    probe_decoder_pulse,
    probe_encoder_flip,
    robustness_eval,
    snr_sweep,
)
from .neural import (
    ChannelAEConfig,
    LearnConfig,
    calibrate_power,
    load_checkpoint,
    save_checkpoint,
)
from .training import TrainConfig, train

# flag name -> dotted config path
_FLAG_PATHS = {
    "preset": "preset", "arch": "arch", "rate": "rate", "block_length": "block_length",
    "delay": "delay", "seed": "seed", "out": "output_dir", "format": "format",
    "workers": "workers", "checkpoint": "checkpoint", "snr": "snr",
    "channel": "channel.kind", "nu": "channel.nu", "p": "channel.p",
    "sigma2_sq": "channel.sigma2_sq", "m": "conv.m", "metric": "conv.metric",
    "power": "model.power", "epochs": "train.epochs", "batch_size": "train.batch_size",
    "batches_per_epoch": "train.batches_per_epoch", "lr": "train.lr", "loss": "train.loss",
    "reg_lambda": "train.reg_lambda", "mode": "eval.mode",
    "min_bit_errors": "eval.min_bit_errors", "max_blocks": "eval.max_blocks",
    "probe_kind": "probe.kind", "position": "probe.position", "pulse": "probe.pulse",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="learncodes",
        description="Train and benchmark recurrent neural channel codes against "
                    "convolutional codes.")
    parser.add_argument("--list-presets", action="store_true", help="print preset names and exit")
    sub = parser.add_subparsers(dest="command", metavar="command")
    helps = {
        "train": "train a channel_ae or learn model, write checkpoint + history",
        "eval": "evaluate a checkpoint (robustness, or decoder_only/full adaptivity)",
        "sweep": "BER/BLER over an SNR grid for any architecture",
        "probe": "interpretability probe (encoder-flip or decoder-pulse)",
        "baseline": "convolutional baseline plus uncoded reference sweeps",
        "calibrate": "re-estimate frozen power statistics of a checkpoint",
        "selfcheck": "gradient-check and Viterbi-oracle suites",
    }
    for name in C.COMMANDS:
        sp = sub.add_parser(name, help=helps[name], description=helps[name])
        _add_common(sp)
    return parser


def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="YAML config file (keys as in the resolved config)")
    sp.add_argument("--preset", help="named preset, e.g. learn_r13_d10_awgn")
    sp.add_argument("--arch", choices=C.ARCHS)
    sp.add_argument("--rate", help="code rate, e.g. 1/2")
    sp.add_argument("--block-length", "-K", dest="block_length", type=int)
    sp.add_argument("--delay", "-D", type=int, help="LEARN delay D or Viterbi window w")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--format", choices=("csv", "json"))
    sp.add_argument("--workers", type=int, help="evaluation processes (1 = deterministic)")
    sp.add_argument("--checkpoint")
    sp.add_argument("--snr", help="SNR grid start:stop:step in dB (inclusive), or a list")
    sp.add_argument("--channel", choices=("awgn", "atn", "radar"))
    sp.add_argument("--nu", type=float, help="ATN degrees of freedom")
    sp.add_argument("--p", type=float, help="Radar pulse probability")
    sp.add_argument("--sigma2-sq", dest="sigma2_sq", type=float, help="Radar pulse variance")
    sp.add_argument("--m", type=int, help="convolutional code memory")
    sp.add_argument("--metric", choices=("matched", "gaussian", "radar_clip"))
    sp.add_argument("--power", choices=("bitwise", "blockwise", "hard_tanh"))
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--batch-size", dest="batch_size", type=int)
    sp.add_argument("--batches-per-epoch", dest="batches_per_epoch", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--loss", choices=("bce", "mse"))
    sp.add_argument("--reg-lambda", dest="reg_lambda", type=float)
    sp.add_argument("--mode", choices=("robustness", "decoder_only", "full"))
    sp.add_argument("--min-bit-errors", dest="min_bit_errors", type=int)
    sp.add_argument("--max-blocks", dest="max_blocks", type=int)
    sp.add_argument("--probe-kind", dest="probe_kind", choices=("encoder-flip", "decoder-pulse"))
    sp.add_argument("--position", type=int)
    sp.add_argument("--pulse", type=float)
    sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override any config key by dotted path, e.g. train.lr=5e-4")


def _overrides(args: argparse.Namespace) -> dict:
    out = {}
    for flag, path in _FLAG_PATHS.items():
        value = getattr(args, flag, None)
        if value is not None:
            out[path] = value
    for item in args.set:
        if "=" not in item:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        out[key.strip()] = yaml.safe_load(raw)
    out["command"] = args.command
    return out


# --------------------------------------------------------------------------
# builders from a resolved config


def channel_from(cfg: dict) -> ChannelSpec:
    ch = cfg["channel"]
    return ChannelSpec(ch["kind"], 0.0, ch["nu"], ch["p"], ch["sigma2_sq"])


def model_config_from(cfg: dict):
    n = parse_rate(cfg["rate"])
    common = dict(block_length=cfg["block_length"], n=n, **cfg["model"])
    if cfg["arch"] == "channel_ae":
        return ChannelAEConfig(**common).validate()
    if cfg["arch"] == "learn":
        return LearnConfig(delay=1 if cfg["delay"] is None else cfg["delay"], **common).validate()
    raise ConfigurationError(f"arch {cfg['arch']!r} is not a neural model")


def train_config_from(cfg: dict) -> TrainConfig:
    return TrainConfig.from_dict({**cfg["train"], "seed": cfg["seed"]}).validate()


def stop_from(cfg: dict) -> StopRule:
    e = cfg["eval"]
    return StopRule(e["min_bit_errors"], e["max_blocks"], e["chunk"])


def codec_from(cfg: dict):
    arch = cfg["arch"]
    if arch == "conv_baseline":
        conv = cfg["conv"]
        spec = ConvCodeSpec.from_table(cfg["rate"], conv["m"], tail_biting=conv["tail_biting"])
        return ConvCodec(spec, cfg["block_length"], conv["metric"], cfg["delay"])
    if arch == "uncoded":
        return UncodedBPSK(cfg["block_length"])
    return _load_model(cfg)


def _load_model(cfg: dict):
    if cfg["checkpoint"] is None:
        raise ConfigurationError("config key 'checkpoint' is required for neural models")
    model = load_checkpoint(cfg["checkpoint"])
    if cfg["arch"] in ("channel_ae", "learn") and model.config.arch != cfg["arch"]:
        raise ConfigurationError(
            f"config key 'arch' is {cfg['arch']!r} but the checkpoint holds {model.config.arch!r}")
    return model


# --------------------------------------------------------------------------
# commands


def _cmd_train(cfg, out: Path) -> str:
    model, history = train(train_config_from(cfg), channel_from(cfg),
                           model_config=model_config_from(cfg))
    digest = save_checkpoint(model, out / "model.ckpt")
    history.write_csv(out / "history.csv")
    last = history.test_loss[-1] if len(history) else history.initial_test_loss
    return (f"train {model.config.arch} K={model.config.block_length} R=1/{model.config.n} "
            f"epochs={len(history)} test_loss={last:.4g} sha256={digest[:16]}")


def _report_path(cfg, out: Path, stem: str) -> Path:
    return out / f"{stem}.{cfg['format']}"


def _cmd_sweep(cfg, out: Path) -> str:
    codec = codec_from(cfg)
    report = snr_sweep(codec, channel_from(cfg), C.parse_snr_grid(cfg["snr"]), stop_from(cfg),
                       cfg["seed"], cfg["eval"]["paired"], cfg["workers"])
    path = export_report(report, _report_path(cfg, out, "report"), cfg["format"])
    return _sweep_summary("sweep", report, path)


def _sweep_summary(tag, report, path) -> str:
    bers = " ".join(f"{r.snr_db:g}:{r.ber:.3g}" for r in report.rows)
    return f"{tag} {report.metadata['code']} rows={len(report.rows)} ber[{bers}] -> {path}"


def _cmd_eval(cfg, out: Path) -> str:
    model = _load_model(cfg)
    channel = channel_from(cfg)
    snrs = C.parse_snr_grid(cfg["snr"])
    mode = cfg["eval"]["mode"]
    if mode == "robustness":
        report = robustness_eval(model, channel, snrs, stop_from(cfg), cfg["seed"],
                                 cfg["workers"], cfg["eval"]["paired"])
    else:
        report, retrained, history = adaptivity_eval(
            model, channel, mode, train_config_from(cfg), snrs, stop_from(cfg), cfg["seed"],
            cfg["workers"], cfg["eval"]["paired"])
        save_checkpoint(retrained, out / f"model_{mode}.ckpt")
        history.write_csv(out / f"history_{mode}.csv")
    path = export_report(report, _report_path(cfg, out, f"report_{mode}"), cfg["format"])
    return _sweep_summary(f"eval[{mode}]", report, path)


def _cmd_probe(cfg, out: Path) -> str:
    model = _load_model(cfg)
    p = cfg["probe"]
    if p["kind"] == "encoder-flip":
        prof = probe_encoder_flip(model, p["position"], p["batch"], cfg["seed"])
    else:
        prof = probe_decoder_pulse(model, p["position"], p["pulse"], p["batch"], cfg["seed"])
    path = prof.write_csv(out / f"probe_{p['kind']}_{p['position']}.csv")
    peak = int(prof.values.argmax())
    return f"probe {p['kind']} position={p['position']} argmax={peak} -> {path}"


def _cmd_baseline(cfg, out: Path) -> str:
    cfg = dict(cfg, arch="conv_baseline")
    snrs = C.parse_snr_grid(cfg["snr"])
    channel = channel_from(cfg)
    conv = snr_sweep(codec_from(cfg), channel, snrs, stop_from(cfg), cfg["seed"],
                     cfg["eval"]["paired"], cfg["workers"])
    ref = snr_sweep(UncodedBPSK(cfg["block_length"]), channel, snrs, stop_from(cfg),
                    cfg["seed"], cfg["eval"]["paired"], cfg["workers"])
    path = export_report(conv, _report_path(cfg, out, "report"), cfg["format"])
    export_report(ref, _report_path(cfg, out, "report_uncoded"), cfg["format"])
    return _sweep_summary("baseline", conv, path)


def _cmd_calibrate(cfg, out: Path) -> str:
    model = _load_model(cfg)
    model = calibrate_power(model, cfg["train"]["calibration_blocks"], seed=cfg["seed"])
    digest = save_checkpoint(model, out / "model.ckpt")
    return f"calibrate {model.config.arch} blocks={cfg['train']['calibration_blocks']} " \
           f"sha256={digest[:16]}"


def _cmd_selfcheck(cfg, out: Path) -> str:
    from .selfcheck import run_all

    results = run_all(quick=True)
    lines = [f"{'PASS' if r.passed else 'FAIL'} {r.name} ({r.value:.3g})" for r in results]
    (out / "selfcheck.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    failed = [r for r in results if not r.passed]
    if failed:
        raise LearnCodesError("selfcheck failed: " + ", ".join(r.name for r in failed))
    return f"selfcheck {len(results)} checks passed"


_COMMANDS = {
    "train": _cmd_train, "eval": _cmd_eval, "sweep": _cmd_sweep, "probe": _cmd_probe,
    "baseline": _cmd_baseline, "calibrate": _cmd_calibrate, "selfcheck": _cmd_selfcheck,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.list_presets:
        print("\n".join(sorted(C.PRESETS)))
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        cfg = C.load_config(args.config, _overrides(args))
        if args.command == "train" and cfg["arch"] not in ("channel_ae", "learn"):
            raise ConfigurationError("config key 'arch' must be channel_ae or learn for train")
        if args.command == "train" and cfg["workers"] != 1:
            raise ConfigurationError("config key 'workers' must be 1 for train")
    except ConfigurationError as exc:
        print(f"learncodes: configuration error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg["output_dir"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "resolved_config.yaml").write_text(C.dump_config(cfg), encoding="utf-8")
        summary = _COMMANDS[args.command](cfg, out)
    except ConfigurationError as exc:
        print(f"learncodes: configuration error: {exc}", file=sys.stderr)
        return 2
    except (LearnCodesError, OSError, ValueError, ArithmeticError) as exc:
        print(f"learncodes: {args.command} failed: {exc}", file=sys.stderr)
        return 1
    print(summary)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
