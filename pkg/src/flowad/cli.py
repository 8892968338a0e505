"""Command-line entry point.

Commands: gen-data, train, calibrate, eval, detect, bench. A JSON
config file supplies defaults per section (model/windowing/train/
synth/detect); command-line flags override file values; the fully
resolved configuration is echoed into every artifact a command writes.

Exit codes: 0 success, 1 runtime failure, 2 invalid input or config.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import (
    LABEL_NORMAL,
    WindowingConfig,
    downsample,
    load_records,
    save_records,
    sliding_windows,
    window_count,
)
from .detection import (
    CalibrationStats,
    DetectorConfig,
    StreamDetector,
    calibrate,
    threshold_for_fpr,
)
from .errors import FlowadError, InputError
from .evaluation import ablation_variants, bench_latency, evaluate, roc_curve
from .fastpath import ScoringRuntime
from .model import ModelConfig
from .synth import SynthConfig, synth_generate
from .training import TrainConfig, train

ABLATIONS = ("none", "no-sparsity", "no-flow")


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise InputError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise InputError(f"config file is not valid JSON: {e}") from None
    if not isinstance(cfg, dict):
        raise InputError("config file must contain a JSON object")
    return cfg


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise InputError(f"config section '{name}' must be an object")
    return dict(sec)


def _windowing(cfg: dict) -> WindowingConfig:
    sec = _section(cfg, "windowing")
    try:
        return WindowingConfig(**sec)
    except TypeError as e:
        raise InputError(f"bad windowing config: {e}") from None


def _train_config(cfg: dict, seed_override: int | None) -> TrainConfig:
    sec = _section(cfg, "train")
    if seed_override is not None:
        sec["seed"] = seed_override
    try:
        return TrainConfig.from_dict(sec)
    except TypeError as e:
        raise InputError(f"bad train config: {e}") from None


def _model_config(cfg: dict, n_signals: int, window_len: int) -> ModelConfig:
    sec = _section(cfg, "model")
    for key, value in (("n_signals", n_signals), ("window_len", window_len)):
        if key in sec and sec[key] is not None and int(sec[key]) != value:
            raise InputError(
                f"config model.{key}={sec[key]} conflicts with the data/windowing "
                f"value {value}"
            )
        sec[key] = value
    try:
        return ModelConfig.from_dict(sec)
    except TypeError as e:
        raise InputError(f"bad model config: {e}") from None


def _apply_ablation(model_cfg: ModelConfig, train_cfg: TrainConfig, name: str):
    if name == "none":
        return model_cfg, train_cfg
    variants = ablation_variants(model_cfg)
    key = name.replace("-", "_")
    model_cfg = variants[key]
    if name == "no-sparsity":
        from dataclasses import replace

        train_cfg = replace(train_cfg, lam=0.0)
    return model_cfg, train_cfg


def _stride_for(cfg: dict, ckpt) -> int:
    """Stride precedence: explicit config, then the stride recorded in
    the checkpoint at train time, then non-overlapping windows."""
    sec = _section(cfg, "windowing")
    if sec.get("stride") is not None:
        return int(sec["stride"])
    stored = (ckpt.meta or {}).get("resolved_config", {}).get("windowing", {})
    if stored.get("stride") is not None:
        return int(stored["stride"])
    return ckpt.config.window_len


def _detect_section(cfg: dict, args) -> dict:
    sec = _section(cfg, "detect")
    out = {
        "threshold": sec.get("threshold"),
        "target_fpr": sec.get("target_fpr"),
        "eps_mode": sec.get("eps_mode", "zero"),
        "eps_seed": int(sec.get("eps_seed", 0)),
    }
    if getattr(args, "threshold", None) is not None:
        out["threshold"] = args.threshold
    if getattr(args, "target_fpr", None) is not None:
        out["target_fpr"] = args.target_fpr
    return out


def _write_json(path: str | Path, doc: dict):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# -- commands ----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _load_config_file(args.config)
    sec = _section(cfg, "synth")
    if args.seed is not None:
        sec["seed"] = args.seed
    if args.num_normal is not None:
        sec["num_normal"] = args.num_normal
    if args.num_anomalous is not None:
        sec["num_anomalous"] = args.num_anomalous
    sec.setdefault("num_normal", 0)
    sec.setdefault("num_anomalous", 0)
    if "anomaly_kinds" in sec:
        sec["anomaly_kinds"] = tuple(sec["anomaly_kinds"])
    if sec.get("anomaly_features") is not None:
        sec["anomaly_features"] = tuple(sec["anomaly_features"])
    try:
        synth_cfg = SynthConfig(**sec)
    except TypeError as e:
        raise InputError(f"bad synth config: {e}") from None
    records = synth_generate(synth_cfg)
    resolved = {"command": "gen-data", "synth": synth_cfg.to_dict()}
    save_records(records, args.out, manifest_extra={"resolved_config": resolved})
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config_file(args.config)
    windowing = _windowing(cfg)
    train_cfg = _train_config(cfg, args.seed)
    records = load_records(args.data)
    if args.freq_downsample > 1:
        records = [downsample(r, args.freq_downsample) for r in records]
    n_signals = records[0].n_signals
    model_cfg = _model_config(cfg, n_signals, windowing.window_len)
    model_cfg, train_cfg = _apply_ablation(model_cfg, train_cfg, args.ablation)

    result = train(records, model_cfg, train_cfg, windowing)

    resolved = {
        "command": "train",
        "data": str(args.data),
        "freq_downsample": args.freq_downsample,
        "ablation": args.ablation,
        "model": model_cfg.to_dict(),
        "train": train_cfg.to_dict(),
        "windowing": {"window_len": windowing.window_len, "stride": windowing.stride},
    }
    save_checkpoint(
        args.out,
        model_cfg,
        result.generator,
        result.discriminator,
        result.norm_stats,
        calibration=None,
        meta={"resolved_config": resolved},
    )
    log_path = args.log if args.log else str(args.out) + ".log.jsonl"
    with open(log_path, "w") as fh:
        for entry in result.log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    last = result.log[-1]
    print(
        f"trained {train_cfg.epochs} epochs; final mean_L_mse="
        f"{last['mean_L_mse']:.4f}; checkpoint -> {args.out}"
    )
    return 0


def _require_all_normal(records, what: str):
    for r in records:
        if r.label != LABEL_NORMAL:
            raise InputError(
                f"{what} must contain only normal records; '{r.sample_id}' is "
                f"labeled '{r.label}'"
            )


def cmd_calibrate(args) -> int:
    cfg = _load_config_file(args.config)
    ckpt = load_checkpoint(args.checkpoint)
    detect_sec = _detect_section(cfg, args)
    records = load_records(args.data)
    _require_all_normal(records, "calibration data")
    windowing = WindowingConfig(
        window_len=ckpt.config.window_len, stride=_stride_for(cfg, ckpt)
    )
    windows = []
    for r in records:
        if r.n_signals != ckpt.config.n_signals:
            raise InputError(
                f"record '{r.sample_id}' has {r.n_signals} signals, checkpoint "
                f"expects {ckpt.config.n_signals}"
            )
        if window_count(r.n_frames, windowing) == 0:
            print(
                f"warning: record '{r.sample_id}' is shorter than one window; skipped",
                file=sys.stderr,
            )
            continue
        windows.extend(sliding_windows(r, windowing))
    if ckpt.calibration is not None:
        print("warning: checkpoint is already calibrated; overwriting", file=sys.stderr)
    runtime = ScoringRuntime.from_checkpoint(ckpt)
    stats = calibrate(
        runtime, windows, eps_mode=detect_sec["eps_mode"], eps_seed=detect_sec["eps_seed"]
    )
    meta = dict(ckpt.meta or {})
    meta["calibration_config"] = {
        "command": "calibrate",
        "data": str(args.data),
        "eps_mode": detect_sec["eps_mode"],
        "eps_seed": detect_sec["eps_seed"],
        "stride": windowing.stride,
    }
    out = args.out if args.out else args.checkpoint
    save_checkpoint(
        out,
        ckpt.config,
        ckpt.generator,
        ckpt.discriminator,
        ckpt.norm_stats,
        calibration=stats,
        meta=meta,
    )
    print(
        f"calibrated on {stats.n_windows} windows: mu={stats.mu:.6g} "
        f"sigma={stats.sigma:.6g} -> {out}"
    )
    return 0


def _loaded_calibration(ckpt: Checkpoint) -> CalibrationStats:
    if ckpt.calibration is None:
        raise InputError(
            "checkpoint has no calibration stats; run `flowad calibrate` first"
        )
    return CalibrationStats.from_dict(ckpt.calibration)


def cmd_eval(args) -> int:
    cfg = _load_config_file(args.config)
    ckpt = load_checkpoint(args.checkpoint)
    calib = _loaded_calibration(ckpt)
    records = load_records(args.data)
    windowing = WindowingConfig(
        window_len=ckpt.config.window_len, stride=_stride_for(cfg, ckpt)
    )
    runtime = ScoringRuntime.from_checkpoint(ckpt)
    report = evaluate(
        records, runtime, calib, windowing, eps_mode=calib.eps_mode,
        eps_seed=_detect_section(cfg, args)["eps_seed"],
    )
    report["resolved_config"] = {
        "command": "eval",
        "checkpoint": str(args.checkpoint),
        "data": str(args.data),
        "eps_mode": calib.eps_mode,
        "model": ckpt.config.to_dict(),
        "windowing": {"window_len": windowing.window_len, "stride": windowing.stride},
    }
    if args.roc_out:
        from .evaluation import score_records

        scored, _ = score_records(records, runtime, calib, windowing, calib.eps_mode)
        scores = np.array([r.record_score for r in scored])
        labels = np.array([r.label != LABEL_NORMAL for r in scored])
        points = roc_curve(scores, labels)
        with open(args.roc_out, "w") as fh:
            fh.write("fpr,tpr\n")
            for fpr, tpr in points:
                fh.write(f"{float(fpr)!r},{float(tpr)!r}\n")
    _write_json(args.out, report)
    print(
        f"overall AUROC {report['overall_mean']:.4f} +/- {report['overall_std']:.4f} "
        f"over {len(report['per_type'])} types -> {args.out}"
    )
    return 0


def _frame_lines(source):
    for line_no, line in enumerate(source, start=1):
        line = line.strip()
        if not line:
            continue
        cells = line.split(",")
        try:
            int(cells[0])
            values = [float(c) for c in cells[1:]]
        except ValueError:
            raise InputError(
                f"stream line {line_no}: expected `frame_idx,sig_0,...`, got {line!r}"
            ) from None
        yield np.array(values, dtype=np.float64)


def cmd_detect(args) -> int:
    cfg = _load_config_file(args.config)
    ckpt = load_checkpoint(args.checkpoint)
    calib = _loaded_calibration(ckpt)
    detect_sec = _detect_section(cfg, args)
    if detect_sec["threshold"] is not None and args.target_fpr is not None:
        raise InputError("give either --threshold or --target-fpr, not both")
    if detect_sec["threshold"] is not None:
        theta = float(detect_sec["threshold"])
    elif detect_sec["target_fpr"] is not None:
        theta = threshold_for_fpr(calib, float(detect_sec["target_fpr"]))
    else:
        raise InputError("a decision threshold is required: --threshold or --target-fpr")
    windowing = WindowingConfig(
        window_len=ckpt.config.window_len, stride=_stride_for(cfg, ckpt)
    )
    det_cfg = DetectorConfig(
        theta=theta,
        windowing=windowing,
        eps_mode=detect_sec["eps_mode"],
        eps_seed=detect_sec["eps_seed"],
        stride_period_s=args.stride_period_s,
    )
    runtime = ScoringRuntime.from_checkpoint(ckpt)
    detector = StreamDetector(runtime, calib, det_cfg)
    source = sys.stdin if args.input == "-" else open(args.input)
    try:
        for frame in _frame_lines(source):
            verdict = detector.push(frame)
            if verdict is not None:
                print(
                    json.dumps(
                        {
                            "window_start": verdict.window_start,
                            "score": verdict.score,
                            "is_anomaly": verdict.is_anomaly,
                            "inference_us": verdict.inference_us,
                        }
                    ),
                    flush=True,
                )
    finally:
        if source is not sys.stdin:
            source.close()
    return 0


def cmd_bench(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.calibration is not None:
        calib = CalibrationStats.from_dict(ckpt.calibration)
        calibrated = True
    else:
        calib = CalibrationStats(mu=0.0, sigma=1.0)
        calibrated = False
    cfg = ckpt.config
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    raw = ckpt.norm_stats.mean + ckpt.norm_stats.std * rng.standard_normal(
        (args.windows, cfg.window_len, cfg.n_signals)
    )
    runtime = ScoringRuntime.from_checkpoint(ckpt)
    report = bench_latency(
        runtime, calib, list(raw), repetitions=args.repetitions, warmup=args.warmup
    )
    doc = report.to_dict()
    doc["calibrated"] = calibrated
    doc["resolved_config"] = {
        "command": "bench",
        "checkpoint": str(args.checkpoint),
        "windows": args.windows,
        "repetitions": args.repetitions,
        "model": cfg.to_dict(),
    }
    if args.out:
        _write_json(args.out, doc)
    print(
        f"IQR-mean latency {report.iqr_mean_us:.1f} us over "
        f"{len(report.timings_us)} inferences (Q1 {report.q1_us:.1f}, "
        f"Q3 {report.q3_us:.1f})"
    )
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowad",
        description="Streaming multivariate time-series anomaly detection "
        "with a flow-transformed adversarial autoencoder.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset CSV + manifest")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--num-normal", type=int, default=None)
    p.add_argument("--num-anomalous", type=int, default=None)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on normal records")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True, help="training CSV (all-normal)")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--freq-downsample", type=int, default=1, metavar="N",
                   help="keep every N-th frame before windowing")
    p.add_argument("--ablation", choices=ABLATIONS, default="none")
    p.add_argument("--log", default=None, help="training log path (JSON-lines)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="fit normal-error statistics")
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="normal CSV, typically the training file")
    p.add_argument("--out", default=None, help="output checkpoint (default: in place)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("eval", help="evaluate AUROC on a labeled test set")
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--roc-out", default=None, help="optional ROC points CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("detect", help="stream frames and emit verdicts")
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", default="-", help="frame-line file, or - for stdin")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--target-fpr", type=float, default=None)
    p.add_argument("--stride-period-s", type=float, default=None,
                   help="real-time budget per verdict; overruns warn")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("bench", help="measure single-window inference latency")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--windows", type=int, default=128)
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--warmup", type=int, default=20)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="optional report JSON path")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FlowadError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        # downstream consumer closed the pipe; hand stdout a sink so the
        # interpreter's final flush does not raise again
        devnull = os.open(os.devnull, os.O_WRONLY)
        os.dup2(devnull, sys.stdout.fileno())
        return 1
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
