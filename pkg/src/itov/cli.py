"""Command line front end: train, evaluate, and poke at watermarked clips."""

import argparse
import csv
import json
import sys
from pathlib import Path

import torch

from . import codec, figures
from .distortions import apply_distortion, evaluation_distortion_set, parse_distortion_spec
from .evaluate import EvaluationReport, evaluate_models, sweep_crf, write_report_files
from .metrics import bit_accuracy, psnr
from .model import Message, decode, encode, threshold_message
from .training import CheckpointMismatchError, TrainingConfig, load_models, train_stage
from .video import ClipManifest, MalformedInputError, load_clip


def _load_model_clip(path, config, start_frame):
    clip = load_clip(path, start_frame=start_frame, frame_count=config.frames)
    if (clip.height, clip.width) != (config.height, config.width):
        raise MalformedInputError(
            f"{path} is {clip.height}x{clip.width}, the model expects "
            f"{config.height}x{config.width}"
        )
    return clip


def _parse_distortions(values):
    if values is None or values == ["all"]:
        return None  # evaluate_models falls back to the benchmark grid
    return [parse_distortion_spec(v) for v in values]


def cmd_train(args):
    # the config JSON may carry manifest/out_dir/init_from so a run is fully
    # described by one file; command-line flags override
    raw = json.loads(Path(args.config).read_text())
    manifest_path = args.manifest or raw.pop("manifest", None)
    out_dir = args.out_dir or raw.pop("out_dir", None)
    init_from = args.init or raw.pop("init_from", None)
    for key in ("manifest", "out_dir", "init_from"):
        raw.pop(key, None)
    if manifest_path is None:
        raise ValueError("no clip manifest: pass --manifest or put a 'manifest' key in the config")
    if out_dir is None:
        raise ValueError("no output directory: pass --out-dir or put an 'out_dir' key in the config")
    config = TrainingConfig.from_dict(raw)
    manifest = ClipManifest.load(manifest_path)
    result = train_stage(
        config, manifest, out_dir,
        init_from=init_from, resume_from=args.resume,
    )
    print(f"stage {config.stage}: ran {result.steps_run} steps"
          + (" (early stop)" if result.stopped_early else ""))
    if result.history:
        last = result.history[-1]
        print(f"final batch: loss={last['loss']:.6f} bit_accuracy={last['bit_accuracy']:.2f}% "
              f"psnr={last['psnr']:.2f}dB")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def cmd_evaluate(args):
    encoder, decoder, _ = load_models(args.model)
    manifest = ClipManifest.load(args.manifest)
    report = evaluate_models(
        encoder, decoder, manifest,
        specs=_parse_distortions(args.distortions),
        n_clips=args.n_clips, seed=args.seed,
        model_id=Path(args.model).name, dataset_id=args.manifest,
    )
    out = Path(args.out)
    paths = write_report_files(report, out.parent, stem=out.stem)
    q = report.quality
    print(f"watermark quality: psnr mean={q['psnr_mean']:.2f}dB "
          f"std={q['psnr_std']:.3f} min={q['psnr_min']:.2f}dB")
    print("distortion\tparams\tbit_accuracy_percent")
    for kind, params, acc in report.accuracy_rows():
        print(f"{kind}\t{params}\t{acc:.4f}")
    for name, path in paths.items():
        print(f"wrote {name}: {path}")
    return 0


def cmd_sweep_crf(args):
    if args.min > args.max:
        raise ValueError(f"--min {args.min} exceeds --max {args.max}")
    if not 0 <= args.min <= 51 or not 0 <= args.max <= 51:
        raise ValueError("CRF bounds must lie in [0, 51]")
    if args.step < 1:
        raise ValueError("--step must be >= 1")
    crf_values = list(range(args.min, args.max + 1, args.step))
    encoder, decoder, _ = load_models(args.model)
    manifest = ClipManifest.load(args.manifest)
    sweep = sweep_crf(encoder, decoder, manifest, crf_values,
                      n_clips=args.n_clips, seed=args.seed)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(sweep, indent=2) + "\n")
    csv_path = out.with_suffix(".csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["crf", "bit_accuracy_percent"])
        for point in sweep:
            writer.writerow([point["crf"], f"{point['bit_accuracy']:.4f}"])
    figure = figures.save_crf_curve(
        {Path(args.model).name: [(p["crf"], p["bit_accuracy"]) for p in sweep]},
        out.with_suffix(".png"),
    )
    print("crf\tbit_accuracy_percent")
    for point in sweep:
        print(f"{point['crf']}\t{point['bit_accuracy']:.4f}")
    print(f"wrote json: {out}")
    print(f"wrote csv: {csv_path}")
    print(f"wrote figure: {figure}")
    return 0


def cmd_embed(args):
    encoder, _, _ = load_models(args.model)
    config = encoder.config
    if args.message:
        message = Message.from_hex(args.message, config.message_length)
    else:
        message = Message.random(config.message_length, seed=args.seed)
    cover = _load_model_clip(args.input, config, args.start_frame)
    watermarked = encode(cover, message, encoder)
    codec.write_video_file(args.output, watermarked.to_uint8(), codec=args.codec)
    print(f"message: {message.to_hex()}")
    print(f"psnr: {psnr(cover.pixels, watermarked.pixels):.2f}dB")
    print(f"wrote: {args.output}")
    return 0


def cmd_extract(args):
    _, decoder, _ = load_models(args.model)
    config = decoder.config
    clip = _load_model_clip(args.input, config, args.start_frame)
    logits = decode(clip, decoder)
    message = threshold_message(logits)
    margins = (logits - 0.5).tolist()
    confidence = float(torch.mean(torch.abs(logits - 0.5)))
    print("bits: " + "".join(str(b) for b in message.bits))
    print(f"message: {message.to_hex()}")
    print("margins: " + " ".join(f"{m:+.3f}" for m in margins))
    print(f"confidence: {confidence:.4f}")
    if args.expect:
        expected = Message.from_hex(args.expect, config.message_length)
        acc = bit_accuracy(expected, message)
        print(f"bit_accuracy: {acc:.2f}%")
    return 0


def cmd_attack(args):
    spec = parse_distortion_spec(args.distortion)
    clip = load_clip(args.input, start_frame=args.start_frame, frame_count=args.frames)
    attacked = apply_distortion(clip, spec, seed=args.seed)
    codec.write_video_file(args.output, attacked.to_uint8(), codec=args.codec)
    print(f"applied: {spec.describe()}")
    print(f"wrote: {args.output}")
    return 0


def cmd_report(args):
    reports = [EvaluationReport.load(p) for p in args.inputs]
    labels = args.labels or [Path(p).stem for p in args.inputs]
    if len(labels) != len(reports):
        raise ValueError(f"{len(reports)} reports but {len(labels)} labels")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    with open(out_dir / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source", "distortion", "params", "bit_accuracy_percent"])
        for label, report in zip(labels, reports):
            for kind, params, acc in report.accuracy_rows():
                writer.writerow([label, kind, params, f"{acc:.4f}"])

    merged = {
        label: report.to_dict() for label, report in zip(labels, reports)
    }
    (out_dir / "report.json").write_text(json.dumps(merged, indent=2) + "\n")

    kinds = []
    for report in reports:
        for r in report.results:
            if r.kind not in kinds:
                kinds.append(r.kind)
    series = {
        label: {r.kind: r.bit_accuracy for r in report.results}
        for label, report in zip(labels, reports)
    }
    paths = [out_dir / "report.csv", out_dir / "report.json"]
    paths.append(figures.save_grouped_accuracy_bars(kinds, series, out_dir / "report_accuracy.png"))

    sweeps = {
        label: [(p["crf"], p["bit_accuracy"]) for p in report.crf_sweep]
        for label, report in zip(labels, reports)
        if report.crf_sweep
    }
    if sweeps:
        paths.append(figures.save_crf_curve(sweeps, out_dir / "report_crf_sweep.png"))

    print("source\tdistortion\tparams\tbit_accuracy_percent")
    for label, report in zip(labels, reports):
        for kind, params, acc in report.accuracy_rows():
            print(f"{label}\t{kind}\t{params}\t{acc:.4f}")
    for path in paths:
        print(f"wrote: {path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="itov",
        description="Video watermarking: train, benchmark, embed, and attack.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one training stage from a JSON config")
    p.add_argument("--config", required=True, help="TrainingConfig JSON path")
    p.add_argument("--manifest", default=None,
                   help="clip manifest JSON path (or a 'manifest' key in the config)")
    p.add_argument("--out-dir", default=None,
                   help="run directory (or an 'out_dir' key in the config)")
    p.add_argument("--init", default=None,
                   help="warm-start checkpoint (required for the with_noise stage)")
    p.add_argument("--resume", default=None, help="continue an interrupted run")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="benchmark a checkpoint against the attack grid")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--manifest", required=True)
    p.add_argument("--distortions", nargs="+", default=["all"],
                   help='"all" or specs like h264:crf=22 gaussian_blur:sigma=2.0')
    p.add_argument("--n-clips", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True,
                   help="JSON report path; CSV and figures land alongside it")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep-crf", help="bit accuracy across compression strengths")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--min", type=int, default=0)
    p.add_argument("--max", type=int, default=51)
    p.add_argument("--step", type=int, default=5)
    p.add_argument("--n-clips", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True,
                   help="JSON sweep path; CSV and figure land alongside it")
    p.set_defaults(func=cmd_sweep_crf)

    p = sub.add_parser("embed", help="watermark a clip from a video file")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--message", default=None, help="hex payload; random if omitted")
    p.add_argument("--seed", type=int, default=0, help="seed for a random payload")
    p.add_argument("--start-frame", type=int, default=0)
    p.add_argument("--codec", default="ffv1", choices=["ffv1", "rawvideo"],
                   help="lossless output codec")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("extract", help="recover the payload from a watermarked clip")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--start-frame", type=int, default=0)
    p.add_argument("--expect", default=None, help="hex payload to score against")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("attack", help="apply one distortion to a video file")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--distortion", required=True, help="e.g. gaussian_blur:sigma=2.0")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--start-frame", type=int, default=0)
    p.add_argument("--frames", type=int, default=None, help="frame count; whole file if omitted")
    p.add_argument("--codec", default="ffv1", choices=["ffv1", "rawvideo"])
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("report", help="merge saved evaluation reports into tables and figures")
    p.add_argument("--inputs", nargs="+", required=True, help="evaluation JSON files")
    p.add_argument("--labels", nargs="+", default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (codec.CodecError, CheckpointMismatchError, MalformedInputError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
