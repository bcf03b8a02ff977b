"""Benchmark a trained encoder/decoder pair against the attack grid.

Clips and messages are drawn once per run; every attack sees the same
watermarked inputs so per-distortion accuracies (and CRF sweep points) are
directly comparable.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .distortions import DistortionSpec, apply_distortion_tensor, evaluation_distortion_set
from .metrics import bit_accuracy, per_frame_psnr
from .video import ClipManifest, sample_clips


@dataclass
class DistortionResult:
    kind: str
    params: dict
    bit_accuracy: float
    per_clip: list = field(default_factory=list)

    def describe(self):
        return DistortionSpec(self.kind, self.params).describe()

    def to_dict(self):
        return {
            "kind": self.kind,
            "params": self.params,
            "bit_accuracy": self.bit_accuracy,
            "per_clip": self.per_clip,
        }


@dataclass
class EvaluationReport:
    model: dict
    seed: int
    n_clips: int
    quality: dict
    results: list
    crf_sweep: list = None
    dataset: str = None

    def result_for(self, kind) -> DistortionResult:
        for r in self.results:
            if r.kind == kind:
                return r
        raise KeyError(f"no result for distortion kind {kind!r}")

    def to_dict(self):
        d = {
            "model": self.model,
            "seed": self.seed,
            "n_clips": self.n_clips,
            "quality": self.quality,
            "results": [r.to_dict() for r in self.results],
        }
        if self.crf_sweep is not None:
            d["crf_sweep"] = self.crf_sweep
        if self.dataset is not None:
            d["dataset"] = self.dataset
        return d

    @classmethod
    def from_dict(cls, d):
        results = [DistortionResult(**r) for r in d["results"]]
        return cls(
            model=d["model"],
            seed=d["seed"],
            n_clips=d["n_clips"],
            quality=d["quality"],
            results=results,
            crf_sweep=d.get("crf_sweep"),
            dataset=d.get("dataset"),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def accuracy_rows(self):
        """(label, params string, accuracy) per attack, for tables."""
        rows = []
        for r in self.results:
            params = ",".join(f"{k}={v}" for k, v in sorted(r.params.items()))
            rows.append((r.kind, params, r.bit_accuracy))
        return rows


def _model_summary(encoder, model_id=None):
    cfg = encoder.config
    summary = {
        "message_length": cfg.message_length,
        "frames": cfg.frames,
        "height": cfg.height,
        "width": cfg.width,
        "block_kind": cfg.block_kind,
        "strength_factor": cfg.strength_factor,
    }
    if model_id is not None:
        summary["id"] = str(model_id)
    return summary


def _draw_eval_batch(encoder, manifest, n_clips, seed):
    cfg = encoder.config
    dims = (cfg.frames, cfg.height, cfg.width)
    clips = sample_clips(manifest, n_clips, dims, seed=np.random.SeedSequence(entropy=seed, spawn_key=(0,)))
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))
    bits_np = rng.integers(0, 2, size=(n_clips, cfg.message_length))
    covers = torch.stack([c.pixels for c in clips])
    return covers, bits_np


def _watermark_eval(encoder, covers, bits_np):
    # one clip at a time, matching how single-clip embedding behaves
    bits = torch.from_numpy(bits_np).to(torch.float32)
    encoder.eval()
    out = []
    with torch.no_grad():
        for i in range(covers.shape[0]):
            out.append(encoder.watermark_clip_batch(covers[i:i + 1], bits[i:i + 1]))
    return torch.cat(out, dim=0)


def _decode_accuracy(decoder, attacked, bits_np):
    decoder.eval()
    with torch.no_grad():
        logits = decoder.decode_clip_batch(attacked.unsqueeze(0))
    pred = (logits.squeeze(0) >= 0.5).to(torch.int64)
    return bit_accuracy(bits_np, pred)


def evaluate_models(encoder, decoder, manifest: ClipManifest, specs=None,
                    n_clips=8, seed=0, crf_values=None, model_id=None,
                    dataset_id=None) -> EvaluationReport:
    """Accuracy per attack plus imperceptibility stats for one model."""
    if specs is None:
        specs = evaluation_distortion_set()
    covers, bits_np = _draw_eval_batch(encoder, manifest, n_clips, seed)
    watermarked = _watermark_eval(encoder, covers, bits_np)

    per_clip_frames = []
    for i in range(n_clips):
        per_clip_frames.append(per_frame_psnr(covers[i], watermarked[i]).per_frame_psnr)
    # frame-index profile over the whole eval batch: per-index MSE pooled
    # across clips, so per-clip content variation averages out and what is
    # left is how the encoder allocates the watermark across frame positions
    profile = per_frame_psnr(covers, watermarked)
    quality = {
        "psnr_mean": profile.mean,
        "psnr_std": profile.std,
        "psnr_min": profile.min,
        "per_frame_psnr": profile.per_frame_psnr,
        "per_clip_frame_psnr": per_clip_frames,
    }

    results = []
    for k, spec in enumerate(specs):
        per_clip = []
        for i in range(n_clips):
            attack_seed = int(np.random.SeedSequence(entropy=seed, spawn_key=(2, k, i)).generate_state(1)[0] % (2 ** 31))
            attacked = apply_distortion_tensor(watermarked[i], spec, seed=attack_seed)
            per_clip.append(_decode_accuracy(decoder, attacked, bits_np[i]))
        results.append(DistortionResult(
            kind=spec.kind,
            params=dict(spec.params),
            bit_accuracy=float(np.mean(per_clip)),
            per_clip=per_clip,
        ))

    sweep = None
    if crf_values is not None:
        sweep = _sweep_over_crf(decoder, watermarked, bits_np, crf_values)

    return EvaluationReport(
        model=_model_summary(encoder, model_id),
        seed=seed,
        n_clips=n_clips,
        quality=quality,
        results=results,
        crf_sweep=sweep,
        dataset=str(dataset_id) if dataset_id is not None else None,
    )


def _sweep_over_crf(decoder, watermarked, bits_np, crf_values):
    sweep = []
    for crf in crf_values:
        spec = DistortionSpec("h264", {"crf": int(crf)})
        accs = []
        for i in range(watermarked.shape[0]):
            attacked = apply_distortion_tensor(watermarked[i], spec)
            accs.append(_decode_accuracy(decoder, attacked, bits_np[i]))
        sweep.append({"crf": int(crf), "bit_accuracy": float(np.mean(accs)), "per_clip": accs})
    return sweep


def sweep_crf(encoder, decoder, manifest: ClipManifest, crf_values, n_clips=8, seed=0):
    """Accuracy versus compression strength on a common watermarked batch."""
    covers, bits_np = _draw_eval_batch(encoder, manifest, n_clips, seed)
    watermarked = _watermark_eval(encoder, covers, bits_np)
    return _sweep_over_crf(decoder, watermarked, bits_np, crf_values)


def write_report_files(report: EvaluationReport, out_dir, stem="evaluation"):
    """JSON + CSV + figures for one report. Returns the paths written."""
    import csv

    from . import figures

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}

    json_path = out_dir / f"{stem}.json"
    report.save(json_path)
    paths["json"] = json_path

    csv_path = out_dir / f"{stem}.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["distortion", "params", "bit_accuracy_percent"])
        for kind, params, acc in report.accuracy_rows():
            writer.writerow([kind, params, f"{acc:.4f}"])
    paths["csv"] = csv_path

    paths["accuracy_figure"] = figures.save_accuracy_bars(
        [(r.describe(), r.bit_accuracy) for r in report.results],
        out_dir / f"{stem}_accuracy.png",
    )
    paths["psnr_figure"] = figures.save_frame_psnr(
        report.quality["per_clip_frame_psnr"],
        out_dir / f"{stem}_frame_psnr.png",
    )
    if report.crf_sweep:
        sweep_csv = out_dir / f"{stem}_crf_sweep.csv"
        with open(sweep_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["crf", "bit_accuracy_percent"])
            for point in report.crf_sweep:
                writer.writerow([point["crf"], f"{point['bit_accuracy']:.4f}"])
        paths["crf_csv"] = sweep_csv
        paths["crf_figure"] = figures.save_crf_curve(
            {"model": [(p["crf"], p["bit_accuracy"]) for p in report.crf_sweep]},
            out_dir / f"{stem}_crf_sweep.png",
        )
    return paths
