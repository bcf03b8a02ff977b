"""Figure rendering for evaluation reports (headless, writes PNG files)."""

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

DPI = 150


def _finish(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def save_accuracy_bars(labelled_accuracies, path, title="Bit accuracy by distortion"):
    """Horizontal bars, one per attack. Input: [(label, percent), ...]."""
    labels = [lab for lab, _ in labelled_accuracies]
    values = [acc for _, acc in labelled_accuracies]
    fig, ax = plt.subplots(figsize=(7, 0.5 * max(4, len(labels)) + 1))
    ypos = range(len(labels))
    ax.barh(ypos, values, color="#4878cf")
    ax.set_yticks(list(ypos))
    ax.set_yticklabels(labels)
    ax.invert_yaxis()
    ax.set_xlabel("bit accuracy (%)")
    ax.set_xlim(0, 100)
    ax.axvline(50, color="gray", linestyle=":", linewidth=1, label="chance")
    for y, v in zip(ypos, values):
        ax.text(min(v + 1, 99), y, f"{v:.1f}", va="center", fontsize=8)
    ax.set_title(title)
    ax.legend(loc="lower left", fontsize=8)
    return _finish(fig, path)


def save_grouped_accuracy_bars(kinds, series, path, title="Bit accuracy by distortion"):
    """Grouped bars comparing several reports. series: {label: {kind: percent}}."""
    fig, ax = plt.subplots(figsize=(max(7, 0.9 * len(kinds)), 4.5))
    width = 0.8 / max(1, len(series))
    for j, (label, by_kind) in enumerate(series.items()):
        xs = [i + j * width for i in range(len(kinds))]
        ax.bar(xs, [by_kind.get(k, 0.0) for k in kinds], width=width, label=label)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(kinds))])
    ax.set_xticklabels(kinds, rotation=30, ha="right")
    ax.set_ylabel("bit accuracy (%)")
    ax.set_ylim(0, 100)
    ax.axhline(50, color="gray", linestyle=":", linewidth=1)
    ax.set_title(title)
    ax.legend(fontsize=8)
    return _finish(fig, path)


def save_crf_curve(sweeps, path, title="Bit accuracy vs. compression strength"):
    """Accuracy against CRF. sweeps: {label: [(crf, percent), ...]}."""
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    for label, points in sweeps.items():
        points = sorted(points)
        ax.plot([c for c, _ in points], [a for _, a in points], marker="o", label=label)
    ax.set_xlabel("CRF (higher = stronger compression)")
    ax.set_ylabel("bit accuracy (%)")
    ax.set_ylim(0, 101)
    ax.axhline(50, color="gray", linestyle=":", linewidth=1)
    ax.grid(True, alpha=0.3)
    ax.set_title(title)
    ax.legend(fontsize=8)
    return _finish(fig, path)


def save_frame_psnr(per_clip_frame_psnr, path, title="Per-frame watermark PSNR"):
    """One faint line per clip plus the across-clip mean, by frame index."""
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    finite_cap = 0.0
    for frames in per_clip_frame_psnr:
        finite = [v for v in frames if math.isfinite(v)]
        if finite:
            finite_cap = max(finite_cap, max(finite))
    cap = finite_cap if finite_cap > 0 else 100.0
    for frames in per_clip_frame_psnr:
        ys = [v if math.isfinite(v) else cap for v in frames]
        ax.plot(range(len(ys)), ys, color="#4878cf", alpha=0.3, linewidth=1)
    if per_clip_frame_psnr:
        length = min(len(f) for f in per_clip_frame_psnr)
        means = []
        for i in range(length):
            vals = [f[i] for f in per_clip_frame_psnr if math.isfinite(f[i])]
            means.append(sum(vals) / len(vals) if vals else cap)
        ax.plot(range(length), means, color="#d1022f", linewidth=2, label="mean")
        ax.legend(fontsize=8)
    ax.set_xlabel("frame index")
    ax.set_ylabel("PSNR (dB)")
    ax.grid(True, alpha=0.3)
    ax.set_title(title)
    return _finish(fig, path)
