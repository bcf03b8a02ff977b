"""Shared fixtures: synthetic video corpora and trained toy models.

The corpora are drifting sums of sinusoids. They are smooth enough that
H.264 keeps them mostly intact at moderate CRF (so compression tests see
codec behaviour, not content destruction) while still giving every clip
its own texture and motion.
"""

import time
import warnings

import numpy as np
import pytest
import torch

from itov import codec
from itov.video import ClipManifest, ManifestEntry


def smooth_frames(n, h, w, seed):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yy, xx = yy / h, xx / w
    out = np.zeros((n, h, w, 3))
    for c in range(3):
        for _ in range(2):
            fy, fx = rng.uniform(0.4, 2.5, 2)
            ph = rng.uniform(0, 2 * np.pi, 2)
            sp = rng.uniform(-0.06, 0.06, 2)
            amp = rng.uniform(0.1, 0.22)
            for t in range(n):
                out[t, :, :, c] += amp * np.sin(2 * np.pi * (fy * yy + sp[0] * t) + ph[0]) \
                    * np.cos(2 * np.pi * (fx * xx + sp[1] * t) + ph[1])
        out[:, :, :, c] += rng.uniform(0.35, 0.6)
    return (np.clip(out, 0, 1) * 255).round().astype(np.uint8)


def write_corpus(root, specs, seed=0):
    """specs: iterable of (name, n_frames, height, width, content_seed)."""
    entries = []
    for name, n, h, w, content_seed in specs:
        path = root / name
        codec.write_video_file(path, smooth_frames(n, h, w, content_seed))
        n_probe, h_probe, w_probe = codec.probe_video(path)
        assert (n_probe, h_probe, w_probe) == (n, h, w)
        entries.append(ManifestEntry(path=str(path), n_frames=n, width=w, height=h))
    return ClipManifest(entries, seed=seed)


@pytest.fixture(scope="session")
def media_manifest(tmp_path_factory):
    """Two mid-size source videos, large enough for 8x128x128 clip sampling."""
    root = tmp_path_factory.mktemp("media")
    manifest = write_corpus(root, [
        ("vid0.mkv", 12, 144, 160, 31),
        ("vid1.mkv", 10, 136, 128, 32),
    ])
    manifest.save(root / "manifest.json")
    manifest.path = root / "manifest.json"
    return manifest


@pytest.fixture(scope="session")
def toy_manifest(tmp_path_factory):
    """Sixteen 8-frame 64x64 clips used by the toy training runs."""
    root = tmp_path_factory.mktemp("toy_corpus")
    manifest = write_corpus(
        root, [(f"clip{i:02d}.mkv", 8, 64, 64, 500 + i) for i in range(16)]
    )
    manifest.save(root / "manifest.json")
    manifest.path = root / "manifest.json"
    return manifest


@pytest.fixture(scope="session")
def toy_run(toy_manifest, tmp_path_factory):
    """Trained toy models shared by the end-to-end gates.

    Four runs hang off one shared clean stage:
      clean       message recovery on undistorted clips
      hardened    the clean model pushed through a light attack curriculum
      compressed  a compression-heavy run used for CRF sweeps
      pair_on/off an ablation pair continuing `compressed` with configs
                  that differ only in the frame-evenness weight

    Wall time per run is recorded so the gates can check their budgets.
    """
    from itov.distortions import DistortionTemplate
    from itov.metrics import LossWeights
    from itov.model import ModelConfig
    from itov.training import TrainingConfig, train_stage

    root = tmp_path_factory.mktemp("toy_runs")
    model = ModelConfig(message_length=16, frames=8, height=64, width=64,
                        block_kind="depthwise2d", channels=24, init_seed=1)
    seconds = {}

    def timed(name, config, **kwargs):
        start = time.monotonic()
        result = train_stage(config, toy_manifest, root / name, **kwargs)
        seconds[name] = time.monotonic() - start
        return str(result.checkpoint_path)

    clean = timed("clean", TrainingConfig(
        model=model, stage="noise_free", steps=2200, batch_size=8,
        learning_rate=1.5e-3, weights=LossWeights(2.0, 1.0, 0.0),
        seed=0, log_every=200,
    ))

    hardened = timed("hardened", TrainingConfig(
        model=model, stage="with_noise", steps=1800, batch_size=8,
        learning_rate=7e-4, weights=LossWeights(2.5, 1.0, 0.05),
        templates=[
            DistortionTemplate("identity", {}),
            DistortionTemplate("gaussian_noise", {"std": (0.02, 0.02)}),
            DistortionTemplate("gaussian_blur", {"sigma": (1.0, 1.0)}),
            DistortionTemplate("frame_swap", {"p": (0.5, 0.5)}),
        ],
        seed=1, log_every=200,
    ), init_from=clean)

    compressed = timed("compressed", TrainingConfig(
        model=model, stage="with_noise", steps=1200, batch_size=8,
        learning_rate=7e-4, weights=LossWeights(1.0, 0.01, 0.0),
        templates=[
            DistortionTemplate("identity", {}),
            DistortionTemplate("gaussian_noise", {"std": (0.02, 0.02)}),
            DistortionTemplate("h264", {"crf": (18, 40)}),
        ],
        seed=3, log_every=200,
    ), init_from=clean)

    pair = {}
    for name, frame_weight in (("pair_on", 0.05), ("pair_off", 0.0)):
        # identity-only continuation: with no attack sampling the decoder
        # demand is frame-symmetric, so the compression-induced PSNR tilt
        # only gets pulled flat when the evenness term asks for it
        config = TrainingConfig(
            model=model, stage="with_noise", steps=3600, batch_size=8,
            learning_rate=7e-4, weights=LossWeights(0.0, 1.0, frame_weight),
            templates=[DistortionTemplate("identity", {})],
            seed=3, log_every=600,
        )
        with warnings.catch_warnings():
            # the continuation deliberately changes the objective
            warnings.simplefilter("ignore")
            pair[name] = timed(name, config, resume_from=compressed)

    return {"model": model, "clean": clean, "hardened": hardened,
            "compressed": compressed, "seconds": seconds, **pair}
