"""ffmpeg subprocess wrapper: H.264 roundtrips and lossless video file I/O.

All pixel data crosses the process boundary as raw RGB24 frames. The H.264
path is pinned to yuv420p / preset medium / gop 8 / single-threaded encoding
so a roundtrip is bit-reproducible on one machine. High-accuracy scaler flags
keep the RGB <-> YUV conversion loss down to what chroma subsampling itself
costs.
"""

import os
import re
import shutil
import subprocess
import tempfile
from pathlib import Path

import numpy as np

CODEC_PATH_ENV = "ITOV_CODEC_PATH"

# accurate_rnd/full_chroma keep CRF-0 roundtrips near-transparent on smooth content
_SWS_FLAGS = "lanczos+accurate_rnd+full_chroma_int+full_chroma_inp"

_H264_ENCODE = [
    "-c:v", "libx264",
    "-preset", "medium",
    "-pix_fmt", "yuv420p",
    "-g", "8",
    "-threads", "1",
]


class CodecError(RuntimeError):
    """Raised when the external codec tool fails or is missing."""


_tool_cache = None


def find_codec_tool():
    """Locate the ffmpeg executable.

    Resolution order: ITOV_CODEC_PATH env var, then PATH. The result is
    cached for the process lifetime.
    """
    global _tool_cache
    if _tool_cache is not None:
        return _tool_cache
    override = os.environ.get(CODEC_PATH_ENV)
    if override:
        if not os.path.isfile(override) or not os.access(override, os.X_OK):
            raise CodecError(f"{CODEC_PATH_ENV}={override!r} is not an executable file")
        _tool_cache = override
        return _tool_cache
    found = shutil.which("ffmpeg")
    if found is None:
        raise CodecError(
            "no ffmpeg executable found; install one with libx264 support "
            f"or point {CODEC_PATH_ENV} at it"
        )
    _tool_cache = found
    return _tool_cache


def codec_tool_available():
    try:
        find_codec_tool()
        return True
    except CodecError:
        return False


def _run(args, input_bytes=None):
    tool = find_codec_tool()
    cmd = [tool, "-y", "-loglevel", "error"] + args
    proc = subprocess.run(cmd, input=input_bytes, capture_output=True)
    if proc.returncode != 0:
        raise CodecError(
            f"codec tool failed (exit {proc.returncode}): {' '.join(cmd)}\n"
            + proc.stderr.decode(errors="replace")
        )
    return proc.stdout


def _rawvideo_input(width, height, frame_rate):
    return [
        "-f", "rawvideo",
        "-pix_fmt", "rgb24",
        "-s", f"{width}x{height}",
        "-r", str(frame_rate),
        "-i", "pipe:0",
        "-sws_flags", _SWS_FLAGS,
    ]


def _check_uint8_frames(frames):
    frames = np.ascontiguousarray(frames)
    if frames.ndim != 4 or frames.shape[3] != 3 or frames.dtype != np.uint8:
        raise ValueError(f"expected uint8 frames of shape (L, H, W, 3), got {frames.shape} {frames.dtype}")
    return frames


def h264_roundtrip_frames(frames, crf, frame_rate=30):
    """Encode uint8 (L, H, W, 3) frames to H.264 at the given CRF and decode back.

    Returns uint8 frames of the same shape. The bitstream lives in a temp
    file; raw pixels travel through pipes.
    """
    frames = _check_uint8_frames(frames)
    if not 0 <= crf <= 51:
        raise ValueError(f"crf must be in [0, 51], got {crf}")
    n, height, width, _ = frames.shape
    with tempfile.TemporaryDirectory(prefix="itov_h264_") as tmp:
        bitstream = os.path.join(tmp, "clip.mp4")
        _run(
            _rawvideo_input(width, height, frame_rate)
            + _H264_ENCODE + ["-crf", str(int(crf)), bitstream],
            input_bytes=frames.tobytes(),
        )
        out = _run([
            "-i", bitstream,
            "-sws_flags", _SWS_FLAGS,
            "-f", "rawvideo", "-pix_fmt", "rgb24",
            "-vsync", "0", "-threads", "1",
            "pipe:1",
        ])
    expected = n * height * width * 3
    if len(out) != expected:
        raise CodecError(
            f"H.264 roundtrip changed frame count: got {len(out)} bytes, expected {expected}"
        )
    return np.frombuffer(out, np.uint8).reshape(frames.shape).copy()


def write_video_file(path, frames, frame_rate=30, codec="ffv1"):
    """Write uint8 (L, H, W, 3) frames to a video file.

    codec 'ffv1' (lossless, default) targets .mkv/.avi containers; 'h264'
    takes an extra crf via write_video_file_h264. Watermarked output should
    stay lossless so any later compression is an explicit, accounted-for step.
    """
    frames = _check_uint8_frames(frames)
    n, height, width, _ = frames.shape
    path = str(path)
    if codec == "ffv1":
        encode = ["-c:v", "ffv1", "-level", "3", "-pix_fmt", "rgb24", "-threads", "1"]
    elif codec == "rawvideo":
        # AVI stores raw frames with DIB (BGR) channel order; storing bgr24 is
        # a lossless channel permutation and decodes back to the same RGB
        encode = ["-c:v", "rawvideo", "-pix_fmt", "bgr24"]
    else:
        raise ValueError(f"unsupported lossless codec {codec!r}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    _run(_rawvideo_input(width, height, frame_rate) + encode + [path], input_bytes=frames.tobytes())


def write_video_file_h264(path, frames, crf, frame_rate=30):
    frames = _check_uint8_frames(frames)
    if not 0 <= crf <= 51:
        raise ValueError(f"crf must be in [0, 51], got {crf}")
    n, height, width, _ = frames.shape
    Path(str(path)).parent.mkdir(parents=True, exist_ok=True)
    _run(
        _rawvideo_input(width, height, frame_rate)
        + _H264_ENCODE + ["-crf", str(int(crf)), str(path)],
        input_bytes=frames.tobytes(),
    )


def probe_video(path):
    """Return (n_frames, height, width) of a video file.

    Dimensions come from the demuxer banner; the frame count from a decode
    pass, which is exact for the short clips this toolkit handles.
    """
    path = str(path)
    if not os.path.isfile(path):
        raise CodecError(f"no such video file: {path}")
    tool = find_codec_tool()
    proc = subprocess.run([tool, "-hide_banner", "-i", path], capture_output=True)
    banner = proc.stderr.decode(errors="replace")
    m = re.search(r"Video:.*?(\d{2,5})x(\d{2,5})", banner)
    if m is None:
        raise CodecError(f"could not parse video dimensions for {path}:\n{banner}")
    width, height = int(m.group(1)), int(m.group(2))
    out = _run([
        "-i", path,
        "-f", "rawvideo", "-pix_fmt", "rgb24",
        "-vsync", "0", "pipe:1",
    ])
    frame_bytes = height * width * 3
    if len(out) % frame_bytes != 0:
        raise CodecError(f"decoded byte count {len(out)} is not a whole number of {width}x{height} frames")
    return len(out) // frame_bytes, height, width


def read_video_frames(path, start_frame=0, frame_count=None):
    """Decode a video file to uint8 (L, H, W, 3) frames.

    Decodes the whole file and slices the requested window, which is
    frame-accurate regardless of container seeking quirks.
    """
    n_frames, height, width = probe_video(path)
    out = _run([
        "-i", str(path),
        "-sws_flags", _SWS_FLAGS,
        "-f", "rawvideo", "-pix_fmt", "rgb24",
        "-vsync", "0", "pipe:1",
    ])
    frames = np.frombuffer(out, np.uint8).reshape(n_frames, height, width, 3)
    if frame_count is None:
        frame_count = n_frames - start_frame
    if start_frame < 0 or frame_count < 1 or start_frame + frame_count > n_frames:
        raise ValueError(
            f"requested frames [{start_frame}, {start_frame + frame_count}) "
            f"out of range for a {n_frames}-frame video"
        )
    return frames[start_frame:start_frame + frame_count].copy()
