"""ffmpeg wrapper: lossless file I/O and H.264 roundtrips."""

import numpy as np
import pytest

import itov.codec as codec
from itov.metrics import mse_to_psnr

from conftest import smooth_frames


def frames_psnr(a, b):
    mse = np.mean((a.astype(np.float64) / 255 - b.astype(np.float64) / 255) ** 2)
    return mse_to_psnr(mse)


@pytest.fixture
def smooth(request):
    return smooth_frames(8, 128, 128, seed=77)


class TestLosslessIO:
    def test_ffv1_roundtrip_exact(self, tmp_path):
        frames = np.random.default_rng(1).integers(0, 256, size=(5, 48, 64, 3), dtype=np.uint8)
        path = tmp_path / "clip.mkv"
        codec.write_video_file(path, frames)
        np.testing.assert_array_equal(codec.read_video_frames(path), frames)

    def test_rawvideo_roundtrip_exact(self, tmp_path):
        frames = np.random.default_rng(2).integers(0, 256, size=(3, 32, 32, 3), dtype=np.uint8)
        path = tmp_path / "clip.avi"
        codec.write_video_file(path, frames, codec="rawvideo")
        np.testing.assert_array_equal(codec.read_video_frames(path), frames)

    def test_unknown_codec_rejected(self, tmp_path):
        frames = np.zeros((2, 16, 16, 3), dtype=np.uint8)
        with pytest.raises(ValueError):
            codec.write_video_file(tmp_path / "x.mkv", frames, codec="h265")

    def test_bad_frame_array_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            codec.write_video_file(tmp_path / "x.mkv", np.zeros((2, 16, 16, 3), dtype=np.float32))
        with pytest.raises(ValueError):
            codec.write_video_file(tmp_path / "x.mkv", np.zeros((16, 16, 3), dtype=np.uint8))

    def test_probe(self, tmp_path):
        frames = np.random.default_rng(3).integers(0, 256, size=(7, 40, 56, 3), dtype=np.uint8)
        path = tmp_path / "probe.mkv"
        codec.write_video_file(path, frames)
        assert codec.probe_video(path) == (7, 40, 56)

    def test_probe_missing_file(self, tmp_path):
        with pytest.raises(codec.CodecError):
            codec.probe_video(tmp_path / "missing.mkv")

    def test_read_window(self, tmp_path):
        frames = np.random.default_rng(4).integers(0, 256, size=(6, 24, 24, 3), dtype=np.uint8)
        path = tmp_path / "win.mkv"
        codec.write_video_file(path, frames)
        np.testing.assert_array_equal(
            codec.read_video_frames(path, start_frame=2, frame_count=3), frames[2:5]
        )

    def test_read_window_out_of_range(self, tmp_path):
        frames = np.zeros((4, 16, 16, 3), dtype=np.uint8)
        path = tmp_path / "small.mkv"
        codec.write_video_file(path, frames)
        with pytest.raises(ValueError):
            codec.read_video_frames(path, start_frame=3, frame_count=2)
        with pytest.raises(ValueError):
            codec.read_video_frames(path, start_frame=-1)


class TestH264:
    def test_shape_preserved(self, smooth):
        out = codec.h264_roundtrip_frames(smooth, crf=22)
        assert out.shape == smooth.shape
        assert out.dtype == np.uint8

    def test_crf0_near_transparent_on_smooth_content(self, smooth):
        # at CRF 0 the only loss left is chroma subsampling, which is tiny
        # for smooth low-saturation content
        out = codec.h264_roundtrip_frames(smooth, crf=0)
        assert frames_psnr(smooth, out) >= 45.0

    def test_quality_degrades_with_crf(self, smooth):
        p22 = frames_psnr(smooth, codec.h264_roundtrip_frames(smooth, crf=22))
        p51 = frames_psnr(smooth, codec.h264_roundtrip_frames(smooth, crf=51))
        assert p51 < p22

    def test_deterministic(self, smooth):
        a = codec.h264_roundtrip_frames(smooth, crf=28)
        b = codec.h264_roundtrip_frames(smooth, crf=28)
        np.testing.assert_array_equal(a, b)

    def test_crf_range_checked(self, smooth):
        with pytest.raises(ValueError):
            codec.h264_roundtrip_frames(smooth, crf=52)
        with pytest.raises(ValueError):
            codec.h264_roundtrip_frames(smooth, crf=-1)

    def test_write_h264_file(self, tmp_path, smooth):
        path = tmp_path / "clip.mp4"
        codec.write_video_file_h264(path, smooth, crf=20)
        assert codec.probe_video(path) == smooth.shape[:3]


class TestToolDiscovery:
    @pytest.fixture(autouse=True)
    def reset_cache(self):
        # the found-tool cache is process-global; isolate it per test
        saved = codec._tool_cache
        codec._tool_cache = None
        yield
        codec._tool_cache = saved

    def test_env_override_wins(self, monkeypatch):
        real = codec.find_codec_tool()
        codec._tool_cache = None
        monkeypatch.setenv(codec.CODEC_PATH_ENV, real)
        assert codec.find_codec_tool() == real

    def test_env_override_must_be_executable(self, monkeypatch, tmp_path):
        bogus = tmp_path / "not_ffmpeg"
        bogus.write_text("")
        monkeypatch.setenv(codec.CODEC_PATH_ENV, str(bogus))
        with pytest.raises(codec.CodecError):
            codec.find_codec_tool()
        assert not codec.codec_tool_available()

    def test_cache_hit_skips_lookup(self, monkeypatch):
        first = codec.find_codec_tool()
        # once cached, even a bad env var must not break resolution
        monkeypatch.setenv(codec.CODEC_PATH_ENV, "/nonexistent")
        assert codec.find_codec_tool() == first
