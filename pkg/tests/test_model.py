"""Encoder/decoder pair, message container, and the clip-level wrappers."""

import numpy as np
import pytest
import torch

from itov.metrics import bit_accuracy
from itov.model import (
    Decoder,
    Encoder,
    Message,
    ModelConfig,
    build_models,
    decode,
    encode,
    threshold_message,
)
from itov.video import VideoClip, fold_clip_tensor, unfold_clip_tensor


def tiny_config(**overrides):
    base = dict(message_length=8, frames=4, height=32, width=32,
                block_kind="depthwise2d", channels=8, init_seed=0)
    base.update(overrides)
    return ModelConfig(**base)


def rand_batch(cfg, n=2, seed=0):
    g = torch.Generator().manual_seed(seed)
    clips = torch.rand(n, cfg.frames, 3, cfg.height, cfg.width, generator=g)
    bits = torch.randint(0, 2, (n, cfg.message_length), generator=g).float()
    return clips, bits


class TestMessage:
    def test_hex_roundtrip(self):
        msg = Message.random(16, seed=3)
        assert Message.from_hex(msg.to_hex(), 16) == msg

    def test_known_hex(self):
        assert Message.from_hex("a", 4).bits == (1, 0, 1, 0)
        assert Message((1, 1, 1, 1, 0, 0, 0, 1)).to_hex() == "f1"

    def test_validation(self):
        with pytest.raises(ValueError):
            Message(())
        with pytest.raises(ValueError):
            Message((0, 2))
        with pytest.raises(ValueError):
            Message.from_hex("ff", 12)
        with pytest.raises(ValueError):
            Message.from_hex("f", 6)

    def test_complement(self):
        msg = Message((1, 0, 0, 1))
        assert msg.complement().bits == (0, 1, 1, 0)
        assert msg.complement().complement() == msg

    def test_random_is_seeded(self):
        assert Message.random(32, seed=7) == Message.random(32, seed=7)
        assert Message.random(32, seed=7) != Message.random(32, seed=8)

    def test_random_messages_agree_about_half_the_time(self):
        a = Message.random(10_000, seed=1)
        b = Message.random(10_000, seed=2)
        assert abs(bit_accuracy(a, b) - 50.0) <= 2.0

    def test_to_tensor(self):
        t = Message((1, 0, 1)).to_tensor()
        assert torch.equal(t, torch.tensor([1.0, 0.0, 1.0]))


class TestThreshold:
    def test_rounds_at_half(self):
        assert threshold_message([0.9, 0.1, 0.5]).bits == (1, 0, 1)

    def test_accepts_tensor(self):
        assert threshold_message(torch.tensor([[0.2, 0.7]])).bits == (0, 1)


class TestModelConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            tiny_config(block_kind="dense")
        with pytest.raises(ValueError):
            tiny_config(height=33)
        with pytest.raises(ValueError):
            tiny_config(message_length=0)
        with pytest.raises(ValueError):
            tiny_config(strength_factor=-1.0)

    def test_grid_size(self):
        assert tiny_config(height=64, width=64).grid_size == (8, 8)
        assert tiny_config(height=32, width=48).grid_size == (4, 6)

    def test_is_2d(self):
        assert tiny_config(block_kind="regular2d").is_2d
        assert not tiny_config(block_kind="two_plus_one_d").is_2d

    def test_dict_roundtrip(self):
        cfg = tiny_config(channels=12, use_se=True)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestExpandMessage:
    def test_2d_shape(self):
        cfg = tiny_config()
        enc = Encoder(cfg)
        bits = torch.randint(0, 2, (3, 8)).float()
        out = enc.expand_message(bits)
        assert out.shape == (3, cfg.channels, 32, 32)

    def test_3d_replicates_frames(self):
        cfg = tiny_config(block_kind="regular3d")
        enc = Encoder(cfg)
        bits = torch.randint(0, 2, (2, 8)).float()
        out = enc.expand_message(bits)
        assert out.shape == (2, cfg.channels, cfg.frames, 32, 32)

    def test_wrong_bit_count(self):
        enc = Encoder(tiny_config())
        with pytest.raises(ValueError):
            enc.expand_message(torch.zeros(2, 9))
        with pytest.raises(ValueError):
            enc.expand_message(torch.zeros(8))

    def test_zero_projection_ignores_bits(self):
        # with the projection zeroed the grid is all zeros whatever the bits,
        # so the whole expansion must collapse to a bit-independent tensor
        cfg = tiny_config()
        enc = Encoder(cfg)
        with torch.no_grad():
            enc.message_project.weight.zero_()
            enc.message_project.bias.zero_()
            a = enc.expand_message(torch.ones(2, 8))
            b = enc.expand_message(torch.zeros(2, 8))
        assert torch.equal(a, b)

    def test_single_bit_changes_expansion(self):
        enc = Encoder(tiny_config())
        bits = torch.zeros(1, 8)
        flipped = bits.clone()
        flipped[0, 3] = 1.0
        assert not torch.equal(enc.expand_message(bits), enc.expand_message(flipped))


class TestEncoder:
    def test_fresh_build_embeds_identity(self):
        cfg = tiny_config()
        enc, _ = build_models(cfg)
        clips, bits = rand_batch(cfg)
        out = enc.watermark_clip_batch(clips, bits)
        assert torch.equal(out, clips)

    def test_zero_strength_leaves_cover(self):
        cfg = tiny_config(strength_factor=0.0)
        enc = Encoder(cfg)
        clips, bits = rand_batch(cfg, seed=1)
        assert torch.equal(enc.watermark_clip_batch(clips, bits), clips)

    def test_output_clamped(self):
        cfg = tiny_config()
        enc = Encoder(cfg)
        with torch.no_grad():
            enc.to_residual.weight.normal_(0, 1.0)
        clips, bits = rand_batch(cfg, seed=2)
        with torch.no_grad():
            out = enc.watermark_clip_batch(clips, bits)
        assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0
        assert not torch.equal(out, clips)

    def test_strength_scales_residual(self):
        cfg = tiny_config()
        enc = Encoder(cfg)
        with torch.no_grad():
            enc.to_residual.weight.normal_(0, 0.05)
        clips, bits = rand_batch(cfg, seed=3)
        folded = fold_clip_tensor(clips)
        res = enc.residual(folded, bits)
        want = (folded + enc.strength_factor * res).clamp(0.0, 1.0)
        assert torch.equal(enc(folded, bits), want)

    def test_fold_path_consistency(self):
        cfg = tiny_config()
        enc = Encoder(cfg)
        with torch.no_grad():
            enc.to_residual.weight.normal_(0, 0.05)
        clips, bits = rand_batch(cfg, seed=4)
        via_batch = enc.watermark_clip_batch(clips, bits)
        via_fold = unfold_clip_tensor(enc(fold_clip_tensor(clips), bits))
        assert torch.equal(via_batch, via_fold)

    def test_wrong_geometry_rejected(self):
        cfg = tiny_config()
        enc = Encoder(cfg)
        bits = torch.zeros(1, 8)
        with pytest.raises(ValueError):
            enc(torch.rand(1, 12, 64, 64), bits)
        with pytest.raises(ValueError):
            enc(torch.rand(1, 15, 32, 32), bits)

    @pytest.mark.parametrize("kind", ["regular3d", "depthwise3d", "two_plus_one_d"])
    def test_3d_kinds_forward(self, kind):
        cfg = tiny_config(block_kind=kind, channels=6)
        enc, dec = build_models(cfg)
        with torch.no_grad():
            enc.to_residual.weight.normal_(0, 0.05)
        clips, bits = rand_batch(cfg, seed=5)
        out = enc.watermark_clip_batch(clips, bits)
        assert out.shape == clips.shape
        logits = dec.decode_clip_batch(out)
        assert logits.shape == (2, cfg.message_length)


class TestDecoder:
    def test_logit_shape(self):
        cfg = tiny_config()
        dec = Decoder(cfg)
        clips, _ = rand_batch(cfg, seed=6)
        assert dec.decode_clip_batch(clips).shape == (2, 8)

    def test_matches_fold_path(self):
        cfg = tiny_config()
        dec = Decoder(cfg)
        clips, _ = rand_batch(cfg, seed=7)
        assert torch.equal(dec.decode_clip_batch(clips), dec(fold_clip_tensor(clips)))

    def test_wrong_geometry_rejected(self):
        dec = Decoder(tiny_config())
        with pytest.raises(ValueError):
            dec(torch.rand(1, 12, 16, 16))
        with pytest.raises(ValueError):
            dec(torch.rand(1, 9, 32, 32))


class TestBuildModels:
    def test_deterministic(self):
        cfg = tiny_config()
        e1, d1 = build_models(cfg)
        e2, d2 = build_models(cfg)
        for a, b in zip(e1.state_dict().values(), e2.state_dict().values()):
            assert torch.equal(a, b)
        for a, b in zip(d1.state_dict().values(), d2.state_dict().values()):
            assert torch.equal(a, b)

    def test_init_seed_matters(self):
        e1, _ = build_models(tiny_config(init_seed=0))
        e2, _ = build_models(tiny_config(init_seed=5))
        assert any(
            not torch.equal(a, b)
            for a, b in zip(e1.state_dict().values(), e2.state_dict().values())
        )

    def test_residual_projection_starts_at_zero(self):
        enc, _ = build_models(tiny_config())
        assert float(enc.to_residual.weight.detach().abs().sum()) == 0.0
        assert float(enc.to_residual.bias.detach().abs().sum()) == 0.0

    def test_encoder_decoder_streams_differ(self):
        enc, dec = build_models(tiny_config())
        # first conv of each side draws from different seeds
        e = enc.cover_processor[0].convs[0].weight
        d = dec.features[0].convs[0].weight
        assert e.shape == d.shape
        assert not torch.equal(e, d)


class TestClipWrappers:
    def test_encode_decode_roundtrip_shapes(self):
        cfg = tiny_config()
        enc, dec = build_models(cfg)
        clip = VideoClip(torch.rand(4, 3, 32, 32, generator=torch.Generator().manual_seed(8)))
        msg = Message.random(8, seed=9)
        wm = encode(clip, msg, enc)
        assert wm.pixels.shape == clip.pixels.shape
        logits = decode(wm, dec)
        assert logits.shape == (8,)

    def test_message_length_checked(self):
        cfg = tiny_config()
        enc, _ = build_models(cfg)
        clip = VideoClip(torch.rand(4, 3, 32, 32))
        with pytest.raises(ValueError):
            encode(clip, Message.random(12, seed=0), enc)

    def test_clip_geometry_checked(self):
        cfg = tiny_config()
        enc, dec = build_models(cfg)
        wrong = VideoClip(torch.rand(5, 3, 32, 32))
        with pytest.raises(ValueError):
            encode(wrong, Message.random(8, seed=0), enc)
        with pytest.raises(ValueError):
            decode(wrong, dec)

    def test_training_flag_restored(self):
        cfg = tiny_config()
        enc, dec = build_models(cfg)
        clip = VideoClip(torch.rand(4, 3, 32, 32))
        msg = Message.random(8, seed=10)
        enc.train()
        dec.train()
        wm = encode(clip, msg, enc)
        decode(wm, dec)
        assert enc.training and dec.training
