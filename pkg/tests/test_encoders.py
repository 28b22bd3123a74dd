import pytest
import torch
from torchvision.models import vgg16

from refgame.config import EncoderConfig
from refgame.encoders import (
    SMALL_FEAT_DIM,
    VGG_FEAT_DIM,
    SmallEncoder,
    Vgg16Encoder,
    build_encoder,
    encode,
    parameter_checksum,
    trainable_parameter_count,
)
from refgame.errors import CheckpointError, ConfigError, ShapeError


def small_cfg(regime="random_frozen", **kw):
    return EncoderConfig(regime=regime, small=True, **kw)


def batch(n=4, size=32, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return torch.randn(n, 3, size, size, generator=gen)


# ------------------------------------------------------------------ shapes


def test_small_encoder_output_shape():
    enc = build_encoder(small_cfg(), seed=0)
    out = encode(enc, batch(5))
    assert out.shape == (5, SMALL_FEAT_DIM)
    assert torch.isfinite(out).all()
    assert enc.feature_dim == SMALL_FEAT_DIM


def test_small_encoder_rejects_wrong_sizes():
    enc = build_encoder(small_cfg(), seed=0)
    with pytest.raises(ShapeError):
        enc(batch(2, size=64))
    with pytest.raises(ShapeError):
        enc(torch.randn(3, 32, 32))


@pytest.mark.slow
def test_vgg_encoder_accepts_native_and_cifar_sizes():
    enc = build_encoder(EncoderConfig(regime="random_frozen"), seed=0)
    assert enc.feature_dim == VGG_FEAT_DIM
    out32 = encode(enc, batch(2, size=32))
    assert out32.shape == (2, VGG_FEAT_DIM)
    out224 = encode(enc, batch(2, size=224))
    assert out224.shape == (2, VGG_FEAT_DIM)
    with pytest.raises(ShapeError):
        enc(batch(1, size=64))


# ------------------------------------------------------------------ regimes


def test_build_is_seed_deterministic():
    a = build_encoder(small_cfg(), seed=7)
    b = build_encoder(small_cfg(), seed=7)
    c = build_encoder(small_cfg(), seed=8)
    assert parameter_checksum(a) == parameter_checksum(b)
    assert parameter_checksum(a) != parameter_checksum(c)


def test_build_does_not_disturb_global_rng():
    torch.manual_seed(123)
    expected = torch.randn(3)
    torch.manual_seed(123)
    build_encoder(small_cfg(), seed=55)
    assert torch.equal(torch.randn(3), expected)


def test_frozen_encoder_has_no_trainable_parameters():
    enc = build_encoder(small_cfg("random_frozen"), seed=0)
    assert trainable_parameter_count(enc) == 0
    assert not enc.training
    enc.train()  # must be a no-op for frozen regimes
    assert not enc.training


def test_learned_encoder_is_trainable():
    enc = build_encoder(small_cfg("learned_end_to_end"), seed=0)
    assert trainable_parameter_count(enc) > 0
    enc.train()
    assert enc.training


def test_frozen_batchnorm_stats_do_not_drift():
    enc = build_encoder(small_cfg("random_frozen"), seed=0)
    before = parameter_checksum(enc)
    enc.train()
    for i in range(3):
        enc(batch(4, seed=i))
    assert parameter_checksum(enc) == before


def test_learned_batchnorm_stats_do_update():
    enc = build_encoder(small_cfg("learned_end_to_end"), seed=0)
    before = parameter_checksum(enc)
    enc.train()
    enc(batch(4))
    assert parameter_checksum(enc) != before


def test_frozen_inference_is_sample_independent():
    # eval-mode features for one image do not depend on its batch companions
    enc = build_encoder(small_cfg(), seed=1)
    x = batch(6)
    full = encode(enc, x)
    perm = torch.tensor([3, 1, 5, 0, 2, 4])
    permuted = encode(enc, x[perm])
    assert torch.allclose(full[perm], permuted, atol=1e-6)
    doubled = encode(enc, torch.cat([x[:1], x[:1]]))
    assert torch.allclose(doubled[0], doubled[1], atol=0.0)


def test_unknown_regime_and_small_pretrained_rejected():
    with pytest.raises(ConfigError):
        build_encoder(EncoderConfig(regime="fine_tuned"), seed=0)
    with pytest.raises(ConfigError):
        build_encoder(small_cfg("pretrained_frozen"), seed=0)


# ------------------------------------------------------------------ pretrained


def test_pretrained_requires_weights_path():
    with pytest.raises(CheckpointError, match="weights_path"):
        build_encoder(EncoderConfig(regime="pretrained_frozen"), seed=0)


def test_pretrained_rejects_unreadable_file(tmp_path):
    bad = tmp_path / "weights.pth"
    bad.write_bytes(b"not a state dict")
    cfg = EncoderConfig(regime="pretrained_frozen", weights_path=str(bad))
    with pytest.raises(CheckpointError, match="cannot read"):
        build_encoder(cfg, seed=0)


def test_pretrained_rejects_wrong_layout(tmp_path):
    bad = tmp_path / "weights.pth"
    torch.save({"linear.weight": torch.zeros(2, 2)}, bad)
    cfg = EncoderConfig(regime="pretrained_frozen", weights_path=str(bad))
    with pytest.raises(CheckpointError, match="layout"):
        build_encoder(cfg, seed=0)


@pytest.mark.slow
def test_pretrained_loads_supplied_weights_exactly(tmp_path):
    torch.manual_seed(99)
    reference = vgg16(weights=None)
    path = tmp_path / "vgg16.pth"
    torch.save(reference.state_dict(), path)

    cfg = EncoderConfig(regime="pretrained_frozen", weights_path=str(path))
    enc = build_encoder(cfg, seed=0)
    assert isinstance(enc, Vgg16Encoder)
    assert trainable_parameter_count(enc) == 0
    assert not enc.training

    for got, want in zip(enc.features.parameters(), reference.features.parameters()):
        assert torch.equal(got, want)
    kept = torch.nn.Sequential(*list(reference.classifier.children())[:5])
    for got, want in zip(enc.classifier.parameters(), kept.parameters()):
        assert torch.equal(got, want)

    # and the weights actually changed the encoder relative to a random build
    random_enc = build_encoder(EncoderConfig(regime="random_frozen"), seed=0)
    assert parameter_checksum(enc) != parameter_checksum(random_enc)


def test_checksum_tracks_any_parameter_change():
    enc = build_encoder(small_cfg("learned_end_to_end"), seed=0)
    before = parameter_checksum(enc)
    with torch.no_grad():
        next(enc.parameters()).add_(1e-3)
    assert parameter_checksum(enc) != before


def test_small_encoders_differ_between_regimes_only_in_grads():
    frozen = build_encoder(small_cfg("random_frozen"), seed=5)
    learned = build_encoder(small_cfg("learned_end_to_end"), seed=5)
    assert parameter_checksum(frozen) == parameter_checksum(learned)
    x = batch(3)
    learned.eval()
    assert torch.allclose(frozen(x), learned(x))
