"""Image encoders under three weight regimes.

The full-size encoder is a VGG16 topology tapped at the 4096-d penultimate
fully-connected activation; the classifier head is discarded. CIFAR-size
inputs are bilinearly upsampled to 224 inside the module so all regimes see
identical architecture and input treatment and differ only in weights.

Frozen regimes expose zero trainable parameters and are pinned to
evaluation mode permanently, so batch-norm running statistics cannot drift
either.
"""

from __future__ import annotations

import hashlib

import torch
import torch.nn as nn
import torch.nn.functional as F
from torchvision.models import vgg16

from refgame.config import EncoderConfig
from refgame.errors import CheckpointError, ConfigError, DomainError, ShapeError

REGIMES = ("pretrained_frozen", "random_frozen", "learned_end_to_end")

RAW_INPUT_SIZE = 32
VGG_INPUT_SIZE = 224
VGG_FEAT_DIM = 4096
SMALL_FEAT_DIM = 512


def _he_init(module: nn.Module) -> None:
    """He-uniform fan-in init for conv/linear weights, zeros for biases."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.kaiming_uniform_(m.weight, nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, (nn.BatchNorm1d, nn.BatchNorm2d)):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class _EncoderBase(nn.Module):
    feature_dim: int

    def __init__(self, frozen: bool):
        super().__init__()
        self.frozen = frozen

    def finalize_regime(self) -> None:
        if self.frozen:
            self.requires_grad_(False)
            self.eval()

    def train(self, mode: bool = True):
        # frozen encoders stay in eval mode so BN statistics never update
        return super().train(mode and not self.frozen)

    def _check_output(self, out: torch.Tensor) -> torch.Tensor:
        if not torch.isfinite(out).all():
            raise DomainError("encoder produced non-finite features")
        return out


class Vgg16Encoder(_EncoderBase):
    """VGG16 trunk ending at the second 4096-d fully-connected activation."""

    feature_dim = VGG_FEAT_DIM

    def __init__(self, frozen: bool):
        super().__init__(frozen)
        trunk = vgg16(weights=None)
        self.features = trunk.features
        self.avgpool = trunk.avgpool
        # keep fc6 -> ReLU -> Dropout -> fc7 -> ReLU, drop the class head
        self.classifier = nn.Sequential(*list(trunk.classifier.children())[:5])

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.dim() != 4 or images.shape[1] != 3:
            raise ShapeError(f"expected [B, 3, H, W] images, got {tuple(images.shape)}")
        h, w = images.shape[-2:]
        if (h, w) == (RAW_INPUT_SIZE, RAW_INPUT_SIZE):
            images = F.interpolate(
                images, size=(VGG_INPUT_SIZE, VGG_INPUT_SIZE),
                mode="bilinear", align_corners=False,
            )
        elif (h, w) != (VGG_INPUT_SIZE, VGG_INPUT_SIZE):
            raise ShapeError(
                f"unsupported spatial size {h}x{w}; expected "
                f"{RAW_INPUT_SIZE} or {VGG_INPUT_SIZE}"
            )
        x = self.features(images)
        x = self.avgpool(x)
        x = torch.flatten(x, 1)
        return self._check_output(self.classifier(x))


class SmallEncoder(_EncoderBase):
    """32x32-native four-block convolutional net for desk-scale runs.

    Blocks: Conv3x3 -> BatchNorm -> ReLU -> MaxPool2, with channel widths
    64, 128, 256, 512; global average pooling yields a 512-d feature.
    """

    feature_dim = SMALL_FEAT_DIM

    def __init__(self, frozen: bool):
        super().__init__(frozen)
        widths = (64, 128, 256, 512)
        blocks = []
        c_in = 3
        for c_out in widths:
            blocks += [
                nn.Conv2d(c_in, c_out, kernel_size=3, padding=1),
                nn.BatchNorm2d(c_out),
                nn.ReLU(inplace=True),
                nn.MaxPool2d(2),
            ]
            c_in = c_out
        self.blocks = nn.Sequential(*blocks)
        self.pool = nn.AdaptiveAvgPool2d(1)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.dim() != 4 or images.shape[1] != 3:
            raise ShapeError(f"expected [B, 3, H, W] images, got {tuple(images.shape)}")
        if images.shape[-2:] != (RAW_INPUT_SIZE, RAW_INPUT_SIZE):
            raise ShapeError(
                f"small encoder takes {RAW_INPUT_SIZE}x{RAW_INPUT_SIZE} inputs, "
                f"got {tuple(images.shape[-2:])}"
            )
        x = self.blocks(images)
        x = self.pool(x).flatten(1)
        return self._check_output(x)


def _load_pretrained(encoder: Vgg16Encoder, weights_path: str) -> None:
    try:
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read weights file {weights_path!r}: {exc}") from exc
    reference = vgg16(weights=None)
    try:
        reference.load_state_dict(state)
    except RuntimeError as exc:
        shapes = {k: tuple(v.shape) for k, v in list(reference.state_dict().items())[:4]}
        raise CheckpointError(
            f"weights file {weights_path!r} does not match the VGG16 layout "
            f"(leading expected shapes: {shapes}): {exc}"
        ) from exc
    encoder.features.load_state_dict(reference.features.state_dict())
    encoder.classifier.load_state_dict(
        nn.Sequential(*list(reference.classifier.children())[:5]).state_dict()
    )


def build_encoder(config: EncoderConfig, seed: int) -> _EncoderBase:
    """Construct an encoder per the configured regime, seed-deterministically."""
    if config.regime not in REGIMES:
        raise ConfigError(f"unknown encoder regime {config.regime!r}, expected {REGIMES}")
    if config.small and config.regime == "pretrained_frozen":
        raise ConfigError("no pretrained weights exist for the small encoder")
    frozen = config.regime != "learned_end_to_end"
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        encoder = SmallEncoder(frozen) if config.small else Vgg16Encoder(frozen)
        _he_init(encoder)
    if config.regime == "pretrained_frozen":
        if not config.weights_path:
            raise CheckpointError(
                "pretrained_frozen requires encoder.weights_path pointing at a "
                "VGG16 state-dict file"
            )
        _load_pretrained(encoder, config.weights_path)
    encoder.finalize_regime()
    return encoder


def encode(encoder: _EncoderBase, images: torch.Tensor) -> torch.Tensor:
    """Feature vectors for a batch of normalized images."""
    return encoder(images)


def parameter_checksum(module: nn.Module) -> str:
    """Order-stable digest over all parameters and buffers.

    Running batch-norm statistics are included so silent drift in a frozen
    encoder shows up as a checksum change.
    """
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def trainable_parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)
