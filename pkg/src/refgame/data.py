"""CIFAR-10 loading, augmentation, and game-batch assembly.

The loader reads the python-pickle layout directly (either the extracted
``cifar-10-batches-py`` directory or the ``.tar.gz`` archive) so that test
fixtures with fewer images can be read through the exact same code path as
the real dataset.

Images flow through the pipeline as float CHW tensors:

    uint8 -> [0, 1] floats -> base augmentations (train only)
          -> per-regime normalization -> (sender only) rotation, noise
"""

from __future__ import annotations

import pickle
import tarfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
import torch
import torchvision.transforms.functional as TF

from refgame.config import AugmentConfig, ExperimentConfig
from refgame.errors import DataError

IMAGE_SIZE = 32
EXPECTED_TRAIN = 50_000
EXPECTED_TEST = 10_000

# channel statistics for normalization, by weight regime
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2470, 0.2435, 0.2616)

CIFAR10_CLASSES = (
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
)


@dataclass
class Cifar10Data:
    """In-memory dataset: uint8 CHW images plus integer labels."""

    train_images: np.ndarray  # [N, 3, 32, 32] uint8
    train_labels: np.ndarray  # [N] int64
    test_images: np.ndarray
    test_labels: np.ndarray
    class_names: tuple[str, ...] = CIFAR10_CLASSES

    def check_standard(self) -> None:
        if len(self.train_labels) != EXPECTED_TRAIN or len(self.test_labels) != EXPECTED_TEST:
            raise DataError(
                "nonstandard split sizes: "
                f"train={len(self.train_labels)}, test={len(self.test_labels)} "
                f"(expected {EXPECTED_TRAIN}/{EXPECTED_TEST})"
            )

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        if name == "train":
            return self.train_images, self.train_labels
        if name == "test":
            return self.test_images, self.test_labels
        raise DataError(f"unknown split {name!r}")


def _decode_batch(raw: dict) -> tuple[np.ndarray, np.ndarray]:
    data = raw.get(b"data")
    labels = raw.get(b"labels", raw.get(b"fine_labels"))
    if data is None or labels is None:
        raise DataError("pickle batch missing 'data' or 'labels'")
    data = np.asarray(data, dtype=np.uint8)
    if data.ndim != 2 or data.shape[1] != 3 * IMAGE_SIZE * IMAGE_SIZE:
        raise DataError(f"unexpected data shape {data.shape} in pickle batch")
    images = data.reshape(-1, 3, IMAGE_SIZE, IMAGE_SIZE)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != images.shape[0]:
        raise DataError("label count does not match image count")
    if labels.min() < 0 or labels.max() >= len(CIFAR10_CLASSES):
        raise DataError("labels outside [0, 10)")
    return images, labels


def _load_from_dir(batch_dir: Path) -> Cifar10Data:
    train_files = sorted(batch_dir.glob("data_batch_*"))
    test_file = batch_dir / "test_batch"
    if not train_files or not test_file.exists():
        raise DataError(f"no CIFAR-10 batches under {batch_dir}")
    train_parts = [_decode_batch(pickle.loads(p.read_bytes())) for p in train_files]
    test_images, test_labels = _decode_batch(pickle.loads(test_file.read_bytes()))
    class_names = CIFAR10_CLASSES
    meta_file = batch_dir / "batches.meta"
    if meta_file.exists():
        meta = pickle.loads(meta_file.read_bytes())
        names = meta.get(b"label_names")
        if names:
            class_names = tuple(n.decode() for n in names)
    return Cifar10Data(
        train_images=np.concatenate([p[0] for p in train_parts]),
        train_labels=np.concatenate([p[1] for p in train_parts]),
        test_images=test_images,
        test_labels=test_labels,
        class_names=class_names,
    )


def _load_from_tar(archive: Path) -> Cifar10Data:
    train_parts = {}
    test_part = None
    class_names = CIFAR10_CLASSES
    with tarfile.open(archive, "r:*") as tar:
        for member in tar:
            name = Path(member.name).name
            if not member.isfile():
                continue
            if name.startswith("data_batch_") or name in ("test_batch", "batches.meta"):
                fh = tar.extractfile(member)
                if fh is None:
                    continue
                payload = pickle.loads(fh.read())
                if name == "batches.meta":
                    names = payload.get(b"label_names")
                    if names:
                        class_names = tuple(n.decode() for n in names)
                elif name == "test_batch":
                    test_part = _decode_batch(payload)
                else:
                    train_parts[name] = _decode_batch(payload)
    if not train_parts or test_part is None:
        raise DataError(f"no CIFAR-10 batches inside {archive}")
    ordered = [train_parts[k] for k in sorted(train_parts)]
    return Cifar10Data(
        train_images=np.concatenate([p[0] for p in ordered]),
        train_labels=np.concatenate([p[1] for p in ordered]),
        test_images=test_part[0],
        test_labels=test_part[1],
        class_names=class_names,
    )


def load_cifar10(path: str | Path, require_standard: bool = False) -> Cifar10Data:
    """Load CIFAR-10 from a directory or a ``.tar.gz`` archive.

    ``path`` may point at the extracted ``cifar-10-batches-py`` directory,
    at a directory containing it, or at the archive file itself.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(
            f"dataset path {path} does not exist "
            "(set data.path or $REFGAME_DATA to the CIFAR-10 location)"
        )
    if path.is_file():
        data = _load_from_tar(path)
    else:
        batch_dir = path
        if (path / "cifar-10-batches-py").is_dir():
            batch_dir = path / "cifar-10-batches-py"
        elif not (path / "test_batch").exists():
            archives = sorted(path.glob("*.tar.gz"))
            if archives:
                data = _load_from_tar(archives[0])
                if require_standard:
                    data.check_standard()
                return data
            raise DataError(f"found neither pickle batches nor an archive under {path}")
        data = _load_from_dir(batch_dir)
    if require_standard:
        data.check_standard()
    return data


def class_histogram(labels: np.ndarray, n_classes: int = 10) -> np.ndarray:
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_classes)
    return counts / counts.sum()


def normalization_stats(regime: str) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Channel mean/std used for normalization under a weight regime."""
    if regime == "pretrained_frozen":
        return IMAGENET_MEAN, IMAGENET_STD
    return CIFAR10_MEAN, CIFAR10_STD


def to_float_chw(images_u8: torch.Tensor | np.ndarray) -> torch.Tensor:
    images = torch.as_tensor(np.ascontiguousarray(images_u8))
    if images.dtype != torch.uint8:
        raise DataError(f"expected uint8 images, got {images.dtype}")
    return images.to(torch.float32) / 255.0


def normalize(images: torch.Tensor, mean, std) -> torch.Tensor:
    mean_t = torch.tensor(mean, dtype=images.dtype).view(1, -1, 1, 1)
    std_t = torch.tensor(std, dtype=images.dtype).view(1, -1, 1, 1)
    return (images - mean_t) / std_t


def _uniform(lo: float, hi: float, gen: torch.Generator) -> float:
    return float(torch.empty(1).uniform_(lo, hi, generator=gen))


def color_jitter(
    images: torch.Tensor,
    cfg: AugmentConfig,
    gen: torch.Generator,
) -> torch.Tensor:
    """Brightness/contrast/saturation/hue jitter, per image, random op order.

    Multiplicative factors come from U[1 - s, 1 + s], the hue shift from
    U[-s, s]; the four adjustments are applied in an independently shuffled
    order for each image.
    """
    out = []
    for img in images:
        f_bri = _uniform(max(0.0, 1.0 - cfg.p_bri), 1.0 + cfg.p_bri, gen)
        f_con = _uniform(max(0.0, 1.0 - cfg.p_con), 1.0 + cfg.p_con, gen)
        f_sat = _uniform(max(0.0, 1.0 - cfg.p_sat), 1.0 + cfg.p_sat, gen)
        f_hue = _uniform(-cfg.p_hue, cfg.p_hue, gen)
        for op in torch.randperm(4, generator=gen).tolist():
            if op == 0:
                img = TF.adjust_brightness(img, f_bri)
            elif op == 1:
                img = TF.adjust_contrast(img, f_con)
            elif op == 2:
                img = TF.adjust_saturation(img, f_sat)
            else:
                img = TF.adjust_hue(img, f_hue)
        out.append(img)
    return torch.stack(out)


def base_augment(images: torch.Tensor, cfg: AugmentConfig, gen: torch.Generator) -> torch.Tensor:
    """Training-time view: color jitter, random grayscale, random hflip."""
    out = color_jitter(images, cfg, gen)
    batch = out.shape[0]
    gray_mask = torch.rand(batch, generator=gen) < cfg.p_grayscale
    if gray_mask.any():
        out[gray_mask] = TF.rgb_to_grayscale(out[gray_mask], num_output_channels=3)
    flip_mask = torch.rand(batch, generator=gen) < cfg.p_hflip
    if flip_mask.any():
        out[flip_mask] = torch.flip(out[flip_mask], dims=[-1])
    return out


def rotate_batch(
    images: torch.Tensor, gen: torch.Generator
) -> tuple[torch.Tensor, torch.Tensor]:
    """Rotate each image by one of {0, 90, 180, 270} degrees.

    Returns the rotated batch and the per-image label k in {0, 1, 2, 3}
    (the number of 90-degree counterclockwise turns).
    """
    ks = torch.randint(0, 4, (images.shape[0],), generator=gen)
    out = images.clone()
    for k in (1, 2, 3):
        sel = ks == k
        if sel.any():
            out[sel] = torch.rot90(out[sel], k, dims=(-2, -1))
    return out, ks


def add_gaussian_noise(
    images: torch.Tensor, mean: float, variance: float, gen: torch.Generator
) -> torch.Tensor:
    """Additive Gaussian pixel noise in the normalized space, no clipping."""
    noise = torch.empty_like(images).normal_(mean, variance ** 0.5, generator=gen)
    return images + noise


@dataclass
class GameBatch:
    """One batch of referential games over a shared candidate pool.

    Game ``g`` has target ``candidate_images[g]``; the sender sees
    ``sender_images[g]`` (the same image after the sender-side view), and
    the receiver scores the full pool.
    """

    sender_images: torch.Tensor  # [G, 3, 32, 32]
    candidate_images: torch.Tensor  # [G, 3, 32, 32]
    target_indices: torch.Tensor  # [G]
    classes: torch.Tensor  # [G]
    rotation_labels: Optional[torch.Tensor] = None  # [G] in {0..3}

    @property
    def game_size(self) -> int:
        return self.candidate_images.shape[0]


def make_game_batch(
    images_u8: np.ndarray,
    labels: np.ndarray,
    config: ExperimentConfig,
    gen: torch.Generator,
    train: bool,
) -> GameBatch:
    """Assemble one game batch from raw uint8 images.

    Base augmentations apply only when ``train`` is True. The sender-side
    view (rotation, then noise) applies whenever enabled in the config,
    including at evaluation.
    """
    x = to_float_chw(images_u8)
    if train:
        x = base_augment(x, config.data.augment, gen)
    mean, std = normalization_stats(config.encoder.regime)
    x = normalize(x, mean, std)

    sender = x
    rotation_labels = None
    if config.game.sender_rotation:
        sender, rotation_labels = rotate_batch(sender, gen)
    if config.game.sender_noise:
        sender = add_gaussian_noise(
            sender, config.game.noise_mean, config.game.noise_variance, gen
        )

    g = x.shape[0]
    return GameBatch(
        sender_images=sender,
        candidate_images=x,
        target_indices=torch.arange(g, dtype=torch.long),
        classes=torch.as_tensor(labels, dtype=torch.long),
        rotation_labels=rotation_labels,
    )


def train_epoch_batches(
    data: Cifar10Data,
    config: ExperimentConfig,
    epoch: int,
) -> Iterator[GameBatch]:
    """Yield full game batches over a fresh shuffle of the training split.

    The shuffle and all augmentation draws derive from (seed, epoch), so an
    interrupted run resumed at an epoch boundary sees identical batches.
    """
    gen = torch.Generator().manual_seed(config.seed * 100_003 + epoch)
    n = len(data.train_labels)
    game = config.game.size
    if n < game:
        raise DataError(f"training split ({n}) smaller than one game ({game})")
    perm = torch.randperm(n, generator=gen).numpy()
    n_batches = n // game
    if config.train.max_steps_per_epoch is not None:
        n_batches = min(n_batches, config.train.max_steps_per_epoch)
    for b in range(n_batches):
        idx = perm[b * game : (b + 1) * game]
        yield make_game_batch(
            data.train_images[idx], data.train_labels[idx], config, gen, train=True
        )


def eval_batches(
    data: Cifar10Data,
    config: ExperimentConfig,
    eval_games: Optional[int] = None,
    eval_seed: Optional[int] = None,
) -> Iterator[tuple[GameBatch, int]]:
    """Yield (batch, n_keep) pairs until ``eval_games`` games are covered.

    Each pass shuffles the full test split and takes every complete batch;
    a partial batch at the tail of a pass is dropped and a fresh reshuffle
    begins instead. ``n_keep`` says how many leading games of the batch
    still count toward the total, so the final batch may be truncated.
    """
    total = config.eval_games if eval_games is None else eval_games
    seed = config.seed + 7_919 if eval_seed is None else eval_seed
    n = len(data.test_labels)
    game = config.game.size
    if n < game:
        raise DataError(f"test split ({n}) smaller than one game ({game})")
    remaining = total
    pass_idx = 0
    while remaining > 0:
        gen = torch.Generator().manual_seed(seed + pass_idx)
        perm = torch.randperm(n, generator=gen).numpy()
        for b in range(n // game):
            if remaining <= 0:
                break
            idx = perm[b * game : (b + 1) * game]
            batch = make_game_batch(
                data.test_images[idx], data.test_labels[idx], config, gen, train=False
            )
            keep = min(game, remaining)
            remaining -= keep
            yield batch, keep
        pass_idx += 1
