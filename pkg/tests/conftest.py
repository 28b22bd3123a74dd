"""Shared fixtures: synthetic datasets in the CIFAR-10 pickle layout and
small experiment configs sized for CPU-only unit tests.

The synthetic images are class-structured (one base color per class plus
pixel noise) so tiny models can actually learn from them and class-level
metrics are meaningful.
"""

from __future__ import annotations

import pickle
import tarfile
from pathlib import Path

import numpy as np
import pytest

from refgame.config import ExperimentConfig
from refgame.data import Cifar10Data

# one distinctive base color per class
_PALETTE = np.array(
    [
        [230, 40, 40], [40, 230, 40], [40, 40, 230], [230, 230, 40],
        [230, 40, 230], [40, 230, 230], [240, 140, 20], [140, 20, 240],
        [20, 240, 140], [128, 128, 128],
    ],
    dtype=np.int64,
)


def structured_images(labels: np.ndarray, rng: np.random.Generator,
                      noise: int = 25) -> np.ndarray:
    """Class-colored 32x32 images, uint8 CHW."""
    n = len(labels)
    base = _PALETTE[labels][:, :, None, None]  # [N, 3, 1, 1]
    jitter = rng.integers(-noise, noise + 1, size=(n, 3, 32, 32))
    return np.clip(base + jitter, 0, 255).astype(np.uint8)


def make_dataset(n_train: int, n_test: int, seed: int = 0) -> Cifar10Data:
    rng = np.random.default_rng(seed)
    train_labels = rng.integers(0, 10, size=n_train).astype(np.int64)
    test_labels = rng.integers(0, 10, size=n_test).astype(np.int64)
    return Cifar10Data(
        train_images=structured_images(train_labels, rng),
        train_labels=train_labels,
        test_images=structured_images(test_labels, rng),
        test_labels=test_labels,
    )


@pytest.fixture(scope="session")
def mini_data() -> Cifar10Data:
    return make_dataset(n_train=640, n_test=256, seed=0)


def tiny_config(tmp_path: Path, **overrides) -> ExperimentConfig:
    """A config small enough for second-scale CPU training."""
    cfg = ExperimentConfig()
    cfg.seed = 0
    cfg.output_dir = str(tmp_path / "run")
    cfg.eval_games = 32
    cfg.game.size = 8
    cfg.encoder.small = True
    cfg.channel.vocab_size = 12
    cfg.channel.max_len = 3
    cfg.agent.embed_dim = 8
    cfg.agent.hidden_dim = 16
    cfg.agent.score_dim = 16
    cfg.train.epochs = 1
    cfg.train.max_steps_per_epoch = 4
    cfg.train.quick_eval_games = 16
    cfg.train.checkpoint_every = 100
    for key, value in overrides.items():
        obj = cfg
        *parents, leaf = key.split(".")
        for p in parents:
            obj = getattr(obj, p)
        if not hasattr(obj, leaf):
            raise AttributeError(f"no config field {key}")
        setattr(obj, leaf, value)
    return cfg.validate()


def _batch_payload(images: np.ndarray, labels: np.ndarray) -> bytes:
    return pickle.dumps(
        {
            b"data": images.reshape(len(labels), -1).copy(),
            b"labels": [int(l) for l in labels],
        }
    )


def write_cifar_dir(root: Path, data: Cifar10Data, n_train_batches: int = 2) -> Path:
    """Materialize a dataset as an extracted cifar-10-batches-py tree."""
    batch_dir = root / "cifar-10-batches-py"
    batch_dir.mkdir(parents=True, exist_ok=True)
    splits = np.array_split(np.arange(len(data.train_labels)), n_train_batches)
    for i, idx in enumerate(splits, start=1):
        payload = _batch_payload(data.train_images[idx], data.train_labels[idx])
        (batch_dir / f"data_batch_{i}").write_bytes(payload)
    (batch_dir / "test_batch").write_bytes(
        _batch_payload(data.test_images, data.test_labels)
    )
    (batch_dir / "batches.meta").write_bytes(
        pickle.dumps({b"label_names": [f"class{i}".encode() for i in range(10)]})
    )
    return root


def write_cifar_targz(path: Path, data: Cifar10Data, n_train_batches: int = 2) -> Path:
    """Materialize a dataset as a cifar-10-python.tar.gz archive."""
    import io

    with tarfile.open(path, "w:gz") as tar:
        def add(name: str, payload: bytes):
            info = tarfile.TarInfo(name=f"cifar-10-batches-py/{name}")
            info.size = len(payload)
            tar.addfile(info, io.BytesIO(payload))

        splits = np.array_split(np.arange(len(data.train_labels)), n_train_batches)
        for i, idx in enumerate(splits, start=1):
            add(f"data_batch_{i}",
                _batch_payload(data.train_images[idx], data.train_labels[idx]))
        add("test_batch", _batch_payload(data.test_images, data.test_labels))
        add("batches.meta",
            pickle.dumps({b"label_names": [f"class{i}".encode() for i in range(10)]}))
    return path


@pytest.fixture()
def mini_cifar_dir(tmp_path, mini_data) -> Path:
    return write_cifar_dir(tmp_path / "cifar", mini_data)
