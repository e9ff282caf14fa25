import os
import sys

import cv2
import numpy as np
import pytest
import torch

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)


def blob_pair(rng: np.random.Generator, size: int = 64):
    """Synthetic polyp: a bright ellipse on a noisy reddish background, plus its mask."""
    image = np.zeros((size, size, 3), dtype=np.uint8)
    image[..., 0] = 120
    image[..., 1] = 60
    image[..., 2] = 50
    image = np.clip(image + rng.integers(-20, 20, size=image.shape), 0, 255).astype(np.uint8)
    mask = np.zeros((size, size), dtype=np.uint8)
    cx, cy = (int(v) for v in rng.integers(size // 4, 3 * size // 4, size=2))
    axes = tuple(int(v) for v in rng.integers(size // 8, size // 4, size=2))
    cv2.ellipse(mask, (cx, cy), axes, 0, 0, 360, 1, -1)
    image[mask > 0] = (230, 200, 120)
    return image, mask


def write_dataset(root: str, name: str, n: int, size: int = 64, seed: int = 0, ext: str = ".png"):
    """<root>/<name>/{images,masks}/ with n synthetic pairs."""
    rng = np.random.default_rng(seed)
    img_dir = os.path.join(root, name, "images")
    mask_dir = os.path.join(root, name, "masks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)
    for i in range(n):
        image, mask = blob_pair(rng, size)
        cv2.imwrite(os.path.join(img_dir, f"{i:04d}{ext}"), cv2.cvtColor(image, cv2.COLOR_RGB2BGR))
        cv2.imwrite(os.path.join(mask_dir, f"{i:04d}.png"), mask * 255)
    return os.path.join(root, name)


def touch_dataset(root: str, name: str, n: int):
    """Empty files only; enough for anything that just lists names."""
    for sub in ("images", "masks"):
        folder = os.path.join(root, name, sub)
        os.makedirs(folder, exist_ok=True)
        for i in range(n):
            open(os.path.join(folder, f"{i:05d}.png"), "wb").close()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def double_precision():
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(old)


@pytest.fixture
def tiny_layout(tmp_path):
    """Train root with Kvasir/CVC-ClinicDB and a test root with two datasets, 64x64 images."""
    train_root = tmp_path / "TrainDataset"
    test_root = tmp_path / "TestDataset"
    write_dataset(str(train_root), "Kvasir", 6, seed=1)
    write_dataset(str(train_root), "CVC-ClinicDB", 4, seed=2)
    write_dataset(str(test_root), "Kvasir", 3, seed=3)
    write_dataset(str(test_root), "CVC-300", 2, seed=4)
    return tmp_path
