import os
from typing import Any, Dict, Sequence, Tuple

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from common.errors import DataError
from .augment import augment
from .polyp import load_sample
from .transforms import IMG_SIZE, normalize_resize

NUM_WORKERS = int(os.getenv("ENFORMER_NUM_WORKERS", "0"))


class PolypDataset(Dataset):
    """
    Items -> (image, mask) tensors at `size`. With `train=True` every sample
    is augmented with an rng derived from (seed, epoch, index), so the
    augmentation stream does not depend on worker scheduling.
    """

    def __init__(self, items: Sequence[Dict[str, Any]], size: int = IMG_SIZE, train: bool = False,
                 seed: int = 0, aug_p: float = 0.5):
        self.items = list(items)
        self.size = size
        self.train = train
        self.seed = seed
        self.aug_p = aug_p
        self.epoch = 0

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, idx: int) -> Tuple[torch.Tensor, torch.Tensor]:
        sample = load_sample(self.items[idx])
        if self.train:
            rng = np.random.default_rng([self.seed, self.epoch, idx])
            sample = augment(sample, rng, self.aug_p)
        return normalize_resize(sample, self.size)


def make_loader(dataset: PolypDataset, batch_size: int, shuffle: bool, epoch: int = 0) -> DataLoader:
    if len(dataset) == 0:
        raise DataError("Cannot build a loader over an empty sample set")
    generator = torch.Generator()
    generator.manual_seed(dataset.seed * 100003 + epoch)
    return DataLoader(
        dataset,
        batch_size=batch_size,
        shuffle=shuffle,
        num_workers=NUM_WORKERS,
        generator=generator,
        drop_last=False,
    )
