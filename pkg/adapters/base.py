from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, Iterable, Tuple

import numpy as np


@dataclass
class SegmentationSample:
    """Raw pair as read from disk: RGB uint8 image and a {0,1} uint8 mask."""

    image: np.ndarray  # (H, W, 3)
    mask: np.ndarray  # (H, W)
    dataset: str
    name: str
    original_size: Tuple[int, int]

    @property
    def source_id(self) -> str:
        return f"{self.dataset}/{self.name}"

    def replace(self, image: np.ndarray, mask: np.ndarray) -> "SegmentationSample":
        return SegmentationSample(image, mask, self.dataset, self.name, self.original_size)


class DatasetAdapter(ABC):
    """Base class all dataset adapters must implement."""

    def __init__(self, root: str, name: str):
        self.root = root
        self.name = name

    @abstractmethod
    def iter_items(self) -> Iterable[Dict[str, Any]]:
        """Yield standardized items. Each must include 'id' (`<dataset>/<filename>`)."""
        raise NotImplementedError

    @abstractmethod
    def load(self, item: Dict[str, Any]) -> SegmentationSample:
        """Read the image/mask pair an item points at."""
        raise NotImplementedError
