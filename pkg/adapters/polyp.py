import os
import warnings
from typing import Any, Dict, Iterable, List, Mapping, Tuple

import cv2
import numpy as np

from common.errors import DataError
from .base import DatasetAdapter, SegmentationSample

IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp")

# Standard polyp benchmark layout: two training sets, five test sets.
STANDARD_COUNTS: Dict[str, Dict[str, int]] = {
    "train": {"Kvasir": 900, "CVC-ClinicDB": 550},
    "test": {
        "Kvasir": 100,
        "CVC-ClinicDB": 62,
        "CVC-300": 60,
        "CVC-ColonDB": 380,
        "ETIS-LaribPolypDB": 196,
    },
}


def binarize_mask(raw: np.ndarray) -> np.ndarray:
    """Grayscale mask -> {0,1} uint8 (value > 127 is foreground)."""
    if raw.ndim == 3:
        raw = raw[..., 0]
    return (raw > 127).astype(np.uint8)


def _list_by_stem(folder: str) -> Dict[str, str]:
    out = {}
    for fn in os.listdir(folder):
        stem, ext = os.path.splitext(fn)
        if ext.lower() in IMAGE_EXTS:
            out[stem] = fn
    return out


class PolypFolderAdapter(DatasetAdapter):
    """
    <root>/<name>/images/<stem>.<ext> paired with <root>/<name>/masks/<stem>.<ext>.
    Pairing is by file stem so a .jpg image may carry a .png mask.
    """

    def folder(self) -> str:
        return os.path.join(self.root, self.name)

    def iter_items(self) -> Iterable[Dict[str, Any]]:
        base = self.folder()
        img_dir, mask_dir = os.path.join(base, "images"), os.path.join(base, "masks")
        for d in (img_dir, mask_dir):
            if not os.path.isdir(d):
                raise DataError(f"{self.name}: missing directory {d}")

        images, masks = _list_by_stem(img_dir), _list_by_stem(mask_dir)
        orphan_images = sorted(images[s] for s in set(images) - set(masks))
        orphan_masks = sorted(masks[s] for s in set(masks) - set(images))
        if orphan_images or orphan_masks:
            raise DataError(
                f"{self.name}: unpaired files; images without mask: {orphan_images}; "
                f"masks without image: {orphan_masks}"
            )

        for stem in sorted(images, key=lambda s: images[s]):
            yield {
                "id": f"{self.name}/{images[stem]}",
                "dataset": self.name,
                "filename": images[stem],
                "image_path": os.path.join(img_dir, images[stem]),
                "mask_path": os.path.join(mask_dir, masks[stem]),
            }

    def load(self, item: Dict[str, Any]) -> SegmentationSample:
        return load_sample(item)


def load_sample(item: Mapping[str, Any]) -> SegmentationSample:
    bgr = cv2.imread(item["image_path"], cv2.IMREAD_COLOR)
    raw_mask = cv2.imread(item["mask_path"], cv2.IMREAD_GRAYSCALE)
    if bgr is None or raw_mask is None:
        raise DataError(f"{item['id']}: unreadable image or mask")
    if bgr.shape[:2] != raw_mask.shape[:2]:
        raise DataError(f"{item['id']}: image {bgr.shape[:2]} and mask {raw_mask.shape[:2]} sizes differ")
    image = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
    h, w = image.shape[:2]
    return SegmentationSample(image, binarize_mask(raw_mask), item["dataset"], item["filename"], (h, w))


def scan_dataset(root: str, name: str) -> List[Dict[str, Any]]:
    """Sorted list of paired items for one dataset folder; [] when it holds no images."""
    if not os.path.isdir(os.path.join(root, name)):
        raise DataError(f"Dataset root not found: {os.path.join(root, name)}")
    return list(PolypFolderAdapter(root, name).iter_items())


def scan_many(root: str, names: Iterable[str]) -> Dict[str, List[Dict[str, Any]]]:
    return {n: scan_dataset(root, n) for n in names}


def check_layout_counts(root: str, split: str = "train") -> Dict[str, Tuple[int, int]]:
    """Compare a layout against the standard counts; returns {dataset: (expected, found)} for mismatches."""
    if split not in STANDARD_COUNTS:
        raise DataError(f"Unknown split {split!r}; expected one of {sorted(STANDARD_COUNTS)}")
    deviations = {}
    for name, expected in STANDARD_COUNTS[split].items():
        try:
            found = len(scan_dataset(root, name))
        except DataError:
            found = 0
        if found != expected:
            deviations[name] = (expected, found)
    if deviations:
        warnings.warn(f"{split} layout at {root} deviates from the standard counts: {deviations}")
    return deviations
