"""
Deterministic train/val partition of the pooled training datasets and the
text manifest that records it (`<dataset>/<filename>,<train|val>` per line).
"""
import math
import os
from typing import Any, Dict, List, Mapping, Sequence, Tuple

import numpy as np

from common.errors import ConfigError, DataError

DEFAULT_SPLIT_SEED = 42
DEFAULT_RATIO = 0.9

Item = Dict[str, Any]


def train_val_split(
    samples: Sequence[Item], ratio: float = DEFAULT_RATIO, seed: int = DEFAULT_SPLIT_SEED
) -> Tuple[List[Item], List[Item]]:
    """Shuffle the pooled samples with `seed`, then cut at round(n * ratio)."""
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"split ratio must lie strictly between 0 and 1, got {ratio}")
    n = len(samples)
    n_train = int(math.floor(n * ratio + 0.5))
    order = np.random.default_rng(seed).permutation(n)
    train = [samples[i] for i in order[:n_train]]
    val = [samples[i] for i in order[n_train:]]
    return train, val


def write_split_manifest(path: str, train: Sequence[Item], val: Sequence[Item]) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for part, items in (("train", train), ("val", val)):
            for item in items:
                f.write(f"{item['id']},{part}\n")
    return path


def read_split_manifest(path: str, pool: Mapping[str, Sequence[Item]]) -> Tuple[List[Item], List[Item]]:
    """Resolve manifest ids against freshly scanned datasets (`pool`: dataset -> items)."""
    by_id = {item["id"]: item for items in pool.values() for item in items}
    train, val, unknown = [], [], []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            sample_id, _, part = line.rpartition(",")
            if part not in ("train", "val") or not sample_id:
                raise DataError(f"{path}:{lineno}: expected '<dataset>/<filename>,<train|val>', got {line!r}")
            if sample_id not in by_id:
                unknown.append(sample_id)
                continue
            (train if part == "train" else val).append(by_id[sample_id])
    if unknown:
        raise DataError(f"{path}: {len(unknown)} manifest entries not found on disk, e.g. {unknown[:5]}")
    return train, val
