import math
import os
import warnings
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from adapters.dataset import PolypDataset, make_loader
from adapters.transforms import IMG_SIZE
from common.errors import DataError, NonFiniteLossError
from common.log import PROGRESS_EVERY, say
from common.seeding import seed_everything
from eval.metrics import binarize, dice
from training.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from training.losses import combined_loss
from training.schedule import DIV_FACTOR, FINAL_DIV_FACTOR, PCT_START, PinnedOneCycleLR

HISTORY_COLUMNS = ["epoch", "train_loss", "val_dice", "lr"]


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lr: float = Field(1e-4, gt=0)
    weight_decay: float = Field(0.0, ge=0)
    epochs: int = Field(200, gt=0)
    batch_size: int = Field(16, gt=0)
    seed: int = 0
    val_threshold: float = Field(0.5, gt=0, lt=1)
    img_size: int = Field(IMG_SIZE, gt=0, multiple_of=32)
    aug_p: float = Field(0.5, ge=0, le=1)
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = Field(1e-8, gt=0)
    pct_start: float = Field(PCT_START, gt=0, lt=1)
    div_factor: float = Field(DIV_FACTOR, gt=0)
    final_div_factor: float = Field(FINAL_DIV_FACTOR, gt=0)


def resolve_device() -> torch.device:
    wanted = os.getenv("ENFORMER_DEVICE", "cpu")
    if wanted.startswith("cuda") and not torch.cuda.is_available():
        warnings.warn(f"ENFORMER_DEVICE={wanted} but CUDA is unavailable; using cpu")
        return torch.device("cpu")
    return torch.device(wanted)


def build_optimizer(model: nn.Module, cfg: TrainConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        [p for p in model.parameters() if p.requires_grad],
        lr=cfg.lr, betas=cfg.betas, eps=cfg.eps, weight_decay=cfg.weight_decay,
    )


# -------------------- validation --------------------
def mean_dice(probs: Sequence[np.ndarray], masks: Sequence[np.ndarray], threshold: float = 0.5) -> float:
    """Per-image dice of thresholded probabilities, averaged."""
    if len(probs) == 0:
        raise DataError("Validation set is empty")
    scores = [dice(binarize(p, threshold), m.astype(bool)) for p, m in zip(probs, masks)]
    return float(np.mean(scores))


@torch.no_grad()
def predict_dataset(model: nn.Module, dataset: PolypDataset, batch_size: int = 8
                    ) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    device = next(model.parameters()).device
    model.eval()
    probs, masks = [], []
    for x, y in make_loader(dataset, batch_size, shuffle=False):
        p = model(x.to(device)).cpu().numpy()
        probs.extend(p[:, 0])
        masks.extend(y.numpy()[:, 0] > 0.5)
    return probs, masks


def validate(model: nn.Module, dataset: PolypDataset, threshold: float = 0.5, batch_size: int = 8) -> float:
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    if len(dataset) == 0:
        raise DataError("Validation set is empty")
    probs, masks = predict_dataset(model, dataset, batch_size)
    return mean_dice(probs, masks, threshold)


# -------------------- training --------------------
@dataclass
class TrainResult:
    history: pd.DataFrame
    best: Optional[Checkpoint]
    last: Optional[Checkpoint]


def _read_history(out_dir: str, upto_epoch: int) -> List[Dict[str, Any]]:
    path = os.path.join(out_dir, "history.csv")
    if not os.path.exists(path):
        return []
    df = pd.read_csv(path)
    return df[df["epoch"] <= upto_epoch].to_dict("records")


def train(
    model: nn.Module,
    train_items: Sequence[Dict[str, Any]],
    val_items: Sequence[Dict[str, Any]],
    cfg: TrainConfig,
    out_dir: Optional[str] = None,
    config_hash: str = "",
    model_recipe: Optional[Dict[str, Any]] = None,
    resume_from: Optional[str] = None,
    allow_config_mismatch: bool = False,
) -> TrainResult:
    """
    AdamW + one-cycle training; validation dice after every epoch.

    With `out_dir`, writes history.csv plus `last` and `best` checkpoints
    (best = highest validation dice). `resume_from` continues from a saved
    checkpoint: epoch numbering, optimizer moments and the lr curve carry on.
    """
    if len(train_items) == 0:
        raise DataError("Training set is empty")
    if len(val_items) == 0:
        raise DataError("Validation set is empty")

    seed_everything(cfg.seed)
    device = resolve_device()
    model.to(device)
    optimizer = build_optimizer(model, cfg)

    train_ds = PolypDataset(train_items, cfg.img_size, train=True, seed=cfg.seed, aug_p=cfg.aug_p)
    val_ds = PolypDataset(val_items, cfg.img_size)
    steps_per_epoch = math.ceil(len(train_ds) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch

    history: List[Dict[str, Any]] = []
    best: Optional[Checkpoint] = None
    last: Optional[Checkpoint] = None
    start_epoch = 1
    if resume_from:
        last = load_checkpoint(resume_from, config_hash or None, allow_config_mismatch)
        last.restore(model, optimizer, restore_rng=True)
        start_epoch = last.epoch + 1
        if out_dir:
            history = _read_history(out_dir, last.epoch)
            best_path = os.path.join(out_dir, "best")
            if os.path.exists(best_path + ".enfw"):
                best = load_checkpoint(best_path, config_hash or None, allow_config_mismatch)
        say("resume", f"continuing at epoch {start_epoch} from {resume_from}")

    scheduler = PinnedOneCycleLR(optimizer, cfg.lr, total_steps, cfg.pct_start, cfg.div_factor, cfg.final_div_factor)
    if start_epoch > 1:
        scheduler.seek((start_epoch - 1) * steps_per_epoch)

    for epoch in range(start_epoch, cfg.epochs + 1):
        model.train()
        train_ds.set_epoch(epoch)
        losses = []
        lr = scheduler.get_last_lr()[0]
        loader = make_loader(train_ds, cfg.batch_size, shuffle=True, epoch=epoch)
        for b, (x, y) in enumerate(tqdm(loader, desc=f"epoch {epoch}", leave=False)):
            step = (epoch - 1) * steps_per_epoch + b
            lr = scheduler.get_last_lr()[0]

            prob = model(x.to(device))
            loss = combined_loss(prob, y.to(device))
            if not torch.isfinite(loss):
                raise NonFiniteLossError(batch_id=step, value=float(loss.detach()))
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            scheduler.step()
            losses.append(float(loss.detach()))

            if PROGRESS_EVERY and (b + 1) % PROGRESS_EVERY == 0:
                say(f"epoch {epoch}", f"batch {b + 1}/{steps_per_epoch} loss={np.mean(losses):.4f} lr={lr:.2e}")

        val_dice = validate(model, val_ds, cfg.val_threshold)
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_dice": val_dice, "lr": lr})
        say(f"epoch {epoch}", f"train_loss={history[-1]['train_loss']:.4f} val_dice={val_dice:.4f}")

        last = Checkpoint.capture(model, epoch, val_dice, config_hash, cfg.seed, model_recipe, optimizer)
        improved = best is None or val_dice > best.val_dice
        if improved:
            best = last
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            save_checkpoint(os.path.join(out_dir, "last"), last)
            if improved:
                save_checkpoint(os.path.join(out_dir, "best"), best)
                say("best", f"epoch {epoch} val_dice={val_dice:.4f}")
            pd.DataFrame(history, columns=HISTORY_COLUMNS).to_csv(os.path.join(out_dir, "history.csv"), index=False)

    return TrainResult(pd.DataFrame(history, columns=HISTORY_COLUMNS), best, last)
