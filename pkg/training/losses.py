import torch

from common.errors import ShapeError

DICE_SMOOTH = 1.0
BCE_CLAMP = 1e-7


def _check(prob: torch.Tensor, target: torch.Tensor) -> None:
    if prob.shape != target.shape:
        raise ShapeError(f"prediction {tuple(prob.shape)} and target {tuple(target.shape)} shapes differ")


def dice_loss(prob: torch.Tensor, target: torch.Tensor, smooth: float = DICE_SMOOTH) -> torch.Tensor:
    """1 - (2|P*Y| + s) / (|P| + |Y| + s) per sample, averaged over the batch.

    A (H, W) or (1, H, W) map counts as a single sample.
    """
    _check(prob, target)
    if prob.dim() <= 3:
        prob, target = prob.unsqueeze(0), target.unsqueeze(0)
    p = prob.flatten(1)
    y = target.flatten(1)
    inter = (p * y).sum(dim=1)
    score = (2.0 * inter + smooth) / (p.sum(dim=1) + y.sum(dim=1) + smooth)
    return (1.0 - score).mean()


def bce_loss(prob: torch.Tensor, target: torch.Tensor, clamp: float = BCE_CLAMP) -> torch.Tensor:
    _check(prob, target)
    p = prob.clamp(clamp, 1.0 - clamp)
    return -(target * torch.log(p) + (1.0 - target) * torch.log(1.0 - p)).mean()


def combined_loss(prob: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return 0.5 * (dice_loss(prob, target) + bce_loss(prob, target))
