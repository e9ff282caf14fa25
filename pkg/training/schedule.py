"""
One-cycle learning rate.

Linear warm-up from max_lr/div_factor to max_lr over the first pct_start of
the run, then cosine annealing to max_lr/(div_factor*final_div_factor) at the
last step. `one_cycle_lr` evaluates the curve for any step; `PinnedOneCycleLR`
drives an optimizer along it.
"""
from typing import Dict, List

import torch
from torch.optim.lr_scheduler import OneCycleLR

PCT_START = 0.3
DIV_FACTOR = 25.0
FINAL_DIV_FACTOR = 1e4


def warmup_steps(total_steps: int, pct_start: float = PCT_START) -> int:
    return int(round(pct_start * total_steps))


def one_cycle_lr(
    step: int,
    total_steps: int,
    max_lr: float,
    pct_start: float = PCT_START,
    div_factor: float = DIV_FACTOR,
    final_div_factor: float = FINAL_DIV_FACTOR,
) -> float:
    if total_steps < 1 or not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    initial_lr = max_lr / div_factor
    min_lr = initial_lr / final_div_factor
    up = warmup_steps(total_steps, pct_start)
    down = total_steps - 1 - up

    if step == up:
        return max_lr
    if step < up:
        return OneCycleLR._annealing_linear(initial_lr, max_lr, step / up)
    return OneCycleLR._annealing_cos(max_lr, min_lr, (step - up) / down)


class PinnedOneCycleLR(OneCycleLR):
    """
    torch's OneCycleLR with the peak pinned to step round(pct_start * T).

    Momentum is not cycled, so AdamW keeps its betas. Steps past the end stay
    on the final value.
    """

    def __init__(
        self,
        optimizer: torch.optim.Optimizer,
        max_lr: float,
        total_steps: int,
        pct_start: float = PCT_START,
        div_factor: float = DIV_FACTOR,
        final_div_factor: float = FINAL_DIV_FACTOR,
    ):
        # read by get_lr during the initial step inside super().__init__
        self.pinned = dict(pct_start=pct_start, div_factor=div_factor, final_div_factor=final_div_factor)
        super().__init__(
            optimizer,
            max_lr=max_lr,
            total_steps=total_steps,
            pct_start=pct_start,
            anneal_strategy="cos",
            cycle_momentum=False,
            div_factor=div_factor,
            final_div_factor=final_div_factor,
        )

    def get_lr(self) -> List[float]:
        step = min(self.last_epoch, self.total_steps - 1)
        return [one_cycle_lr(step, self.total_steps, group["max_lr"], **self.pinned)
                for group in self.optimizer.param_groups]

    def seek(self, step: int) -> None:
        """Jump to `step` (used on resume) without touching the optimizer's moments."""
        self.last_epoch = step
        values = self.get_lr()
        for group, lr in zip(self.optimizer.param_groups, values):
            group["lr"] = lr
        self._last_lr = values


def schedule_notes(pct_start: float = PCT_START, div_factor: float = DIV_FACTOR,
                   final_div_factor: float = FINAL_DIV_FACTOR) -> Dict[str, str]:
    """Defaults that were chosen rather than given; copied into resolved_config.yaml."""
    return {
        "one_cycle.pct_start": f"{pct_start} (assumed default)",
        "one_cycle.div_factor": f"{div_factor} (assumed default)",
        "one_cycle.final_div_factor": f"{final_div_factor} (assumed default)",
        "one_cycle.anneal": "cos (assumed default)",
    }
