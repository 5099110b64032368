"""Piecewise learning-rate schedule: linear warmup, cosine annealing, floor.

The baseline plan warms up linearly from 8e-6 to 4.8e-3 over the first 5 of
50 epochs, anneals with a cosine to 8e-5 by the end of epoch 40, and stays
constant afterwards. Plans are canonically stored in the step domain so
that dataset rescaling (training on a fraction of the data for more,
shorter epochs) preserves the step positions of every breakpoint exactly;
epoch-valued fields are derived views.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

BREAKPOINT_TOL = 1e-12


class ScheduleError(ValueError):
    pass


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class TrainPlan:
    """Step-domain LR plan. Epoch-named accessors divide by steps_per_epoch."""

    lr_init: float
    lr_peak: float
    lr_final: float
    steps_per_epoch: int
    warmup_end_step: int
    cosine_start_step: int
    cosine_end_step: int
    total_steps: int
    scale_factor: float = 1.0  # cumulative 1/fraction applied by rescale_plan

    def __post_init__(self):
        if self.steps_per_epoch < 1:
            raise ScheduleError("steps_per_epoch must be >= 1")
        if self.lr_init > self.lr_peak:
            raise ScheduleError("lr_init must not exceed lr_peak")
        if not (0 <= self.warmup_end_step <= self.cosine_start_step
                <= self.cosine_end_step <= self.total_steps):
            raise ScheduleError(
                "breakpoints must satisfy 0 <= warmup_end <= cosine_start "
                "<= cosine_end <= total_steps")

    # -- epoch views ---------------------------------------------------------

    @property
    def warmup_end_epoch(self) -> float:
        return self.warmup_end_step / self.steps_per_epoch

    @property
    def cosine_start_epoch(self) -> float:
        return self.cosine_start_step / self.steps_per_epoch

    @property
    def cosine_end_epoch(self) -> float:
        return self.cosine_end_step / self.steps_per_epoch

    @property
    def total_epochs(self) -> float:
        return self.total_steps / self.steps_per_epoch

    @classmethod
    def from_epochs(cls, steps_per_epoch: int, total_epochs: float,
                    warmup_end_epoch: float, cosine_start_epoch: float,
                    cosine_end_epoch: float, lr_init: float, lr_peak: float,
                    lr_final: float) -> "TrainPlan":
        spe = steps_per_epoch
        return cls(
            lr_init=lr_init, lr_peak=lr_peak, lr_final=lr_final,
            steps_per_epoch=spe,
            warmup_end_step=round_half_up(warmup_end_epoch * spe),
            cosine_start_step=round_half_up(cosine_start_epoch * spe),
            cosine_end_step=round_half_up(cosine_end_epoch * spe),
            total_steps=round_half_up(total_epochs * spe),
        )


def baseline_plan(steps_per_epoch: int, total_epochs: int = 50) -> TrainPlan:
    """The reference 50-epoch plan: warmup over the first tenth of training,
    cosine to the four-fifths mark, constant floor after. With 50 epochs the
    breakpoints land on epochs 5 and 40."""
    warmup = total_epochs * 0.1
    cosine_end = total_epochs * 0.8
    return TrainPlan.from_epochs(
        steps_per_epoch=steps_per_epoch, total_epochs=total_epochs,
        warmup_end_epoch=warmup, cosine_start_epoch=warmup,
        cosine_end_epoch=cosine_end,
        lr_init=8e-6, lr_peak=4.8e-3, lr_final=8e-5)


def lr_at(plan: TrainPlan, step: int) -> float:
    """Learning rate at a global step index in [0, total_steps)."""
    if not (0 <= step < plan.total_steps):
        raise ScheduleError(
            f"step {step} outside [0, {plan.total_steps})")
    return _lr_unchecked(plan, step)


def _lr_unchecked(plan: TrainPlan, step: int) -> float:
    if step <= plan.warmup_end_step:
        if plan.warmup_end_step == 0:
            return plan.lr_peak
        frac = step / plan.warmup_end_step
        return plan.lr_init + (plan.lr_peak - plan.lr_init) * frac
    if step < plan.cosine_start_step:
        return plan.lr_peak
    if step <= plan.cosine_end_step:
        length = plan.cosine_end_step - plan.cosine_start_step
        if length == 0:
            return plan.lr_final
        frac = (step - plan.cosine_start_step) / length
        return plan.lr_final + (plan.lr_peak - plan.lr_final) * 0.5 * (
            1.0 + math.cos(math.pi * frac))
    return plan.lr_final


def rescale_plan(base: TrainPlan, dataset_fraction: float) -> TrainPlan:
    """Adapt a plan to a dataset of the given size fraction while keeping
    the total number of optimizer steps.

    Epochs over the smaller dataset are shorter, so the epoch count and all
    epoch-valued breakpoints scale by 1/fraction; in the step domain nothing
    moves (up to the rounding of steps_per_epoch)."""
    if dataset_fraction <= 0:
        raise ScheduleError(f"dataset_fraction must be > 0, got {dataset_fraction}")
    if dataset_fraction == 1.0:
        return base
    new_spe = max(1, round_half_up(base.steps_per_epoch * dataset_fraction))
    return replace(base, steps_per_epoch=new_spe,
                   scale_factor=base.scale_factor / dataset_fraction)


FROZEN_WARMUP_SHRINK = 5.0
FROZEN_COSINE_SHRINK = 3.5
FROZEN_DURATION_FRACTION = 0.30
FROZEN_LR_PEAK = 8e-4


def frozen_plan(base: TrainPlan) -> TrainPlan:
    """Faster schedule for frozen-encoder transfer: reduced peak LR, warmup
    a fifth as long, cosine segment 3.5x shorter, total duration 30% of the
    base plan by step count (the realized epoch count follows)."""
    warmup = round_half_up(base.warmup_end_step / FROZEN_WARMUP_SHRINK)
    cosine_len = round_half_up(
        (base.cosine_end_step - base.cosine_start_step) / FROZEN_COSINE_SHRINK)
    total = round_half_up(base.total_steps * FROZEN_DURATION_FRACTION)
    return TrainPlan(
        lr_init=base.lr_init, lr_peak=FROZEN_LR_PEAK, lr_final=base.lr_final,
        steps_per_epoch=base.steps_per_epoch,
        warmup_end_step=warmup,
        cosine_start_step=warmup,
        cosine_end_step=min(warmup + cosine_len, total),
        total_steps=total,
        scale_factor=base.scale_factor)


def dump_schedule(plan: TrainPlan) -> list[tuple[int, float]]:
    """(step, lr) pairs for every step of the plan."""
    return [(step, lr_at(plan, step)) for step in range(plan.total_steps)]
