"""Clip index sampling, boundary-regression targets, temporal augmentations.

A clip is a chain of 32 frame indices taken with step 2, so a chain spans
63 frames of video. Signs at least as long as the span get a random start
inside the sign window (stretched by up to 5 frames on each side where the
video allows); shorter signs start at the sign start and are padded by
repeating the last video frame. Boundary targets are the sign start/end
offsets relative to the clip, normalized by the span and squashed into
(-1, 1) with y = 2*sigmoid(x) - 1 so far-out-of-clip boundaries saturate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .manifest import SampleRecord

BOUNDARY_SLACK = 5  # frames of allowed extension on each side of the sign


class ClipError(ValueError):
    pass


@dataclass(frozen=True)
class ClipSpec:
    length: int = 32
    step: int = 2
    pad_policy: str = "repeat_last"

    @property
    def span(self) -> int:
        return (self.length - 1) * self.step + 1


@dataclass(frozen=True)
class ClipSample:
    frame_indices: tuple[int, ...]
    clip_start: int
    clip_end: int  # nominal span end; clip_end - clip_start == spec.span
    boundary_targets: tuple[float, float]


@dataclass(frozen=True)
class AugmentConfig:
    p_speed: float = 0.25  # each of x2 and x0.5, drawn from one uniform
    p_drop: float = 0.5
    drop_frac: float = 0.10
    p_truncate: float = 0.25
    truncate_frac: float = 0.30

    def __post_init__(self):
        for name in ("p_speed", "p_drop", "drop_frac", "p_truncate", "truncate_frac"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ClipError(f"{name} must be in [0,1], got {v}")
        if 2 * self.p_speed > 1.0:
            raise ClipError("p_speed applies to both directions; 2*p_speed must be <= 1")

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(p_speed=0.0, p_drop=0.0, p_truncate=0.0)


def sigmoid_to_open_interval(x: float) -> float:
    """y = 2*sigmoid(x) - 1, an odd, strictly monotone map onto (-1, 1)."""
    # tanh(x/2) == 2*sigmoid(x) - 1; the tanh form is stable for large |x|.
    return math.tanh(x / 2.0)


def boundary_targets(rec: SampleRecord, clip_start: int, clip_end: int
                     ) -> tuple[float, float]:
    """Sign start relative to clip start and sign end relative to clip end,
    in units of the clip span, squashed into (-1, 1)."""
    span = clip_end - clip_start
    raw_start = (rec.sign_start - clip_start) / span
    raw_end = (rec.sign_end - clip_end) / span
    return (sigmoid_to_open_interval(raw_start), sigmoid_to_open_interval(raw_end))


def start_window(rec: SampleRecord, spec: ClipSpec = ClipSpec()) -> tuple[int, int]:
    """Inclusive [lo, hi] range of valid clip starts for a long-sign record."""
    lo = max(0, rec.sign_start - BOUNDARY_SLACK)
    hi = min(rec.video_length, rec.sign_end + BOUNDARY_SLACK) - spec.span
    return lo, hi


def sample_clip(rec: SampleRecord, spec: ClipSpec = ClipSpec(),
                rng: np.random.Generator | None = None,
                deterministic: bool = False) -> ClipSample:
    """Draw one clip from a sample record.

    With ``deterministic=True`` the start is the midpoint of the allowed
    window (used at evaluation time); otherwise it is uniform over the
    window. Short signs always start at the sign start.
    """
    if rec.video_length < 1:
        raise ClipError(f"sample {rec.sample_id!r} has no frames")
    if rec.sign_length >= spec.span:
        lo, hi = start_window(rec, spec)
        if deterministic:
            start = (lo + hi) // 2
        else:
            if rng is None:
                raise ClipError("rng required for non-deterministic sampling")
            start = int(rng.integers(lo, hi + 1))
    else:
        start = rec.sign_start
    last = rec.video_length - 1
    indices = tuple(min(start + i * spec.step, last) for i in range(spec.length))
    clip_end = start + spec.span
    return ClipSample(
        frame_indices=indices,
        clip_start=start,
        clip_end=clip_end,
        boundary_targets=boundary_targets(rec, start, clip_end),
    )


def _stretch(indices: list[int], target: int, rng: np.random.Generator) -> list[int]:
    """Grow a sorted chain to *target* entries by duplicating random positions."""
    need = target - len(indices)
    if need <= 0:
        return indices[:target]
    extra = rng.integers(0, len(indices), size=need)
    counts = np.bincount(extra, minlength=len(indices)) + 1
    out: list[int] = []
    for idx, count in zip(indices, counts):
        out.extend([idx] * int(count))
    return out


def apply_temporal_augment(indices, cfg: AugmentConfig,
                           rng: np.random.Generator) -> tuple[int, ...]:
    """Speed up / slow down, random drop, and truncate augmentations.

    Applied in that fixed order; each preserves chain length, bounds, and
    monotonicity. Fractional counts round to nearest.
    """
    chain = list(indices)
    n = len(chain)

    u = rng.random()
    if u < cfg.p_speed:
        # accelerate x2: every 2nd frame, then re-extend by doubling
        kept = chain[::2]
        chain = [idx for idx in kept for _ in range(2)][:n]
    elif u < 2 * cfg.p_speed:
        # slow x2: repeat each frame, truncated back to the chain length
        chain = [idx for idx in chain for _ in range(2)][:n]

    if rng.random() < cfg.p_drop:
        n_drop = round(cfg.drop_frac * n)
        if 0 < n_drop < n:
            drop_at = set(rng.choice(n, size=n_drop, replace=False).tolist())
            chain = [idx for pos, idx in enumerate(chain) if pos not in drop_at]
            chain = _stretch(chain, n, rng)

    if rng.random() < cfg.p_truncate:
        n_cut = round(cfg.truncate_frac * n)
        if 0 < n_cut < n:
            chain = _stretch(chain[: n - n_cut], n, rng)

    return tuple(chain)
