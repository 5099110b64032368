"""Mixed-language batches, language gates, and inter-sample augmentations.

Batches mix samples from several sign languages. Language label spaces are
disjoint, so anything label-dependent (classification heads, Mixup/CutMix)
runs on language-specific sub-batches produced by the gate; the gate is
lossless and order-preserving, and merging the sub-batches back yields a
permutation of the original batch.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


class BatchError(ValueError):
    pass


@dataclass(frozen=True)
class BatchItem:
    """One clip: a [32 x d] feature sequence, a soft class target over its
    language's vocabulary, and the mapped boundary-regression targets."""

    features: np.ndarray  # (steps, feature_dim) float64
    target: np.ndarray  # (n_classes_of_language,) soft label, sums to 1
    language: str
    boundary: np.ndarray  # (2,) mapped targets in (-1, 1)
    sample_id: str = ""

    @classmethod
    def from_class_index(cls, features, class_index: int, n_classes: int,
                         language: str, boundary, sample_id: str = "") -> "BatchItem":
        if not (0 <= class_index < n_classes):
            raise BatchError(
                f"class index {class_index} out of range for {language!r} "
                f"({n_classes} classes)")
        target = np.zeros(n_classes)
        target[class_index] = 1.0
        return cls(features=np.asarray(features, dtype=float), target=target,
                   language=language, boundary=np.asarray(boundary, dtype=float),
                   sample_id=sample_id)


@dataclass
class MixedBatch:
    items: list[BatchItem]

    def __post_init__(self):
        if not self.items:
            raise BatchError("batch must be non-empty")

    def __len__(self) -> int:
        return len(self.items)

    def languages(self) -> list[str]:
        return sorted({item.language for item in self.items})


def gate_split(batch: MixedBatch, known_languages=None) -> dict[str, list[BatchItem]]:
    """Split a batch into language sub-batches, preserving within-language order."""
    subs: dict[str, list[BatchItem]] = {}
    for item in batch.items:
        if known_languages is not None and item.language not in known_languages:
            raise BatchError(f"unknown language tag {item.language!r}")
        subs.setdefault(item.language, []).append(item)
    return subs


def merge_subbatches(subs: dict[str, list[BatchItem]]) -> MixedBatch:
    """Concatenate sub-batches in sorted language order."""
    items: list[BatchItem] = []
    for language in sorted(subs):
        items.extend(subs[language])
    return MixedBatch(items=items)


def language_weights(batch: MixedBatch) -> dict[str, float]:
    """Per-language loss weights, proportional to sub-batch sizes; sum to 1."""
    counts: dict[str, int] = {}
    for item in batch.items:
        counts[item.language] = counts.get(item.language, 0) + 1
    total = len(batch)
    return {lang: count / total for lang, count in counts.items()}


def _mix_pair(item: BatchItem, partner: BatchItem, lam: float) -> BatchItem:
    return replace(
        item,
        features=lam * item.features + (1.0 - lam) * partner.features,
        target=lam * item.target + (1.0 - lam) * partner.target,
        boundary=lam * item.boundary + (1.0 - lam) * partner.boundary,
    )


def _cut_pair(item: BatchItem, partner: BatchItem, lam: float,
              rng: np.random.Generator) -> BatchItem:
    steps = item.features.shape[0]
    span = round((1.0 - lam) * steps)  # lam is the kept fraction
    if span <= 0:
        return item
    offset = int(rng.integers(0, steps - span + 1))
    features = item.features.copy()
    features[offset:offset + span] = partner.features[offset:offset + span]
    keep = 1.0 - span / steps  # realized fraction after rounding
    return replace(
        item,
        features=features,
        target=keep * item.target + (1.0 - keep) * partner.target,
        boundary=keep * item.boundary + (1.0 - keep) * partner.boundary,
    )


def intersample_augment(sub: list[BatchItem], mode: str, alpha: float,
                        rng: np.random.Generator) -> list[BatchItem]:
    """Mixup or temporal CutMix within one language's sub-batch.

    One lambda ~ Beta(alpha, alpha) is drawn per call; each item is paired
    with a random permutation partner. Size-1 sub-batches pass through.
    """
    languages = {item.language for item in sub}
    if len(languages) > 1:
        raise BatchError(f"sub-batch mixes languages {sorted(languages)}")
    if len(sub) < 2:
        return list(sub)
    lam = float(rng.beta(alpha, alpha))
    perm = rng.permutation(len(sub))
    if mode == "mixup":
        return [_mix_pair(item, sub[perm[i]], lam) for i, item in enumerate(sub)]
    if mode == "cutmix":
        return [_cut_pair(item, sub[perm[i]], lam, rng) for i, item in enumerate(sub)]
    raise BatchError(f"unknown augmentation mode {mode!r}")
