"""Synthetic multilingual benchmark data and the per-sample feature store.

Each class is a latent 32-step prototype trajectory in feature space. A
configurable fraction of every non-source language's classes reuses a
perturbed source prototype, modeling the cross-lingual visual overlap that
makes transfer learning work. A sample is its class prototype plus a
constant per-signer offset plus i.i.d. noise, stored as a 32 x d float32
record keyed by sample id.

Stored rows are indexed by sign phase: a video frame index maps to the row
round(31 * (frame - sign_start) / (sign_length - 1)), clamped to [0, 31],
so clip geometry and temporal augmentations select and repeat rows of the
stored record. Frames outside the sign clamp to the first/last row.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .manifest import (DatasetManifest, GlossLabel, GroupLabel, SampleRecord,
                       singleton_groups)
from .records import RecordError, check_fields, format_record, read_records
from .seeding import derive_rng


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    n_languages: int = 3
    classes_per_language: int = 12
    source_classes: int | None = None  # language 0 override; default classes_per_language
    shared_prototype_fraction: float = 0.75
    samples_per_class: int = 10
    source_samples_per_class: int | None = None  # language 0 override
    signers: int = 6  # per language
    source_signers: int | None = None  # language 0 override
    feature_dim: int = 16
    noise_scale: float = 0.3
    signer_offset_scale: float = 0.25
    sample_offset_scale: float = 0.0  # per-recording nuisance, constant over time
    nuisance_dims: int = 0  # when > 0, offsets live in this shared subspace
    prototype_jitter: float = 0.15
    confusable_pairs: int = 0  # near-duplicate class pairs planted in language 0
    seed: int = 0

    def __post_init__(self):
        if min(self.n_languages, self.classes_per_language,
               self.samples_per_class, self.signers, self.feature_dim) < 1:
            raise SynthError("all counts must be >= 1")
        if not (0.0 <= self.shared_prototype_fraction <= 1.0):
            raise SynthError("shared_prototype_fraction must be in [0,1]")
        n_source = self.source_classes or self.classes_per_language
        if self.confusable_pairs * 2 > n_source:
            raise SynthError("too many confusable pairs for the vocabulary")


CLIP_STEPS = 32


class FeatureStore:
    """In-memory map sample_id -> (32, d) float32 record with flat-file IO."""

    def __init__(self, dim: int):
        self.dim = dim
        self.records: dict[str, np.ndarray] = {}

    def put(self, sample_id: str, features: np.ndarray) -> None:
        features = np.asarray(features, dtype=np.float32)
        if features.shape != (CLIP_STEPS, self.dim):
            raise SynthError(
                f"feature record must be ({CLIP_STEPS}, {self.dim}), "
                f"got {features.shape}")
        self.records[sample_id] = features

    def get(self, sample_id: str) -> np.ndarray:
        if sample_id not in self.records:
            raise SynthError(f"no features for sample {sample_id!r}")
        return self.records[sample_id]

    def __len__(self) -> int:
        return len(self.records)

    def phase_rows(self, rec: SampleRecord, frame_indices) -> np.ndarray:
        """Map video frame indices to store rows by position within the sign."""
        denom = max(rec.sign_length - 1, 1)
        frames = np.asarray(frame_indices)
        rows = np.rint((frames - rec.sign_start) / denom * (CLIP_STEPS - 1))
        return np.clip(rows, 0, CLIP_STEPS - 1).astype(int)

    def clip_features(self, rec: SampleRecord, frame_indices) -> np.ndarray:
        """(32, d) float64 input for a clip's frame index chain."""
        stored = self.get(rec.sample_id)
        return stored[self.phase_rows(rec, frame_indices)].astype(float)

    # -- persistence: flat binary + plain-text index sidecar ------------------

    def save(self, path_prefix) -> tuple[Path, Path]:
        prefix = Path(path_prefix)
        bin_path = prefix.with_suffix(".bin")
        idx_path = prefix.with_suffix(".idx")
        ids = sorted(self.records)
        buf = io.BytesIO()
        lines = [format_record("featstore", [
            ("dim", str(self.dim)), ("steps", str(CLIP_STEPS)),
            ("count", str(len(ids)))])]
        for row, sample_id in enumerate(ids):
            buf.write(self.records[sample_id].astype("<f4").tobytes())
            lines.append(format_record("feat", [("sample", sample_id),
                                                ("row", str(row))]))
        bin_path.write_bytes(buf.getvalue())
        idx_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return bin_path, idx_path

    @classmethod
    def load(cls, path_prefix) -> "FeatureStore":
        prefix = Path(path_prefix)
        records = read_records(prefix.with_suffix(".idx"))
        if not records or records[0][1] != "featstore":
            raise RecordError("feature index must start with a featstore header")
        line_no, _, header = records[0]
        check_fields("featstore", header, ["dim", "steps", "count"], line_no)
        dim = int(header["dim"])
        steps = int(header["steps"])
        if steps != CLIP_STEPS:
            raise SynthError(f"unsupported steps count {steps}")
        store = cls(dim)
        raw = np.frombuffer(prefix.with_suffix(".bin").read_bytes(),
                            dtype="<f4").reshape(-1, CLIP_STEPS, dim)
        if raw.shape[0] != int(header["count"]):
            raise SynthError(
                f"binary holds {raw.shape[0]} records, index says {header['count']}")
        for line_no, kind, fields in records[1:]:
            if kind != "feat":
                raise RecordError(f"unexpected record kind {kind!r}", line_no)
            check_fields("feat", fields, ["sample", "row"], line_no)
            store.records[fields["sample"]] = raw[int(fields["row"])].copy()
        return store


def _smooth_trajectory(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Random smooth curve over 32 steps, roughly unit scale per coordinate."""
    window = 5
    raw = rng.normal(0.0, 1.0, (CLIP_STEPS + window - 1, dim))
    kernel = np.ones(window) / window
    smoothed = np.stack([np.convolve(raw[:, j], kernel, mode="valid")
                         for j in range(dim)], axis=1)
    return smoothed * np.sqrt(window)


def gen_synthetic(spec: SyntheticSpec
                  ) -> tuple[dict[str, DatasetManifest], FeatureStore]:
    """Generate one manifest per language plus the shared feature store.

    Language 0 is the large "source" language; languages 1.. reuse a
    shared_prototype_fraction of its prototypes (perturbed). Confusable
    pairs, when requested, are planted in language 0 as consecutive class
    pairs with nearly identical prototypes, and its manifest groups them.
    """
    store = FeatureStore(spec.feature_dim)
    manifests: dict[str, DatasetManifest] = {}
    n_source = spec.source_classes or spec.classes_per_language
    source_protos: list[np.ndarray] = []

    if spec.nuisance_dims:
        # one basis for the whole universe: signer/recording variation is a
        # shared structure an encoder can learn to discard, in any language
        universe_rng = derive_rng(spec.seed, "nuisance-basis")
        raw = universe_rng.normal(0.0, 1.0, (spec.feature_dim, spec.nuisance_dims))
        nuisance_basis, _ = np.linalg.qr(raw)

        def draw_offset(rng, scale):
            return nuisance_basis @ rng.normal(0.0, scale, spec.nuisance_dims)
    else:
        def draw_offset(rng, scale):
            return rng.normal(0.0, scale, spec.feature_dim)

    for lang_idx in range(spec.n_languages):
        lang = f"L{lang_idx}"
        rng = derive_rng(spec.seed, "lang", lang_idx)
        is_source = lang_idx == 0
        n_classes = n_source if is_source else spec.classes_per_language
        n_signers = (spec.source_signers or spec.signers) if is_source \
            else spec.signers
        per_class = (spec.source_samples_per_class or spec.samples_per_class) \
            if is_source else spec.samples_per_class

        protos = []
        n_shared = 0 if is_source else round(
            spec.shared_prototype_fraction * n_classes)
        for c in range(n_classes):
            if is_source:
                if c < 2 * spec.confusable_pairs and c % 2 == 1:
                    proto = source_protos[c - 1] + 0.05 * rng.normal(
                        0.0, 1.0, (CLIP_STEPS, spec.feature_dim))
                else:
                    proto = _smooth_trajectory(rng, spec.feature_dim)
                source_protos.append(proto)
            elif c < n_shared:
                base = source_protos[c % len(source_protos)]
                proto = base + spec.prototype_jitter * rng.normal(
                    0.0, 1.0, (CLIP_STEPS, spec.feature_dim))
            else:
                proto = _smooth_trajectory(rng, spec.feature_dim)
            protos.append(proto)

        signer_ids = [f"{lang}-p{i:02d}" for i in range(n_signers)]
        offsets = {sid: draw_offset(rng, spec.signer_offset_scale)
                   for sid in signer_ids}

        glosses = tuple(GlossLabel(id=f"{lang}-g{c:03d}", language=lang)
                        for c in range(n_classes))
        if is_source and spec.confusable_pairs:
            groups = []
            paired = set()
            for pair in range(spec.confusable_pairs):
                a, b = f"{lang}-g{2 * pair:03d}", f"{lang}-g{2 * pair + 1:03d}"
                groups.append(GroupLabel(id=a, members=(a, b)))
                paired.update((a, b))
            groups.extend(GroupLabel(id=g.id, members=(g.id,))
                          for g in glosses if g.id not in paired)
            groups = tuple(groups)
        else:
            groups = singleton_groups(glosses)

        samples = []
        for c in range(n_classes):
            for i in range(per_class):
                signer = signer_ids[int(rng.integers(0, n_signers))]
                video_length = int(rng.integers(70, 141))
                sign_length = int(rng.integers(30, 111))
                sign_length = min(sign_length, video_length - 4)
                sign_start = int(rng.integers(0, video_length - sign_length + 1))
                sample_id = f"{lang}-c{c:03d}-n{i:03d}"
                samples.append(SampleRecord(
                    sample_id=sample_id, signer=signer, gloss=f"{lang}-g{c:03d}",
                    language=lang, video_length=video_length,
                    sign_start=sign_start, sign_end=sign_start + sign_length))
                features = protos[c] + offsets[signer] + rng.normal(
                    0.0, spec.noise_scale, (CLIP_STEPS, spec.feature_dim))
                if spec.sample_offset_scale:
                    features = features + draw_offset(
                        rng, spec.sample_offset_scale)
                store.put(sample_id, features)

        manifests[lang] = DatasetManifest(
            language=lang, glosses=glosses, groups=groups,
            signers=tuple(signer_ids), samples=tuple(samples)).validate()
    return manifests, store
