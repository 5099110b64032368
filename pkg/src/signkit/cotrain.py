"""Multi-dataset co-training loop over mixed-language batches.

One epoch is a pass over the union of all train samples: every batch slot
draws a language with probability proportional to its remaining samples
(without replacement within the epoch), so batch composition tracks
dataset sizes. Each batch flows through clip sampling and temporal
augmentation, the language gate, per-sub-batch Mixup/CutMix, the shared
encoder, per-language heads, and the boundary-regression head; AdamW with
the plan's per-step LR does the update. With a single manifest the loop
degenerates to a plain single-dataset trainer (no language draws).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .batching import BatchItem, MixedBatch, gate_split, intersample_augment, merge_subbatches
from .clips import AugmentConfig, ClipSpec, apply_temporal_augment, sample_clip
from .manifest import DatasetManifest, SampleRecord, project_to_groups
from .nn import AdamW, EngineError, LossReport, Model, loss_and_grads
from .schedule import TrainPlan, lr_at
from .seeding import derive_rng
from .synth import FeatureStore


@dataclass
class TrainConfig:
    batch_size: int = 16
    seed: int = 0
    label_space: str = "gloss"  # or "group"
    label_smoothing: float = 0.1
    weight_decay: float = 0.05
    mix_alpha: float = 0.8
    mix_prob: float = 0.5  # per sub-batch; half mixup, half cutmix when it fires
    temporal: AugmentConfig = field(default_factory=AugmentConfig)
    encoder_mode: str = "scratch"  # scratch | pretrained | frozen
    regr_coef: float = 2.5
    regr_languages: frozenset[str] | None = None
    hidden_dim: int = 64
    embed_dim: int = 64
    eval_every: int = 1  # epochs between test-set evaluations


def class_vocab(m: DatasetManifest, label_space: str) -> list[str]:
    """Ordered class labels of a manifest: sorted gloss or group ids."""
    if label_space == "gloss":
        return m.gloss_ids()
    if label_space == "group":
        return m.group_ids()
    raise EngineError(f"unknown label space {label_space!r}")


def sample_class_index(rec: SampleRecord, m: DatasetManifest, vocab: list[str],
                       label_space: str) -> int:
    label = rec.gloss if label_space == "gloss" \
        else project_to_groups(m, [rec.gloss])[0]
    return vocab.index(label)


@dataclass
class MetricRow:
    epoch: int
    step: int
    lr: float
    total: float
    regr: float
    cls_by_language: dict[str, float]
    accuracy: dict[str, float] = field(default_factory=dict)

    def fields(self) -> list[tuple[str, str]]:
        out = [("epoch", str(self.epoch)), ("step", str(self.step)),
               ("lr", f"{self.lr:.8g}"), ("total", f"{self.total:.6f}"),
               ("regr", f"{self.regr:.6f}")]
        for lang in sorted(self.cls_by_language):
            out.append((f"cls.{lang}", f"{self.cls_by_language[lang]:.6f}"))
        for lang in sorted(self.accuracy):
            out.append((f"acc.{lang}", f"{self.accuracy[lang]:.4f}"))
        return out


@dataclass
class TrainResult:
    model: Model
    metrics: list[MetricRow]
    final_accuracy: dict[str, float]


class _BatchFactory:
    """Builds language-tagged batch items from manifests and the store."""

    def __init__(self, manifests: dict[str, DatasetManifest], store: FeatureStore,
                 label_space: str):
        self.manifests = manifests
        self.store = store
        self.label_space = label_space
        self.vocabs = {lang: class_vocab(m, label_space)
                       for lang, m in manifests.items()}
        self.class_index: dict[str, dict[str, int]] = {}
        for lang, m in manifests.items():
            vocab = self.vocabs[lang]
            lookup = {label: i for i, label in enumerate(vocab)}
            mapping = {}
            for rec in m.samples:
                label = rec.gloss if label_space == "gloss" \
                    else m.gloss_to_group()[rec.gloss]
                mapping[rec.sample_id] = lookup[label]
            self.class_index[lang] = mapping

    def item(self, lang: str, rec: SampleRecord, rng: np.random.Generator | None,
             temporal: AugmentConfig | None, deterministic: bool) -> BatchItem:
        clip = sample_clip(rec, ClipSpec(), rng=rng, deterministic=deterministic)
        indices = clip.frame_indices
        if temporal is not None and rng is not None:
            indices = apply_temporal_augment(indices, temporal, rng)
        features = self.store.clip_features(rec, indices)
        return BatchItem.from_class_index(
            features=features,
            class_index=self.class_index[lang][rec.sample_id],
            n_classes=len(self.vocabs[lang]),
            language=lang,
            boundary=np.array(clip.boundary_targets),
            sample_id=rec.sample_id)


def _epoch_order(pools: dict[str, list[SampleRecord]],
                 rng: np.random.Generator) -> list[tuple[str, SampleRecord]]:
    """Interleave all train samples: each slot draws a language with
    probability proportional to its remaining samples, without replacement."""
    remaining = {lang: list(recs) for lang, recs in pools.items() if recs}
    for recs in remaining.values():
        rng.shuffle(recs)
    langs = sorted(remaining)
    if len(langs) == 1:
        return [(langs[0], rec) for rec in remaining[langs[0]]]
    order: list[tuple[str, SampleRecord]] = []
    counts = np.array([len(remaining[lang]) for lang in langs], dtype=float)
    while counts.sum() > 0:
        probs = counts / counts.sum()
        pick = int(rng.choice(len(langs), p=probs))
        order.append((langs[pick], remaining[langs[pick]].pop()))
        counts[pick] -= 1
    return order


def evaluate(model: Model, manifests: dict[str, DatasetManifest],
             store: FeatureStore, label_space: str, subset: str = "test"
             ) -> dict[str, float]:
    """Deterministic top-1 accuracy per language on the given subset."""
    factory = _BatchFactory(manifests, store, label_space)
    accs: dict[str, float] = {}
    for lang, m in manifests.items():
        recs = m.samples_by_subset(subset)
        if not recs:
            continue
        items = [factory.item(lang, rec, rng=None, temporal=None,
                              deterministic=True) for rec in recs]
        features = np.stack([it.features for it in items])
        preds = model.predict(lang, features)
        truth = np.array([int(np.argmax(it.target)) for it in items])
        accs[lang] = float((preds == truth).mean())
    return accs


def train(plan: TrainPlan, manifests: dict[str, DatasetManifest],
          store: FeatureStore, cfg: TrainConfig,
          init_model: Model | None = None) -> TrainResult:
    """Run the co-training loop for plan.total_steps optimizer steps.

    ``init_model`` seeds the encoder (and any heads it already has) for the
    pretrained and frozen modes; heads for new languages are always created
    fresh. Fixed seed implies an identical metrics trajectory.
    """
    if cfg.encoder_mode not in ("scratch", "pretrained", "frozen"):
        raise EngineError(f"unknown encoder mode {cfg.encoder_mode!r}")
    if cfg.encoder_mode != "scratch" and init_model is None:
        raise EngineError(f"{cfg.encoder_mode} mode requires an initial model")

    factory = _BatchFactory(manifests, store, cfg.label_space)
    feature_dim = store.dim
    if init_model is not None and cfg.encoder_mode != "scratch":
        model = init_model.copy()
        model.label_smoothing = cfg.label_smoothing
        model.regr_coef = cfg.regr_coef
        for lang in sorted(manifests):
            if lang not in model.classes:
                model.add_head(lang, factory.vocabs[lang], seed=cfg.seed)
            elif model.classes[lang] != factory.vocabs[lang]:
                raise EngineError(
                    f"head for {lang!r} does not match the manifest vocabulary")
    else:
        model = Model.create(
            feature_dim=feature_dim,
            classes={lang: factory.vocabs[lang] for lang in sorted(manifests)},
            seed=cfg.seed, hidden_dim=cfg.hidden_dim, embed_dim=cfg.embed_dim,
            label_space=cfg.label_space, label_smoothing=cfg.label_smoothing,
            regr_coef=cfg.regr_coef)
    model.encoder_trainable = cfg.encoder_mode != "frozen"
    model.regr_languages = cfg.regr_languages

    skip = frozenset() if model.encoder_trainable \
        else frozenset(model.encoder_keys())
    optimizer = AdamW(weight_decay=cfg.weight_decay)
    rng = derive_rng(cfg.seed, "train-loop")

    pools = {lang: m.samples_by_subset("train") for lang, m in manifests.items()}
    if not any(pools.values()):
        raise EngineError("no train samples in any manifest")

    metrics: list[MetricRow] = []
    final_acc: dict[str, float] = {}
    step = 0
    epoch = 0
    epoch_losses: list[LossReport] = []
    order: list[tuple[str, SampleRecord]] = []
    while step < plan.total_steps:
        if not order:
            order = _epoch_order(pools, rng)
        batch_recs = order[:cfg.batch_size]
        order = order[cfg.batch_size:]
        items = [factory.item(lang, rec, rng=rng, temporal=cfg.temporal,
                              deterministic=False) for lang, rec in batch_recs]
        batch = MixedBatch(items=items)

        subs = gate_split(batch, known_languages=set(model.classes))
        augmented: dict[str, list[BatchItem]] = {}
        for lang in sorted(subs):
            sub = subs[lang]
            if rng.random() < cfg.mix_prob and len(sub) > 1:
                mode = "mixup" if rng.random() < 0.5 else "cutmix"
                sub = intersample_augment(sub, mode, cfg.mix_alpha, rng)
            augmented[lang] = sub
        batch = merge_subbatches(augmented)

        report, grads = loss_and_grads(model, batch)
        if not np.isfinite(report.total):
            raise EngineError(
                f"non-finite loss at step {step}: {report.cls_by_language}")
        lr = lr_at(plan, step)
        optimizer.step(model.params, grads, lr, skip=skip)
        epoch_losses.append(report)
        step += 1

        end_of_epoch = step % plan.steps_per_epoch == 0 or step == plan.total_steps
        if end_of_epoch:
            epoch += 1
            mean_total = float(np.mean([r.total for r in epoch_losses]))
            mean_regr = float(np.mean([r.regr for r in epoch_losses]))
            cls_means: dict[str, float] = {}
            for lang in sorted(manifests):
                vals = [r.cls_by_language[lang] for r in epoch_losses
                        if lang in r.cls_by_language]
                if vals:
                    cls_means[lang] = float(np.mean(vals))
            acc: dict[str, float] = {}
            if epoch % cfg.eval_every == 0 or step == plan.total_steps:
                acc = evaluate(model, manifests, store, cfg.label_space)
                final_acc = acc or final_acc
            metrics.append(MetricRow(
                epoch=epoch, step=step, lr=lr, total=mean_total,
                regr=mean_regr, cls_by_language=cls_means, accuracy=acc))
            epoch_losses = []

    if not final_acc:
        final_acc = evaluate(model, manifests, store, cfg.label_space)
    return TrainResult(model=model, metrics=metrics, final_accuracy=final_acc)
