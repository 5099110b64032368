"""Reference encoder, language heads, losses with analytic gradients, AdamW.

The encoder is deliberately small: temporal mean pooling over the 32-step
feature sequence followed by a two-layer perceptron (tanh hidden layer,
linear output) producing a 64-dim embedding. It exists to exercise the
co-training machinery end to end (encoder/head separation, frozen-encoder
transfer, boundary regression) at desk scale, not to model video.

The objective is

    L = sum_lang w_lang * CE_lang + regr_coef * MSE_regr

where w_lang is the language's share of the mixed batch, CE is
label-smoothed cross-entropy from that language's head, and the regression
head's two outputs are squashed by y = 2*sigmoid(x) - 1 before the MSE
against equally squashed boundary targets. Everything is plain numpy with
hand-written backward passes so gradients can be verified against finite
differences.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .batching import MixedBatch, gate_split, language_weights
from .seeding import derive_rng

DEFAULT_HIDDEN_DIM = 64
DEFAULT_EMBED_DIM = 64
DEFAULT_LABEL_SMOOTHING = 0.1
REGRESSION_WEIGHT = 2.5


class EngineError(RuntimeError):
    pass


@dataclass
class LossReport:
    cls_by_language: dict[str, float]
    weights: dict[str, float]
    regr: float
    total: float

    @property
    def cls_total(self) -> float:
        return sum(self.weights[lang] * loss
                   for lang, loss in self.cls_by_language.items())


@dataclass
class Model:
    """Parameter bundle: shared encoder, per-language heads, regression head.

    params keys: enc.W1 (hidden x d), enc.b1, enc.W2 (embed x hidden),
    enc.b2, head.<lang>.W (classes x embed), head.<lang>.b, regr.W
    (2 x embed), regr.b.
    """

    feature_dim: int
    hidden_dim: int
    embed_dim: int
    classes: dict[str, list[str]]  # language -> ordered class labels
    params: dict[str, np.ndarray]
    label_space: str = "gloss"
    encoder_trainable: bool = True
    label_smoothing: float = DEFAULT_LABEL_SMOOTHING
    regr_coef: float = REGRESSION_WEIGHT
    regr_languages: frozenset[str] | None = None  # None: regression on all

    @classmethod
    def create(cls, feature_dim: int, classes: dict[str, list[str]],
               seed: int = 0, hidden_dim: int = DEFAULT_HIDDEN_DIM,
               embed_dim: int = DEFAULT_EMBED_DIM, label_space: str = "gloss",
               label_smoothing: float = DEFAULT_LABEL_SMOOTHING,
               regr_coef: float = REGRESSION_WEIGHT) -> "Model":
        rng = derive_rng(seed, "model-init")
        params = {
            "enc.W1": rng.normal(0.0, 1.0 / np.sqrt(feature_dim),
                                 (hidden_dim, feature_dim)),
            "enc.b1": np.zeros(hidden_dim),
            "enc.W2": rng.normal(0.0, 1.0 / np.sqrt(hidden_dim),
                                 (embed_dim, hidden_dim)),
            "enc.b2": np.zeros(embed_dim),
            "regr.W": rng.normal(0.0, 1.0 / np.sqrt(embed_dim), (2, embed_dim)),
            "regr.b": np.zeros(2),
        }
        model = cls(feature_dim=feature_dim, hidden_dim=hidden_dim,
                    embed_dim=embed_dim, classes={}, params=params,
                    label_space=label_space, label_smoothing=label_smoothing,
                    regr_coef=regr_coef)
        for lang in sorted(classes):
            model.add_head(lang, classes[lang], seed=seed)
        return model

    def add_head(self, language: str, class_labels, seed: int = 0) -> None:
        if language in self.classes:
            raise EngineError(f"head for {language!r} already exists")
        rng = derive_rng(seed, "head-init", language)
        self.classes[language] = list(class_labels)
        n = len(self.classes[language])
        self.params[f"head.{language}.W"] = rng.normal(
            0.0, 1.0 / np.sqrt(self.embed_dim), (n, self.embed_dim))
        self.params[f"head.{language}.b"] = np.zeros(n)

    def copy(self) -> "Model":
        return Model(
            feature_dim=self.feature_dim, hidden_dim=self.hidden_dim,
            embed_dim=self.embed_dim, classes={k: list(v) for k, v in self.classes.items()},
            params={k: v.copy() for k, v in self.params.items()},
            label_space=self.label_space, encoder_trainable=self.encoder_trainable,
            label_smoothing=self.label_smoothing, regr_coef=self.regr_coef,
            regr_languages=self.regr_languages)

    def encoder_keys(self) -> list[str]:
        return [k for k in self.params if k.startswith("enc.")]

    # -- forward pieces ------------------------------------------------------

    def encode(self, features: np.ndarray) -> np.ndarray:
        """features (n, steps, d) -> embeddings (n, embed_dim)."""
        pooled = features.mean(axis=1)
        hidden = np.tanh(pooled @ self.params["enc.W1"].T + self.params["enc.b1"])
        return hidden @ self.params["enc.W2"].T + self.params["enc.b2"]

    def head_logits(self, language: str, embeddings: np.ndarray) -> np.ndarray:
        if language not in self.classes:
            raise EngineError(f"no classification head for language {language!r}")
        return embeddings @ self.params[f"head.{language}.W"].T \
            + self.params[f"head.{language}.b"]

    def predict(self, language: str, features: np.ndarray) -> np.ndarray:
        """Argmax class indices for a stack of feature sequences."""
        logits = self.head_logits(language, self.encode(features))
        return np.argmax(logits, axis=1)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def smooth_targets(targets: np.ndarray, epsilon: float) -> np.ndarray:
    n_classes = targets.shape[1]
    return (1.0 - epsilon) * targets + epsilon / n_classes


def squash(x: np.ndarray) -> np.ndarray:
    """y = 2*sigmoid(x) - 1 == tanh(x/2): odd, monotone, range (-1, 1)."""
    return np.tanh(x / 2.0)


def compute_loss(model: Model, batch: MixedBatch) -> LossReport:
    report, _ = _forward(model, batch)
    return report


def _forward(model: Model, batch: MixedBatch):
    """Run the full objective; returns (LossReport, cache for backward)."""
    subs = gate_split(batch, known_languages=set(model.classes))
    weights = language_weights(batch)
    n_total = len(batch)

    features = np.stack([item.features for item in batch.items])
    boundaries = np.stack([item.boundary for item in batch.items])
    pooled = features.mean(axis=1)
    pre_hidden = pooled @ model.params["enc.W1"].T + model.params["enc.b1"]
    hidden = np.tanh(pre_hidden)
    embed = hidden @ model.params["enc.W2"].T + model.params["enc.b2"]

    # positions of each language's items in the stacked batch
    positions = {lang: np.array([i for i, item in enumerate(batch.items)
                                 if item.language == lang])
                 for lang in subs}

    cls_by_language: dict[str, float] = {}
    head_cache: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for lang, items in subs.items():
        idx = positions[lang]
        logits = model.head_logits(lang, embed[idx])
        logp = _log_softmax(logits)
        targets = np.stack([item.target for item in items])
        smoothed = smooth_targets(targets, model.label_smoothing)
        cls_by_language[lang] = float(-(smoothed * logp).sum(axis=1).mean())
        head_cache[lang] = (logp, smoothed)

    regr_mask = np.ones(n_total, dtype=bool)
    if model.regr_languages is not None:
        regr_mask = np.array([item.language in model.regr_languages
                              for item in batch.items])
    raw = embed @ model.params["regr.W"].T + model.params["regr.b"]
    mapped = squash(raw)
    if regr_mask.any():
        regr = float(((mapped[regr_mask] - boundaries[regr_mask]) ** 2).mean())
    else:
        regr = 0.0

    total = sum(weights[lang] * cls_by_language[lang] for lang in cls_by_language)
    total += model.regr_coef * regr
    if not np.isfinite(total):
        raise EngineError(
            f"non-finite loss: cls={cls_by_language} regr={regr}")
    report = LossReport(cls_by_language=cls_by_language, weights=weights,
                        regr=regr, total=float(total))
    cache = dict(pooled=pooled, hidden=hidden, embed=embed, positions=positions,
                 head_cache=head_cache, raw=raw, mapped=mapped,
                 boundaries=boundaries, regr_mask=regr_mask, weights=weights,
                 n_total=n_total)
    return report, cache


def loss_and_grads(model: Model, batch: MixedBatch
                   ) -> tuple[LossReport, dict[str, np.ndarray]]:
    """Total loss plus analytic gradients for every parameter."""
    report, cache = _forward(model, batch)
    grads = {key: np.zeros_like(value) for key, value in model.params.items()}
    embed = cache["embed"]
    d_embed = np.zeros_like(embed)

    for lang, (logp, smoothed) in cache["head_cache"].items():
        idx = cache["positions"][lang]
        m = len(idx)
        w = cache["weights"][lang]
        probs = np.exp(logp)
        d_logits = (probs - smoothed) * (w / m)
        grads[f"head.{lang}.W"] += d_logits.T @ embed[idx]
        grads[f"head.{lang}.b"] += d_logits.sum(axis=0)
        d_embed[idx] += d_logits @ model.params[f"head.{lang}.W"]

    mask = cache["regr_mask"]
    if mask.any():
        mapped = cache["mapped"]
        diff = np.where(mask[:, None], mapped - cache["boundaries"], 0.0)
        n_terms = int(mask.sum()) * mapped.shape[1]
        d_mapped = model.regr_coef * 2.0 * diff / n_terms
        d_raw = d_mapped * (1.0 - mapped ** 2) / 2.0
        grads["regr.W"] += d_raw.T @ embed
        grads["regr.b"] += d_raw.sum(axis=0)
        d_embed += d_raw @ model.params["regr.W"]

    hidden = cache["hidden"]
    grads["enc.W2"] += d_embed.T @ hidden
    grads["enc.b2"] += d_embed.sum(axis=0)
    d_hidden = d_embed @ model.params["enc.W2"]
    d_pre = d_hidden * (1.0 - hidden ** 2)
    grads["enc.W1"] += d_pre.T @ cache["pooled"]
    grads["enc.b1"] += d_pre.sum(axis=0)
    return report, grads


def single_head_loss(model: Model, language: str, batch: MixedBatch) -> float:
    """Plain single-dataset pipeline: one head, no gate machinery. Used to
    check that co-training degenerates to it when one language is present."""
    features = np.stack([item.features for item in batch.items])
    targets = np.stack([item.target for item in batch.items])
    boundaries = np.stack([item.boundary for item in batch.items])
    embed = model.encode(features)
    logp = _log_softmax(model.head_logits(language, embed))
    smoothed = smooth_targets(targets, model.label_smoothing)
    cls = float(-(smoothed * logp).sum(axis=1).mean())
    mapped = squash(embed @ model.params["regr.W"].T + model.params["regr.b"])
    regr = float(((mapped - boundaries) ** 2).mean())
    return cls + model.regr_coef * regr


class AdamW:
    """Adam with decoupled weight decay; decay applies to weight matrices
    only (keys whose last segment starts with 'W'), never to biases."""

    def __init__(self, weight_decay: float = 0.05, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr: float, skip: frozenset[str] = frozenset()) -> None:
        self.step_count += 1
        bias1 = 1.0 - self.beta1 ** self.step_count
        bias2 = 1.0 - self.beta2 ** self.step_count
        for key, grad in grads.items():
            if key in skip:
                continue
            if key not in self.m:
                self.m[key] = np.zeros_like(grad)
                self.v[key] = np.zeros_like(grad)
            self.m[key] = self.beta1 * self.m[key] + (1.0 - self.beta1) * grad
            self.v[key] = self.beta2 * self.v[key] + (1.0 - self.beta2) * grad ** 2
            update = (self.m[key] / bias1) / (np.sqrt(self.v[key] / bias2) + self.eps)
            if self.weight_decay and key.rsplit(".", 1)[-1].startswith("W"):
                update = update + self.weight_decay * params[key]
            params[key] -= lr * update


# -- checkpoints --------------------------------------------------------------

def config_hash(meta: dict) -> str:
    return hashlib.sha256(
        json.dumps(meta, sort_keys=True).encode()).hexdigest()[:16]


def save_checkpoint(model: Model, path, extra: dict | None = None) -> str:
    """Self-describing checkpoint: named tensors plus a JSON meta record
    carrying dims, vocabularies, and a config hash. Returns the hash."""
    meta = {
        "feature_dim": model.feature_dim,
        "hidden_dim": model.hidden_dim,
        "embed_dim": model.embed_dim,
        "classes": model.classes,
        "label_space": model.label_space,
        "label_smoothing": model.label_smoothing,
        "regr_coef": model.regr_coef,
        "extra": extra or {},
    }
    digest = config_hash(meta)
    meta["config_hash"] = digest
    arrays = {f"param:{k}": v for k, v in model.params.items()}
    arrays["meta"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    np.savez(path, **arrays)
    return digest


def load_checkpoint(path) -> Model:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"].tobytes()).decode())
        params = {key[len("param:"):]: data[key].copy()
                  for key in data.files if key.startswith("param:")}
    return Model(
        feature_dim=meta["feature_dim"], hidden_dim=meta["hidden_dim"],
        embed_dim=meta["embed_dim"], classes=meta["classes"], params=params,
        label_space=meta["label_space"],
        label_smoothing=meta["label_smoothing"], regr_coef=meta["regr_coef"])
