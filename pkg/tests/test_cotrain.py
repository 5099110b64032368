import numpy as np
import pytest

from signkit.cotrain import (TrainConfig, _epoch_order, class_vocab, evaluate,
                             train)
from signkit.clips import AugmentConfig
from signkit.nn import EngineError, Model
from signkit.schedule import TrainPlan, baseline_plan
from signkit.splitting import SplitConfig, optimize_split
from signkit.synth import SyntheticSpec, gen_synthetic


@pytest.fixture(scope="module")
def universe():
    spec = SyntheticSpec(n_languages=2, classes_per_language=4,
                         samples_per_class=8, signers=4, feature_dim=8, seed=3)
    manifests, store = gen_synthetic(spec)
    split = {}
    for lang, m in manifests.items():
        _, split[lang] = optimize_split(m, SplitConfig(p=0.25, seed=1))
    return split, store


def small_plan(manifests, batch_size=8, epochs=6) -> TrainPlan:
    total = sum(len(m.samples_by_subset("train")) for m in manifests.values())
    spe = max(1, -(-total // batch_size))
    return baseline_plan(spe, epochs)


def test_zero_step_plan_returns_initialization(universe):
    manifests, store = universe
    plan = TrainPlan(lr_init=8e-6, lr_peak=4.8e-3, lr_final=8e-5,
                     steps_per_epoch=1, warmup_end_step=0, cosine_start_step=0,
                     cosine_end_step=0, total_steps=0)
    cfg = TrainConfig(seed=5)
    result = train(plan, manifests, store, cfg)
    fresh = Model.create(
        feature_dim=store.dim,
        classes={lang: class_vocab(m, "gloss") for lang, m in manifests.items()},
        seed=5)
    for key in fresh.params:
        assert np.array_equal(result.model.params[key], fresh.params[key])


def test_training_reduces_loss_and_runs_deterministically(universe):
    manifests, store = universe
    plan = small_plan(manifests)
    cfg = TrainConfig(batch_size=8, seed=11)
    r1 = train(plan, manifests, store, cfg)
    r2 = train(plan, manifests, store, cfg)
    assert [m.total for m in r1.metrics] == [m.total for m in r2.metrics]
    assert r1.final_accuracy == r2.final_accuracy
    assert r1.metrics[-1].total < r1.metrics[0].total


def test_different_seed_changes_trajectory(universe):
    manifests, store = universe
    plan = small_plan(manifests)
    r1 = train(plan, manifests, store, TrainConfig(batch_size=8, seed=1))
    r2 = train(plan, manifests, store, TrainConfig(batch_size=8, seed=2))
    assert [m.total for m in r1.metrics] != [m.total for m in r2.metrics]


def test_frozen_encoder_bit_identical(universe):
    manifests, store = universe
    plan = small_plan(manifests, epochs=3)
    pre = train(plan, manifests, store, TrainConfig(batch_size=8, seed=4))
    frozen_cfg = TrainConfig(batch_size=8, seed=6, encoder_mode="frozen")
    result = train(plan, manifests, store, frozen_cfg, init_model=pre.model)
    for key in result.model.encoder_keys():
        assert np.array_equal(result.model.params[key], pre.model.params[key])
    for lang in manifests:
        assert not np.array_equal(result.model.params[f"head.{lang}.W"],
                                  pre.model.params[f"head.{lang}.W"])


def test_frozen_mode_requires_init():
    with pytest.raises(EngineError, match="requires an initial model"):
        train(baseline_plan(1, 1), {}, None, TrainConfig(encoder_mode="frozen"))


def test_metrics_carry_schedule_lr(universe):
    manifests, store = universe
    plan = small_plan(manifests, epochs=6)
    result = train(plan, manifests, store, TrainConfig(batch_size=8, seed=0))
    # rows record the lr at each epoch end: past warmup they never increase,
    # and the tail sits on the constant floor
    lrs = [m.lr for m in result.metrics]
    assert all(b <= a + 1e-15 for a, b in zip(lrs, lrs[1:]))
    assert result.metrics[-1].lr == pytest.approx(plan.lr_final, abs=1e-12)


def test_epoch_order_proportional_and_complete(universe):
    manifests, store = universe
    pools = {lang: m.samples_by_subset("train") for lang, m in manifests.items()}
    rng = np.random.default_rng(0)
    order = _epoch_order(pools, rng)
    assert len(order) == sum(len(p) for p in pools.values())
    ids = [rec.sample_id for _, rec in order]
    assert len(set(ids)) == len(ids)
    langs = [lang for lang, _ in order]
    # both languages appear early on when pools are comparable in size
    assert len(set(langs[:10])) == 2


def test_single_pool_order_consumes_no_choice_draws(universe):
    manifests, store = universe
    lang = "L0"
    pools = {lang: manifests[lang].samples_by_subset("train")}
    r1 = np.random.default_rng(1)
    order = _epoch_order(pools, r1)
    r2 = np.random.default_rng(1)
    expected = list(pools[lang])
    r2.shuffle(expected)
    assert [rec.sample_id for _, rec in order] == \
        [rec.sample_id for rec in expected]


def test_evaluate_on_train_subset(universe):
    manifests, store = universe
    plan = small_plan(manifests, epochs=8)
    result = train(plan, manifests, store, TrainConfig(batch_size=8, seed=9))
    train_acc = evaluate(result.model, manifests, store, "gloss", subset="train")
    for lang in manifests:
        assert train_acc[lang] > 0.5  # memorizes most of the small train set


def test_group_label_space_trains(universe):
    manifests, store = universe
    plan = small_plan(manifests, epochs=2)
    cfg = TrainConfig(batch_size=8, seed=2, label_space="group")
    result = train(plan, manifests, store, cfg)
    for lang, m in manifests.items():
        assert result.model.classes[lang] == m.group_ids()


def test_mismatched_head_vocabulary_rejected():
    # non-singleton groups make the group vocabulary differ from the gloss one
    spec = SyntheticSpec(n_languages=1, classes_per_language=4,
                         confusable_pairs=1, samples_per_class=6, signers=3,
                         feature_dim=6, seed=2)
    manifests, store = gen_synthetic(spec)
    split = {}
    for lang, m in manifests.items():
        _, split[lang] = optimize_split(m, SplitConfig(p=0.34, seed=0))
    plan = small_plan(split, epochs=1)
    pre = train(plan, split, store, TrainConfig(batch_size=8, seed=4,
                                                label_space="group"))
    with pytest.raises(EngineError, match="vocabulary"):
        train(plan, split, store,
              TrainConfig(batch_size=8, seed=4, label_space="gloss",
                          encoder_mode="pretrained"), init_model=pre.model)


def test_single_language_stream_equals_plain_trainer(universe):
    # a co-training run whose other language contributes no samples consumes
    # the rng identically to the plain single-dataset run, so the metric
    # trajectory and accuracies coincide exactly
    manifests, store = universe
    solo = {"L0": manifests["L0"]}
    from signkit.manifest import DatasetManifest
    empty = DatasetManifest(language="L9")
    mixed = {"L0": manifests["L0"], "L9": empty}
    plan = small_plan(solo, epochs=4)
    cfg = TrainConfig(batch_size=8, seed=21)
    plain = train(plan, solo, store, cfg)
    cotrained = train(plan, mixed, store, cfg)
    assert [m.total for m in plain.metrics] == \
        [m.total for m in cotrained.metrics]
    assert plain.final_accuracy["L0"] == cotrained.final_accuracy["L0"]


def test_non_finite_loss_aborts_with_diagnostic(universe):
    manifests, store = universe
    plan = small_plan(manifests, epochs=1)
    pre = train(plan, manifests, store, TrainConfig(batch_size=8, seed=4))
    pre.model.params["enc.W1"][:] = np.nan
    from signkit.nn import compute_loss
    from signkit.batching import BatchItem, MixedBatch
    item = BatchItem.from_class_index(
        features=np.ones((32, store.dim)), class_index=0,
        n_classes=len(pre.model.classes["L0"]), language="L0",
        boundary=np.zeros(2))
    with pytest.raises(EngineError, match="non-finite"):
        compute_loss(pre.model, MixedBatch(items=[item]))


def test_temporal_augment_can_be_disabled(universe):
    manifests, store = universe
    plan = small_plan(manifests, epochs=2)
    cfg = TrainConfig(batch_size=8, seed=3, temporal=AugmentConfig.disabled(),
                      mix_prob=0.0)
    result = train(plan, manifests, store, cfg)
    assert np.isfinite(result.metrics[-1].total)
