import json

import pytest

from signkit.cli import main
from signkit.grouping import VoteRecord, save_votes_file
from signkit.manifest import load_manifest
from signkit.records import iter_records

from conftest import random_manifest
from signkit.manifest import save_manifest


def run_cli(*argv) -> int:
    return main(list(argv))


@pytest.fixture
def synth_dir(tmp_path):
    out = tmp_path / "data"
    assert run_cli("synth", "--languages", "2", "--classes", "4", "--samples",
                   "6", "--signers", "3", "--dim", "8", "--seed", "5",
                   "--out", str(out)) == 0
    return out


def test_synth_writes_manifests_and_features(synth_dir):
    assert (synth_dir / "L0.manifest").exists()
    assert (synth_dir / "L1.manifest").exists()
    assert (synth_dir / "features.bin").exists()
    assert (synth_dir / "features.idx").exists()
    m = load_manifest(synth_dir / "L0.manifest")
    assert len(m.samples) == 24


def test_split_cli_round_trip(tmp_path, rng, capsys):
    m = random_manifest(rng, n_signers=6, n_glosses=4)
    src = tmp_path / "in.manifest"
    out = tmp_path / "out.manifest"
    report = tmp_path / "report.rec"
    save_manifest(m, src)
    assert run_cli("split", "--manifest", str(src), "--p", "0.2", "--seed",
                   "3", "--out", str(out), "--report", str(report)) == 0
    stdout = capsys.readouterr().out
    assert stdout.startswith("split d_wst=")
    assigned = load_manifest(out)
    assert all(s.subset in ("train", "test") for s in assigned.samples)
    kinds = [kind for _, kind, _ in iter_records(report.read_text())]
    assert kinds[0] == "split-report"
    assert "bin" in kinds


def test_split_cli_json_mode(tmp_path, rng, capsys):
    m = random_manifest(rng, n_signers=5, n_glosses=3)
    src = tmp_path / "in.manifest"
    save_manifest(m, src)
    assert run_cli("--json", "split", "--manifest", str(src), "--out",
                   str(tmp_path / "out.manifest")) == 0
    payload = json.loads(capsys.readouterr().out.strip())
    assert payload["kind"] == "split"
    assert "d_wst" in payload


def test_group_workflow_cli(tmp_path, capsys):
    scores = tmp_path / "scores.rec"
    scores.write_text(
        "score-table labels=a,b,c\n"
        "scorerow label=a values=0.50,0.45,0.05\n"
        "scorerow label=b values=0.40,0.55,0.05\n"
        "scorerow label=c values=0.10,0.10,0.80\n", encoding="utf-8")
    candidates = tmp_path / "candidates.rec"
    assert run_cli("group", "candidates", "--scores", str(scores), "--k", "1",
                   "--out", str(candidates)) == 0
    text = candidates.read_text()
    assert "candidate a=a b=b rank=1" in text

    votes = tmp_path / "votes.rec"
    records = [VoteRecord(pair=("a", "b"), expert=f"e{i}", verdict=i < 3,
                          timestamp=str(i)) for i in range(5)]
    save_votes_file(records, votes)
    decisions = tmp_path / "decisions.rec"
    assert run_cli("group", "aggregate", "--votes", str(votes), "--out",
                   str(decisions)) == 0
    assert "decision a=a b=b matched=true" in decisions.read_text()

    manifest_path = tmp_path / "m.manifest"
    manifest_path.write_text(
        "manifest language=rsl\n"
        "gloss id=a language=rsl\ngloss id=b language=rsl\n"
        "gloss id=c language=rsl\nsigner id=s1\n", encoding="utf-8")
    merged_path = tmp_path / "merged.manifest"
    assert run_cli("group", "merge", "--manifest", str(manifest_path),
                   "--votes", str(votes), "--out", str(merged_path)) == 0
    merged = load_manifest(merged_path)
    groups = {g.id: g.members for g in merged.groups}
    assert groups["a"] == ("a", "b")
    assert groups["c"] == ("c",)

    refine_scores = tmp_path / "confusion.rec"
    refine_scores.write_text(
        "score-table labels=a,c\n"
        "scorerow label=a values=0.7,0.3\n"
        "scorerow label=c values=0.25,0.75\n", encoding="utf-8")
    refined = tmp_path / "refined.rec"
    assert run_cli("group", "refine", "--scores", str(refine_scores),
                   "--manifest", str(merged_path), "--top", "1",
                   "--out", str(refined)) == 0
    assert "candidate a=a b=c rank=1 source=confusion_refinement" \
        in refined.read_text()


def test_sample_cli(synth_dir, capsys):
    m = load_manifest(synth_dir / "L0.manifest")
    sample_id = m.samples[0].sample_id
    assert run_cli("sample", "--manifest", str(synth_dir / "L0.manifest"),
                   "--sample-id", sample_id, "--seed", "2") == 0
    out = capsys.readouterr().out
    assert out.startswith("clip sample=")
    fields = dict(tok.split("=", 1) for tok in out.split()[1:])
    assert len(fields["indices"].split(",")) == 32


def test_train_and_eval_cli(synth_dir, tmp_path, capsys):
    split0 = tmp_path / "L0split.manifest"
    split1 = tmp_path / "L1split.manifest"
    for lang, dst in (("L0", split0), ("L1", split1)):
        assert run_cli("split", "--manifest", str(synth_dir / f"{lang}.manifest"),
                       "--p", "0.34", "--seed", "1", "--out", str(dst)) == 0
    capsys.readouterr()
    ckpt = tmp_path / "model.npz"
    metrics = tmp_path / "metrics.rec"
    assert run_cli("train", "--manifest", f"L0={split0}",
                   "--manifest", f"L1={split1}",
                   "--features", str(synth_dir / "features"),
                   "--epochs", "4", "--batch-size", "8", "--seed", "2",
                   "--out", str(ckpt), "--metrics", str(metrics)) == 0
    out = capsys.readouterr().out
    assert "checkpoint path=" in out and "final language=L0" in out
    assert ckpt.exists()
    kinds = {kind for _, kind, _ in iter_records(metrics.read_text())}
    assert kinds == {"metric"}

    emb = tmp_path / "emb.rec"
    assert run_cli("export-embeddings", "--manifest", f"L0={split0}",
                   "--features", str(synth_dir / "features"),
                   "--checkpoint", str(ckpt), "--out", str(emb)) == 0
    first = next(iter_records(emb.read_text()))
    assert first[1] == "embedding"
    assert len(first[2]["values"].split(",")) == 64


def test_eval_cli_top1(tmp_path, capsys):
    preds = tmp_path / "preds.rec"
    preds.write_text("pred sample=a pred=1 gt=1 language=L0\n"
                     "pred sample=b pred=0 gt=1 language=L0\n", encoding="utf-8")
    assert run_cli("eval", "top1", "--predictions", str(preds)) == 0
    assert "accuracy=0.500000" in capsys.readouterr().out


def test_eval_cli_empty_predictions_nonzero_exit(tmp_path):
    preds = tmp_path / "empty.rec"
    preds.write_text("", encoding="utf-8")
    assert run_cli("eval", "top1", "--predictions", str(preds)) == 1


def test_eval_cli_breakdown_and_label_map(tmp_path, capsys):
    manifest_path = tmp_path / "m.manifest"
    manifest_path.write_text(
        "manifest language=L1\n"
        "gloss id=a language=L1\ngloss id=b language=L1\n"
        "gloss id=c language=L1\n"
        "group id=a members=a,b\ngroup id=c members=c\n"
        "signer id=s1\n", encoding="utf-8")
    preds = tmp_path / "preds.rec"
    # vocab sorted: a=0, b=1, c=2; predicting b for true a hits after grouping
    preds.write_text("pred sample=v1 pred=1 gt=0 language=L1\n"
                     "pred sample=v2 pred=2 gt=2 language=L1\n"
                     "pred sample=v3 pred=0 gt=2 language=L1\n",
                     encoding="utf-8")
    assert run_cli("eval", "breakdown", "--predictions", str(preds),
                   "--manifest", str(manifest_path)) == 0
    out = capsys.readouterr().out
    assert "whole=0.666667" in out and "vssign=1.000000" in out

    # build a source->target map from predictions, then apply it
    map_path = tmp_path / "map.rec"
    assert run_cli("eval", "map-build", "--predictions", str(preds),
                   "--manifest", str(manifest_path),
                   "--out", str(map_path)) == 0
    text = map_path.read_text()
    assert "map source=1 target=a" in text
    mapped_path = tmp_path / "mapped.rec"
    assert run_cli("eval", "map-apply", "--predictions", str(preds),
                   "--manifest", str(manifest_path), "--map", str(map_path),
                   "--out", str(mapped_path)) == 0
    assert "pred sample=v1 pred=0" in mapped_path.read_text()


def test_eval_cli_kshot(synth_dir, tmp_path, capsys):
    split0 = tmp_path / "L0split.manifest"
    assert run_cli("split", "--manifest", str(synth_dir / "L0.manifest"),
                   "--p", "0.34", "--seed", "1", "--out", str(split0)) == 0
    out_path = tmp_path / "kshot.manifest"
    assert run_cli("eval", "kshot", "--manifest", str(split0), "--k", "2",
                   "--seed", "0", "--out", str(out_path)) == 0
    truncated = load_manifest(out_path)
    from collections import Counter
    counts = Counter(s.gloss for s in truncated.samples_by_subset("train"))
    assert all(c <= 2 for c in counts.values())


def test_experiment_cli(synth_dir, tmp_path):
    split_paths = {}
    for lang in ("L0", "L1"):
        dst = tmp_path / f"{lang}.manifest"
        assert run_cli("split", "--manifest", str(synth_dir / f"{lang}.manifest"),
                       "--p", "0.34", "--seed", "1", "--out", str(dst)) == 0
        split_paths[lang] = dst
    config = tmp_path / "exp.config"
    config.write_text(
        "scenario=baseline\n"
        f"manifest.L0={split_paths['L0']}\n"
        f"manifest.L1={split_paths['L1']}\n"
        f"features={synth_dir / 'features'}\n"
        "target=L1\nseed=4\nepochs=4\nbatch_size=8\n", encoding="utf-8")
    report = tmp_path / "report.rec"
    assert run_cli("experiment", "--config", str(config), "--out",
                   str(report)) == 0
    lines = report.read_text().splitlines()
    assert lines[0].startswith("report scenario=baseline")
    assert any(line.startswith("row scenario=baseline language=L1")
               for line in lines)


def test_schedule_dump_cli(tmp_path):
    out = tmp_path / "sched.csv"
    assert run_cli("schedule", "dump", "--steps-per-epoch", "10", "--epochs",
                   "50", "--out", str(out)) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "step,lr"
    assert lines[1] == "0,8e-06"
    assert len(lines) == 1 + 500


def test_schedule_dump_from_plan_file(tmp_path):
    plan_file = tmp_path / "plan.config"
    plan_file.write_text(
        "steps_per_epoch=10\ntotal_epochs=50\nwarmup_end_epoch=5\n"
        "cosine_start_epoch=5\ncosine_end_epoch=40\n"
        "lr_init=8e-6\nlr_peak=4.8e-3\nlr_final=8e-5\n", encoding="utf-8")
    out = tmp_path / "sched.csv"
    assert run_cli("schedule", "dump", "--plan", str(plan_file), "--out",
                   str(out)) == 0
    lines = out.read_text().splitlines()
    assert lines[1] == "0,8e-06"
    assert lines[1 + 50] == "50,0.0048"  # warmup end at epoch 5
    assert len(lines) == 1 + 500


def test_evaluate_cli(synth_dir, tmp_path, capsys):
    split0 = tmp_path / "L0split.manifest"
    assert run_cli("split", "--manifest", str(synth_dir / "L0.manifest"),
                   "--p", "0.34", "--seed", "1", "--out", str(split0)) == 0
    ckpt = tmp_path / "model.npz"
    assert run_cli("train", "--manifest", f"L0={split0}",
                   "--features", str(synth_dir / "features"),
                   "--epochs", "6", "--batch-size", "8", "--seed", "2",
                   "--out", str(ckpt)) == 0
    capsys.readouterr()
    preds_path = tmp_path / "preds.rec"
    assert run_cli("evaluate", "--manifest", f"L0={split0}",
                   "--features", str(synth_dir / "features"),
                   "--checkpoint", str(ckpt),
                   "--predictions", str(preds_path)) == 0
    out = capsys.readouterr().out
    assert out.startswith("top1 language=L0 accuracy=")
    assert run_cli("eval", "top1", "--predictions", str(preds_path)) == 0
