"""Command-line entry point wiring the toolkit's workflows together.

Subcommands: split, group (candidates|aggregate|merge|refine), review-serve,
sample, train, eval (top1|breakdown|map-build|map-apply|kshot), synth,
experiment, schedule. All outputs are line-delimited records; --json turns
every record into a JSON object per line.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path


from . import clips, evaluation, grouping, review, schedule
from .cotrain import TrainConfig, class_vocab, train
from .experiments import (parse_experiment_config, run_experiment,
                          steps_per_epoch)
from .manifest import GroupLabel, load_manifest, save_manifest
from .nn import save_checkpoint
from .records import emit
from .schedule import baseline_plan, frozen_plan, rescale_plan
from .seeding import derive_rng
from .splitting import SplitConfig, optimize_split, verify_split
from .synth import FeatureStore, SyntheticSpec, gen_synthetic


def _write_lines(lines: list[str], out: str | None) -> None:
    text = "\n".join(lines) + "\n" if lines else ""
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _record_lines(records: list[tuple[str, list[tuple[str, str]]]],
                  as_json: bool) -> list[str]:
    return [emit(kind, fields, as_json) for kind, fields in records]


# -- split ---------------------------------------------------------------------

def cmd_split(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = SplitConfig(p=args.p, seed=args.seed, restarts=args.restarts,
                      max_rounds=args.max_rounds,
                      best_improvement=args.best_improvement)
    state, assigned = optimize_split(manifest, cfg)
    save_manifest(assigned, args.out)
    records = [("split", [
        ("d_wst", f"{state.d_wst:.6f}"), ("g_wst", state.g_wst),
        ("test_signers", ",".join(sorted(state.test_signers))),
        ("rounds", str(state.rounds)),
        ("converged", "true" if state.converged else "false"),
        ("restart", str(state.restart_index))])]
    lines = _record_lines(records, args.json)
    if args.report:
        report = verify_split(assigned, p=args.p, threshold=args.threshold)
        _write_lines(report.lines(), args.report)
    _write_lines(lines, None)
    return 0


# -- grouping -------------------------------------------------------------------

def cmd_group_candidates(args) -> int:
    table = grouping.load_score_table(args.scores)
    pairs = grouping.candidate_pairs_from_templates(table, k=args.k)
    lines = [emit("candidate", [("a", p.a), ("b", p.b), ("rank", str(p.rank)),
                                ("source", p.source)], args.json)
             for p in pairs]
    _write_lines(lines, args.out)
    return 0


def cmd_group_aggregate(args) -> int:
    votes = grouping.load_votes_file(args.votes)
    summary = grouping.aggregate_votes(votes, quorum=args.quorum,
                                       majority=args.majority)
    lines = []
    for pair, matched in summary.decided:
        lines.append(emit("decision", [
            ("a", pair[0]), ("b", pair[1]),
            ("matched", "true" if matched else "false")], args.json))
    for pair in summary.pending:
        lines.append(emit("pending", [("a", pair[0]), ("b", pair[1])], args.json))
    _write_lines(lines, args.out)
    return 0


def cmd_group_merge(args) -> int:
    manifest = load_manifest(args.manifest)
    votes = grouping.load_votes_file(args.votes)
    summary = grouping.aggregate_votes(votes, quorum=args.quorum,
                                       majority=args.majority)
    gs = grouping.GroupingState.over(g.id for g in manifest.glosses)
    gs = grouping.merge_matched(gs, summary.matched_pairs())
    groups = tuple(GroupLabel(id=gid, members=members)
                   for gid, members in grouping.groups_to_labels(gs))
    merged = replace(manifest, groups=groups).validate()
    save_manifest(merged, args.out)
    _write_lines(_record_lines([("merged", [
        ("groups", str(len(groups))),
        ("glosses", str(len(manifest.glosses)))])], args.json), None)
    return 0


def cmd_group_refine(args) -> int:
    table = grouping.load_score_table(args.scores)
    manifest = load_manifest(args.manifest)
    gs = grouping.GroupingState.over(g.id for g in manifest.groups)
    pairs = grouping.refinement_candidates(table, gs, top_m=args.top)
    lines = [emit("candidate", [("a", p.a), ("b", p.b), ("rank", str(p.rank)),
                                ("source", p.source)], args.json)
             for p in pairs]
    _write_lines(lines, args.out)
    return 0


# -- review service --------------------------------------------------------------

def cmd_review_serve(args) -> int:
    tasks = review.load_tasks_file(args.tasks)
    store = review.ReviewStore(tasks=tasks, experts=args.experts.split(","),
                               log_path=args.votes_log, quorum=args.quorum)
    server = review.make_server(store, host=args.host, port=args.port)
    host, port = server.server_address[:2]
    sys.stdout.write(emit("listening", [("host", str(host)),
                                        ("port", str(port))], args.json) + "\n")
    sys.stdout.flush()
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


# -- clip sampling ----------------------------------------------------------------

def cmd_sample(args) -> int:
    manifest = load_manifest(args.manifest)
    by_id = {s.sample_id: s for s in manifest.samples}
    if args.sample_id not in by_id:
        raise SystemExit(f"unknown sample id {args.sample_id!r}")
    rec = by_id[args.sample_id]
    rng = derive_rng(args.seed, "cli-sample", args.sample_id)
    clip = clips.sample_clip(rec, rng=rng)
    indices = clip.frame_indices
    if args.augment:
        indices = clips.apply_temporal_augment(indices, clips.AugmentConfig(), rng)
    lines = _record_lines([("clip", [
        ("sample", rec.sample_id),
        ("clip_start", str(clip.clip_start)), ("clip_end", str(clip.clip_end)),
        ("t_start", f"{clip.boundary_targets[0]:.6f}"),
        ("t_end", f"{clip.boundary_targets[1]:.6f}"),
        ("indices", ",".join(str(i) for i in indices))])], args.json)
    _write_lines(lines, args.out)
    return 0


# -- training ----------------------------------------------------------------------

def _load_universe(manifest_specs: list[str], features: str):
    manifests = {}
    for spec_item in manifest_specs:
        if "=" not in spec_item:
            raise SystemExit(f"--manifest expects LANG=PATH, got {spec_item!r}")
        lang, path = spec_item.split("=", 1)
        manifests[lang] = load_manifest(path)
    store = FeatureStore.load(features)
    return manifests, store


def cmd_train(args) -> int:
    manifests, store = _load_universe(args.manifest, args.features)
    spe = steps_per_epoch(manifests, args.batch_size)
    plan = baseline_plan(spe, args.epochs)
    cfg = TrainConfig(batch_size=args.batch_size, seed=args.seed,
                      label_space=args.label_space,
                      encoder_mode=args.encoder_mode)
    result = train(plan, manifests, store, cfg)
    digest = save_checkpoint(result.model, args.out)
    lines = [emit("metric", row.fields(), args.json) for row in result.metrics]
    if args.metrics:
        _write_lines(lines, args.metrics)
    summary = [("checkpoint", [("path", args.out), ("config_hash", digest)])]
    for lang, acc in sorted(result.final_accuracy.items()):
        summary.append(("final", [("language", lang), ("top1", f"{acc:.4f}")]))
    _write_lines(_record_lines(summary, args.json), None)
    return 0


def cmd_export_embeddings(args) -> int:
    from .nn import load_checkpoint

    manifests, store = _load_universe(args.manifest, args.features)
    model = load_checkpoint(args.checkpoint)
    from .cotrain import _BatchFactory

    lines = []
    for lang, m in sorted(manifests.items()):
        factory = _BatchFactory({lang: m}, store, model.label_space)
        for rec in m.samples:
            item = factory.item(lang, rec, rng=None, temporal=None,
                                deterministic=True)
            embed = model.encode(item.features[None])[0]
            values = ",".join(f"{v:.6g}" for v in embed)
            lines.append(emit("embedding", [("sample", rec.sample_id),
                                            ("language", lang),
                                            ("values", values)], args.json))
    _write_lines(lines, args.out)
    return 0


# -- evaluation ----------------------------------------------------------------------

def cmd_eval_top1(args) -> int:
    preds = evaluation.PredictionSet.load(args.predictions)
    if not preds.rows:
        sys.stderr.write("empty prediction set\n")
        return 1
    acc = evaluation.top1_accuracy(preds)
    _write_lines(_record_lines([("top1", [
        ("accuracy", f"{acc:.6f}"), ("n", str(len(preds)))])], args.json), args.out)
    return 0


def cmd_eval_breakdown(args) -> int:
    preds = evaluation.PredictionSet.load(args.predictions)
    if not preds.rows:
        sys.stderr.write("empty prediction set\n")
        return 1
    manifest = load_manifest(args.manifest)
    report = evaluation.grouped_accuracy_breakdown(preds, manifest,
                                                   label_space=args.label_space)
    _write_lines(report.lines(), args.out)
    return 0


def cmd_eval_map_build(args) -> int:
    preds = evaluation.PredictionSet.load(args.predictions)
    if not preds.rows:
        sys.stderr.write("empty prediction set\n")
        return 1
    manifest = load_manifest(args.manifest)
    label_map = evaluation.build_label_map(preds, class_vocab(manifest, "gloss"))
    _write_lines(label_map.lines(), args.out)
    return 0


def cmd_eval_map_apply(args) -> int:
    from .records import check_fields, read_records

    preds = evaluation.PredictionSet.load(args.predictions)
    manifest = load_manifest(args.manifest)
    entries: dict[int, str] = {}
    for line_no, kind, fields in read_records(args.map):
        if kind != "map":
            continue
        expected = ["source", "target"] + (["tie"] if "tie" in fields else [])
        check_fields("map", fields, expected, line_no)
        entries[int(fields["source"])] = fields["target"]
    label_map = evaluation.LabelMap(entries=entries, ties=[])
    mapped = evaluation.apply_label_map(label_map, preds,
                                        class_vocab(manifest, "gloss"))
    _write_lines(mapped.lines(), args.out)
    return 0


def cmd_eval_kshot(args) -> int:
    manifest = load_manifest(args.manifest)
    truncated = evaluation.kshot_truncate(manifest, args.k, seed=args.seed)
    save_manifest(truncated, args.out)
    _write_lines(_record_lines([("kshot", [
        ("k", str(args.k)),
        ("train_before", str(len(manifest.samples_by_subset("train")))),
        ("train_after", str(len(truncated.samples_by_subset("train"))))])],
        args.json), None)
    return 0


# -- synthetic data ---------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        n_languages=args.languages, classes_per_language=args.classes,
        source_classes=args.source_classes,
        shared_prototype_fraction=args.shared,
        samples_per_class=args.samples,
        source_samples_per_class=args.source_samples,
        signers=args.signers, source_signers=args.source_signers,
        feature_dim=args.dim, noise_scale=args.noise,
        confusable_pairs=args.confusable_pairs, seed=args.seed)
    manifests, store = gen_synthetic(spec)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for lang, m in sorted(manifests.items()):
        path = out_dir / f"{lang}.manifest"
        save_manifest(m, path)
        records.append(("manifest", [("language", lang), ("path", str(path)),
                                     ("samples", str(len(m.samples)))]))
    bin_path, idx_path = store.save(out_dir / "features")
    records.append(("features", [("bin", str(bin_path)), ("idx", str(idx_path)),
                                 ("dim", str(store.dim)),
                                 ("count", str(len(store)))]))
    _write_lines(_record_lines(records, args.json), None)
    return 0


# -- experiments -------------------------------------------------------------------

def cmd_experiment(args) -> int:
    cfg = parse_experiment_config(Path(args.config).read_text(encoding="utf-8"))
    if args.seed is not None:
        cfg.seed = args.seed
    manifests = {lang: load_manifest(path)
                 for lang, path in cfg.manifests.items()}
    store = FeatureStore.load(cfg.features)
    lines = run_experiment(cfg, manifests, store)
    _write_lines(lines, args.out)
    return 0


# -- evaluate a checkpoint --------------------------------------------------------

def cmd_evaluate(args) -> int:
    from .cotrain import evaluate
    from .experiments import predict_dataset
    from .nn import load_checkpoint

    manifests, store = _load_universe(args.manifest, args.features)
    model = load_checkpoint(args.checkpoint)
    accs = evaluate(model, manifests, store, model.label_space,
                    subset=args.subset)
    records = [("top1", [("language", lang), ("accuracy", f"{acc:.4f}"),
                         ("subset", args.subset)])
               for lang, acc in sorted(accs.items())]
    _write_lines(_record_lines(records, args.json), args.out)
    if args.predictions:
        lines = []
        for lang, m in sorted(manifests.items()):
            preds = predict_dataset(model, lang, m, store, model.label_space,
                                    subset=args.subset)
            lines.extend(preds.lines())
        _write_lines(lines, args.predictions)
    return 0


# -- schedule ------------------------------------------------------------------------

_PLAN_KEYS = ("steps_per_epoch", "total_epochs", "warmup_end_epoch",
              "cosine_start_epoch", "cosine_end_epoch", "lr_init", "lr_peak",
              "lr_final")


def load_plan_file(path):
    """key=value plan file with the epoch-domain fields of a train plan."""
    from .schedule import TrainPlan

    values = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8")
                                   .splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise SystemExit(f"plan file line {line_no} is not key=value")
        key, value = stripped.split("=", 1)
        if key.strip() not in _PLAN_KEYS:
            raise SystemExit(f"unknown plan key {key.strip()!r}")
        values[key.strip()] = float(value)
    missing = [k for k in _PLAN_KEYS if k not in values]
    if missing:
        raise SystemExit(f"plan file missing keys: {missing}")
    return TrainPlan.from_epochs(
        steps_per_epoch=int(values["steps_per_epoch"]),
        total_epochs=values["total_epochs"],
        warmup_end_epoch=values["warmup_end_epoch"],
        cosine_start_epoch=values["cosine_start_epoch"],
        cosine_end_epoch=values["cosine_end_epoch"],
        lr_init=values["lr_init"], lr_peak=values["lr_peak"],
        lr_final=values["lr_final"])


def cmd_schedule_dump(args) -> int:
    if args.plan:
        plan = load_plan_file(args.plan)
    else:
        plan = baseline_plan(args.steps_per_epoch, args.epochs)
    if args.rescale is not None:
        plan = rescale_plan(plan, args.rescale)
    if args.frozen:
        plan = frozen_plan(plan)
    lines = ["step,lr"] + [f"{step},{lr:.10g}"
                           for step, lr in schedule.dump_schedule(plan)]
    _write_lines(lines, args.out)
    return 0


# -- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="signkit",
        description="Sign-language dataset curation and co-training toolkit")
    parser.add_argument("--json", action="store_true",
                        help="emit records as JSON lines")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="optimize the signer train/test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--p", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=8)
    p.add_argument("--max-rounds", type=int, default=None)
    p.add_argument("--best-improvement", action="store_true")
    p.add_argument("--threshold", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_split)

    group = sub.add_parser("group", help="VSSign grouping workflow")
    gsub = group.add_subparsers(dest="group_command", required=True)

    p = gsub.add_parser("candidates", help="candidate pairs from template scores")
    p.add_argument("--scores", required=True)
    p.add_argument("--k", type=int, default=grouping.DEFAULT_TOP_K)
    p.add_argument("--out")
    p.set_defaults(func=cmd_group_candidates)

    p = gsub.add_parser("aggregate", help="aggregate expert votes")
    p.add_argument("--votes", required=True)
    p.add_argument("--quorum", type=int, default=grouping.DEFAULT_QUORUM)
    p.add_argument("--majority", type=int, default=grouping.DEFAULT_MAJORITY)
    p.add_argument("--out")
    p.set_defaults(func=cmd_group_aggregate)

    p = gsub.add_parser("merge", help="apply matched pairs to a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--votes", required=True)
    p.add_argument("--quorum", type=int, default=grouping.DEFAULT_QUORUM)
    p.add_argument("--majority", type=int, default=grouping.DEFAULT_MAJORITY)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_group_merge)

    p = gsub.add_parser("refine", help="confusion-driven refinement candidates")
    p.add_argument("--scores", required=True,
                   help="confusion table over current group labels")
    p.add_argument("--manifest", required=True)
    p.add_argument("--top", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_group_refine)

    p = sub.add_parser("review-serve", help="run the adjudication HTTP service")
    p.add_argument("--tasks", required=True)
    p.add_argument("--votes-log", required=True)
    p.add_argument("--experts", required=True, help="comma-separated expert ids")
    p.add_argument("--quorum", type=int, default=grouping.DEFAULT_QUORUM)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8710)
    p.set_defaults(func=cmd_review_serve)

    p = sub.add_parser("sample", help="sample a clip from one record")
    p.add_argument("--manifest", required=True)
    p.add_argument("--sample-id", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--augment", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("train", help="train the co-training engine")
    p.add_argument("--manifest", action="append", required=True,
                   metavar="LANG=PATH")
    p.add_argument("--features", required=True)
    p.add_argument("--epochs", type=int, default=24)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--label-space", choices=("gloss", "group"), default="gloss")
    p.add_argument("--encoder-mode", choices=("scratch",), default="scratch")
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")
    p.add_argument("--metrics")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("export-embeddings", help="dump encoder embeddings")
    p.add_argument("--manifest", action="append", required=True,
                   metavar="LANG=PATH")
    p.add_argument("--features", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_embeddings)

    p = sub.add_parser("evaluate", help="top-1 accuracy of a checkpoint")
    p.add_argument("--manifest", action="append", required=True,
                   metavar="LANG=PATH")
    p.add_argument("--features", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--subset", choices=("test", "train"), default="test")
    p.add_argument("--predictions", help="also write a prediction file")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    ev = sub.add_parser("eval", help="evaluation harness")
    esub = ev.add_subparsers(dest="eval_command", required=True)

    p = esub.add_parser("top1")
    p.add_argument("--predictions", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_top1)

    p = esub.add_parser("breakdown")
    p.add_argument("--predictions", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--label-space", choices=("gloss", "group"), default="gloss")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_breakdown)

    p = esub.add_parser("map-build")
    p.add_argument("--predictions", required=True,
                   help="source-head predictions over the target train set")
    p.add_argument("--manifest", required=True, help="target manifest")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_map_build)

    p = esub.add_parser("map-apply")
    p.add_argument("--predictions", required=True)
    p.add_argument("--manifest", required=True, help="target manifest")
    p.add_argument("--map", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_map_apply)

    p = esub.add_parser("kshot")
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval_kshot)

    p = sub.add_parser("synth", help="generate the synthetic benchmark")
    p.add_argument("--languages", type=int, default=3)
    p.add_argument("--classes", type=int, default=12)
    p.add_argument("--source-classes", type=int, default=None)
    p.add_argument("--shared", type=float, default=0.75)
    p.add_argument("--samples", type=int, default=10)
    p.add_argument("--source-samples", type=int, default=None)
    p.add_argument("--signers", type=int, default=6)
    p.add_argument("--source-signers", type=int, default=None)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--confusable-pairs", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("experiment", help="run a named scenario from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_experiment)

    sch = sub.add_parser("schedule", help="LR schedule utilities")
    ssub = sch.add_subparsers(dest="schedule_command", required=True)
    p = ssub.add_parser("dump", help="emit (step, lr) pairs as CSV")
    p.add_argument("--plan", help="key=value plan file (overrides the flags)")
    p.add_argument("--steps-per-epoch", type=int, default=100)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--rescale", type=float, default=None)
    p.add_argument("--frozen", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_schedule_dump)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
