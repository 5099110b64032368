"""Evaluation procedures: top-1 accuracy, grouped breakdown, label mapping,
k-shot truncation.

Class indices follow the manifest convention used by the training engine:
index = position of the label in the sorted gloss (or group) id list of the
sample's language. Prediction files are line records::

    pred sample=<id> pred=<index> gt=<index> language=<tag>

A pred index of -1 marks a prediction that could not be mapped into the
target vocabulary; it never counts as correct.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, replace

from .manifest import DatasetManifest, project_to_groups
from .records import check_fields, format_record, read_records
from .seeding import derive_rng

UNMAPPED = -1


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class PredictionRow:
    sample_id: str
    pred: int
    gt: int
    language: str


@dataclass
class PredictionSet:
    rows: list[PredictionRow]

    def __post_init__(self):
        seen = set()
        for row in self.rows:
            if row.sample_id in seen:
                raise EvalError(f"duplicate sample id {row.sample_id!r}")
            seen.add(row.sample_id)

    def __len__(self) -> int:
        return len(self.rows)

    def lines(self) -> list[str]:
        return [format_record("pred", [
            ("sample", r.sample_id), ("pred", str(r.pred)),
            ("gt", str(r.gt)), ("language", r.language)]) for r in self.rows]

    @classmethod
    def load(cls, path) -> "PredictionSet":
        rows = []
        for line_no, kind, fields in read_records(path):
            if kind != "pred":
                continue
            check_fields("pred", fields, ["sample", "pred", "gt", "language"],
                         line_no)
            rows.append(PredictionRow(
                sample_id=fields["sample"], pred=int(fields["pred"]),
                gt=int(fields["gt"]), language=fields["language"]))
        return cls(rows=rows)


def top1_accuracy(p: PredictionSet) -> float:
    if not p.rows:
        raise EvalError("empty prediction set")
    return sum(1 for r in p.rows if r.pred == r.gt) / len(p.rows)


@dataclass
class BreakdownReport:
    whole: float
    non_vssign: float | None  # None: stratum empty
    vssign: float | None
    counts: dict[str, int]

    def lines(self) -> list[str]:
        def fmt(v):
            return "n/a" if v is None else f"{v:.6f}"

        return [format_record("breakdown", [
            ("whole", fmt(self.whole)), ("non_vssign", fmt(self.non_vssign)),
            ("vssign", fmt(self.vssign)),
            ("n_whole", str(self.counts["whole"])),
            ("n_non_vssign", str(self.counts["non_vssign"])),
            ("n_vssign", str(self.counts["vssign"]))])]


def grouped_accuracy_breakdown(p: PredictionSet, m: DatasetManifest,
                               label_space: str = "gloss") -> BreakdownReport:
    """Per-stratum top-1 after projecting to groups.

    With label_space="gloss" the prediction indices address the sorted gloss
    vocabulary and are projected to groups first; with "group" they already
    address the sorted group vocabulary. The VSSign stratum holds samples
    whose true group has at least two member glosses.
    """
    if not p.rows:
        raise EvalError("empty prediction set")
    if not m.groups:
        raise EvalError("manifest has no grouping")
    groups = m.group_ids()
    group_sizes = {g.id: len(g.members) for g in m.groups}
    if label_space == "gloss":
        glosses = m.gloss_ids()
        to_group = {i: project_to_groups(m, [label])[0]
                    for i, label in enumerate(glosses)}

        def group_of(index: int) -> str | None:
            return to_group.get(index)
    elif label_space == "group":
        def group_of(index: int) -> str | None:
            return groups[index] if 0 <= index < len(groups) else None
    else:
        raise EvalError(f"unknown label space {label_space!r}")

    correct = {"whole": 0, "non_vssign": 0, "vssign": 0}
    counts = {"whole": 0, "non_vssign": 0, "vssign": 0}
    for row in p.rows:
        gt_group = group_of(row.gt)
        if gt_group is None:
            raise EvalError(f"ground-truth index {row.gt} outside vocabulary")
        pred_group = group_of(row.pred) if row.pred != UNMAPPED else None
        hit = pred_group == gt_group
        stratum = "vssign" if group_sizes[gt_group] >= 2 else "non_vssign"
        for key in ("whole", stratum):
            counts[key] += 1
            correct[key] += hit

    def acc(key: str) -> float | None:
        return correct[key] / counts[key] if counts[key] else None

    return BreakdownReport(whole=acc("whole"), non_vssign=acc("non_vssign"),
                           vssign=acc("vssign"), counts=counts)


@dataclass
class LabelMap:
    """source class index -> target class label, built by frequency."""

    entries: dict[int, str]
    ties: list[int]  # source classes whose mode was tied (broken lexicographically)

    def lines(self) -> list[str]:
        out = [format_record("label-map", [("size", str(len(self.entries)))])]
        for src in sorted(self.entries):
            fields = [("source", str(src)), ("target", self.entries[src])]
            if src in self.ties:
                fields.append(("tie", "true"))
            out.append(format_record("map", fields))
        return out


def build_label_map(source_preds: PredictionSet,
                    target_labels: list[str]) -> LabelMap:
    """Associate each source class with the most frequent target ground
    truth among samples the source model assigned to it. Ties break by
    lexicographic target label and are flagged."""
    if not source_preds.rows:
        raise EvalError("empty prediction set")
    freq: dict[int, Counter] = {}
    for row in source_preds.rows:
        if not (0 <= row.gt < len(target_labels)):
            raise EvalError(f"ground-truth index {row.gt} outside target vocabulary")
        freq.setdefault(row.pred, Counter())[target_labels[row.gt]] += 1
    entries: dict[int, str] = {}
    ties: list[int] = []
    for src, counter in freq.items():
        best = max(counter.values())
        winners = sorted(label for label, count in counter.items() if count == best)
        entries[src] = winners[0]
        if len(winners) > 1:
            ties.append(src)
    return LabelMap(entries=entries, ties=sorted(ties))


def apply_label_map(label_map: LabelMap, preds: PredictionSet,
                    target_labels: list[str]) -> PredictionSet:
    """Rewrite source-class predictions into target-vocabulary indices.

    Predictions whose source class has no map entry become UNMAPPED (-1)
    and therefore score as incorrect."""
    index_of = {label: i for i, label in enumerate(target_labels)}
    rows = []
    for row in preds.rows:
        target = label_map.entries.get(row.pred)
        mapped = index_of[target] if target is not None else UNMAPPED
        rows.append(replace(row, pred=mapped))
    return PredictionSet(rows=rows)


def kshot_truncate(m: DatasetManifest, k: int, seed: int = 0) -> DatasetManifest:
    """Keep at most k train samples per gloss class (uniform, deterministic
    per seed); test and unassigned samples are untouched. Classes with
    fewer than k train samples keep everything."""
    if k < 1:
        raise EvalError(f"k must be >= 1, got {k}")
    rng = derive_rng(seed, "kshot", m.language, k)
    by_class: dict[str, list[str]] = {}
    for sample in m.samples:
        if sample.subset == "train":
            by_class.setdefault(sample.gloss, []).append(sample.sample_id)
    keep: set[str] = set()
    for gloss in sorted(by_class):
        ids = sorted(by_class[gloss])
        if len(ids) <= k:
            keep.update(ids)
        else:
            chosen = rng.choice(len(ids), size=k, replace=False)
            keep.update(ids[i] for i in chosen)
    samples = tuple(s for s in m.samples
                    if s.subset != "train" or s.sample_id in keep)
    return replace(m, samples=samples).validate()
