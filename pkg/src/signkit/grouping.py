"""Visually-similar-sign grouping: candidates, expert votes, transitive merges.

The workflow has two stages. First, classifier confidences for per-class
template videos propose the k most similar counterparts of every class;
those pairs go to human experts, and pairs matched by a majority vote are
merged transitively into groups. Then refinement rounds mine the confusion
statistics of a model retrained on the current groups for additional
candidate pairs, which pass through the same adjudication.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROW_SUM_TOL = 1e-6
DEFAULT_TOP_K = 10
DEFAULT_QUORUM = 5
DEFAULT_MAJORITY = 3
DEFAULT_REFINEMENT_ROUNDS = 3


class GroupingError(ValueError):
    pass


class DuplicateVoteError(GroupingError):
    """Second verdict from the same expert on the same pair."""


def canonical_pair(a: str, b: str) -> tuple[str, str]:
    if a == b:
        raise GroupingError(f"pair members must differ, got {a!r} twice")
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class CandidatePair:
    a: str
    b: str
    rank: int
    source: str = "template_similarity"  # or "confusion_refinement"

    def __post_init__(self):
        a, b = canonical_pair(self.a, self.b)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def key(self) -> tuple[str, str]:
        return (self.a, self.b)


@dataclass(frozen=True)
class VoteRecord:
    pair: tuple[str, str]
    expert: str
    verdict: bool  # True: the signs differ only in non-manual components
    timestamp: str = "0"

    def __post_init__(self):
        object.__setattr__(self, "pair", canonical_pair(*self.pair))


@dataclass
class TemplateScoreTable:
    """Square table of per-template class confidences (rows sum to 1)."""

    labels: list[str]
    scores: np.ndarray  # shape (n, n), row i = confidence vector of template i

    def __post_init__(self):
        n = len(self.labels)
        if len(set(self.labels)) != n:
            raise GroupingError("duplicate labels in score table")
        self.scores = np.asarray(self.scores, dtype=float)
        if self.scores.shape != (n, n):
            raise GroupingError(
                f"score table must be square over {n} labels, got {self.scores.shape}")

    def check_normalized(self) -> None:
        sums = self.scores.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
        if bad.size:
            raise GroupingError(
                f"rows not normalized: {[self.labels[i] for i in bad[:5]]}")


class UnionFind:
    """Union-find over string ids with path compression."""

    def __init__(self, items=()):
        self.parent: dict[str, str] = {x: x for x in items}
        self.rank: dict[str, int] = {x: 0 for x in items}

    def add(self, x: str) -> None:
        if x not in self.parent:
            self.parent[x] = x
            self.rank[x] = 0

    def find(self, x: str) -> str:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: str, b: str) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return True

    def same(self, a: str, b: str) -> bool:
        return self.find(a) == self.find(b)

    def components(self) -> list[tuple[str, ...]]:
        comps: dict[str, list[str]] = {}
        for x in self.parent:
            comps.setdefault(self.find(x), []).append(x)
        return sorted(tuple(sorted(members)) for members in comps.values())

    def copy(self) -> "UnionFind":
        uf = UnionFind()
        uf.parent = dict(self.parent)
        uf.rank = dict(self.rank)
        return uf


@dataclass
class GroupingState:
    """Evolving partition of the vocabulary plus the adjudication queue."""

    partition: UnionFind
    pending: list[CandidatePair] = field(default_factory=list)
    votes: list[VoteRecord] = field(default_factory=list)
    round: int = 0

    @classmethod
    def over(cls, gloss_ids) -> "GroupingState":
        return cls(partition=UnionFind(sorted(gloss_ids)))

    def group_count(self) -> int:
        return len(self.partition.components())

    def groups(self) -> list[tuple[str, ...]]:
        return self.partition.components()


def candidate_pairs_from_templates(table: TemplateScoreTable,
                                   k: int = DEFAULT_TOP_K) -> list[CandidatePair]:
    """For each template row, the k highest off-diagonal confidences become
    candidate pairs; duplicates (seen from both rows) keep their best rank."""
    n = len(table.labels)
    if not (1 <= k < n):
        raise GroupingError(f"k must be in [1, {n - 1}], got {k}")
    table.check_normalized()
    best_rank: dict[tuple[str, str], int] = {}
    for i, label in enumerate(table.labels):
        others = [(float(-table.scores[i, j]), table.labels[j])
                  for j in range(n) if j != i]
        others.sort()
        for rank, (_, other) in enumerate(others[:k], start=1):
            key = canonical_pair(label, other)
            if key not in best_rank or rank < best_rank[key]:
                best_rank[key] = rank
    pairs = [CandidatePair(a=a, b=b, rank=rank, source="template_similarity")
             for (a, b), rank in best_rank.items()]
    pairs.sort(key=lambda p: (p.rank, p.a, p.b))
    return pairs


@dataclass
class VoteSummary:
    decided: list[tuple[tuple[str, str], bool]]  # (pair, matched)
    pending: list[tuple[str, str]]  # below quorum

    def matched_pairs(self) -> list[tuple[str, str]]:
        return [pair for pair, matched in self.decided if matched]


def aggregate_votes(votes, quorum: int = DEFAULT_QUORUM,
                    majority: int = DEFAULT_MAJORITY) -> VoteSummary:
    """Majority adjudication: a pair is matched iff it has >= quorum verdicts
    of which >= majority are True; pairs below quorum stay pending."""
    by_pair: dict[tuple[str, str], dict[str, bool]] = {}
    for vote in votes:
        verdicts = by_pair.setdefault(vote.pair, {})
        if vote.expert in verdicts:
            raise DuplicateVoteError(
                f"expert {vote.expert!r} already voted on pair {vote.pair}")
        verdicts[vote.expert] = vote.verdict
    decided = []
    pending = []
    for pair in sorted(by_pair):
        verdicts = by_pair[pair]
        if len(verdicts) < quorum:
            pending.append(pair)
        else:
            decided.append((pair, sum(verdicts.values()) >= majority))
    return VoteSummary(decided=decided, pending=pending)


def merge_matched(gs: GroupingState, matched) -> GroupingState:
    """Merge matched pairs transitively; groups become the connected
    components of the matched-pair graph. Returns a new state whose pending
    queue is purged of pairs that ended up in one group."""
    partition = gs.partition.copy()
    for a, b in matched:
        partition.add(a)
        partition.add(b)
        partition.union(a, b)
    pending = [p for p in gs.pending if not partition.same(p.a, p.b)]
    return GroupingState(partition=partition, pending=pending,
                         votes=list(gs.votes), round=gs.round)


def refinement_candidates(confusion: TemplateScoreTable, gs: GroupingState,
                          top_m: int) -> list[CandidatePair]:
    """Top confusable group pairs by symmetrized off-diagonal mass
    C[i][j] + C[j][i], excluding pairs already merged."""
    if top_m < 1:
        raise GroupingError(f"top_m must be >= 1, got {top_m}")
    labels = confusion.labels
    mass: list[tuple[float, str, str]] = []
    for i in range(len(labels)):
        for j in range(i + 1, len(labels)):
            m = float(confusion.scores[i, j] + confusion.scores[j, i])
            if m <= 0.0:
                continue
            a, b = canonical_pair(labels[i], labels[j])
            if labels[i] in gs.partition.parent and labels[j] in gs.partition.parent \
                    and gs.partition.same(labels[i], labels[j]):
                continue
            mass.append((-m, a, b))
    mass.sort()
    return [CandidatePair(a=a, b=b, rank=rank, source="confusion_refinement")
            for rank, (_, a, b) in enumerate(mass[:top_m], start=1)]


def groups_to_labels(gs: GroupingState) -> list[tuple[str, tuple[str, ...]]]:
    """Stable (group id, members) pairs; the group id is the smallest member."""
    return [(members[0], members) for members in gs.groups()]


# -- file formats -------------------------------------------------------------

def save_score_table(table: TemplateScoreTable, path) -> None:
    from .records import format_record

    lines = [format_record("score-table", [("labels", ",".join(table.labels))])]
    for i, label in enumerate(table.labels):
        values = ",".join(f"{v:.9g}" for v in table.scores[i])
        lines.append(format_record("scorerow", [("label", label),
                                                ("values", values)]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_score_table(path) -> TemplateScoreTable:
    from .records import RecordError, check_fields, read_records

    labels: list[str] | None = None
    rows: dict[str, list[float]] = {}
    for line_no, kind, fields in read_records(path):
        if kind == "score-table":
            check_fields(kind, fields, ["labels"], line_no)
            labels = fields["labels"].split(",")
        elif kind == "scorerow":
            check_fields(kind, fields, ["label", "values"], line_no)
            rows[fields["label"]] = [float(v) for v in fields["values"].split(",")]
        else:
            raise RecordError(f"unexpected record kind {kind!r}", line_no)
    if labels is None:
        raise RecordError("missing score-table header")
    missing = [l for l in labels if l not in rows]
    if missing:
        raise GroupingError(f"missing score rows for labels {missing[:5]}")
    scores = np.array([rows[l] for l in labels])
    return TemplateScoreTable(labels=labels, scores=scores)


def save_votes_file(votes, path, append: bool = False) -> None:
    from .review import vote_line

    mode = "a" if append else "w"
    with open(path, mode, encoding="utf-8") as fh:
        for vote in votes:
            fh.write(vote_line(vote) + "\n")


def load_votes_file(path) -> list[VoteRecord]:
    from .review import parse_vote_line

    votes = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh.read().splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            votes.append(parse_vote_line(stripped, line_no))
    return votes
