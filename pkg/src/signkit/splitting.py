"""Balanced train/test split by signer.

Selects exactly round(p * n_signers) test signers and greedily swaps
test/train signers to minimize the worst per-gloss deviation of the test
sample ratio from the target p. The swap loop is first-improvement: for the
gloss with the worst deviation, test-signer candidates are sorted by how
much of that gloss they hold (descending when the gloss is over-represented
in test, ascending otherwise) and the first swap that strictly decreases the
worst deviation is taken. Random restarts around the single random
initialization guard against local minima; the best restart wins.

Per-gloss test ratios are kept as exact integer count pairs; every deviation
is a single float division from integers, so recomputation is deterministic
and restart comparisons are exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .manifest import DatasetManifest

FLOAT_TOL = 1e-12


class SplitError(ValueError):
    """Infeasible split configuration or invalid manifest for splitting."""


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


@dataclass
class RatioMatrix:
    """Per-(gloss, signer) sample counts with ratios evaluated on demand.

    ``counts[g, s]`` is the number of samples of gloss g recorded by signer
    s; ``totals[g]`` is the gloss total. Ratios counts/totals are exact
    rationals evaluated in floating point only when needed.
    """

    glosses: list[str]
    signers: list[str]
    counts: np.ndarray  # int64, shape (n_glosses, n_signers)

    @property
    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def ratios(self) -> np.ndarray:
        return self.counts / self.totals[:, None]

    def ratio(self, gloss: str, signer: str) -> float:
        g = self.glosses.index(gloss)
        s = self.signers.index(signer)
        return self.counts[g, s] / self.counts[g].sum()


@dataclass
class SplitConfig:
    p: float = 0.2
    seed: int = 0
    max_rounds: int | None = None  # default 10 * n_signers
    restarts: int = 8  # additional random initializations beyond the first
    best_improvement: bool = False  # comparison mode only; paper loop is first-improvement

    def __post_init__(self):
        if not (0.0 < self.p < 1.0):
            raise SplitError(f"target ratio p must be in (0,1), got {self.p}")
        if self.restarts < 0:
            raise SplitError("restarts must be non-negative")


@dataclass
class SplitState:
    """Result of one split optimization: the test signer set and its deviations."""

    test_signers: frozenset[str]
    deviations: dict[str, float]  # gloss -> D_g = sum of test ratios
    d_wst: float
    g_wst: str
    p: float
    history: list[float] = field(default_factory=list)  # d_wst after each accepted swap
    rounds: int = 0
    converged: bool = True
    restart_index: int = 0


def build_ratio_matrix(m: DatasetManifest) -> RatioMatrix:
    """Count samples per (gloss, signer). Every gloss must have >= 1 sample."""
    glosses = m.gloss_ids()
    signers = sorted(m.signers)
    g_index = {g: i for i, g in enumerate(glosses)}
    s_index = {s: i for i, s in enumerate(signers)}
    counts = np.zeros((len(glosses), len(signers)), dtype=np.int64)
    for sample in m.samples:
        counts[g_index[sample.gloss], s_index[sample.signer]] += 1
    empty = [glosses[i] for i in np.flatnonzero(counts.sum(axis=1) == 0)]
    if empty:
        raise SplitError(f"glosses with zero samples: {empty[:5]}")
    return RatioMatrix(glosses=glosses, signers=signers, counts=counts)


def _worst(test_counts: np.ndarray, totals: np.ndarray, p: float) -> tuple[float, int]:
    dev = np.abs(test_counts / totals - p)
    g = int(np.argmax(dev))  # ties: first index = lexicographically smallest gloss
    return float(dev[g]), g


def _one_run(rm: RatioMatrix, n_test: int, p: float, max_rounds: int,
             rng: np.random.Generator, best_improvement: bool) -> SplitState:
    n_signers = len(rm.signers)
    counts = rm.counts
    totals = rm.totals
    ratios = rm.ratios()

    in_test = np.zeros(n_signers, dtype=bool)
    in_test[rng.choice(n_signers, size=n_test, replace=False)] = True

    test_counts = counts[:, in_test].sum(axis=1)
    d_wst, g_wst = _worst(test_counts, totals, p)
    history = [d_wst]

    rounds = 0
    converged = False
    while rounds < max_rounds:
        rounds += 1
        test_idx = np.flatnonzero(in_test)
        train_idx = np.flatnonzero(~in_test)
        # Candidate order: most (least) of the worst gloss first when it is
        # over- (under-) represented in test; ties by signer id order.
        over = test_counts[g_wst] / totals[g_wst] > p
        key = -ratios[g_wst, test_idx] if over else ratios[g_wst, test_idx]
        order = test_idx[np.argsort(key, kind="stable")]

        best: tuple[float, int, int] | None = None
        for s_out in order:
            for s_in in train_idx:
                cand = test_counts - counts[:, s_out] + counts[:, s_in]
                d_new, _ = _worst(cand, totals, p)
                if d_new < d_wst and (best is None or d_new < best[0]):
                    best = (d_new, int(s_out), int(s_in))
                    if not best_improvement:
                        break
            if best is not None and not best_improvement:
                break
        if best is None:
            converged = True
            break
        _, s_out, s_in = best
        in_test[s_out] = False
        in_test[s_in] = True
        test_counts = test_counts - counts[:, s_out] + counts[:, s_in]
        d_wst, g_wst = _worst(test_counts, totals, p)
        history.append(d_wst)

    deviations = {g: float(test_counts[i] / totals[i]) for i, g in enumerate(rm.glosses)}
    return SplitState(
        test_signers=frozenset(rm.signers[i] for i in np.flatnonzero(in_test)),
        deviations=deviations,
        d_wst=d_wst,
        g_wst=rm.glosses[g_wst],
        p=p,
        history=history,
        rounds=rounds,
        converged=converged,
    )


def optimize_split(m: DatasetManifest, cfg: SplitConfig | None = None
                   ) -> tuple[SplitState, DatasetManifest]:
    """Optimize the signer split and return (state, manifest with subsets set).

    Deterministic: the restart with index r uses rng seeded by (seed, r);
    the best restart by (d_wst, restart index) wins.
    """
    cfg = cfg or SplitConfig()
    rm = build_ratio_matrix(m)
    n_signers = len(rm.signers)
    if n_signers < 2:
        raise SplitError(f"need at least 2 signers, got {n_signers}")
    n_test = round_half_up(cfg.p * n_signers)
    if n_test < 1:
        raise SplitError(
            f"p={cfg.p} with {n_signers} signers yields an empty test set")
    if n_test >= n_signers:
        raise SplitError(
            f"p={cfg.p} with {n_signers} signers leaves no train signers")
    max_rounds = cfg.max_rounds if cfg.max_rounds is not None else 10 * n_signers

    best_state: SplitState | None = None
    for r in range(cfg.restarts + 1):
        rng = np.random.default_rng((cfg.seed, r))
        state = _one_run(rm, n_test, cfg.p, max_rounds, rng, cfg.best_improvement)
        state.restart_index = r
        if best_state is None or state.d_wst < best_state.d_wst:
            best_state = state
    assert best_state is not None

    assignment = {
        s.sample_id: ("test" if s.signer in best_state.test_signers else "train")
        for s in m.samples}
    return best_state, m.with_subsets(assignment)


def exhaustive_split(m: DatasetManifest, p: float = 0.2) -> tuple[float, frozenset[str]]:
    """Brute-force optimum of the worst per-gloss deviation over all test
    signer sets of the required size. Only feasible for small signer counts;
    used as the oracle for the greedy optimizer."""
    from itertools import combinations

    rm = build_ratio_matrix(m)
    n_test = round_half_up(p * len(rm.signers))
    if n_test < 1 or n_test >= len(rm.signers):
        raise SplitError("infeasible exhaustive split")
    totals = rm.totals
    best_d = np.inf
    best_set: tuple[int, ...] = ()
    for combo in combinations(range(len(rm.signers)), n_test):
        test_counts = rm.counts[:, combo].sum(axis=1)
        d, _ = _worst(test_counts, totals, p)
        if d < best_d:
            best_d = d
            best_set = combo
    return float(best_d), frozenset(rm.signers[i] for i in best_set)


@dataclass
class SplitReport:
    signer_test_fraction: float
    sample_test_fraction: float
    d_wst: float
    g_wst: str
    histogram: list[tuple[float, float, int]]  # (lo, hi, count) over D_g
    offenders: list[tuple[str, float]]  # glosses whose |D_g - p| exceeds threshold
    p: float
    threshold: float

    def lines(self) -> list[str]:
        from .records import format_record

        out = [format_record("split-report", [
            ("p", f"{self.p:g}"),
            ("signer_test_fraction", f"{self.signer_test_fraction:.6f}"),
            ("sample_test_fraction", f"{self.sample_test_fraction:.6f}"),
            ("d_wst", f"{self.d_wst:.6f}"),
            ("g_wst", self.g_wst)])]
        for lo, hi, count in self.histogram:
            out.append(format_record("bin", [
                ("lo", f"{lo:.4f}"), ("hi", f"{hi:.4f}"), ("count", str(count))]))
        for gloss, dev in self.offenders:
            out.append(format_record("offender", [
                ("gloss", gloss), ("deviation", f"{dev:.6f}"),
                ("threshold", f"{self.threshold:g}")]))
        return out


def verify_split(m: DatasetManifest, p: float = 0.2,
                 threshold: float = 0.1, bins: int = 10) -> SplitReport:
    """Recompute split statistics from an assigned manifest."""
    unassigned = [s.sample_id for s in m.samples if s.subset == "unassigned"]
    if unassigned:
        raise SplitError(f"unassigned samples present: {unassigned[:5]}")
    rm = build_ratio_matrix(m)
    subset_by_signer: dict[str, set[str]] = {}
    for sample in m.samples:
        subset_by_signer.setdefault(sample.signer, set()).add(sample.subset)
    mixed = sorted(s for s, subs in subset_by_signer.items() if len(subs) > 1)
    if mixed:
        raise SplitError(f"signers with samples in both subsets: {mixed[:5]}")
    test_signers = {s for s, subs in subset_by_signer.items() if subs == {"test"}}

    s_test = np.array([rm.signers[i] in test_signers for i in range(len(rm.signers))])
    test_counts = rm.counts[:, s_test].sum(axis=1)
    deviations = test_counts / rm.totals
    d_wst, g_idx = _worst(test_counts, rm.totals, p)

    edges = np.linspace(0.0, 1.0, bins + 1)
    hist, _ = np.histogram(deviations, bins=edges)
    histogram = [(float(edges[i]), float(edges[i + 1]), int(hist[i]))
                 for i in range(bins)]
    offenders = sorted(
        ((g, float(abs(deviations[i] - p)))
         for i, g in enumerate(rm.glosses) if abs(deviations[i] - p) > threshold),
        key=lambda t: (-t[1], t[0]))

    n_test_samples = sum(1 for s in m.samples if s.subset == "test")
    return SplitReport(
        signer_test_fraction=len(test_signers) / len(rm.signers),
        sample_test_fraction=n_test_samples / len(m.samples) if m.samples else 0.0,
        d_wst=d_wst,
        g_wst=rm.glosses[g_idx],
        histogram=histogram,
        offenders=offenders,
        p=p,
        threshold=threshold,
    )
