"""Permutation-minimal multi-speaker WER and speaker-counting accuracy."""

from __future__ import annotations

import itertools
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .assignment import hungarian
from .mixer import FACTORIAL_CAP

OVERFLOW = 4  # counting-matrix column for ">= 4" estimated speakers


def edit_distance(ref: Sequence[str], hyp: Sequence[str]) -> tuple[int, int, int]:
    """(substitutions, deletions, insertions) of a minimum unit-cost alignment.

    Among equal-cost alignments the backtrace prefers a diagonal step
    (match/substitution), then an insertion, then a deletion.
    """
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i, j] = min(d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]), d[i, j - 1] + 1, d[i - 1, j] + 1)
    S = D = I = 0
    i, j = n, m
    while i or j:
        if i and j and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            S += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif j and d[i, j] == d[i, j - 1] + 1:
            I += 1
            j -= 1
        else:
            D += 1
            i -= 1
    return int(S), int(D), int(I)


@dataclass
class WerReport:
    substitutions: int
    deletions: int
    insertions: int
    reference_token_count: int
    chosen_permutation: list[int] = field(default_factory=list)  # hyp slot -> ref slot (padded)
    padded_empties: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        if self.reference_token_count == 0:
            return 0.0 if self.errors == 0 else float("inf")
        return self.errors / self.reference_token_count


def multi_speaker_wer(refs: Sequence[Sequence[str]], hyps: Sequence[Sequence[str]],
                      cap: int = FACTORIAL_CAP, method: str = "brute") -> WerReport:
    """Best WER over all orderings of the hypotheses.

    The shorter list is padded with empty transcripts; the denominator is the
    true reference token count.
    """
    if not refs:
        raise ValueError("at least one reference is required")
    n = max(len(refs), len(hyps))
    if method == "brute" and n > cap:
        raise ValueError(f"{n} transcripts exceeds the factorial cap of {cap}")
    R = [list(r) for r in refs] + [[] for _ in range(n - len(refs))]
    H = [list(h) for h in hyps] + [[] for _ in range(n - len(hyps))]
    sdi = [[edit_distance(R[r], H[h]) for h in range(n)] for r in range(n)]
    cost = np.array([[sum(x) for x in row] for row in sdi], dtype=np.float64)
    if method == "brute":
        best, assign = None, None
        for perm in itertools.permutations(range(n)):  # perm[r] = hyp slot for ref r
            total = sum(cost[r, perm[r]] for r in range(n))
            if best is None or total < best:
                best, assign = total, perm
    elif method == "hungarian":
        _, assign = hungarian(cost)
    else:
        raise ValueError(f"unknown method {method!r}")
    S = sum(sdi[r][assign[r]][0] for r in range(n))
    D = sum(sdi[r][assign[r]][1] for r in range(n))
    I = sum(sdi[r][assign[r]][2] for r in range(n))
    hyp_to_ref = [0] * n
    for r, h in enumerate(assign):
        hyp_to_ref[h] = r
    return WerReport(S, D, I, sum(len(r) for r in refs), hyp_to_ref, abs(len(refs) - len(hyps)))


@dataclass
class CountingMatrix:
    actual: list[int]  # row labels
    fractions: np.ndarray  # len(actual) x OVERFLOW; last column is ">= OVERFLOW"
    totals: list[int]

    def row(self, actual: int) -> np.ndarray:
        return self.fractions[self.actual.index(actual)]

    def accuracy(self, actual: int) -> float:
        return float(self.row(actual)[min(actual, OVERFLOW) - 1])


def counting_accuracy(pairs: Sequence[tuple[int, int]]) -> CountingMatrix:
    counts: dict[int, np.ndarray] = defaultdict(lambda: np.zeros(OVERFLOW, dtype=np.int64))
    for actual, est in pairs:
        if actual < 1:
            raise ValueError("actual speaker count must be >= 1")
        if est < 1:
            raise ValueError("estimated speaker count must be >= 1")
        counts[actual][min(est, OVERFLOW) - 1] += 1
    actual = sorted(counts)
    totals = [int(counts[a].sum()) for a in actual]
    fr = np.array([counts[a] / t for a, t in zip(actual, totals)]).reshape(len(actual), OVERFLOW)
    return CountingMatrix(actual, fr, totals)


# -- corpus-level report --------------------------------------------------------

@dataclass
class ScoreSummary:
    records: list[dict]
    wer_by_speakers: dict[int, float]
    total_wer: float
    counting: CountingMatrix


def score_corpus(items: Sequence[dict]) -> ScoreSummary:
    """``items``: dicts with mixture_id, refs, hyps, num_speakers_est."""
    records = []
    errs: dict[int, int] = defaultdict(int)
    toks: dict[int, int] = defaultdict(int)
    pairs = []
    for it in items:
        rep = multi_speaker_wer(it["refs"], it["hyps"])
        S = len(it["refs"])
        errs[S] += rep.errors
        toks[S] += rep.reference_token_count
        pairs.append((S, int(it["num_speakers_est"])))
        records.append({"mixture_id": it["mixture_id"], "num_speakers": S,
                        "num_speakers_est": int(it["num_speakers_est"]),
                        "substitutions": rep.substitutions, "deletions": rep.deletions,
                        "insertions": rep.insertions, "reference_tokens": rep.reference_token_count,
                        "wer": rep.wer, "hyp_to_ref": rep.chosen_permutation})
    by_s = {s: errs[s] / toks[s] for s in sorted(toks) if toks[s]}
    total = sum(errs.values()) / max(1, sum(toks.values()))
    return ScoreSummary(records, by_s, total, counting_accuracy(pairs))


def wer_table(summary: ScoreSummary, label: str = "model") -> str:
    cols = [str(s) for s in summary.wer_by_speakers] + ["Total"]
    vals = [f"{100 * w:.1f}" for w in summary.wer_by_speakers.values()] + [f"{100 * summary.total_wer:.1f}"]
    w0 = max(len(label), len("Model"))
    widths = [max(len(c), len(v), 5) for c, v in zip(cols, vals)]
    head = f"{'Model':<{w0}} | " + " | ".join(f"{c:>{w}}" for c, w in zip(cols, widths))
    sub = f"{'':<{w0}} | {'WER (%) by # of speakers in test data':<{len(head) - w0 - 3}}"
    row = f"{label:<{w0}} | " + " | ".join(f"{v:>{w}}" for v, w in zip(vals, widths))
    rule = "-" * len(head)
    return "\n".join([sub, head, rule, row])


def counting_table(matrix: CountingMatrix) -> str:
    cols = [str(i) for i in range(1, OVERFLOW)] + [f">={OVERFLOW}"]
    left = "Actual # of speakers"
    head = f"{left} | " + " | ".join(f"{c:>6}" for c in cols)
    lines = [f"{'':<{len(left)}} | Estimated # of speakers (%)", head, "-" * len(head)]
    for a, row in zip(matrix.actual, matrix.fractions):
        lines.append(f"{a:<{len(left)}} | " + " | ".join(f"{100 * x:>6.1f}" for x in row))
    return "\n".join(lines)
