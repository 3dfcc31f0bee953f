"""Word error rate and concatenated minimum-permutation WER (cpWER)."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .text import TurnSequence, per_speaker_concat


@dataclass(frozen=True)
class EditCounts:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    def __add__(self, other: "EditCounts") -> "EditCounts":
        return EditCounts(self.substitutions + other.substitutions,
                          self.deletions + other.deletions,
                          self.insertions + other.insertions)


def edit_distance(ref: Sequence[Hashable], hyp: Sequence[Hashable]) -> EditCounts:
    """Levenshtein alignment of ``hyp`` against ``ref``.

    Among minimum-cost alignments the backtrace prefers matches and
    substitutions, then deletions, then insertions.
    """
    n, m = len(ref), len(hyp)
    cost = [list(range(m + 1))]
    for i in range(1, n + 1):
        r = ref[i - 1]
        prev = cost[-1]
        row = [i]
        for j in range(1, m + 1):
            row.append(min(prev[j - 1] + (r != hyp[j - 1]), prev[j] + 1, row[j - 1] + 1))
        cost.append(row)
    s = d = ins = 0
    i, j = n, m
    while i or j:
        if i and j and cost[i][j] == cost[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i and cost[i][j] == cost[i - 1][j] + 1:
            d += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditCounts(int(s), d, ins)


def wer(ref: TurnSequence, hyp: TurnSequence) -> float:
    """Speaker-agnostic WER; may exceed 1."""
    ref_words = ref.words()
    if not ref_words:
        raise ValueError("empty reference")
    return edit_distance(ref_words, hyp.words()).errors / len(ref_words)


@dataclass(frozen=True)
class EvalReport:
    wer: float
    cpwer: float
    permutation: tuple[int, ...]            # hyp speaker assigned to ref speaker 1, 2
    per_permutation: dict[tuple[int, ...], dict[int, EditCounts]] = field(repr=False)
    ref_tokens: int = 0

    @property
    def gap(self) -> float:
        return self.cpwer - self.wer

    def to_json(self) -> dict:
        return {
            "wer": self.wer,
            "cpwer": self.cpwer,
            "gap": self.gap,
            "permutation": list(self.permutation),
            "ref_tokens": self.ref_tokens,
            "per_permutation": [
                {"permutation": list(p),
                 "speakers": {str(s): {"sub": c.substitutions, "del": c.deletions,
                                       "ins": c.insertions} for s, c in per.items()}}
                for p, per in self.per_permutation.items()
            ],
        }


def cpwer(ref: TurnSequence, hyp: TurnSequence) -> tuple[float, EvalReport]:
    """Minimum over the two speaker bijections of the pooled per-speaker
    error rate.  Ties go to the identity mapping."""
    ref_words = ref.words()
    if not ref_words:
        raise ValueError("empty reference")
    r = per_speaker_concat(ref)
    h = per_speaker_concat(hyp)
    best = None
    table: dict[tuple[int, ...], dict[int, EditCounts]] = {}
    for perm in itertools.permutations((1, 2)):
        per = {spk: edit_distance(r.get(spk, []), h.get(hyp_spk, []))
               for spk, hyp_spk in zip((1, 2), perm)}
        table[perm] = per
        errs = sum(c.errors for c in per.values())
        if best is None or errs < best[0]:
            best = (errs, perm)
    rate = best[0] / len(ref_words)
    report = EvalReport(wer(ref, hyp), rate, best[1], table, len(ref_words))
    return rate, report


def corpus_summary(reports: Sequence[EvalReport]) -> dict:
    if not reports:
        return {"dialogues": 0, "mean_wer": None, "mean_cpwer": None, "mean_gap": None}
    w = np.array([r.wer for r in reports])
    c = np.array([r.cpwer for r in reports])
    return {"dialogues": len(reports), "mean_wer": float(w.mean()),
            "mean_cpwer": float(c.mean()), "mean_gap": float((c - w).mean())}
