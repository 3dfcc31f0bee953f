"""Independent reference implementations used only by the tests."""
from __future__ import annotations

import itertools
from functools import lru_cache


def levenshtein(ref, hyp) -> int:
    """Plain recursive edit distance (unit costs), memoised."""
    ref, hyp = tuple(ref), tuple(hyp)

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (ref[i - 1] != hyp[j - 1]))

    return d(len(ref), len(hyp))


def brute_cpwer(ref_turns, hyp_turns) -> float:
    """Enumerate every injective map from reference speakers to hypothesis
    speakers (padded with anonymous empty speakers) and take the minimum."""
    def concat(turns):
        out: dict = {}
        for spk, words in turns:
            out.setdefault(spk, []).extend(words)
        return out

    r, h = concat(ref_turns), concat(hyp_turns)
    n_ref = sum(len(v) for v in r.values())
    ref_spk = sorted(r)
    hyp_spk = sorted(h) + [None] * len(ref_spk)
    best = None
    for perm in itertools.permutations(hyp_spk, len(ref_spk)):
        used = set(p for p in perm if p is not None)
        errs = sum(levenshtein(r[s], h.get(p, [])) for s, p in zip(ref_spk, perm))
        # hypothesis speakers left unmatched are pure insertions
        errs += sum(len(h[s]) for s in h if s not in used)
        best = errs if best is None else min(best, errs)
    return best / n_ref


def quantile_linear(values, q: float) -> float:
    """Sorted linear-interpolation quantile (the 'linear' / type-7 rule)."""
    xs = sorted(values)
    pos = q * (len(xs) - 1)
    lo = int(pos)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (pos - lo) * (xs[hi] - xs[lo])
