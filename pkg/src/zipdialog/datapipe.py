"""Rule-based transcript filtering and <=30 s chunking of speech spans."""
from __future__ import annotations

import json
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .text import Utterance, consolidate_turns, utterances_from_json

DEFAULT_SYMBOLS = frozenset(string.ascii_letters + string.digits + " .,?!'-\"")

# fixed evaluation order; every rule runs on every record
RULES = ("turn_rate", "unexpected_symbols", "word_count", "repetition",
         "max_word_length", "quality_gate")


@dataclass(frozen=True)
class FilterRuleSet:
    max_turns_per_minute: float = 40.0
    allowed_symbols: frozenset = DEFAULT_SYMBOLS
    min_words: int = 5
    max_words: int = 2000
    max_trigram_fraction: float = 0.3
    max_word_length: int = 40
    quality_threshold: float = 2.8

    def __post_init__(self):
        for name in ("max_turns_per_minute", "min_words", "max_words",
                     "max_trigram_fraction", "max_word_length", "quality_threshold"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not self.allowed_symbols:
            raise ValueError("allowed symbol set is empty")


@dataclass
class FilterResult:
    keep: bool
    reasons: list[str] = field(default_factory=list)


def top_trigram_fraction(words: Sequence[str]) -> float:
    grams = list(zip(words, words[1:], words[2:]))
    if not grams:
        return 0.0
    return Counter(grams).most_common(1)[0][1] / len(grams)


def rule_filter(utterances: Sequence[Utterance], duration_s: float, quality_score: float,
                rules: FilterRuleSet = FilterRuleSet()) -> FilterResult:
    if not duration_s > 0:
        raise ValueError(f"duration must be positive, got {duration_s}")
    turns = consolidate_turns(utterances)
    text = " ".join(u.text for u in utterances)
    words = turns.words()
    failed = {
        "turn_rate": len(turns) / (duration_s / 60.0) > rules.max_turns_per_minute,
        "unexpected_symbols": any(ch not in rules.allowed_symbols for ch in text),
        "word_count": not rules.min_words <= len(words) <= rules.max_words,
        "repetition": top_trigram_fraction(words) > rules.max_trigram_fraction,
        "max_word_length": any(len(w) > rules.max_word_length for w in words),
        "quality_gate": quality_score < rules.quality_threshold,
    }
    reasons = [r for r in RULES if failed[r]]
    return FilterResult(not reasons, reasons)


def filter_record(record: Mapping, rules: FilterRuleSet = FilterRuleSet()) -> dict:
    res = rule_filter(utterances_from_json(record), float(record["duration_s"]),
                      float(record["quality_score"]), rules)
    return {**record, "keep": res.keep, "reasons": res.reasons}


def filter_jsonl(src, dst, rules: FilterRuleSet = FilterRuleSet()) -> dict:
    """Annotate every JSONL record with ``keep``/``reasons``; returns a
    summary with reason counts and a turn-count histogram of kept records."""
    kept = 0
    total = 0
    reasons: Counter = Counter()
    turn_hist: Counter = Counter()
    with open(src, encoding="utf-8") as fin, open(dst, "w", encoding="utf-8") as fout:
        for line in fin:
            if not line.strip():
                continue
            out = filter_record(json.loads(line), rules)
            total += 1
            reasons.update(out["reasons"])
            if out["keep"]:
                kept += 1
                turn_hist[len(consolidate_turns(utterances_from_json(out)))] += 1
            fout.write(json.dumps(out) + "\n")
    return {"records": total, "kept": kept, "reasons": dict(reasons),
            "kept_turn_histogram": {str(k): v for k, v in sorted(turn_hist.items())}}


def chunk_segments(spans: Iterable[tuple[float, float]], max_len: float = 30.0) -> list[tuple[float, float]]:
    """Greedily pack consecutive speech spans into chunks no longer than
    ``max_len``; spans longer than ``max_len`` are cut at ``max_len``
    boundaries first."""
    if max_len <= 0:
        raise ValueError("max_len must be positive")
    spans = [(float(a), float(b)) for a, b in spans]
    prev_end = None
    pieces: list[tuple[float, float]] = []
    for a, b in spans:
        if b <= a:
            raise ValueError(f"span ({a}, {b}) is empty or reversed")
        if prev_end is not None and a < prev_end:
            raise ValueError(f"span ({a}, {b}) overlaps or precedes the previous one")
        prev_end = b
        # cut points a + k*max_len strictly inside the span; no empty tail
        k = 1
        while a + k * max_len < b:
            pieces.append((a + (k - 1) * max_len, a + k * max_len))
            k += 1
        pieces.append((a + (k - 1) * max_len, b))
    chunks: list[tuple[float, float]] = []
    for a, b in pieces:
        if chunks and b - chunks[-1][0] <= max_len:
            chunks[-1] = (chunks[-1][0], b)
        else:
            chunks.append((a, b))
    return chunks
