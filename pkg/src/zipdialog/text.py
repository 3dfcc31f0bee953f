"""Speaker-attributed dialogue text: turn consolidation, interleaved token
streams, and the ``[S1] ... [S2] ...`` rendered form."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Sequence

MARKERS = ("[S1]", "[S2]")
_TAG = re.compile(r"^\[[^\]\s]*\]$")


class Utterance(NamedTuple):
    speaker_key: str
    start_time: float
    text: str


class Turn(NamedTuple):
    speaker: int
    words: tuple[str, ...]

    @property
    def text(self) -> str:
        return " ".join(self.words)


@dataclass(frozen=True)
class TurnSequence:
    """Ordered speaker turns; adjacent turns always change speaker."""

    turns: tuple[Turn, ...] = ()

    def __post_init__(self):
        turns = tuple(Turn(int(s), tuple(w)) for s, w in self.turns)
        object.__setattr__(self, "turns", turns)
        for i, (spk, words) in enumerate(turns):
            if spk not in (1, 2):
                raise ValueError(f"turn {i}: speaker id must be 1 or 2, got {spk}")
            if not words:
                raise ValueError(f"turn {i}: empty token list")
            if i and turns[i - 1].speaker == spk:
                raise ValueError(f"turns {i - 1} and {i} share speaker {spk}")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, str | Sequence[str]]]) -> "TurnSequence":
        """Build from ``(speaker, "a b c")`` pairs, merging same-speaker
        neighbours."""
        merged: list[list] = []
        for spk, words in pairs:
            words = words.split() if isinstance(words, str) else list(words)
            if merged and merged[-1][0] == spk:
                merged[-1][1].extend(words)
            else:
                merged.append([spk, words])
        return cls(tuple(Turn(s, tuple(w)) for s, w in merged))

    def __len__(self) -> int:
        return len(self.turns)

    def __iter__(self):
        return iter(self.turns)

    @property
    def speakers(self) -> set[int]:
        return {t.speaker for t in self.turns}

    def words(self) -> list[str]:
        return [w for t in self.turns for w in t.words]

    def num_tokens(self) -> int:
        """Length of the interleaved token stream (markers included)."""
        return sum(len(t.words) + 1 for t in self.turns)

    def relabel(self) -> "TurnSequence":
        """Swap speaker ids 1 <-> 2."""
        return TurnSequence(tuple(Turn(3 - t.speaker, t.words) for t in self.turns))

    def __add__(self, other: "TurnSequence") -> "TurnSequence":
        return TurnSequence.from_pairs([*self.turns, *other.turns])


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[int, ...]
    speaker_of_token: tuple[int, ...]

    def __post_init__(self):
        if len(self.tokens) != len(self.speaker_of_token):
            raise ValueError("tokens and speaker_of_token differ in length")

    def __len__(self) -> int:
        return len(self.tokens)


class Vocab:
    """Closed word vocabulary; ids 0 and 1 are the ``[S1]``/``[S2]`` markers."""

    def __init__(self, words: Sequence[str]):
        words = list(words)
        if len(set(words)) != len(words):
            raise ValueError("duplicate words in vocabulary")
        for w in words:
            if w in MARKERS or not w or any(ch.isspace() for ch in w):
                raise ValueError(f"invalid vocabulary word {w!r}")
        self.items: tuple[str, ...] = (*MARKERS, *words)
        self._ids = {w: i for i, w in enumerate(self.items)}

    @classmethod
    def synthetic(cls, size: int = 64) -> "Vocab":
        """``size`` ids in total: the two markers plus ``w00``, ``w01``, ..."""
        return cls([f"w{i:02d}" for i in range(size - len(MARKERS))])

    def __len__(self) -> int:
        return len(self.items)

    def __contains__(self, word: str) -> bool:
        return word in self._ids

    def id(self, word: str) -> int:
        try:
            return self._ids[word]
        except KeyError:
            raise KeyError(f"out-of-vocabulary word {word!r}") from None

    def word(self, idx: int) -> str:
        return self.items[idx]

    @property
    def content_ids(self) -> range:
        return range(len(MARKERS), len(self.items))

    def marker_id(self, speaker: int) -> int:
        return speaker - 1


def normalize_text(text: str) -> str:
    return " ".join(text.split())


def consolidate_turns(utterances: Sequence[Utterance]) -> TurnSequence:
    """Sort by start time (stable), merge adjacent same-speaker utterances,
    and number speakers by first appearance."""
    if not utterances:
        raise ValueError("no utterances")
    utterances = [Utterance(*u) for u in utterances]
    keys = list(dict.fromkeys(u.speaker_key for u in utterances))
    if len(keys) > 2:
        raise ValueError(f"more than two speakers: {keys}")
    for u in utterances:
        if not (u.start_time >= 0 and u.start_time != float("inf")):
            raise ValueError(f"invalid start time {u.start_time!r}")
        if not normalize_text(u.text):
            raise ValueError(f"empty utterance from {u.speaker_key!r} at {u.start_time}")
    ordered = sorted(utterances, key=lambda u: u.start_time)
    ids: dict[str, int] = {}
    for u in ordered:
        ids.setdefault(u.speaker_key, len(ids) + 1)
    return TurnSequence.from_pairs((ids[u.speaker_key], normalize_text(u.text)) for u in ordered)


def interleave_tokens(turns: TurnSequence, vocab: Vocab) -> TokenSequence:
    tokens: list[int] = []
    speakers: list[int] = []
    for spk, words in turns:
        tokens.append(vocab.marker_id(spk))
        tokens.extend(vocab.id(w) for w in words)
        speakers.extend([spk] * (len(words) + 1))
    return TokenSequence(tuple(tokens), tuple(speakers))


def detokenize(tokens: TokenSequence, vocab: Vocab) -> str:
    return " ".join(vocab.word(i) for i in tokens.tokens)


def render(turns: TurnSequence) -> str:
    return " ".join(f"{MARKERS[spk - 1]} {' '.join(words)}" for spk, words in turns)


def parse_speaker_attributed_text(s: str) -> TurnSequence:
    """Inverse of :func:`render`.  Repeated markers for the same speaker
    merge into one turn; text before the first marker is an error."""
    pairs: list[tuple[int, list[str]]] = []
    for tok in s.split():
        if _TAG.match(tok):
            if tok not in MARKERS:
                raise ValueError(f"unknown speaker tag {tok}")
            pairs.append((MARKERS.index(tok) + 1, []))
        elif not pairs:
            raise ValueError(f"text {tok!r} precedes the first speaker tag")
        else:
            pairs[-1][1].append(tok)
    for spk, words in pairs:
        if not words:
            raise ValueError(f"{MARKERS[spk - 1]} tag has no words")
    return TurnSequence.from_pairs(pairs)


def per_speaker_concat(turns: TurnSequence) -> dict[int, list[str]]:
    out: dict[int, list[str]] = {}
    for spk, words in turns:
        out.setdefault(spk, []).extend(words)
    return out


# -- transcript file format -----------------------------------------------
def utterances_from_json(record: Mapping) -> list[Utterance]:
    return [Utterance(str(u["speaker"]), float(u["start"]), str(u["text"]))
            for u in record["utterances"]]


def read_transcripts(path) -> list[TurnSequence]:
    """One JSON dialogue per line: ``{"utterances": [{"speaker", "start", "text"}]}``."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(consolidate_turns(utterances_from_json(json.loads(line))))
    return out
