"""Synthetic dialogue-speech domain with an exact oracle decoder.

Features live in ``D`` dimensions split into three orthogonal parts: the
all-ones direction carries loudness (an active frame has mean value ``c``),
a small subspace carries speaker timbre, and the rest carries token
identity.  Every token, speaker markers included, lasts exactly ``L``
frames; a marker renders as ``L`` frames of background noise, so the
turn-initial pause is where the ``[S1]``/``[S2]`` symbol sits and average
upsampling lines up with the audio.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .features import FeatureMatrix, read_fmx, write_fmx
from .text import Turn, TurnSequence, Vocab, parse_speaker_attributed_text, render

CorpusKind = Literal["monologue", "dialogue_mono", "dialogue_stereo"]
KINDS: tuple[str, ...] = ("monologue", "dialogue_mono", "dialogue_stereo")


@dataclass(frozen=True)
class Recipe:
    template_gain: float = 0.8      # alpha
    signature_gain: float = 0.5     # beta
    offset: float = 1.0             # c, mean feature value of an active frame
    noise_std: float = 0.05         # sigma, on active frames
    silence_std: float = 0.05       # nu, zero-mean background noise
    token_frames: int = 4           # L
    overlap_prob: float = 0.05      # per-turn chance of a backchannel on the other channel

    @property
    def activity_threshold(self) -> float:
        """Energy midway between background (0) and active speech (c)."""
        return 0.5 * self.offset


@dataclass(frozen=True)
class Shape:
    """Length distribution of generated scripts."""

    mono_words: tuple[int, int] = (3, 8)
    dialogue_turns: tuple[int, int] = (2, 4)
    turn_words: tuple[int, int] = (1, 3)
    prompt_turn_words: tuple[int, int] = (2, 3)


@dataclass
class Sample:
    script: TurnSequence
    features: FeatureMatrix
    speakers: tuple[int, ...]  # signature index for S1 (and S2)


def _unit_vectors(rng, basis: np.ndarray, n: int, max_cos: float, tries: int = 200_000):
    out: list[np.ndarray] = []
    for _ in range(tries):
        v = basis @ rng.standard_normal(basis.shape[1])
        v /= np.linalg.norm(v)
        if all(abs(v @ u) < max_cos for u in out):
            out.append(v)
            if len(out) == n:
                return np.stack(out)
    raise RuntimeError(f"could not place {n} vectors with |cos| < {max_cos}")


@dataclass
class SyntheticDomain:
    vocab: Vocab
    templates: np.ndarray   # V x D, zero rows for the markers
    signatures: np.ndarray  # S x D
    recipe: Recipe = field(default_factory=Recipe)
    shape: Shape = field(default_factory=Shape)

    @classmethod
    def create(cls, seed: int = 0, dim: int = 16, vocab_size: int = 64, n_speakers: int = 4,
               speaker_dims: int = 4, recipe: Recipe | None = None,
               shape: Shape | None = None) -> "SyntheticDomain":
        rng = np.random.default_rng(seed)
        vocab = Vocab.synthetic(vocab_size)
        # orthonormal basis whose first column is the loudness direction
        a = np.column_stack([np.ones(dim), rng.standard_normal((dim, dim - 1))])
        q, _ = np.linalg.qr(a)
        spk_basis = q[:, 1:1 + speaker_dims]
        tok_basis = q[:, 1 + speaker_dims:]
        templates = np.zeros((vocab_size, dim))
        templates[len(vocab) - len(vocab.content_ids):] = _unit_vectors(
            rng, tok_basis, len(vocab.content_ids), 0.7)
        signatures = _unit_vectors(rng, spk_basis, n_speakers, 0.5)
        return cls(vocab, templates, signatures, recipe or Recipe(), shape or Shape())

    @property
    def dim(self) -> int:
        return self.templates.shape[1]

    @property
    def n_speakers(self) -> int:
        return self.signatures.shape[0]

    # -- scripts ------------------------------------------------------------
    def random_words(self, rng, n: int) -> tuple[str, ...]:
        ids = rng.choice(np.asarray(self.vocab.content_ids), size=n)
        return tuple(self.vocab.word(int(i)) for i in ids)

    def random_script(self, rng, kind: str, first_speaker: int = 1) -> TurnSequence:
        sh = self.shape
        if kind == "monologue":
            return TurnSequence((Turn(1, self.random_words(rng, rng.integers(*sh.mono_words, endpoint=True))),))
        n_turns = int(rng.integers(*sh.dialogue_turns, endpoint=True))
        turns = []
        spk = first_speaker
        for _ in range(n_turns):
            turns.append(Turn(spk, self.random_words(rng, rng.integers(*sh.turn_words, endpoint=True))))
            spk = 3 - spk
        return TurnSequence(tuple(turns))

    # -- rendering ----------------------------------------------------------
    def active_frames(self, rng, word: str, signature: int, n: int) -> np.ndarray:
        r = self.recipe
        mean = (r.offset + r.template_gain * self.templates[self.vocab.id(word)]
                + r.signature_gain * self.signatures[signature])
        return mean + r.noise_std * rng.standard_normal((n, self.dim))

    def background(self, rng, n: int) -> np.ndarray:
        return self.recipe.silence_std * rng.standard_normal((n, self.dim))

    def render(self, rng, script: TurnSequence, speakers: Sequence[int],
               stereo: bool = False) -> FeatureMatrix:
        """Features for ``script``; ``speakers[k-1]`` is the signature of S``k``."""
        r = self.recipe
        L = r.token_frames
        n_frames = L * script.num_tokens()
        chans = [self.background(rng, n_frames) for _ in range(2 if stereo else 1)]
        pos = 0
        for spk, words in script:
            pos += L  # marker: background only
            ch = chans[spk - 1] if stereo else chans[0]
            for w in words:
                ch[pos:pos + L] = self.active_frames(rng, w, speakers[spk - 1], L)
                pos += L
            if stereo and len(speakers) > 1 and rng.random() < r.overlap_prob:
                # backchannel from the listener over one of the speaker's words
                k = int(rng.integers(len(words)))
                at = pos - L * (len(words) - k)
                other = 2 - spk
                chans[other][at:at + L] = self.active_frames(
                    rng, self.random_words(rng, 1)[0], speakers[other], L)
        if stereo:
            return FeatureMatrix.stereo(*chans)
        return FeatureMatrix(chans[0], self.dim, 1)

    def sample(self, rng, kind: str, script: TurnSequence | None = None,
               speakers: Sequence[int] | None = None) -> Sample:
        if kind not in KINDS:
            raise ValueError(f"unknown corpus kind {kind!r}")
        script = script or self.random_script(rng, kind)
        if speakers is None:
            n = 1 if kind == "monologue" else 2
            speakers = tuple(int(s) for s in rng.choice(self.n_speakers, size=n, replace=False))
        return Sample(script, self.render(rng, script, speakers, kind == "dialogue_stereo"),
                      tuple(speakers))

    def noise_bank(self, rng, frames: int) -> FeatureMatrix:
        """Pre-recorded background noise (single channel)."""
        return FeatureMatrix(self.background(rng, frames), self.dim, 1)


def gen_corpus(domain: SyntheticDomain, kind: str, n: int, rng) -> list[Sample]:
    return [domain.sample(rng, kind) for _ in range(n)]


@dataclass
class EvalItem:
    """A two-turn prompt (S1 then S2) and a target dialogue by the same pair."""

    prompt: Sample
    target: Sample


def gen_eval_set(domain: SyntheticDomain, n: int, rng, stereo: bool = False) -> list[EvalItem]:
    kind = "dialogue_stereo" if stereo else "dialogue_mono"
    sh = domain.shape
    items = []
    for _ in range(n):
        speakers = tuple(int(s) for s in rng.choice(domain.n_speakers, size=2, replace=False))
        prompt_script = TurnSequence(tuple(
            Turn(k, domain.random_words(rng, rng.integers(*sh.prompt_turn_words, endpoint=True)))
            for k in (1, 2)))
        prompt = domain.sample(rng, kind, prompt_script, speakers)
        target = domain.sample(rng, kind, domain.random_script(rng, kind), speakers)
        items.append(EvalItem(prompt, target))
    return items


# -- oracle decoder -----------------------------------------------------------
def frame_energy(values: np.ndarray, dim: int, channel: int = 0) -> np.ndarray:
    """Mean feature value of every frame of one channel."""
    return values[:, channel * dim:(channel + 1) * dim].mean(axis=1)


def _segments(active: np.ndarray) -> list[tuple[int, int]]:
    edges = np.flatnonzero(np.diff(np.concatenate([[0], active.astype(int), [0]])))
    return list(zip(edges[::2], edges[1::2]))


def oracle_decode(features: FeatureMatrix, domain: SyntheticDomain) -> TurnSequence:
    """Speaker-attributed transcript of synthetic features.

    Stereo input is mixed down first.  Active runs are split into windows of
    about ``L`` frames; each window's token is the best-correlated template
    and its speaker the best-matching signature of the residual.  Only the
    two most frequent signatures are kept (a two-party diarisation), and
    they are numbered by first appearance.
    """
    r = domain.recipe
    fm = features.mixdown()
    x = fm.values
    energy = x.mean(axis=1)
    content = np.asarray(domain.vocab.content_ids)
    U = domain.templates[content]
    windows = []
    for a, b in _segments(energy > r.activity_threshold):
        n = max(1, int(round((b - a) / r.token_frames)))
        for idx in np.array_split(np.arange(a, b), n):
            windows.append(x[idx].mean(axis=0) - r.offset)
    if not windows:
        return TurnSequence()
    W = np.stack(windows)
    tok = content[np.argmax(W @ U.T, axis=1)]
    resid = W - r.template_gain * domain.templates[tok]
    scores = resid @ domain.signatures.T
    raw = np.argmax(scores, axis=1)
    counts = np.bincount(raw, minlength=domain.n_speakers)
    keep = sorted(np.argsort(-counts, kind="stable")[:2])
    sig = np.asarray(keep)[np.argmax(scores[:, keep], axis=1)]
    ids: dict[int, int] = {}
    pairs = []
    for s, t in zip(sig, tok):
        ids.setdefault(int(s), len(ids) + 1)
        pairs.append((ids[int(s)], [domain.vocab.word(int(t))]))
    return TurnSequence.from_pairs(pairs)


def overlap_fraction(features: FeatureMatrix, tau: float) -> float:
    """Fraction of frames where both channels' energies exceed ``tau``."""
    if features.channels != 2:
        raise ValueError("overlap_fraction needs two-channel features")
    e0 = frame_energy(features.values, features.dim, 0)
    e1 = frame_energy(features.values, features.dim, 1)
    return float(np.mean((e0 > tau) & (e1 > tau)))


# -- corpus manifests ---------------------------------------------------------
def write_corpus(samples: Sequence[Sample], out_dir) -> Path:
    """Write FMX1 feature files plus ``manifest.jsonl``; returns the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8") as fh:
        for i, s in enumerate(samples):
            name = f"{i:06d}.fmx"
            write_fmx(out_dir / name, s.features)
            fh.write(json.dumps({"script": render(s.script), "features": name,
                                 "speakers": list(s.speakers)}) + "\n")
    return manifest


def read_corpus(manifest) -> list[Sample]:
    manifest = Path(manifest)
    out = []
    with open(manifest, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            out.append(Sample(parse_speaker_attributed_text(rec["script"]),
                              read_fmx(manifest.parent / rec["features"]),
                              tuple(rec.get("speakers", ()))))
    return out
