"""Zero-shot dialogue synthesis: token-ratio duration, Euler sampling with
time-dependent classifier-free guidance, and prompt assembly."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .features import FeatureMatrix, upsample_index
from .model import Model, estimate_vector_field, text_condition
from .text import TokenSequence, TurnSequence, Vocab, interleave_tokens


class DigitalSilenceWarning(UserWarning):
    """A prompt channel is exact zeros, which the model never saw in training."""


@dataclass
class Prompt:
    features: FeatureMatrix
    transcript: TurnSequence

    def __post_init__(self):
        if not self.transcript.turns:
            raise ValueError("prompt transcript is empty")


@dataclass(frozen=True)
class CfgSchedule:
    """Guidance scale linear in t from ``g0`` (t=0) to ``g1`` (t=1)."""

    g0: float = 2.0
    g1: float = 1.0

    def __post_init__(self):
        if self.g0 < 0 or self.g1 < 0:
            raise ValueError("guidance scales must be non-negative")

    def __call__(self, t: float) -> float:
        return self.g0 + (self.g1 - self.g0) * t

    @property
    def is_identity(self) -> bool:
        return self.g0 == 1.0 and self.g1 == 1.0


def estimate_duration(prompt_frames: int, prompt_tokens: int, target_tokens: int) -> int:
    if prompt_tokens < 1:
        raise ValueError("prompt has no tokens")
    if prompt_frames < 1 or target_tokens < 1:
        raise ValueError("frame and token counts must be positive")
    return max(1, math.floor(prompt_frames * target_tokens / prompt_tokens + 0.5))


def guided_vector_field(v_cond, v_uncond, g: float):
    """``v_uncond + g (v_cond - v_uncond)``, written so that g=1 returns
    ``v_cond`` bit for bit."""
    v_cond, v_uncond = np.asarray(v_cond), np.asarray(v_uncond)
    if v_cond.shape != v_uncond.shape:
        raise ValueError(f"shape mismatch: {v_cond.shape} vs {v_uncond.shape}")
    if g == 1.0:
        return v_cond
    return g * v_cond + (1.0 - g) * v_uncond


def euler_solve(x0: np.ndarray, steps: int, field: Callable[[np.ndarray, float], np.ndarray],
                pinned: np.ndarray | None = None, target: np.ndarray | None = None) -> np.ndarray:
    """Integrate ``dx/dt = field(x, t)`` from t=0 to 1 in ``steps`` uniform
    Euler steps.

    Rows where ``pinned`` is true follow the straight path from ``x0`` to
    ``target`` instead of the field, and so end exactly on ``target``.
    """
    if steps < 1:
        raise ValueError("need at least one step")
    x = np.array(x0, dtype=np.float64)
    h = 1.0 / steps
    for k in range(steps):
        t = k / steps
        x = x + h * field(x, t)
        if pinned is not None:
            t_next = (k + 1) / steps
            x[pinned] = (1.0 - t_next) * x0[pinned] + t_next * target[pinned]
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite state after Euler step {k + 1}")
    return x


# -- prompts ----------------------------------------------------------------------
def frame_speakers(transcript: TurnSequence, frames: int, vocab: Vocab | None = None) -> np.ndarray:
    """Speaker of every frame under average upsampling of the token stream."""
    spk = [s for s, words in transcript for _ in range(len(words) + 1)]
    return np.asarray(spk)[upsample_index(len(spk), frames)]


def build_pseudo_stereo_prompt(mono: Prompt, noise_bank: FeatureMatrix, offset: int = 0,
                               allow_digital_silence: bool = False) -> Prompt:
    """Two-channel prompt from a single-channel one.

    Each frame goes to the channel of its speaker; the other channel takes
    a contiguous slice of ``noise_bank``.  An all-zero slice is rejected
    unless ``allow_digital_silence`` is set, in which case a
    :class:`DigitalSilenceWarning` is emitted.
    """
    fm = mono.features
    if fm.channels != 1:
        raise ValueError("pseudo-stereo prompts are built from single-channel prompts")
    if noise_bank.dim != fm.dim:
        raise ValueError(f"noise bank dim {noise_bank.dim} != prompt dim {fm.dim}")
    if noise_bank.frames - offset < fm.frames:
        raise ValueError(f"noise bank has {noise_bank.frames - offset} frames after offset "
                         f"{offset}, prompt needs {fm.frames}")
    filler = noise_bank.channel(0)[offset:offset + fm.frames]
    if not filler.any():
        msg = "inactive channel would be digital silence (all zeros): out of distribution"
        if not allow_digital_silence:
            raise ValueError(msg)
        warnings.warn(msg, DigitalSilenceWarning, stacklevel=2)
    spk = frame_speakers(mono.transcript, fm.frames)[:, None]
    x = fm.values
    ch0 = np.where(spk == 1, x, filler)
    ch1 = np.where(spk == 2, x, filler)
    return Prompt(FeatureMatrix.stereo(ch0, ch1), mono.transcript)


def concat_prompts(prompts: Sequence[Prompt]) -> Prompt:
    channels = {p.features.channels for p in prompts}
    if len(channels) != 1:
        raise ValueError("cannot concatenate prompts with different channel counts")
    first = prompts[0].features
    values = np.concatenate([p.features.values for p in prompts], axis=0)
    transcript = prompts[0].transcript
    for p in prompts[1:]:
        transcript = transcript + p.transcript
    return Prompt(FeatureMatrix(values, first.dim, first.channels), transcript)


# -- synthesis ---------------------------------------------------------------------
def _concat_tokens(a: TokenSequence, b: TokenSequence) -> TokenSequence:
    return TokenSequence(a.tokens + b.tokens, a.speaker_of_token + b.speaker_of_token)


def synthesize_dialogue(model: Model, prompt: Prompt, target: TurnSequence, vocab: Vocab,
                        schedule: CfgSchedule = CfgSchedule(), steps: int = 16,
                        rng: np.random.Generator | int | None = 0,
                        speaker_embeddings: bool | None = None) -> FeatureMatrix:
    """Generate features for ``target`` continuing ``prompt``; only the new
    frames are returned."""
    return synthesize_batch(model, [prompt], [target], vocab, schedule, steps, rng,
                            speaker_embeddings)[0]


def synthesize_batch(model: Model, prompts: Sequence[Prompt], targets: Sequence[TurnSequence],
                     vocab: Vocab, schedule: CfgSchedule = CfgSchedule(), steps: int = 16,
                     rng: np.random.Generator | int | None = 0,
                     speaker_embeddings: bool | None = None) -> list[FeatureMatrix]:
    """Synthesise several dialogues; items sharing (tokens, frames) are
    integrated together.  Noise is drawn per item in input order, so the
    result for an item does not depend on how items were grouped."""
    rng = np.random.default_rng(rng)
    if len(prompts) != len(targets):
        raise ValueError("prompts and targets differ in length")
    D = model.config.feat_dim
    jobs = []
    for i, (prompt, target) in enumerate(zip(prompts, targets)):
        fm = prompt.features
        head = "mono" if fm.channels == 1 else "stereo"
        if head == "stereo" and not model.has_stereo:
            raise ValueError("two-channel prompt needs a model with stereo projections")
        if fm.dim != D:
            raise ValueError(f"prompt dim {fm.dim} != model dim {D}")
        p_tok = interleave_tokens(prompt.transcript, vocab)
        t_tok = interleave_tokens(target, vocab)
        gen = estimate_duration(fm.frames, len(p_tok), len(t_tok))
        if gen < 1:
            raise ValueError("duration estimate is zero")
        tokens = _concat_tokens(p_tok, t_tok)
        total = fm.frames + gen
        x0 = rng.standard_normal((total, fm.values.shape[1]))
        jobs.append((i, head, tokens, fm, total, x0))

    groups: dict[tuple, list] = {}
    for job in jobs:
        i, head, tokens, fm, total, _ = job
        groups.setdefault((head, len(tokens), total, fm.frames), []).append(job)
    out: list[FeatureMatrix | None] = [None] * len(jobs)
    for (head, _, total, n_prompt), group in groups.items():
        toks = np.array([g[2].tokens for g in group])
        spks = np.array([g[2].speaker_of_token for g in group])
        x0 = np.stack([g[5] for g in group])
        target = np.zeros_like(x0)
        for j, g in enumerate(group):
            target[j, :n_prompt] = g[3].values
        pinned = np.zeros(x0.shape[:2], dtype=bool)
        pinned[:, :n_prompt] = True
        x = _sample(model, toks, spks, x0, target, pinned, head, schedule, steps, speaker_embeddings)
        for j, g in enumerate(group):
            out[g[0]] = FeatureMatrix(x[j, n_prompt:], D, 1 if head == "mono" else 2)
    return out


def _sample(model, tokens, speakers, x0, prompt, pinned, head, schedule, steps, speaker_embeddings):
    B, T, _ = x0.shape
    guided = not schedule.is_identity
    reps = 2 if guided else 1
    z = text_condition(model, np.concatenate([tokens] * reps), np.concatenate([speakers] * reps),
                       T, speaker_embeddings)
    cond = np.where(pinned[..., None], prompt, 0.0)
    cond2 = np.concatenate([cond] * reps)
    keep = np.concatenate([np.ones(B), np.zeros(B)]) if guided else None

    def field(x, t):
        v = estimate_vector_field(model, np.concatenate([x] * reps), z, cond2,
                                  np.full(B * reps, t), head, keep=keep).data
        if not guided:
            return v
        return guided_vector_field(v[:B], v[B:], schedule(t))

    return euler_solve(x0, steps, field, pinned, prompt)
