"""Flow-matching, speaker-exclusive and total losses; the batched training
step; and the monologue -> dialogue -> stereo curriculum."""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np

from . import numerics as nx
from .features import FeatureMatrix, sample_prefix_mask
from .model import Model, ModelConfig, estimate_vector_field, init_model, init_stereo_from_mono, text_condition
from .numerics import Tensor
from .synthdata import Sample
from .text import Vocab, interleave_tokens

log = logging.getLogger(__name__)

STAGES = ("monologue_pretrain", "dialogue_finetune", "stereo_finetune")


@dataclass
class TrainingConfig:
    lam: float = 1.0               # weight of the speaker-exclusive loss
    quantile: float = 0.5          # energy quantile for the silence threshold
    cfg_dropout: float = 0.2
    lr: float = 0.2
    momentum: float = 0.0
    batch_size: int = 16
    stereo_alternation: int = 2    # every n-th stereo-stage batch is single-channel
    grad_clip: float = 0.0         # global-norm clip; 0 disables

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if not 0 < self.quantile < 1:
            raise ValueError("quantile must lie in (0, 1)")
        if not 0 <= self.cfg_dropout < 1:
            raise ValueError("cfg_dropout must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


# -- losses -------------------------------------------------------------------
def cfm_loss(v_pred, x0, x1, mask) -> Tensor:
    """Mean squared velocity error over masked entries.  ``mask`` is per
    frame (T,) or per entry; frame masks cover every feature column."""
    x0, x1 = np.asarray(x0, dtype=np.float64), np.asarray(x1, dtype=np.float64)
    v_pred = nx.as_tensor(v_pred)
    if v_pred.shape != x0.shape or x0.shape != x1.shape:
        raise ValueError(f"shape mismatch: v {v_pred.shape}, x0 {x0.shape}, x1 {x1.shape}")
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape == x0.shape[:-1]:
        mask = mask[..., None]
    if not mask.any():
        raise ValueError("mask selects no frames; the example carries no training signal")
    return nx.masked_mse(v_pred, x1 - x0, mask)


def frame_energy(f: FeatureMatrix, channel: int = 0) -> np.ndarray:
    """Mean feature value of each frame of ``channel``."""
    return f.channel(channel).mean(axis=1)


def adaptive_threshold(energies, q: float = 0.5) -> float:
    """Linear-interpolation quantile of the pooled frame energies."""
    e = np.asarray(energies, dtype=np.float64).ravel()
    if e.size == 0:
        raise ValueError("no frame energies")
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    return float(np.quantile(e, q))


def channel_energies(x: Tensor, dim: int) -> Tensor:
    """(..., T, 2*dim) -> (..., T, 2) per-channel frame means."""
    lead = x.shape[:-1]
    return nx.mean(nx.reshape(x, lead + (2, dim)), axis=-1)


def speaker_exclusive_loss(x_hat1, tau: float, dim: int | None = None) -> Tensor:
    """Frame-averaged ``(E0 - tau)(E1 - tau)`` over frames where both
    channels exceed ``tau``; ``tau`` and the indicator are constants.

    ``x_hat1`` is a stereo :class:`FeatureMatrix`, or a tensor shaped
    (T, 2D) / (B, T, 2D) (batch entries are averaged).
    """
    if isinstance(x_hat1, FeatureMatrix):
        if x_hat1.channels != 2:
            raise ValueError("speaker-exclusive loss needs two-channel features")
        dim = x_hat1.dim
        x_hat1 = Tensor(x_hat1.values)
    x_hat1 = nx.as_tensor(x_hat1)
    if dim is None or x_hat1.shape[-1] != 2 * dim:
        raise ValueError(f"speaker-exclusive loss needs two-channel features, got {x_hat1.shape}")
    e = channel_energies(x_hat1, dim)
    e0 = nx.take(e, [0], axis=-1)
    e1 = nx.take(e, [1], axis=-1)
    active = ((e0.data > tau) & (e1.data > tau)).astype(np.float64)
    prod = nx.mul(nx.mul(nx.sub(e0, tau), nx.sub(e1, tau)), active)
    return nx.mean(prod)


def total_loss(cfm, se, lam: float):
    if lam < 0:
        raise ValueError("lam must be non-negative")
    if isinstance(cfm, Tensor) or isinstance(se, Tensor):
        return nx.add(cfm, nx.mul(se, lam))
    return cfm + lam * se


# -- batching -------------------------------------------------------------------
@dataclass
class Example:
    tokens: np.ndarray
    speakers: np.ndarray
    x1: np.ndarray
    channels: int

    @property
    def key(self) -> tuple[int, int, int]:
        return len(self.tokens), self.x1.shape[0], self.channels


def prepare(samples: Sequence[Sample], vocab: Vocab) -> list[Example]:
    out = []
    for s in samples:
        ts = interleave_tokens(s.script, vocab)
        out.append(Example(np.array(ts.tokens), np.array(ts.speaker_of_token),
                           s.features.values, s.features.channels))
    return out


@dataclass
class Batch:
    tokens: np.ndarray     # (B, N)
    speakers: np.ndarray   # (B, N)
    x1: np.ndarray         # (B, T, C*D)
    channels: int

    @classmethod
    def stack(cls, examples: Sequence[Example]) -> "Batch":
        keys = {e.key for e in examples}
        if len(keys) != 1:
            raise ValueError(f"batch mixes shapes {sorted(keys)}")
        return cls(np.stack([e.tokens for e in examples]), np.stack([e.speakers for e in examples]),
                   np.stack([e.x1 for e in examples]), examples[0].channels)


class BucketSampler:
    """Draws batches of equal (tokens, frames, channels) shape; buckets are
    chosen with probability proportional to their size."""

    def __init__(self, examples: Sequence[Example], batch_size: int):
        if not examples:
            raise ValueError("empty corpus")
        self.examples = list(examples)
        self.batch_size = batch_size
        buckets: dict[tuple, list[int]] = {}
        for i, e in enumerate(self.examples):
            buckets.setdefault(e.key, []).append(i)
        self.buckets = [np.array(v) for _, v in sorted(buckets.items())]
        sizes = np.array([len(b) for b in self.buckets], dtype=np.float64)
        self.probs = sizes / sizes.sum()

    def draw(self, rng: np.random.Generator) -> Batch:
        bucket = self.buckets[rng.choice(len(self.buckets), p=self.probs)]
        n = min(self.batch_size, len(bucket))
        idx = rng.choice(bucket, size=n, replace=False)
        return Batch.stack([self.examples[i] for i in idx])


# -- one step -----------------------------------------------------------------
@dataclass
class StepRecord:
    cfm: float
    se: float
    total: float
    channels: int


@dataclass
class StepInputs:
    """Everything random about one step, drawn up front so that a step can
    be replayed (finite differences, comparisons between inits)."""

    t: np.ndarray
    x0: np.ndarray
    mask: np.ndarray
    keep: np.ndarray

    @classmethod
    def draw(cls, batch: Batch, cfg: TrainingConfig, rng: np.random.Generator) -> "StepInputs":
        B, T, W = batch.x1.shape
        t = rng.random(B)
        x0 = rng.standard_normal((B, T, W))
        mask = np.stack([sample_prefix_mask(T, rng) for _ in range(B)])
        keep = (rng.random(B) >= cfg.cfg_dropout).astype(np.float64)
        return cls(t, x0, mask, keep)


def batch_losses(model: Model, batch: Batch, inputs: StepInputs, lam: float, quantile: float,
                 speaker_embeddings: bool | None = None) -> tuple[Tensor, Tensor | None, Tensor]:
    """(cfm, se, total) for one batch; ``se`` is None for single-channel
    batches."""
    B, T, W = batch.x1.shape
    D = model.config.feat_dim
    head = "mono" if batch.channels == 1 else "stereo"
    t = inputs.t
    tb = t[:, None, None]
    x1 = batch.x1
    x_t = (1.0 - tb) * inputs.x0 + tb * x1
    cond = (1.0 - inputs.mask)[..., None] * x1
    z = text_condition(model, batch.tokens, batch.speakers, T, speaker_embeddings)
    v = estimate_vector_field(model, x_t, z, cond, t, head, keep=inputs.keep)

    # per-example masked mean, then mean over the batch
    counts = inputs.mask.sum(axis=1) * W
    if (counts == 0).any():
        raise ValueError("an example has an empty mask")
    weights = inputs.mask[..., None] / (counts[:, None, None] * B)
    cfm = nx.sum(nx.mul(nx.square(nx.sub(v, x1 - inputs.x0)), weights))
    if batch.channels == 1:
        return cfm, None, cfm
    e_gt = x1.reshape(B, T, 2, D).mean(axis=-1)
    tau = adaptive_threshold(e_gt, quantile)
    x_hat = nx.add(x_t, nx.mul(v, 1.0 - tb))
    se = speaker_exclusive_loss(x_hat, tau, D)
    return cfm, se, total_loss(cfm, se, lam)


def _clip(params: Sequence[Tensor], max_norm: float) -> None:
    norm = np.sqrt(sum(float((p.grad ** 2).sum()) for p in params if p.grad is not None))
    if norm > max_norm:
        for p in params:
            if p.grad is not None:
                p.grad *= max_norm / norm


class Trainer:
    """Owns optimiser state for one model."""

    def __init__(self, model: Model, cfg: TrainingConfig, speaker_embeddings: bool | None = None):
        self.model = model
        self.cfg = cfg
        self.speaker_embeddings = speaker_embeddings
        self._velocity: dict[str, np.ndarray] = {}

    def step(self, batch: Batch, rng: np.random.Generator,
             inputs: StepInputs | None = None) -> StepRecord:
        cfg = self.cfg
        inputs = inputs or StepInputs.draw(batch, cfg, rng)
        cfm, se, total = batch_losses(self.model, batch, inputs, cfg.lam, cfg.quantile,
                                      self.speaker_embeddings)
        value = total.item()
        if not np.isfinite(value):
            raise FloatingPointError(
                f"non-finite loss (cfm={cfm.item()}, se={None if se is None else se.item()}, "
                f"t={inputs.t.tolist()})")
        params = list(self.model.params.values())
        for p in params:
            p.grad = None
        total.backward()
        if cfg.grad_clip > 0:
            _clip(params, cfg.grad_clip)
        for name, p in self.model.params.items():
            if p.grad is None:
                continue
            if cfg.momentum:
                buf = self._velocity.get(name)
                buf = p.grad if buf is None else cfg.momentum * buf + p.grad
                self._velocity[name] = buf
                p.data -= cfg.lr * buf
            else:
                p.data -= cfg.lr * p.grad
            p.grad = None
        return StepRecord(cfm.item(), 0.0 if se is None else se.item(), value, batch.channels)


def training_step(model: Model, batch: Batch, cfg: TrainingConfig,
                  rng: np.random.Generator) -> StepRecord:
    """One plain SGD update of ``model`` in place."""
    return Trainer(model, cfg).step(batch, rng)


# -- curriculum ------------------------------------------------------------------
@dataclass
class Stage:
    name: str
    corpus: Sequence[Sample]
    steps: int
    regularization_corpus: Sequence[Sample] | None = None  # stereo stage only

    def __post_init__(self):
        if self.name not in STAGES:
            raise ValueError(f"unknown stage {self.name!r}; expected one of {STAGES}")


@dataclass
class LossRecord:
    step: int
    stage: str
    cfm: float
    se: float
    total: float


@dataclass
class CurriculumResult:
    checkpoints: list[tuple[str, Model]] = field(default_factory=list)
    log: list[LossRecord] = field(default_factory=list)

    @property
    def final(self) -> Model:
        return self.checkpoints[-1][1]


def batch_schedule(steps: int, period: int) -> list[str]:
    """Channel layout of each stereo-stage batch: every ``period``-th batch
    is single-channel ('M'), the rest two-channel ('S')."""
    if period <= 0:
        return ["S"] * steps
    return ["M" if i % period == period - 1 else "S" for i in range(steps)]


def run_curriculum(stages: Sequence[Stage], cfg: TrainingConfig, vocab: Vocab,
                   model_config: ModelConfig | None = None, seed: int = 0,
                   init: Model | None = None, speaker_embeddings: bool | None = None,
                   callback=None) -> CurriculumResult:
    """Run the stages in order, each resuming from the previous checkpoint.

    ``init`` supplies an upstream checkpoint (e.g. to run only the stereo
    stage).  ``callback(stage, step, record)`` is called after every step.
    """
    names = [s.name for s in stages]
    for a, b in zip(names, names[1:]):
        if STAGES.index(a) >= STAGES.index(b):
            raise ValueError(f"stages out of order: {names}")
    if "monologue_pretrain" not in names and init is None:
        warnings.warn("monologue pre-training skipped: dialogue stage starts from random init",
                      stacklevel=2)
    rng = np.random.default_rng(seed)
    model = init
    result = CurriculumResult()
    step_no = 0
    for stage in stages:
        if stage.name == "stereo_finetune":
            if model is None:
                raise ValueError("stereo_finetune needs an upstream single-channel checkpoint")
            model = model if model.has_stereo else init_stereo_from_mono(model)
        elif model is None:
            model = init_model(model_config, rng)
        else:
            model = model.copy()
        trainer = Trainer(model, cfg, speaker_embeddings)
        stereo = stage.name == "stereo_finetune"
        sampler = BucketSampler(prepare(stage.corpus, vocab), cfg.batch_size)
        reg = None
        if stereo and stage.regularization_corpus and cfg.stereo_alternation > 0:
            reg = BucketSampler(prepare(stage.regularization_corpus, vocab), cfg.batch_size)
        layout = batch_schedule(stage.steps, cfg.stereo_alternation if reg else 0)
        log.info("stage %s: %d steps on %d samples", stage.name, stage.steps, len(stage.corpus))
        for i in range(stage.steps):
            src = reg if layout[i] == "M" and stereo else sampler
            rec = trainer.step(src.draw(rng), rng)
            step_no += 1
            result.log.append(LossRecord(step_no, stage.name, rec.cfm, rec.se, rec.total))
            if callback is not None:
                callback(stage, i, rec)
        result.checkpoints.append((stage.name, model))
    return result


def write_loss_csv(path, records: Iterable[LossRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "stage", "cfm", "se", "total"])
        for r in records:
            w.writerow([r.step, r.stage, repr(r.cfm), repr(r.se), repr(r.total)])
