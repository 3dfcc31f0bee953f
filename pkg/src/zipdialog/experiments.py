"""Desk-scale experiment protocols shared by the acceptance tests and the
demo scripts: corpus bundles, training arms and held-out evaluation."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .features import FeatureMatrix
from .inference import (CfgSchedule, DigitalSilenceWarning, Prompt, build_pseudo_stereo_prompt,
                        synthesize_batch)
from .metrics import corpus_summary, cpwer
from .model import Model, ModelConfig, init_stereo_from_mono
from .synthdata import (EvalItem, Sample, SyntheticDomain, gen_corpus, gen_eval_set,
                        oracle_decode, overlap_fraction)
from .training import (BucketSampler, Stage, StepInputs, TrainingConfig, adaptive_threshold,
                       batch_losses, prepare, run_curriculum)


@dataclass(frozen=True)
class Budget:
    """Corpus sizes and step counts of one desk-scale run.

    Ablation arms all run ``dialogue_steps``; the intelligibility run keeps
    fine-tuning the curriculum arm up to ``full_dialogue_steps``.
    """

    n_monologues: int = 2000
    n_dialogues: int = 1000
    n_stereo: int = 1000
    n_eval: int = 100
    monologue_steps: int = 10000
    dialogue_steps: int = 2000
    full_dialogue_steps: int = 4000
    stereo_steps: int = 1500
    lr: float = 0.2

    def training_config(self, **overrides) -> TrainingConfig:
        return TrainingConfig(**{"lr": self.lr, **overrides})


@dataclass
class DeskData:
    domain: SyntheticDomain
    monologues: list[Sample]
    dialogues: list[Sample]
    stereo: list[Sample]
    eval_mono: list[EvalItem]
    eval_stereo: list[EvalItem]

    @classmethod
    def generate(cls, budget: Budget = Budget(), seed: int = 0) -> "DeskData":
        """Training corpora and disjoint held-out sets from independent
        streams of one seed."""
        domain = SyntheticDomain.create(seed)
        streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(5)]
        return cls(domain,
                   gen_corpus(domain, "monologue", budget.n_monologues, streams[0]),
                   gen_corpus(domain, "dialogue_mono", budget.n_dialogues, streams[1]),
                   gen_corpus(domain, "dialogue_stereo", budget.n_stereo, streams[2]),
                   gen_eval_set(domain, budget.n_eval, streams[3]),
                   gen_eval_set(domain, budget.n_eval, streams[4], stereo=True))


# -- training arms ------------------------------------------------------------------
def train_stages(data: DeskData, stages: list[tuple[str, int]], cfg: TrainingConfig,
                 seed: int = 0, init: Model | None = None, model_config: ModelConfig | None = None,
                 speaker_embeddings: bool | None = None) -> Model:
    corpora = {"monologue_pretrain": data.monologues, "dialogue_finetune": data.dialogues,
               "stereo_finetune": data.stereo}
    built = [Stage(name, corpora[name], steps,
                   data.dialogues if name == "stereo_finetune" else None)
             for name, steps in stages]
    with warnings.catch_warnings():
        # the from-scratch ablation skips pre-training on purpose
        warnings.filterwarnings("ignore", message="monologue pre-training skipped")
        res = run_curriculum(built, cfg, data.domain.vocab, model_config, seed, init,
                             speaker_embeddings)
    return res.final


# -- evaluation ---------------------------------------------------------------------
def _score(items: list[EvalItem], outputs: list[FeatureMatrix], domain: SyntheticDomain) -> dict:
    reports = [cpwer(it.target.script, oracle_decode(out, domain))[1]
               for it, out in zip(items, outputs)]
    return corpus_summary(reports)


def oracle_floor(items: list[EvalItem], domain: SyntheticDomain) -> float:
    """Mean oracle WER on the ground-truth target features."""
    return _score(items, [it.target.features for it in items], domain)["mean_wer"]


def intelligibility(model: Model, data: DeskData, seed: int = 0,
                    schedule: CfgSchedule = CfgSchedule(), steps: int = 16,
                    speaker_embeddings: bool | None = None) -> dict:
    """Mean WER / cpWER / gap of single-channel synthesis on the held-out set."""
    items = data.eval_mono
    prompts = [Prompt(it.prompt.features, it.prompt.script) for it in items]
    outs = synthesize_batch(model, prompts, [it.target.script for it in items], data.domain.vocab,
                            schedule, steps, seed, speaker_embeddings)
    return _score(items, outs, data.domain)


def pseudo_stereo_intelligibility(model: Model, data: DeskData, filler: str, seed: int = 0) -> dict:
    """Stereo synthesis from single-channel prompts whose inactive channel
    is background noise (``filler="noise"``) or exact zeros (``"zeros"``)."""
    items = data.eval_mono
    rng = np.random.default_rng(seed)
    prompts = []
    for it in items:
        mono = Prompt(it.prompt.features, it.prompt.script)
        T = mono.features.frames
        if filler == "noise":
            bank = data.domain.noise_bank(rng, T)
            prompts.append(build_pseudo_stereo_prompt(mono, bank))
        elif filler == "zeros":
            bank = FeatureMatrix(np.zeros((T, data.domain.dim)), data.domain.dim)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DigitalSilenceWarning)
                prompts.append(build_pseudo_stereo_prompt(mono, bank, allow_digital_silence=True))
        else:
            raise ValueError(f"unknown filler {filler!r}")
    outs = synthesize_batch(model, prompts, [it.target.script for it in items], data.domain.vocab,
                            rng=seed)
    return _score(items, outs, data.domain)


def training_tau(data: DeskData, q: float = 0.5) -> float:
    """Energy quantile over every frame and channel of the stereo training set."""
    e = [s.features.values.reshape(s.features.frames, 2, -1).mean(axis=-1) for s in data.stereo]
    return adaptive_threshold(np.concatenate(e), q)


def stereo_overlap(model: Model, data: DeskData, tau: float, seed: int = 0) -> float:
    """Mean overlap fraction of two-channel synthesis on the held-out stereo prompts."""
    items = data.eval_stereo
    prompts = [Prompt(it.prompt.features, it.prompt.script) for it in items]
    outs = synthesize_batch(model, prompts, [it.target.script for it in items], data.domain.vocab,
                            rng=seed)
    return float(np.mean([overlap_fraction(o, tau) for o in outs]))


def initial_stereo_loss(mono: Model, data: DeskData, cfg: TrainingConfig, seed: int,
                        random_projections: bool, n_batches: int = 8) -> float:
    """Mean total loss of the first ``n_batches`` stereo batches right after
    stereo initialisation.  Batches and step noise depend only on ``seed``,
    so both initialisations see identical inputs."""
    model = init_stereo_from_mono(mono, random_projections=random_projections, seed=seed + 1000)
    rng = np.random.default_rng(seed)
    sampler = BucketSampler(prepare(data.stereo, data.domain.vocab), cfg.batch_size)
    totals = []
    for _ in range(n_batches):
        batch = sampler.draw(rng)
        inputs = StepInputs.draw(batch, cfg, rng)
        totals.append(batch_losses(model, batch, inputs, cfg.lam, cfg.quantile)[2].item())
    return float(np.mean(totals))

