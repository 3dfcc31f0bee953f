"""Command-line entry point: ``zipdialog gen-data|train|synth|eval|filter``.

Exit codes: 0 success, 2 validation error (bad arguments, config or
files), 3 numeric failure during training or sampling.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .datapipe import FilterRuleSet, filter_jsonl
from .features import FeatureMatrix, read_fmx, write_fmx
from .inference import (CfgSchedule, Prompt, build_pseudo_stereo_prompt, concat_prompts,
                        synthesize_dialogue)
from .metrics import corpus_summary, cpwer
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .synthdata import KINDS, SyntheticDomain, gen_corpus, oracle_decode, read_corpus, write_corpus
from .text import Vocab, parse_speaker_attributed_text
from .training import Stage, TrainingConfig, run_curriculum, write_loss_csv

log = logging.getLogger("zipdialog")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


# -- run config -------------------------------------------------------------------
@dataclass
class RunConfig:
    """Flat ``key = value`` run description.  Model, training and guidance
    settings use ``model.``, ``train.`` and ``cfg.`` prefixes."""

    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainingConfig = field(default_factory=TrainingConfig)
    cfg: CfgSchedule = field(default_factory=CfgSchedule)
    seed: int = 0
    domain_seed: int = 0
    monologue_corpus: str = ""
    dialogue_corpus: str = ""
    stereo_corpus: str = ""
    monologue_steps: int = 10000
    dialogue_steps: int = 4000
    stereo_steps: int = 1500

    _SECTIONS = ("model", "train", "cfg")

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        flat: dict[str, str] = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {n}: expected key = value, got {line!r}")
            k, v = (s.strip() for s in line.split("=", 1))
            flat[k] = v
        return cls.from_flat(flat)

    @classmethod
    def from_flat(cls, flat: dict[str, str]) -> "RunConfig":
        base = cls()
        sections: dict[str, dict] = {s: {} for s in cls._SECTIONS}
        top: dict = {}
        for key, raw in flat.items():
            sec, _, name = key.rpartition(".")
            if sec:
                if sec not in sections:
                    raise ValueError(f"unknown config key {key!r}")
                sub = getattr(base, sec)
                known = {f.name: f for f in fields(sub)}
                if name not in known:
                    raise ValueError(f"unknown config key {key!r}")
                sections[sec][name] = _coerce(raw, getattr(sub, name), key)
            else:
                known = {f.name for f in fields(cls)} - set(cls._SECTIONS)
                if name not in known:
                    raise ValueError(f"unknown config key {key!r}")
                top[name] = _coerce(raw, getattr(base, name), key)
        return cls(model=ModelConfig(**sections["model"]),
                   train=TrainingConfig(**sections["train"]),
                   cfg=CfgSchedule(**sections["cfg"]), **top)

    def to_flat(self) -> dict[str, object]:
        out: dict[str, object] = {}
        for sec in self._SECTIONS:
            for k, v in asdict(getattr(self, sec)).items():
                out[f"{sec}.{k}"] = v
        for f in fields(self):
            if f.name not in self._SECTIONS:
                out[f.name] = getattr(self, f.name)
        return out

    def render(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_flat().items())


def _coerce(raw: str, default, key: str):
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError
            return raw.lower() in ("true", "1")
        return type(default)(raw)
    except ValueError:
        raise ValueError(f"config key {key!r}: cannot parse {raw!r} as "
                         f"{type(default).__name__}") from None


# -- helpers ------------------------------------------------------------------------
def _prepare_out_dir(path: Path, force: bool) -> None:
    if path.exists() and not path.is_dir():
        raise ValueError(f"{path} exists and is not a directory")
    if path.is_dir() and any(path.iterdir()) and not force:
        raise ValueError(f"output directory {path} is not empty (use --force)")
    path.mkdir(parents=True, exist_ok=True)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- commands ---------------------------------------------------------------------
def cmd_gen_data(args) -> int:
    out = Path(args.out)
    _prepare_out_dir(out, args.force)
    if args.n < 0:
        raise ValueError("n must be non-negative")
    domain = SyntheticDomain.create(args.domain_seed)
    samples = gen_corpus(domain, args.kind, args.n, np.random.default_rng(args.seed))
    manifest = write_corpus(samples, out)
    _write_json(out / "run.json", {"command": "gen-data", "kind": args.kind, "n": args.n,
                                   "seed": args.seed, "domain_seed": args.domain_seed})
    log.info("wrote %d %s samples to %s", args.n, args.kind, manifest)
    return EXIT_OK


def _load_run_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return RunConfig.parse(Path(path).read_text(encoding="utf-8"))


def cmd_train(args) -> int:
    rc = _load_run_config(args.config)
    if args.seed is not None:
        rc.seed = args.seed
    if args.no_se_loss:
        rc.train = TrainingConfig(**{**asdict(rc.train), "lam": 0.0})
    out = Path(args.out)
    _prepare_out_dir(out, args.force)
    (out / "resolved_config.txt").write_text(rc.render(), encoding="utf-8")
    log.info("resolved config:\n%s", rc.render())

    def corpus(p: str, what: str):
        if not p:
            raise ValueError(f"config has no {what}")
        return read_corpus(Path(p) / "manifest.jsonl" if Path(p).is_dir() else p)

    dialogue = corpus(rc.dialogue_corpus, "dialogue_corpus")
    stages = []
    if not args.no_curriculum:
        stages.append(Stage("monologue_pretrain", corpus(rc.monologue_corpus, "monologue_corpus"),
                            rc.monologue_steps))
    stages.append(Stage("dialogue_finetune", dialogue, rc.dialogue_steps))
    if rc.stereo_corpus:
        stages.append(Stage("stereo_finetune", corpus(rc.stereo_corpus, "stereo_corpus"),
                            rc.stereo_steps, regularization_corpus=dialogue))
    vocab = Vocab.synthetic(rc.model.vocab_size)
    result = run_curriculum(stages, rc.train, vocab, rc.model, rc.seed)
    for name, model in result.checkpoints:
        save_checkpoint(out / f"{name}.zdck", model, {"stage": name, "config": rc.to_flat()})
    write_loss_csv(out / "loss.csv", result.log)
    log.info("wrote %d checkpoints to %s", len(result.checkpoints), out)
    return EXIT_OK


def _load_prompt(fmx: str, text: str) -> Prompt:
    return Prompt(read_fmx(fmx), parse_speaker_attributed_text(text))


def cmd_synth(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    if len(args.prompt) != len(args.prompt_text):
        raise ValueError("give one --prompt-text per --prompt")
    prompts = [_load_prompt(p, t) for p, t in zip(args.prompt, args.prompt_text)]
    channels = {p.features.channels for p in prompts}
    if model.has_stereo and channels == {1}:
        domain = SyntheticDomain.create(args.domain_seed)
        rng = np.random.default_rng(args.seed + 1)
        prompts = [build_pseudo_stereo_prompt(p, domain.noise_bank(rng, p.features.frames))
                   for p in prompts]
        log.info("built pseudo-stereo prompt from %d single-channel prompt(s)", len(prompts))
    prompt = concat_prompts(prompts)
    schedule = CfgSchedule(args.g0, args.g1)
    target = parse_speaker_attributed_text(args.text)
    vocab = Vocab.synthetic(model.config.vocab_size)
    fm = synthesize_dialogue(model, prompt, target, vocab, schedule, args.steps, args.seed)
    write_fmx(args.out, fm)
    _write_json(Path(str(args.out) + ".json"), {
        "command": "synth", "checkpoint": str(args.checkpoint), "prompts": args.prompt,
        "prompt_text": args.prompt_text, "text": args.text, "steps": args.steps,
        "seed": args.seed, "g0": args.g0, "g1": args.g1, "channels": fm.channels})
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest = Path(args.ref)
    if manifest.is_dir():
        manifest = manifest / "manifest.jsonl"
    hyp_dir = Path(args.hyp)
    domain = SyntheticDomain.create(args.domain_seed)
    records = [json.loads(l) for l in manifest.read_text(encoding="utf-8").splitlines() if l.strip()]
    reports = []
    for rec in records:
        path = hyp_dir / rec["features"]
        if not path.is_file():
            raise FileNotFoundError(f"missing hypothesis file {path}")
        hyp = oracle_decode(read_fmx(path), domain)
        reports.append(cpwer(parse_speaker_attributed_text(rec["script"]), hyp)[1])
    summary = corpus_summary(reports)
    summary["per_dialogue"] = [r.to_json() for r in reports]
    text = json.dumps(summary, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(json.dumps({k: summary[k] for k in ("dialogues", "mean_wer", "mean_cpwer", "mean_gap")}))
    return EXIT_OK


def cmd_filter(args) -> int:
    rules = FilterRuleSet(quality_threshold=args.quality_threshold,
                          max_turns_per_minute=args.max_turns_per_minute)
    summary = filter_jsonl(args.input, args.output, rules)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


# -- parser -----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zipdialog", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic corpus")
    g.add_argument("--kind", choices=KINDS, required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--domain-seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="run the training curriculum")
    t.add_argument("--config", help="key = value run config")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--no-curriculum", action="store_true",
                   help="dialogue stage only, from random init")
    t.add_argument("--no-se-loss", action="store_true", help="set the speaker-exclusive weight to 0")
    t.add_argument("--force", action="store_true")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("synth", help="synthesise a dialogue continuation")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--prompt", action="append", required=True, help="FMX1 prompt features")
    s.add_argument("--prompt-text", action="append", required=True,
                   help="transcript of the matching --prompt, e.g. '[S1] w01 w02'")
    s.add_argument("--text", required=True, help="target dialogue text")
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--g0", type=float, default=2.0)
    s.add_argument("--g1", type=float, default=1.0)
    s.add_argument("--domain-seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("eval", help="oracle-decode hypotheses and score WER/cpWER")
    e.add_argument("--ref", required=True, help="reference manifest or corpus directory")
    e.add_argument("--hyp", required=True, help="directory of hypothesis FMX1 files")
    e.add_argument("--out", help="write the full JSON report here")
    e.add_argument("--domain-seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("filter", help="rule-filter a JSONL transcript corpus")
    f.add_argument("--in", dest="input", required=True)
    f.add_argument("--out", dest="output", required=True)
    f.add_argument("--quality-threshold", type=float, default=2.8)
    f.add_argument("--max-turns-per-minute", type=float, default=40.0)
    f.set_defaults(func=cmd_filter)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FloatingPointError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
