"""A short monologue -> dialogue curriculum, then synthesis of held-out dialogues.

The budget here is a quarter of the acceptance run's, so expect a WER
well above what the acceptance suite reaches; the point is the shape of
the loop.  Takes a few minutes on one core.
"""
import time

import numpy as np

from zipdialog.experiments import Budget, DeskData, intelligibility, oracle_floor, train_stages
from zipdialog.inference import Prompt, synthesize_dialogue
from zipdialog.synthdata import oracle_decode
from zipdialog.text import render

budget = Budget(n_monologues=500, n_dialogues=300, n_eval=30,
                monologue_steps=1500, dialogue_steps=1000)
data = DeskData.generate(budget, seed=0)
cfg = budget.training_config()
print(f"oracle floor on the held-out set: {oracle_floor(data.eval_mono, data.domain):.3f}")

t0 = time.perf_counter()
mono = train_stages(data, [("monologue_pretrain", budget.monologue_steps)], cfg)
print(f"monologue pre-training done in {time.perf_counter() - t0:.0f}s")
print("  after monologues only:", intelligibility(mono, data))

dialogue = train_stages(data, [("dialogue_finetune", budget.dialogue_steps)], cfg, seed=1, init=mono)
print(f"dialogue fine-tuning done in {time.perf_counter() - t0:.0f}s")
print("  after the curriculum: ", intelligibility(dialogue, data))

item = data.eval_mono[0]
out = synthesize_dialogue(dialogue, Prompt(item.prompt.features, item.prompt.script),
                          item.target.script, data.domain.vocab, rng=np.random.default_rng(0))
print("\nprompt: ", render(item.prompt.script))
print("target: ", render(item.target.script))
print("decoded:", render(oracle_decode(out, data.domain)))
