"""Flow-matching building blocks on toy problems.

1. The Euler solver integrates a straight path exactly.
2. Guidance extrapolates from the unconditional to the conditional field.
3. The autodiff engine agrees with central differences on the full loss.
"""
import numpy as np

from zipdialog import numerics as nx
from zipdialog.inference import CfgSchedule, euler_solve, guided_vector_field
from zipdialog.model import ModelConfig, init_model
from zipdialog.synthdata import SyntheticDomain, gen_corpus
from zipdialog.training import BucketSampler, StepInputs, TrainingConfig, batch_losses, prepare

rng = np.random.default_rng(0)

# 1. straight paths
x0, x1 = rng.standard_normal((2, 5, 3))
for n in (1, 4, 16):
    err = np.abs(euler_solve(x0, n, lambda x, t: x1 - x0) - x1).max()
    print(f"Euler, {n:2d} steps, straight field: max error {err:.1e}")
print("v = -x from 1:", euler_solve(np.array([1.0]), 1, lambda x, t: -x)[0],
      "(1 step),", euler_solve(np.array([1.0]), 2, lambda x, t: -x)[0], "(2 steps)")

# 2. the guidance scale falls linearly from g0 at t=0 to g1 at t=1
sched = CfgSchedule()
print("\nguidance scale:", [round(float(sched(t)), 3) for t in np.linspace(0, 1, 5)])
print("g=2, v_c=1, v_u=0 ->", guided_vector_field(np.ones(1), np.zeros(1), 2.0))

# 3. gradients of the training loss on a small model
domain = SyntheticDomain.create(0)
cfg = ModelConfig(text_dim=4, hidden=4, text_layers=1, trunk_layers=1, heads=1, time_features=4)
model = init_model(cfg, rng)
examples = prepare(gen_corpus(domain, "dialogue_mono", 4, rng), domain.vocab)
batch = BucketSampler(examples, 2).draw(rng)
inputs = StepInputs.draw(batch, TrainingConfig(cfg_dropout=0.0), rng)
params = [model["text.embed"], model["vf.blocks.0.ff.w2"]]


def loss():
    return batch_losses(model, batch, inputs, 1.0, 0.5)[2]


analytic = nx.backward_grad(loss(), params)
numeric = nx.finite_diff_grad(lambda: loss().item(), params, 1e-5)
for p, a, n in zip(params, analytic, numeric):
    print(f"{p.name or 'param'} {p.data.shape}: max relative error {nx.max_relative_error(a, n):.1e}")
