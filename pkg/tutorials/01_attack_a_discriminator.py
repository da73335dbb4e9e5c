"""
Attacking a VQA discriminator with learned distractors
======================================================

A small end-to-end run: synthetic data, a triplet discriminator, two cheap
baselines and a REINFORCE-trained agent, all scored on the same test split.
Sizes are shrunk so the script finishes in about a minute on one core.
"""

import numpy as np

from dgvqa.agent import AgentGenerator, SemEquivModel
from dgvqa.baselines import MatchingGenerator, MatchingScorer, PriorGenerator, build_qtype_prior
from dgvqa.dataset import SyntheticSpec, generate_synthetic
from dgvqa.environment import EnvConfig, evaluate_mcq, train_discriminator
from dgvqa.harness import OriginalGenerator, run_attack
from dgvqa.kernel import Rng
from dgvqa.reinforce import RewardSpec, TrainConfig, train_mlpr

# a clustered answer pool; separability sets how much the image says about the answer
ds = generate_synthetic(SyntheticSpec(n_items=800, K=80, d_img=32, d_txt=16, min_freq=8), seed=1)
print(f"{len(ds)} items, pool of {ds.pool.K} answers")

# the discriminator scores (image, question, answer) triplets; it picks the argmax of four
disc = train_discriminator(ds, EnvConfig(epochs=30, hidden=256), Rng(1))
print(f"discriminator test accuracy: {evaluate_mcq(disc, ds).accuracy:.3f}")

# answers at cosine >= 0.95 to the correct one never count as distractors
sem = SemEquivModel(ds.pool)

# the agent is rewarded by the discriminator's belief in the distractor it samples
cfg = TrainConfig(rl_epochs=60, hidden=256, lr=1e-3, batch=32, seed=1)
agent, log = train_mlpr(ds, RewardSpec([disc], sem), cfg)
rl = log.phase("rl")
print(f"mean reward: epoch 1 {rl[0]['mean_reward']:.3f}, epoch {len(rl)} {rl[-1]['mean_reward']:.3f}")

gens = [
    OriginalGenerator(),
    PriorGenerator(build_qtype_prior(ds), sem),
    MatchingGenerator(ds.pool, MatchingScorer(lam=1.0), sem),
    AgentGenerator(agent, sem, "mlpr"),
]
report = run_attack(ds, {"disc": disc}, gens, seed=1)
print(report.table())

# a higher delta means the generated distractors fooled the discriminator more often
best = max(gens[1:], key=lambda g: report.cells[("disc", g.name)].delta_acc)
print("strongest generator:", best.name)

# the distractors the agent picked for the first test item
it = ds.items[int(ds.split_indices("test")[0])]
texts = ds.pool.texts
print("correct:", texts[it.correct_id], "| agent:", [texts[j] for j in gens[-1](it)])
print("original:", [texts[j] for j in np.asarray(it.original_distractor_ids)])
