"""
Retraining the discriminator on generated distractors
=====================================================

Train once on the original distractors [O], once on the agent's [A], once
on a half/half mix, then test each on both sets.  At full size (see the
acceptance suite) training on [A] clearly helps on [A].  At this toy size
with a lightly trained agent the gap is small and can even reverse.
"""

from dgvqa.agent import AgentGenerator, SemEquivModel
from dgvqa.dataset import SyntheticSpec, generate_synthetic
from dgvqa.environment import EnvConfig, train_discriminator
from dgvqa.harness import run_augmentation_experiment
from dgvqa.kernel import Rng
from dgvqa.reinforce import RewardSpec, TrainConfig, train_mlpr

ds = generate_synthetic(SyntheticSpec(n_items=800, K=80, d_img=32, d_txt=16, min_freq=8), seed=2)
env_cfg = EnvConfig(epochs=30, hidden=256)
disc = train_discriminator(ds, env_cfg, Rng(2))
sem = SemEquivModel(ds.pool)

# warm start on the correct answers, then push away from them with REINFORCE
cfg = TrainConfig(pretrain_epochs=20, rl_epochs=40, hidden=256, lr=1e-3, batch=32, seed=2)
agent, _ = train_mlpr(ds, RewardSpec([disc], sem), cfg, "mlpr_pretrain")

report, _ = run_augmentation_experiment(ds, AgentGenerator(agent, sem, "mlpr_pretrain"), env_cfg, seed=2)
print(report.table())
