"""REINFORCE training of the distractor policy against frozen environments."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .agent import AgentGenerator, ClassifierConfig, PolicyAgent, SemEquivModel, fit_classifier, sample_actions
from .dataset import OUT_OF_POOL, Dataset, McqItem
from .environment import Environment, evaluate_mcq
from .kernel import DenseParams, NonFiniteGradientError, OptimState, Rng, mlp_backward, optimizer_step, softmax

log = logging.getLogger(__name__)


class EnvironmentMutationError(RuntimeError):
    """A frozen environment's parameters changed during agent training."""


class RewardModel(Protocol):
    def rewards(self, items: Sequence[McqItem], actions: np.ndarray) -> np.ndarray: ...


@dataclass
class RewardSpec:
    """-penalty for answers equivalent to the correct one, else mean environment score."""

    environments: list
    sem_model: SemEquivModel
    penalty: float = -1.0

    def __post_init__(self) -> None:
        if not self.environments:
            raise ValueError("RewardSpec needs at least one environment")
        if not self.penalty < 0:
            raise ValueError(f"penalty must be negative, got {self.penalty}")

    def checksums(self) -> list[str]:
        return [env.checksum() for env in self.environments]

    def rewards(self, items: Sequence[McqItem], actions: np.ndarray) -> np.ndarray:
        actions = np.asarray(actions, dtype=np.int64).reshape(len(items), -1)
        n_s = actions.shape[1]
        correct = np.array([it.correct_id for it in items], dtype=np.int64)
        img = np.repeat(np.stack([it.image_feature for it in items]), n_s, axis=0)
        q = np.repeat(np.stack([it.question_embedding for it in items]), n_s, axis=0)
        a = self.sem_model.pool.embeddings[actions.ravel()]
        scores = np.mean([np.asarray(env.score(img, q, a)) for env in self.environments], axis=0)
        scores = scores.reshape(actions.shape)
        equiv = self.sem_model.equiv[correct[:, None], actions] & (correct[:, None] >= 0)
        return np.where(equiv, self.penalty, scores)


def compute_reward(spec: RewardSpec, item: McqItem, d_idx: int) -> float:
    return float(spec.rewards([item], np.array([[d_idx]]))[0, 0])


@dataclass
class TrainConfig:
    pretrain_epochs: int = 80
    rl_epochs: int = 200
    samples_per_item: int = 4
    batch: int = 64
    lr: float = 1e-4
    pretrain_lr: float | None = None  # None -> lr
    optimizer: str = "adam"
    seed: int = 0
    hidden: int = 4096
    dropout_p: float = 0.5
    use_baseline: bool = False
    baseline_decay: float = 0.9
    eval_every: int = 0

    def __post_init__(self) -> None:
        for name in ("pretrain_epochs", "rl_epochs", "samples_per_item", "batch", "eval_every"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    skipped: int = 0

    def add(self, **rec) -> None:
        self.records.append(rec)

    def phase(self, name: str) -> list[dict]:
        return [r for r in self.records if r["phase"] == name]

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")


@dataclass
class StepResult:
    grads: DenseParams
    mean_reward: float
    loss: float
    actions: np.ndarray
    rewards: np.ndarray


def reinforce_step(
    agent: PolicyAgent,
    reward: RewardModel,
    batch: Sequence[McqItem],
    n_s: int,
    rng: Rng,
    baseline: float = 0.0,
) -> StepResult:
    """Score-function gradient of -E[R] averaged over len(batch) * n_s samples.

    Per sample the logit gradient is -(R - baseline) * (onehot(d) - pi).
    """
    if n_s < 1:
        raise ValueError("n_s must be >= 1")
    x = np.stack([np.concatenate([it.image_feature, it.question_embedding]) for it in batch])
    z, cache = agent.logits(x, "train", rng)
    probs = softmax(z)
    actions = sample_actions(probs, n_s, rng)
    r = np.asarray(reward.rewards(batch, actions), dtype=np.float64).reshape(actions.shape)
    adv = r - baseline
    b = len(batch)
    scale = 1.0 / (b * n_s)
    rows = np.repeat(np.arange(b), n_s)
    with np.errstate(invalid="ignore", over="ignore"):  # checked just below
        dz = probs * adv.sum(axis=1, keepdims=True)
        np.add.at(dz, (rows, actions.ravel()), -adv.ravel())
        dz *= scale
        grads = mlp_backward(agent.params, cache, dz)
    if not grads.all_finite():
        raise NonFiniteGradientError("non-finite REINFORCE gradient")
    logp = np.log(np.maximum(np.take_along_axis(probs, actions, axis=1), 1e-300))
    loss = float(-(adv * logp).sum() * scale)
    return StepResult(grads, float(r.mean()), loss, actions, r)


def pretrain_agent(agent: PolicyAgent, dataset: Dataset, config: TrainConfig, rng: Rng) -> tuple[PolicyAgent, TrainLog]:
    """Cross-entropy pre-training toward the correct answers of the train split."""
    agent.check_pool(dataset.pool)
    out = agent.copy()
    train_log = TrainLog()
    idx = dataset.split_indices("train")
    targets = dataset.correct_ids[idx]
    ok = targets != OUT_OF_POOL
    train_log.skipped = int((~ok).sum())
    if train_log.skipped:
        log.warning("pretrain: skipped %d items whose correct answer is not in the pool", train_log.skipped)
    idx, targets = idx[ok], targets[ok]
    if config.pretrain_epochs == 0 or idx.size == 0:
        return out, train_log
    cc = ClassifierConfig(config.pretrain_epochs, config.batch, config.pretrain_lr or config.lr, config.optimizer)
    losses = fit_classifier(out, dataset.features(idx), targets, cc, rng)
    for epoch, loss in enumerate(losses, 1):
        train_log.add(phase="pretrain", epoch=epoch, mean_loss=loss, mean_reward=None)
    return out, train_log


def train_mlpr(
    dataset: Dataset,
    reward: RewardSpec,
    config: TrainConfig,
    variant: str = "mlpr",
    agent: PolicyAgent | None = None,
) -> tuple[PolicyAgent, TrainLog]:
    """Plain REINFORCE (``mlpr``) or cross-entropy warm start then REINFORCE (``mlpr_pretrain``)."""
    if variant not in ("mlpr", "mlpr_pretrain"):
        raise ValueError(f"unknown variant {variant!r}")
    rng = Rng(config.seed)
    before = reward.checksums()
    if agent is None:
        agent = PolicyAgent.create(dataset.d_img, dataset.d_txt, dataset.pool, rng.child(0),
                                   config.hidden, config.dropout_p)
    else:
        agent = agent.copy()
    agent.check_pool(dataset.pool)
    train_log = TrainLog()
    if variant == "mlpr_pretrain":
        agent, pre_log = pretrain_agent(agent, dataset, config, rng.child(1))
        train_log.records.extend(pre_log.records)
        train_log.skipped = pre_log.skipped

    train = dataset.split_indices("train")
    train = train[dataset.correct_ids[train] != OUT_OF_POOL]
    state = OptimState(config.optimizer, config.lr)
    shuffle_rng, step_rng = rng.child(2), rng.child(3)
    baseline = 0.0
    sem = reward.sem_model
    for epoch in range(1, config.rl_epochs + 1):
        order = shuffle_rng.gen.permutation(train)
        rsum = lsum = 0.0
        count = 0
        for start in range(0, order.size, config.batch):
            idx = order[start : start + config.batch]
            items = [dataset.items[i] for i in idx]
            res = reinforce_step(agent, reward, items, config.samples_per_item, step_rng,
                                 baseline if config.use_baseline else 0.0)
            optimizer_step(agent.params, res.grads, state)
            if config.use_baseline:
                baseline = config.baseline_decay * baseline + (1.0 - config.baseline_decay) * res.mean_reward
            rsum += res.mean_reward * len(idx)
            lsum += res.loss * len(idx)
            count += len(idx)
        if reward.checksums() != before:
            raise EnvironmentMutationError(f"environment parameters changed during epoch {epoch}")
        rec = {"phase": "rl", "epoch": epoch, "mean_reward": rsum / max(count, 1), "mean_loss": lsum / max(count, 1)}
        if config.eval_every and epoch % config.eval_every == 0:
            gen = AgentGenerator(agent, sem)
            rep = evaluate_mcq(reward.environments[0], dataset, _topk_choices(gen), split="val", choice_source="agent")
            rec["env_accuracy_on_topk"] = rep.accuracy
        train_log.add(**rec)
        log.debug("rl epoch %d reward %.4f", epoch, rec["mean_reward"])
    if reward.checksums() != before:
        raise EnvironmentMutationError("environment parameters changed during training")
    agent.meta.update({"variant": variant, "seed": config.seed, "epoch": config.rl_epochs})
    return agent, train_log


def _topk_choices(gen: AgentGenerator):
    def choices(item: McqItem) -> tuple:
        return (item.correct_id,) + gen(item)

    return choices


def config_dict(config) -> dict:
    return asdict(config)
