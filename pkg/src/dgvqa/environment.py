"""Frozen triplet-scoring discriminator and multiple-choice evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .dataset import Dataset, DatasetError, McqItem
from .kernel import (
    DenseParams,
    OptimState,
    Rng,
    init_dense,
    load_checkpoint,
    mlp_backward,
    mlp_forward,
    optimizer_step,
    save_checkpoint,
    sigmoid,
    sigmoid_bce,
)

log = logging.getLogger(__name__)


class Environment(Protocol):
    """Anything that scores (image, question, answer) rows in [0, 1]."""

    def score(self, img: np.ndarray, q_emb: np.ndarray, a_emb: np.ndarray) -> np.ndarray: ...

    def checksum(self) -> str: ...


@dataclass
class Discriminator:
    params: DenseParams
    d_img: int
    d_txt: int
    dropout_p: float = 0.5
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.params.in_dim != self.d_img + 2 * self.d_txt or self.params.out_dim != 1:
            raise ValueError(
                f"discriminator params {self.params.in_dim}->{self.params.out_dim} do not fit "
                f"d_img={self.d_img}, d_txt={self.d_txt}"
            )

    @property
    def hidden(self) -> int:
        return self.params.hidden

    def _rows(self, img, q_emb, a_emb) -> np.ndarray:
        img, q_emb, a_emb = (np.asarray(x, dtype=np.float32) for x in (img, q_emb, a_emb))
        if img.shape[-1] != self.d_img or q_emb.shape[-1] != self.d_txt or a_emb.shape[-1] != self.d_txt:
            raise ValueError(
                f"triplet dims ({img.shape[-1]}, {q_emb.shape[-1]}, {a_emb.shape[-1]}) "
                f"!= ({self.d_img}, {self.d_txt}, {self.d_txt})"
            )
        img, q_emb, a_emb = _broadcast_rows(img, q_emb, a_emb)
        return np.concatenate([img, q_emb, a_emb], axis=1)

    def logits(self, img, q_emb, a_emb) -> np.ndarray:
        z, _ = mlp_forward(self.params, self._rows(img, q_emb, a_emb))
        return z[:, 0].astype(np.float64)

    def score(self, img, q_emb, a_emb) -> np.ndarray:
        return sigmoid(self.logits(img, q_emb, a_emb))

    def checksum(self) -> str:
        return self.params.checksum()

    def save(self, path) -> None:
        meta = {"kind": "discriminator", "d_img": self.d_img, "d_txt": self.d_txt, "dropout_p": self.dropout_p}
        meta.update(self.meta)
        save_checkpoint(path, self.params, meta)

    @classmethod
    def load(cls, path) -> "Discriminator":
        params, meta = load_checkpoint(path)
        d_img, d_txt = int(meta.pop("d_img")), int(meta.pop("d_txt"))
        dropout_p = float(meta.pop("dropout_p", 0.5))
        for k in ("kind", "in_dim", "hidden", "out_dim"):
            meta.pop(k, None)
        return cls(params, d_img, d_txt, dropout_p, meta)


def _broadcast_rows(img, q_emb, a_emb):
    img, q_emb, a_emb = (np.atleast_2d(x) for x in (img, q_emb, a_emb))
    n = max(len(img), len(q_emb), len(a_emb))
    return (np.broadcast_to(img, (n, img.shape[1])), np.broadcast_to(q_emb, (n, q_emb.shape[1])),
            np.broadcast_to(a_emb, (n, a_emb.shape[1])))


class MixedEnvironment:
    """Uniform average of several frozen environments' scores."""

    def __init__(self, environments: Sequence[Environment]) -> None:
        if not environments:
            raise ValueError("need at least one environment")
        self.environments = list(environments)

    def score(self, img, q_emb, a_emb) -> np.ndarray:
        return np.mean([env.score(img, q_emb, a_emb) for env in self.environments], axis=0)

    def checksum(self) -> str:
        return ",".join(env.checksum() for env in self.environments)


def score_triplet(disc: Environment, img, q_emb, a_emb) -> float:
    """Probability the environment assigns to (img, question, answer) being correct."""
    return float(np.asarray(disc.score(img, q_emb, a_emb)).reshape(-1)[0])


@dataclass
class EnvConfig:
    epochs: int = 50
    batch: int = 64
    lr: float = 0.1
    neg_per_pos: int = 3
    hidden: int = 4096
    dropout_p: float = 0.5
    optimizer: str = "sgd"


def train_discriminator(dataset: Dataset, config: EnvConfig, rng: Rng) -> Discriminator:
    """Binary triplet classifier: correct answer positive, original distractors negative."""
    train = dataset.split_indices("train")
    train = train[dataset.correct_ids[train] >= 0]
    if train.size == 0:
        raise DatasetError("cannot train a discriminator on an empty train split")
    d_img, d_txt = dataset.d_img, dataset.d_txt
    params = init_dense(d_img + 2 * d_txt, config.hidden, 1, rng.child(0))
    state = OptimState(config.optimizer, config.lr)
    shuffle_rng, drop_rng = rng.child(1), rng.child(2)
    img, q, a = dataset.image_matrix, dataset.question_matrix, dataset.pool.embeddings
    correct, distractors = dataset.correct_ids, dataset.distractor_ids
    n_neg = config.neg_per_pos
    for epoch in range(config.epochs):
        order = shuffle_rng.gen.permutation(train)
        total, rows = 0.0, 0
        for start in range(0, order.size, config.batch):
            idx = order[start : start + config.batch]
            if n_neg <= 3:
                neg = distractors[idx, :n_neg]
            else:
                neg = distractors[idx][:, shuffle_rng.gen.integers(0, 3, n_neg)]
            answers = np.concatenate([correct[idx][:, None], neg], axis=1)  # [b, 1 + n_neg]
            labels = np.zeros(answers.shape)
            labels[:, 0] = 1.0
            rep = np.repeat(idx, answers.shape[1])
            x = np.concatenate([img[rep], q[rep], a[answers.ravel()]], axis=1)
            z, cache = mlp_forward(params, x, config.dropout_p, "train", drop_rng)
            loss, dz = sigmoid_bce(z[:, 0], labels.ravel())
            grads = mlp_backward(params, cache, (dz / len(rep))[:, None])
            optimizer_step(params, grads, state)
            total += float(loss.sum())
            rows += len(rep)
        log.debug("discriminator epoch %d loss %.4f", epoch + 1, total / max(rows, 1))
    meta = {"seed": rng.seed, "epochs": config.epochs, "dataset": dataset.fingerprint()}
    return Discriminator(params, d_img, d_txt, config.dropout_p, meta)


@dataclass
class AccuracyReport:
    accuracy: float
    n_items: int
    n_correct: int
    per_qtype: dict
    choice_source: str = "original"

    def summary(self) -> dict:
        return {
            "choice_source": self.choice_source,
            "accuracy": self.accuracy,
            "n": self.n_items,
            "per_qtype": dict(sorted(self.per_qtype.items())),
        }

    def lines(self) -> list[str]:
        out = [f"source={self.choice_source} accuracy={self.accuracy:.6f} n={self.n_items}"]
        out += [f"  qtype={k} accuracy={v:.6f}" for k, v in sorted(self.per_qtype.items())]
        return out


def original_choices(item: McqItem) -> tuple:
    return item.choices


def pick_choices(scores: np.ndarray, choices: np.ndarray) -> np.ndarray:
    """Argmax per row; among tied top scores the lowest pool index wins."""
    top = scores.max(axis=1, keepdims=True)
    masked = np.where(scores == top, choices, np.iinfo(np.int64).max)
    return masked.min(axis=1)


def choice_scores(env: Environment, dataset: Dataset, indices: np.ndarray, choices: np.ndarray) -> np.ndarray:
    n, m = choices.shape
    rep = np.repeat(indices, m)
    s = env.score(dataset.image_matrix[rep], dataset.question_matrix[rep], dataset.pool.embeddings[choices.ravel()])
    return np.asarray(s).reshape(n, m)


def evaluate_mcq(
    disc: Environment,
    dataset: Dataset,
    choices_for: Callable[[McqItem], Sequence[int]] = original_choices,
    split: str = "test",
    choice_source: str = "original",
) -> AccuracyReport:
    """Accuracy of ``disc`` picking the correct answer among the given four choices."""
    indices = dataset.split_indices(split)
    choices = np.empty((indices.size, 4), dtype=np.int64)
    for row, i in enumerate(indices):
        item = dataset.items[i]
        ch = tuple(int(c) for c in choices_for(item))
        if len(ch) != 4:
            raise ValueError(f"item {item.id}: expected 4 choices, got {len(ch)}")
        choices[row] = ch
    return evaluate_choices(disc, dataset, indices, choices, choice_source)


def evaluate_choices(
    disc: Environment,
    dataset: Dataset,
    indices: np.ndarray,
    choices: np.ndarray,
    choice_source: str = "original",
) -> AccuracyReport:
    """Array form of :func:`evaluate_mcq`: ``choices[r]`` are the options for item ``indices[r]``."""
    indices = np.asarray(indices, dtype=np.int64)
    choices = np.asarray(choices, dtype=np.int64).reshape(indices.size, -1)
    correct = dataset.correct_ids[indices]
    missing = ~(choices == correct[:, None]).any(axis=1)
    if missing.any():
        r = int(np.flatnonzero(missing)[0])
        raise ValueError(f"item {dataset.items[indices[r]].id}: choices {tuple(choices[r])} omit the correct answer {correct[r]}")
    if indices.size == 0:
        return AccuracyReport(0.0, 0, 0, {}, choice_source)
    picks = pick_choices(choice_scores(disc, dataset, indices, choices), choices)
    hit = picks == correct
    per: dict = {}
    for row, i in enumerate(indices):
        qt = dataset.items[i].qtype
        c, t = per.get(qt, (0, 0))
        per[qt] = (c + int(hit[row]), t + 1)
    n_correct = int(hit.sum())
    return AccuracyReport(
        n_correct / indices.size,
        int(indices.size),
        n_correct,
        {k: c / t for k, (c, t) in per.items()},
        choice_source,
    )
