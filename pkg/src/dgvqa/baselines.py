"""Comparison distractor generators: per-question-type prior, adversarial
matching, and a classifier trained on a discriminator's failures."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .agent import ClassifierConfig, PolicyAgent, SemEquivModel, fit_classifier, top_k_from_scores
from .dataset import OUT_OF_POOL, CandidatePool, Dataset, DatasetError, McqItem
from .environment import Environment, choice_scores, pick_choices
from .kernel import Rng

log = logging.getLogger(__name__)


def _ranking(counts: Counter, K: int) -> np.ndarray:
    c = np.zeros(K, dtype=np.int64)
    for j, n in counts.items():
        c[j] = n
    # lexsort: last key is primary
    return np.lexsort((np.arange(K), -c))


@dataclass
class QTypePriorTable:
    rankings: dict
    global_ranking: np.ndarray
    counts: dict = field(repr=False, default_factory=dict)
    unseen_queries: int = 0

    def ranking_for(self, qtype: str) -> np.ndarray:
        r = self.rankings.get(qtype)
        if r is None:
            self.unseen_queries += 1
            log.warning("qtype %r unseen in training split; using global ranking", qtype)
            return self.global_ranking
        return r

    def query(self, item: McqItem, sem: SemEquivModel, k: int = 3) -> np.ndarray:
        ranking = self.ranking_for(item.qtype)
        keep = ranking[~sem.excluded(item.correct_id)[ranking]]
        if keep.size < k:
            raise DatasetError(f"item {item.id}: only {keep.size} prior candidates survive the filter")
        return keep[:k]


def build_qtype_prior(dataset: Dataset) -> QTypePriorTable:
    """Rank pool entries per question type by how often they are the correct answer in train."""
    idx = dataset.split_indices("train")
    if idx.size == 0:
        raise DatasetError("cannot build a prior from an empty train split")
    per: dict = {}
    total: Counter = Counter()
    for i in idx:
        it = dataset.items[i]
        if it.correct_id == OUT_OF_POOL:
            continue
        per.setdefault(it.qtype, Counter())[it.correct_id] += 1
        total[it.correct_id] += 1
    K = dataset.pool.K
    rankings = {qt: _ranking(c, K) for qt, c in sorted(per.items())}
    return QTypePriorTable(rankings, _ranking(total, K), per)


class PriorGenerator:
    def __init__(self, table: QTypePriorTable, sem: SemEquivModel, name: str = "prior") -> None:
        self.table, self.sem, self.name = table, sem, name

    def __call__(self, item: McqItem) -> tuple:
        return tuple(int(i) for i in self.table.query(item, self.sem))

    def generate(self, dataset: Dataset, indices) -> np.ndarray:
        return np.array([self(dataset.items[i]) for i in indices], dtype=np.int64).reshape(-1, 3)


def _unit(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.where(n > 0, n, 1.0)


def cosine_scores(query: np.ndarray, cands: np.ndarray) -> np.ndarray:
    return _unit(cands) @ _unit(query)


@dataclass
class MatchingScorer:
    """score(c) = relevance(question, c) - lam * similarity(c, correct answer).

    The linear trade-off is one reading of "balance relevance against
    similarity"; both terms default to embedding cosine.
    """

    relevance: Callable = cosine_scores
    similarity: Callable = cosine_scores
    lam: float = 1.0

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise ValueError("lam must be >= 0")

    def scores(self, q_emb: np.ndarray, cand_embs: np.ndarray, ans_emb: np.ndarray) -> np.ndarray:
        rel = np.asarray(self.relevance(q_emb, cand_embs), dtype=np.float64)
        sim = np.asarray(self.similarity(ans_emb, cand_embs), dtype=np.float64)
        if not (np.isfinite(rel).all() and np.isfinite(sim).all()):
            raise ValueError("matching scores must be finite")
        return rel - self.lam * sim


def adversarial_matching(item: McqItem, pool: CandidatePool, scorer: MatchingScorer, sem: SemEquivModel,
                         k: int = 3) -> np.ndarray:
    emb = pool.embeddings
    s = scorer.scores(item.question_embedding, emb, emb[item.correct_id])
    return top_k_from_scores(s, sem.excluded(item.correct_id), k)


class MatchingGenerator:
    def __init__(self, pool: CandidatePool, scorer: MatchingScorer, sem: SemEquivModel, name: str = "matching") -> None:
        self.pool, self.scorer, self.sem, self.name = pool, scorer, sem, name

    def __call__(self, item: McqItem) -> tuple:
        return tuple(int(i) for i in adversarial_matching(item, self.pool, self.scorer, self.sem))

    def generate(self, dataset: Dataset, indices) -> np.ndarray:
        return np.array([self(dataset.items[i]) for i in indices], dtype=np.int64).reshape(-1, 3)


class NoFailuresError(RuntimeError):
    pass


@dataclass
class FailureConfig:
    epochs: int = 80
    batch: int = 64
    lr: float = 1e-4
    optimizer: str = "adam"
    hidden: int = 4096
    dropout_p: float = 0.5


def collect_failures(dataset: Dataset, disc: Environment, split: str = "train") -> tuple[np.ndarray, np.ndarray]:
    """Item positions the discriminator gets wrong and the wrong choice it picks."""
    idx = dataset.split_indices(split)
    idx = idx[dataset.correct_ids[idx] != OUT_OF_POOL]
    if idx.size == 0:
        return idx, idx
    choices = np.concatenate([dataset.correct_ids[idx][:, None], dataset.distractor_ids[idx]], axis=1)
    picks = pick_choices(choice_scores(disc, dataset, idx, choices), choices)
    wrong = picks != dataset.correct_ids[idx]
    return idx[wrong], picks[wrong]


def train_failure_baseline(dataset: Dataset, disc: Environment, config: FailureConfig, rng: Rng) -> PolicyAgent:
    """Classifier over the pool trained to predict the discriminator's wrong picks."""
    idx, targets = collect_failures(dataset, disc)
    if idx.size == 0:
        raise NoFailuresError(
            "the discriminator answers every training item correctly; use a weaker discriminator "
            "or a harder dataset to collect failure targets"
        )
    agent = PolicyAgent.create(dataset.d_img, dataset.d_txt, dataset.pool, rng.child(0), config.hidden, config.dropout_p)
    fit_classifier(agent, dataset.features(idx), targets,
                   ClassifierConfig(config.epochs, config.batch, config.lr, config.optimizer), rng.child(1))
    agent.meta.update({"variant": "failure", "seed": rng.seed, "n_failures": int(idx.size)})
    return agent
