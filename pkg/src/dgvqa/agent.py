"""Policy network over the candidate pool, action sampling and top-k extraction."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import CandidatePool, Dataset, McqItem
from .kernel import (
    DenseParams,
    OptimState,
    Rng,
    cross_entropy_loss,
    init_dense,
    load_checkpoint,
    mlp_backward,
    mlp_forward,
    optimizer_step,
    save_checkpoint,
    softmax,
    zeros_dense,
)

log = logging.getLogger(__name__)


class InsufficientCandidatesError(ValueError):
    """Fewer than k pool entries survive the exclusion filter."""


class PoolMismatchError(ValueError):
    pass


@dataclass
class PolicyAgent:
    params: DenseParams
    d_img: int
    d_txt: int
    pool_fingerprint: str
    dropout_p: float = 0.5
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.params.in_dim != self.d_img + self.d_txt:
            raise ValueError(f"agent in-dim {self.params.in_dim} != d_img + d_txt = {self.d_img + self.d_txt}")

    @classmethod
    def create(cls, d_img: int, d_txt: int, pool: CandidatePool, rng: Rng | None = None,
               hidden: int = 4096, dropout_p: float = 0.5) -> "PolicyAgent":
        """Glorot-initialized agent, or all-zero parameters when ``rng`` is None."""
        if rng is None:
            params = zeros_dense(d_img + d_txt, hidden, pool.K)
        else:
            params = init_dense(d_img + d_txt, hidden, pool.K, rng)
        return cls(params, d_img, d_txt, pool.fingerprint(), dropout_p)

    @property
    def K(self) -> int:
        return self.params.out_dim

    def copy(self) -> "PolicyAgent":
        return PolicyAgent(self.params.copy(), self.d_img, self.d_txt, self.pool_fingerprint, self.dropout_p, dict(self.meta))

    def check_pool(self, pool: CandidatePool) -> None:
        if pool.fingerprint() != self.pool_fingerprint or pool.K != self.K:
            raise PoolMismatchError(f"agent is bound to pool {self.pool_fingerprint}, got {pool.fingerprint()}")

    def logits(self, x: np.ndarray, mode: str = "eval", rng: Rng | None = None):
        x = np.asarray(x)
        if x.shape[-1] != self.params.in_dim:
            raise ValueError(f"agent input has dim {x.shape[-1]}, expected {self.params.in_dim}")
        return mlp_forward(self.params, x, self.dropout_p, mode, rng)

    def save(self, path) -> None:
        meta = {"kind": "agent", "d_img": self.d_img, "d_txt": self.d_txt, "dropout_p": self.dropout_p,
                "pool": self.pool_fingerprint}
        meta.update(self.meta)
        save_checkpoint(path, self.params, meta)

    @classmethod
    def load(cls, path) -> "PolicyAgent":
        params, meta = load_checkpoint(path)
        d_img, d_txt = int(meta.pop("d_img")), int(meta.pop("d_txt"))
        dropout_p = float(meta.pop("dropout_p", 0.5))
        pool = meta.pop("pool")
        for k in ("kind", "in_dim", "hidden", "out_dim"):
            meta.pop(k, None)
        return cls(params, d_img, d_txt, pool, dropout_p, meta)


def policy_forward(agent: PolicyAgent, img, q_emb, mode: str = "eval", rng: Rng | None = None,
                   pool: CandidatePool | None = None) -> np.ndarray:
    """softmax(MLP(img ⊕ q_emb)); rows in, rows out."""
    if pool is not None:
        agent.check_pool(pool)
    img, q_emb = np.asarray(img), np.asarray(q_emb)
    if img.shape[-1] != agent.d_img or q_emb.shape[-1] != agent.d_txt:
        raise ValueError(f"input dims ({img.shape[-1]}, {q_emb.shape[-1]}) != ({agent.d_img}, {agent.d_txt})")
    z, _ = agent.logits(np.concatenate([img, q_emb], axis=-1), mode, rng)
    return softmax(z)


def sample_actions(dist: np.ndarray, n: int, rng: Rng) -> np.ndarray:
    """``n`` i.i.d. categorical draws per row of ``dist`` (inverse-CDF)."""
    dist = np.asarray(dist, dtype=np.float64)
    single = dist.ndim == 1
    d2 = np.atleast_2d(dist)
    cdf = np.cumsum(d2, axis=1)
    cdf /= cdf[:, -1:]
    u = rng.gen.random((d2.shape[0], n))
    out = np.empty((d2.shape[0], n), dtype=np.int64)
    for r in range(d2.shape[0]):
        out[r] = np.searchsorted(cdf[r], u[r], side="right")
    np.minimum(out, d2.shape[1] - 1, out=out)
    return out[0] if single else out


class SemEquivModel:
    """Cosine-threshold stand-in for a learned paraphrase detector.

    Two pool entries are equivalent when their normalized texts match or the
    cosine of their embeddings reaches ``tau``.
    """

    def __init__(self, pool: CandidatePool, tau: float = 0.95) -> None:
        if not 0.0 <= tau <= 1.0:
            raise ValueError(f"tau {tau} outside [0, 1]")
        self.pool = pool
        self.tau = float(tau)
        emb = pool.embeddings.astype(np.float64)
        norms = np.linalg.norm(emb, axis=1, keepdims=True)
        unit = emb / np.where(norms > 0, norms, 1.0)
        cos = unit @ unit.T
        cos = (cos + cos.T) / 2.0
        self.cosine = cos
        eq = cos >= self.tau
        np.fill_diagonal(eq, True)
        # pool texts are unique, so text identity only holds on the diagonal
        self.equiv = eq

    def __call__(self, a: int, b: int) -> bool:
        return bool(self.equiv[a, b])

    def excluded(self, correct_id: int) -> np.ndarray:
        """Boolean mask of pool entries equivalent to ``correct_id`` (itself included)."""
        if correct_id < 0:
            return np.zeros(self.pool.K, dtype=bool)
        return self.equiv[correct_id]


def is_sem_equiv(model: SemEquivModel, a_idx: int, b_idx: int) -> bool:
    return model(a_idx, b_idx)


def top_k_from_scores(scores: np.ndarray, excluded: np.ndarray, k: int = 3) -> np.ndarray:
    """Highest-scoring k indices outside ``excluded``; ties go to the lower index."""
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    keep = order[~excluded[order]]
    if keep.size < k:
        raise InsufficientCandidatesError(f"only {keep.size} candidates survive the filter, need {k}")
    return keep[:k]


def top_k_distractors(agent: PolicyAgent, item: McqItem, sem: SemEquivModel, k: int = 3) -> np.ndarray:
    z, _ = agent.logits(np.concatenate([item.image_feature, item.question_embedding]))
    return top_k_from_scores(z, sem.excluded(item.correct_id), k)


class AgentGenerator:
    """Adapts a policy (or any PolicyAgent-shaped model) to the generator interface."""

    def __init__(self, agent: PolicyAgent, sem: SemEquivModel, name: str = "mlpr", k: int = 3) -> None:
        self.agent, self.sem, self.name, self.k = agent, sem, name, k

    def __call__(self, item: McqItem) -> tuple:
        return tuple(int(i) for i in top_k_distractors(self.agent, item, self.sem, self.k))

    def generate(self, dataset: Dataset, indices: np.ndarray) -> np.ndarray:
        self.agent.check_pool(dataset.pool)
        indices = np.asarray(indices, dtype=np.int64)
        out = np.empty((indices.size, self.k), dtype=np.int64)
        correct = dataset.correct_ids
        for start in range(0, indices.size, 256):
            idx = indices[start : start + 256]
            z, _ = self.agent.logits(dataset.features(idx))
            for r, i in enumerate(idx):
                out[start + r] = top_k_from_scores(z[r], self.sem.excluded(int(correct[i])), self.k)
        return out

    def probabilities(self, dataset: Dataset, indices: np.ndarray, chosen: np.ndarray) -> np.ndarray:
        probs = policy_forward(self.agent, dataset.image_matrix[indices], dataset.question_matrix[indices])
        return np.take_along_axis(probs, chosen, axis=1)


def write_generated(path, dataset: Dataset, indices, distractor_ids: np.ndarray,
                    choice_source: str, policy_probs: np.ndarray | None = None) -> None:
    """One JSON record per item: ids, texts and (for policies) probabilities."""
    texts = dataset.pool.texts
    with open(path, "w", encoding="utf-8") as fh:
        for row, i in enumerate(indices):
            ids = [int(j) for j in distractor_ids[row]]
            rec = {
                "item_id": dataset.items[i].id,
                "distractor_texts": [texts[j] for j in ids],
                "distractor_ids": ids,
                "policy_probs": None if policy_probs is None else [float(p) for p in policy_probs[row]],
                "choice_source": choice_source,
            }
            fh.write(json.dumps(rec) + "\n")


def read_generated(path) -> list[dict]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        rec = json.loads(line)
        if len(rec.get("distractor_ids", [])) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 distractor ids")
        out.append(rec)
    return out


@dataclass
class ClassifierConfig:
    epochs: int = 80
    batch: int = 64
    lr: float = 1e-4
    optimizer: str = "adam"


def fit_classifier(agent: PolicyAgent, x: np.ndarray, targets: np.ndarray, config: ClassifierConfig,
                   rng: Rng) -> list[float]:
    """Cross-entropy training of ``agent`` in place; returns mean loss per epoch."""
    state = OptimState(config.optimizer, config.lr)
    shuffle_rng, drop_rng = rng.child(0), rng.child(1)
    n = len(targets)
    losses = []
    for _ in range(config.epochs):
        order = shuffle_rng.gen.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch):
            idx = order[start : start + config.batch]
            z, cache = agent.logits(x[idx], "train", drop_rng)
            loss, dz = cross_entropy_loss(softmax(z), targets[idx])
            grads = mlp_backward(agent.params, cache, dz / len(idx))
            optimizer_step(agent.params, grads, state)
            total += float(loss.sum())
        losses.append(total / max(n, 1))
    return losses
