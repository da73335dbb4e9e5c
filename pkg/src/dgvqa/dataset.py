"""Multiple-choice QA data model, file formats and a synthetic generator.

File formats
------------
dataset (``.jsonl``)
    First line is a header object ``{"d_img", "d_txt", "embeddings", ...}``;
    every following line is one record ``{"id", "qtype", "question",
    "correct", "distractors": [3 texts], "split"?}``.  ``embeddings`` and the
    optional ``pool`` entry are paths relative to the dataset file.
features (``DFV1``)
    ``b"DFV1"``, u32 count, u32 dim, then count*dim little-endian float32,
    rows in dataset line order.
embedding table
    text, one token per line followed by ``d_txt`` floats.
pool
    text, ``answer<TAB>frequency`` per line, in pool order.
"""

from __future__ import annotations

import hashlib
import json
import logging
import string
import struct
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .kernel import Rng

log = logging.getLogger(__name__)

FEATURE_MAGIC = b"DFV1"
SPLITS = ("train", "val", "test")
OUT_OF_POOL = -1

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


class DatasetError(ValueError):
    """Invalid or malformed dataset content."""


def normalize_text(text: str) -> str:
    return " ".join(text.lower().translate(_PUNCT_TABLE).split())


def tokenize(text: str) -> list[str]:
    return normalize_text(text).split()


def _frozen(a, dtype=np.float32) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.flags.writeable = False
    return a


# ---------------------------------------------------------------- embeddings


@dataclass(frozen=True)
class EmbeddingTable:
    vectors: dict
    dim: int
    oov_policy: str = "skip"  # or "zero"

    def __post_init__(self) -> None:
        if self.oov_policy not in ("skip", "zero"):
            raise ValueError(f"unknown oov_policy {self.oov_policy!r}")
        for tok, v in self.vectors.items():
            if np.shape(v) != (self.dim,):
                raise DatasetError(f"embedding for {tok!r} has shape {np.shape(v)}, expected ({self.dim},)")

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)


def embed_question(tokens: Sequence[str], table: EmbeddingTable) -> np.ndarray:
    """Mean token embedding.

    Under the ``skip`` policy OOV tokens are dropped (all-OOV gives the zero
    vector); under ``zero`` they count as zero vectors in the mean.
    """
    if len(tokens) == 0:
        raise ValueError("cannot embed an empty token list")
    acc = np.zeros(table.dim, dtype=np.float64)
    n = 0
    for tok in tokens:
        v = table.vectors.get(tok)
        if v is not None:
            acc += v
            n += 1
        elif table.oov_policy == "zero":
            n += 1
    if n == 0:
        return np.zeros(table.dim, dtype=np.float32)
    return (acc / n).astype(np.float32)


def load_embedding_table(path, oov_policy: str = "skip") -> EmbeddingTable:
    vectors: dict = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            try:
                vec = np.array([float(x) for x in parts[1:]], dtype=np.float64)
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise DatasetError(f"{path}:{lineno}: token {parts[0]!r} has {vec.size} values, expected {dim}")
            vectors[parts[0]] = vec
    if dim is None:
        raise DatasetError(f"{path}: empty embedding table")
    return EmbeddingTable(vectors, dim, oov_policy)


def save_embedding_table(table: EmbeddingTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tok, vec in table.vectors.items():
            fh.write(tok + " " + " ".join(repr(float(x)) for x in vec) + "\n")


# ---------------------------------------------------------------- pool


@dataclass(frozen=True)
class PoolEntry:
    text: str
    frequency: int


@dataclass(frozen=True)
class CandidatePool:
    entries: tuple
    embeddings: np.ndarray  # [K, d_txt]; may be [K, 0] before embedding
    min_freq: int = 1
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        texts = [e.text for e in self.entries]
        index = {t: i for i, t in enumerate(texts)}
        if len(index) != len(texts):
            raise DatasetError("pool texts are not unique after normalization")
        if self.embeddings.shape[0] != len(texts):
            raise DatasetError(f"pool has {len(texts)} entries but {self.embeddings.shape[0]} embeddings")
        for e in self.entries:
            if e.frequency < self.min_freq:
                raise DatasetError(f"pool entry {e.text!r} has frequency {e.frequency} < min_freq {self.min_freq}")
        object.__setattr__(self, "_index", index)

    @property
    def K(self) -> int:
        return len(self.entries)

    @property
    def texts(self) -> list[str]:
        return [e.text for e in self.entries]

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([e.frequency for e in self.entries], dtype=np.int64)

    def index(self, text: str) -> int:
        return self._index[normalize_text(text)]

    def get(self, text: str, default=None):
        return self._index.get(normalize_text(text), default)

    def with_embeddings(self, table: EmbeddingTable) -> "CandidatePool":
        emb = np.stack([embed_question(e.text.split(), table) for e in self.entries]) if self.entries else np.zeros((0, table.dim))
        return CandidatePool(self.entries, _frozen(emb), self.min_freq)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for e in self.entries:
            h.update(f"{e.text}\t{e.frequency}\n".encode())
        h.update(np.ascontiguousarray(self.embeddings, dtype="<f4").tobytes())
        return h.hexdigest()[:16]


def build_candidate_pool(
    raw_answers: Iterable[tuple[str, int]],
    min_freq: int,
    table: EmbeddingTable | None = None,
) -> CandidatePool:
    """Merge counts of normalized answers and keep those seen >= min_freq times.

    Order is descending count, then lexicographic text.
    """
    counts: Counter = Counter()
    for text, count in raw_answers:
        if count < 1:
            raise ValueError(f"answer {text!r} has count {count} < 1")
        norm = normalize_text(text)
        if norm:
            counts[norm] += int(count)
    kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    if not kept:
        raise DatasetError(f"candidate pool is empty at min_freq={min_freq}")
    pool = CandidatePool(tuple(PoolEntry(t, counts[t]) for t in kept), np.zeros((len(kept), 0), np.float32), min_freq)
    return pool.with_embeddings(table) if table is not None else pool


def pool_coverage(raw_answers: Iterable[tuple[str, int]], pool: CandidatePool) -> dict:
    """Fraction of unique answer strings and of answer occurrences that the pool covers."""
    counts: Counter = Counter()
    for text, count in raw_answers:
        counts[normalize_text(text)] += int(count)
    in_pool = [t for t in counts if pool.get(t) is not None]
    total = sum(counts.values())
    return {
        "unique": len(in_pool) / len(counts) if counts else 0.0,
        "occurrences": sum(counts[t] for t in in_pool) / total if total else 0.0,
    }


def write_pool(pool: CandidatePool, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in pool.entries:
            fh.write(f"{e.text}\t{e.frequency}\n")


def read_pool_counts(path) -> list[tuple[str, int]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            text, sep, freq = line.rpartition("\t")
            if not sep:
                raise DatasetError(f"{path}:{lineno}: expected text<TAB>frequency")
            try:
                out.append((text, int(freq)))
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: bad frequency {freq!r}") from None
    return out


# ---------------------------------------------------------------- items


@dataclass(frozen=True)
class McqItem:
    id: str
    qtype: str
    question_tokens: tuple
    image_feature: np.ndarray
    correct_id: int
    original_distractor_ids: tuple
    question_embedding: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        d = tuple(int(i) for i in self.original_distractor_ids)
        object.__setattr__(self, "original_distractor_ids", d)
        object.__setattr__(self, "question_tokens", tuple(self.question_tokens))
        if len(d) != 3:
            raise DatasetError(f"item {self.id}: expected 3 distractors, got {len(d)}")
        if len(set(d)) != 3:
            raise DatasetError(f"item {self.id}: distractors {d} are not distinct")
        if self.correct_id in d:
            raise DatasetError(f"item {self.id}: correct answer {self.correct_id} is also a distractor")
        if not np.isfinite(self.image_feature).all():
            raise DatasetError(f"item {self.id}: image feature has non-finite values")

    @property
    def choices(self) -> tuple:
        return (self.correct_id,) + self.original_distractor_ids


@dataclass(frozen=True)
class Dataset:
    items: tuple
    pool: CandidatePool
    d_img: int
    d_txt: int
    split: dict  # item id -> "train" | "val" | "test"
    table: EmbeddingTable | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "items", tuple(self.items))
        ids = [it.id for it in self.items]
        if len(set(ids)) != len(ids):
            raise DatasetError("duplicate item ids")
        if set(self.split) != set(ids):
            raise DatasetError("split assignment must cover exactly the item ids")
        bad = {s for s in self.split.values() if s not in SPLITS}
        if bad:
            raise DatasetError(f"unknown split names {sorted(bad)}")
        if self.pool.K and self.pool.embeddings.shape[1] != self.d_txt:
            raise DatasetError(f"pool embeddings have dim {self.pool.embeddings.shape[1]}, dataset declares d_txt={self.d_txt}")
        K = self.pool.K
        for it in self.items:
            if it.image_feature.shape != (self.d_img,):
                raise DatasetError(f"item {it.id}: image feature has dim {it.image_feature.shape}, expected {self.d_img}")
            if not (0 <= it.correct_id < K or it.correct_id == OUT_OF_POOL):
                raise DatasetError(f"item {it.id}: correct id {it.correct_id} outside pool of size {K}")
            if any(not 0 <= d < K for d in it.original_distractor_ids):
                raise DatasetError(f"item {it.id}: distractor ids {it.original_distractor_ids} outside pool of size {K}")
            if it.question_embedding is None or np.shape(it.question_embedding) != (self.d_txt,):
                raise DatasetError(f"item {it.id}: missing or mis-sized question embedding")
        img = np.stack([it.image_feature for it in self.items]) if self.items else np.zeros((0, self.d_img))
        q = np.stack([it.question_embedding for it in self.items]) if self.items else np.zeros((0, self.d_txt))
        object.__setattr__(self, "_img", _frozen(img))
        object.__setattr__(self, "_q", _frozen(q))

    def __len__(self) -> int:
        return len(self.items)

    @property
    def image_matrix(self) -> np.ndarray:
        return self._img

    @property
    def question_matrix(self) -> np.ndarray:
        return self._q

    @property
    def correct_ids(self) -> np.ndarray:
        return np.array([it.correct_id for it in self.items], dtype=np.int64)

    @property
    def distractor_ids(self) -> np.ndarray:
        return np.array([it.original_distractor_ids for it in self.items], dtype=np.int64).reshape(-1, 3)

    def split_indices(self, name: str) -> np.ndarray:
        if name == "all":
            return np.arange(len(self.items))
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return np.array([i for i, it in enumerate(self.items) if self.split[it.id] == name], dtype=np.int64)

    def features(self, indices=None) -> np.ndarray:
        """Agent input rows: image feature concatenated with question embedding."""
        idx = slice(None) if indices is None else indices
        return np.concatenate([self._img[idx], self._q[idx]], axis=-1)

    def with_distractors(self, new: dict) -> "Dataset":
        """Copy with ``original_distractor_ids`` replaced for item positions in ``new``."""
        items = list(self.items)
        for pos, ids in new.items():
            items[pos] = replace(items[pos], original_distractor_ids=tuple(int(i) for i in ids))
        return Dataset(tuple(items), self.pool, self.d_img, self.d_txt, dict(self.split), self.table)

    def fingerprint(self) -> str:
        h = hashlib.sha256(self.pool.fingerprint().encode())
        for it in self.items:
            h.update(f"{it.id}|{it.qtype}|{' '.join(it.question_tokens)}|{it.correct_id}|{it.original_distractor_ids}|{self.split[it.id]}\n".encode())
        h.update(np.ascontiguousarray(self._img, dtype="<f4").tobytes())
        return h.hexdigest()[:16]


def _default_split(item_id: str) -> str:
    bucket = int(hashlib.sha256(item_id.encode()).hexdigest(), 16) % 10
    return "train" if bucket < 7 else ("val" if bucket < 8 else "test")


# ---------------------------------------------------------------- features


def write_features(matrix: np.ndarray, path) -> None:
    m = np.ascontiguousarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", *m.shape))
        fh.write(m.tobytes())


def read_features(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != FEATURE_MAGIC:
        raise DatasetError(f"{path}: bad magic {raw[:4]!r}, expected {FEATURE_MAGIC!r}")
    if len(raw) < 12:
        raise DatasetError(f"{path}: truncated header")
    count, dim = struct.unpack_from("<II", raw, 4)
    expected = 12 + 4 * count * dim
    if len(raw) != expected:
        raise DatasetError(f"{path}: expected {expected} bytes for {count}x{dim} floats, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f4", offset=12).reshape(count, dim).astype(np.float32)


# ---------------------------------------------------------------- dataset io


def load_dataset(dataset_path, features_path, allow_missing_correct: bool = False) -> Dataset:
    """Read and validate a dataset file plus its feature file.

    With ``allow_missing_correct`` an item whose correct answer was filtered
    out of the pool keeps ``correct_id = OUT_OF_POOL`` instead of failing.
    """
    dataset_path = Path(dataset_path)
    base = dataset_path.parent
    with open(dataset_path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetError(f"{dataset_path}: empty file")
    try:
        header = json.loads(lines[0])
        d_img, d_txt = int(header["d_img"]), int(header["d_txt"])
        emb_path = base / header["embeddings"]
    except (ValueError, KeyError, TypeError) as exc:
        raise DatasetError(f"{dataset_path}:1: bad header ({exc})") from None

    records = []
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            rec = {
                "id": str(rec["id"]),
                "qtype": str(rec["qtype"]),
                "question": str(rec["question"]),
                "correct": str(rec["correct"]),
                "distractors": [str(d) for d in rec["distractors"]],
                "split": rec.get("split"),
                "line": lineno,
            }
        except (ValueError, KeyError, TypeError) as exc:
            raise DatasetError(f"{dataset_path}:{lineno}: malformed record ({exc})") from None
        if len(rec["distractors"]) != 3:
            raise DatasetError(f"{dataset_path}:{lineno}: item {rec['id']} needs 3 distractors")
        records.append(rec)

    table = load_embedding_table(emb_path, header.get("oov_policy", "skip"))
    if table.dim != d_txt:
        raise DatasetError(f"{emb_path}: embedding dim {table.dim} != declared d_txt {d_txt}")

    if "pool" in header:
        raw = read_pool_counts(base / header["pool"])
    else:
        counter: Counter = Counter()
        for rec in records:
            counter[normalize_text(rec["correct"])] += 1
            for d in rec["distractors"]:
                counter[normalize_text(d)] += 1
        raw = list(counter.items())
    pool = build_candidate_pool(raw, int(header.get("min_freq", 1)), table)

    feats = read_features(features_path)
    if feats.shape[0] != len(records):
        raise DatasetError(f"{features_path}: {feats.shape[0]} feature rows for {len(records)} records")
    if feats.shape[1] != d_img:
        raise DatasetError(f"{features_path}: feature dim {feats.shape[1]} does not match declared d_img {d_img}")

    items, split = [], {}
    for row, rec in enumerate(records):
        where = f"{dataset_path}:{rec['line']}: item {rec['id']}"
        cid = pool.get(rec["correct"])
        if cid is None:
            if not allow_missing_correct:
                raise DatasetError(f"{where}: dangling pool index, correct answer {rec['correct']!r} not in pool")
            cid = OUT_OF_POOL
        dids = []
        for d in rec["distractors"]:
            j = pool.get(d)
            if j is None:
                raise DatasetError(f"{where}: dangling pool index, distractor {d!r} not in pool")
            dids.append(j)
        tokens = tokenize(rec["question"])
        if not tokens:
            raise DatasetError(f"{where}: empty question")
        try:
            item = McqItem(
                rec["id"], rec["qtype"], tokens, _frozen(feats[row]), cid, tuple(dids),
                _frozen(embed_question(tokens, table)),
            )
        except DatasetError as exc:
            raise DatasetError(f"{dataset_path}:{rec['line']}: {exc}") from None
        items.append(item)
        split[rec["id"]] = rec["split"] or _default_split(rec["id"])
    return Dataset(tuple(items), pool, d_img, d_txt, split, table)


def save_dataset(dataset: Dataset, directory, stem: str = "dataset") -> dict:
    """Write dataset/features/embeddings/pool files; returns their paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if dataset.table is None:
        raise DatasetError("dataset has no embedding table to serialize")
    paths = {
        "dataset": directory / f"{stem}.jsonl",
        "features": directory / f"{stem}.dfv",
        "embeddings": directory / f"{stem}.emb.txt",
        "pool": directory / f"{stem}.pool.tsv",
    }
    header = {
        "d_img": dataset.d_img,
        "d_txt": dataset.d_txt,
        "embeddings": paths["embeddings"].name,
        "pool": paths["pool"].name,
        "min_freq": dataset.pool.min_freq,
        "oov_policy": dataset.table.oov_policy,
    }
    texts = dataset.pool.texts
    with open(paths["dataset"], "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for it in dataset.items:
            rec = {
                "id": it.id,
                "qtype": it.qtype,
                "question": " ".join(it.question_tokens),
                "correct": texts[it.correct_id],
                "distractors": [texts[d] for d in it.original_distractor_ids],
                "split": dataset.split[it.id],
            }
            fh.write(json.dumps(rec) + "\n")
    write_features(dataset.image_matrix, paths["features"])
    save_embedding_table(dataset.table, paths["embeddings"])
    write_pool(dataset.pool, paths["pool"])
    return paths


# ---------------------------------------------------------------- synthetic


QTYPE_WORDS = ("what", "where", "when", "who", "why", "how", "which")
_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


@dataclass(frozen=True)
class SyntheticSpec:
    n_items: int = 2000
    K: int = 200
    d_img: int = 64
    d_txt: int = 32
    n_qtypes: int = 7
    separability: float = 0.9
    n_clusters: int = 0  # 0 -> max(n_qtypes, K // 20)
    variant_scale: float = 0.6
    min_freq: int = 20
    n_rare: int = 20
    equiv_tau: float = 0.95
    split_fractions: tuple = (0.7, 0.1, 0.2)


def _pseudo_words(gen: np.random.Generator, n: int, taken: set) -> list[str]:
    words = []
    while len(words) < n:
        syl = gen.integers(2, 4)
        w = "".join(_CONSONANTS[gen.integers(len(_CONSONANTS))] + _VOWELS[gen.integers(len(_VOWELS))] for _ in range(syl))
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def generate_synthetic(spec: SyntheticSpec, seed: int) -> Dataset:
    """Seeded toy analogue of a 4-choice visual QA corpus.

    Answers are two-word phrases ``<topic> <variant>``; answers sharing a
    topic form a cluster of similar embeddings.  With probability
    ``separability`` the question names the correct answer's topic (and the
    matching question type); the image feature is a fixed random projection
    of ``s * u + sqrt(1 - s^2) * noise`` where ``u`` is the unit embedding of
    the correct answer.  At ``separability = 0`` nothing in the inputs
    depends on the answer.  Correct answers and original distractors are both
    drawn proportionally to pool frequency.
    """
    if spec.K < 4:
        raise ValueError(f"K={spec.K}: need at least 4 candidates for a 4-choice question")
    s = float(spec.separability)
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"separability {s} outside [0, 1]")
    if spec.n_qtypes < 1 or spec.n_items < 1:
        raise ValueError("n_qtypes and n_items must be positive")
    gen = Rng(seed).gen
    d = spec.d_txt
    n_clusters = spec.n_clusters or max(spec.n_qtypes, spec.K // 20)

    taken = set(QTYPE_WORDS)
    qtype_words = list(QTYPE_WORDS[: spec.n_qtypes])
    if spec.n_qtypes > len(QTYPE_WORDS):
        qtype_words += _pseudo_words(gen, spec.n_qtypes - len(QTYPE_WORDS), taken)
    topic_words = _pseudo_words(gen, n_clusters, taken)
    variant_words = _pseudo_words(gen, spec.K + spec.n_rare, taken)
    filler_words = _pseudo_words(gen, 30, taken)

    vectors = {}
    for w in qtype_words + filler_words:
        vectors[w] = gen.normal(0.0, 1.0 / np.sqrt(d), d)
    for w in topic_words:
        vectors[w] = gen.normal(0.0, 1.0 / np.sqrt(d), d)
    for w in variant_words:
        vectors[w] = gen.normal(0.0, spec.variant_scale / np.sqrt(d), d)
    table = EmbeddingTable(vectors, d, "skip")

    answer_cluster = gen.integers(n_clusters, size=spec.K + spec.n_rare)
    answer_texts = [f"{topic_words[c]} {variant_words[j]}" for j, c in enumerate(answer_cluster)]
    ranks = gen.permutation(spec.K)
    counts = spec.min_freq + np.floor(2.0 * spec.min_freq / np.sqrt(1.0 + ranks)).astype(int) + gen.integers(0, 3, spec.K)
    rare_counts = gen.integers(1, max(spec.min_freq, 2), spec.n_rare)
    raw = list(zip(answer_texts, counts.tolist() + rare_counts.tolist()))
    pool = build_candidate_pool(raw, spec.min_freq, table)
    if pool.K != spec.K:
        raise RuntimeError(f"synthetic pool has {pool.K} entries, expected {spec.K}")
    text_cluster = dict(zip(answer_texts, answer_cluster.tolist()))
    cluster_of = np.array([text_cluster[t] for t in pool.texts])
    qtype_of_cluster = gen.permutation(n_clusters) % spec.n_qtypes

    emb = pool.embeddings.astype(np.float64)
    unit = emb / np.linalg.norm(emb, axis=1, keepdims=True)
    cos = unit @ unit.T
    freq = pool.frequencies.astype(np.float64)
    proj = gen.normal(0.0, 1.0, (spec.d_img, d))

    order = gen.permutation(spec.n_items)
    n_train = int(round(spec.split_fractions[0] * spec.n_items))
    n_val = int(round(spec.split_fractions[1] * spec.n_items))
    split_of = np.empty(spec.n_items, dtype=object)
    split_of[order[:n_train]] = "train"
    split_of[order[n_train : n_train + n_val]] = "val"
    split_of[order[n_train + n_val :]] = "test"

    width = len(str(spec.n_items - 1))
    items, split = [], {}
    for n in range(spec.n_items):
        c = int(gen.choice(spec.K, p=freq / freq.sum()))
        allowed = (cos[c] < spec.equiv_tau) & (np.arange(spec.K) != c)
        w = np.where(allowed, freq, 0.0)
        distractors = gen.choice(spec.K, size=3, replace=False, p=w / w.sum())
        shown = cluster_of[c] if gen.random() < s else int(gen.integers(n_clusters))
        qtype = qtype_words[qtype_of_cluster[shown]]
        tokens = [qtype, topic_words[shown]] + list(gen.choice(filler_words, size=2))
        latent = s * unit[c] + np.sqrt(1.0 - s * s) * gen.normal(0.0, 1.0 / np.sqrt(d), d)
        img = proj @ latent + gen.normal(0.0, 0.1, spec.d_img)
        item_id = f"syn{n:0{width}d}"
        items.append(
            McqItem(item_id, qtype, tokens, _frozen(img), c, tuple(int(x) for x in distractors),
                    _frozen(embed_question(tokens, table)))
        )
        split[item_id] = str(split_of[n])
    return Dataset(tuple(items), pool, spec.d_img, d, split, table)
