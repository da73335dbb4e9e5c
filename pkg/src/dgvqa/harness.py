"""Experiment orchestration: attack grids, augmentation study, reports."""

from __future__ import annotations

import hashlib
import json
import math
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from .agent import read_generated
from .dataset import Dataset, McqItem
from .environment import EnvConfig, Environment, evaluate_choices, train_discriminator
from .kernel import Rng


class Generator(Protocol):
    name: str

    def generate(self, dataset: Dataset, indices: np.ndarray) -> np.ndarray: ...


class GeneratorError(RuntimeError):
    pass


class OriginalGenerator:
    """The dataset's own distractors."""

    name = "original"

    def __call__(self, item: McqItem) -> tuple:
        return item.original_distractor_ids

    def generate(self, dataset: Dataset, indices) -> np.ndarray:
        return dataset.distractor_ids[np.asarray(indices, dtype=np.int64)]


class FileGenerator:
    """Distractors read back from a generated-distractor file, keyed by item id."""

    def __init__(self, path, name: str | None = None) -> None:
        recs = read_generated(path)
        self.by_id = {r["item_id"]: tuple(int(i) for i in r["distractor_ids"]) for r in recs}
        self.name = name or (recs[0].get("choice_source") if recs else None) or Path(path).stem

    def __call__(self, item: McqItem) -> tuple:
        try:
            return self.by_id[item.id]
        except KeyError:
            raise GeneratorError(f"generated file has no distractors for item {item.id}") from None

    def generate(self, dataset: Dataset, indices) -> np.ndarray:
        return np.array([self(dataset.items[i]) for i in indices], dtype=np.int64).reshape(-1, 3)


def delta_acc(acc_original: float, acc_attacked: float) -> float:
    for v in (acc_original, acc_attacked):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"accuracy {v} outside [0, 1]")
    return acc_original - acc_attacked


def _checked(dataset: Dataset, indices: np.ndarray, out: np.ndarray, name: str) -> np.ndarray:
    out = np.asarray(out, dtype=np.int64)
    if out.shape != (indices.size, 3):
        raise GeneratorError(f"generator {name} returned shape {out.shape}, expected ({indices.size}, 3)")
    correct = dataset.correct_ids[indices]
    for r in range(indices.size):
        row = out[r]
        if len(set(row.tolist())) != 3 or correct[r] in row or (row < 0).any() or (row >= dataset.pool.K).any():
            raise GeneratorError(f"generator {name} produced invalid distractors {tuple(row)} "
                                 f"for item {dataset.items[indices[r]].id}")
    return out


@dataclass
class AttackCell:
    acc_original: float
    acc_attacked: float
    delta_acc: float


@dataclass
class AttackReport:
    cells: dict  # (environment, generator) -> AttackCell
    metadata: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        return [
            {"environment": e, "generator": g, "acc_original": c.acc_original,
             "acc_attacked": c.acc_attacked, "delta_acc": c.delta_acc}
            for (e, g), c in sorted(self.cells.items())
        ]

    def summary_lines(self) -> list[str]:
        lines = [json.dumps({"metadata": self.metadata}, sort_keys=True)]
        lines += [json.dumps(r, sort_keys=True) for r in self.rows()]
        return lines

    def table(self) -> str:
        head = f"{'environment':<16} {'generator':<20} {'Acc(orig)':>10} {'Acc(gen)':>10} {'dAcc':>8}"
        out = [head, "-" * len(head)]
        for r in self.rows():
            out.append(f"{r['environment']:<16} {r['generator']:<20} {100 * r['acc_original']:>9.2f}% "
                       f"{100 * r['acc_attacked']:>9.2f}% {100 * r['delta_acc']:>7.2f}")
        return "\n".join(out) + "\n"

    def write(self, prefix) -> dict:
        prefix = Path(prefix)
        paths = {"summary": prefix.with_suffix(".jsonl"), "table": prefix.with_suffix(".txt")}
        paths["summary"].write_text("\n".join(self.summary_lines()) + "\n")
        paths["table"].write_text(self.table())
        return paths

    @classmethod
    def read(cls, path) -> "AttackReport":
        lines = [json.loads(x) for x in Path(path).read_text().splitlines() if x.strip()]
        meta = lines[0].get("metadata", {}) if lines and "metadata" in lines[0] else {}
        cells = {
            (r["environment"], r["generator"]): AttackCell(r["acc_original"], r["acc_attacked"], r["delta_acc"])
            for r in lines if "environment" in r
        }
        return cls(cells, meta)


def run_attack(
    dataset: Dataset,
    environments: Mapping[str, Environment] | Sequence[tuple[str, Environment]],
    generators: Sequence[Generator],
    seed: int = 0,
    split: str = "test",
) -> AttackReport:
    """Accuracy of every environment on original vs. generated distractors."""
    envs = dict(environments)
    idx = dataset.split_indices(split)
    correct = dataset.correct_ids[idx][:, None]
    original = np.concatenate([correct, dataset.distractor_ids[idx]], axis=1)
    generated = {}
    for gen in generators:
        if gen.name in generated:
            raise ValueError(f"duplicate generator name {gen.name!r}")
        generated[gen.name] = np.concatenate([correct, _checked(dataset, idx, gen.generate(dataset, idx), gen.name)], axis=1)
    cells = {}
    for env_name in sorted(envs):
        env = envs[env_name]
        base = evaluate_choices(env, dataset, idx, original).accuracy
        for gen_name in sorted(generated):
            att = evaluate_choices(env, dataset, idx, generated[gen_name], gen_name).accuracy
            cells[(env_name, gen_name)] = AttackCell(base, att, delta_acc(base, att))
    meta = {
        "seed": seed,
        "split": split,
        "n_items": int(idx.size),
        "dataset": dataset.fingerprint(),
        "environments": {k: envs[k].checksum()[:16] for k in sorted(envs)},
    }
    return AttackReport(cells, meta)


def augment_dataset(dataset: Dataset, generator: Generator, ratio: float, rng: Rng) -> Dataset:
    """Swap the distractors of exactly floor(ratio * n) seeded-chosen items for generated ones."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"ratio {ratio} outside [0, 1]")
    n = len(dataset)
    m = int(math.floor(ratio * n))
    if m == 0:
        return dataset
    chosen = np.sort(rng.gen.choice(n, size=m, replace=False))
    try:
        new = _checked(dataset, chosen, generator.generate(dataset, chosen), generator.name)
    except GeneratorError:
        raise
    except Exception as exc:
        raise GeneratorError(f"generator {generator.name} failed: {exc}") from exc
    return dataset.with_distractors({int(i): tuple(row) for i, row in zip(chosen, new)})


MIXES = ("[O]", "[A]", "0.5[O]+0.5[A]")
EVAL_SETS = ("[O]", "[A]")


@dataclass
class AugmentationReport:
    accuracy: dict  # (train mix, eval set) -> accuracy
    metadata: dict = field(default_factory=dict)

    def summary_lines(self) -> list[str]:
        lines = [json.dumps({"metadata": self.metadata}, sort_keys=True)]
        for mix in MIXES:
            for ev in EVAL_SETS:
                lines.append(json.dumps({"trained_on": mix, "evaluated_on": ev, "accuracy": self.accuracy[(mix, ev)]}, sort_keys=True))
        return lines

    def table(self) -> str:
        out = [f"{'trained on':<16} {'Acc@[O]':>9} {'Acc@[A]':>9}", "-" * 36]
        for mix in MIXES:
            out.append(f"{mix:<16} {100 * self.accuracy[(mix, '[O]')]:>8.2f}% {100 * self.accuracy[(mix, '[A]')]:>8.2f}%")
        return "\n".join(out) + "\n"

    def write(self, prefix) -> dict:
        prefix = Path(prefix)
        paths = {"summary": prefix.with_suffix(".jsonl"), "table": prefix.with_suffix(".txt")}
        paths["summary"].write_text("\n".join(self.summary_lines()) + "\n")
        paths["table"].write_text(self.table())
        return paths


def run_augmentation_experiment(
    dataset: Dataset,
    generator: Generator,
    env_config: EnvConfig,
    seed: int,
    split: str = "test",
) -> tuple[AugmentationReport, dict]:
    """Retrain the environment on original, generated and half-swapped distractors.

    Returns the report and the three trained discriminators keyed by mix.
    """
    rng = Rng(seed)
    adv = augment_dataset(dataset, generator, 1.0, rng.child(0))
    half = augment_dataset(dataset, generator, 0.5, rng.child(1))
    train_sets = {"[O]": dataset, "[A]": adv, "0.5[O]+0.5[A]": half}
    eval_sets = {"[O]": dataset, "[A]": adv}
    acc, discs = {}, {}
    for mix in MIXES:
        disc = train_discriminator(train_sets[mix], env_config, rng.child(2))
        discs[mix] = disc
        for ev in EVAL_SETS:
            ds = eval_sets[ev]
            idx = ds.split_indices(split)
            choices = np.concatenate([ds.correct_ids[idx][:, None], ds.distractor_ids[idx]], axis=1)
            acc[(mix, ev)] = evaluate_choices(disc, ds, idx, choices, ev).accuracy
    meta = {"seed": seed, "generator": generator.name, "split": split, "dataset": dataset.fingerprint(),
            "env_config": vars(env_config)}
    return AugmentationReport(acc, meta), discs


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _version() -> str:
    from . import __version__

    return __version__


def write_manifest(path, entries: Mapping, files: Mapping[str, Path] | None = None) -> None:
    """Flat ``key=value`` reproducibility record; no timestamps, sorted keys."""
    flat = {
        "package.version": _version(),
        "numpy.version": np.__version__,
        "python.version": platform.python_version(),
    }
    for k, v in entries.items():
        if isinstance(v, dict):
            for kk, vv in v.items():
                flat[f"{k}.{kk}"] = vv
        else:
            flat[k] = v
    for name, p in (files or {}).items():
        flat[f"sha256.{name}"] = file_sha256(p)
    Path(path).write_text("".join(f"{k}={flat[k]}\n" for k in sorted(flat)))


def read_manifest(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        k, sep, v = line.partition("=")
        if sep:
            out[k] = v
    return out
