"""Command-line entry point: ``dgvqa <subcommand> ...``.

Every flag can also come from a JSON config file (``--config`` or the
``DGVQA_CONFIG`` environment variable); keys are flag names with dashes
replaced by underscores.  Explicit flags win over the config file.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from .agent import AgentGenerator, PolicyAgent, SemEquivModel, write_generated
from .baselines import (
    FailureConfig,
    MatchingGenerator,
    MatchingScorer,
    PriorGenerator,
    build_qtype_prior,
    train_failure_baseline,
)
from .dataset import DatasetError, SyntheticSpec, generate_synthetic, load_dataset, save_dataset
from .environment import Discriminator, EnvConfig, train_discriminator
from .harness import (
    AttackReport,
    FileGenerator,
    OriginalGenerator,
    augment_dataset,
    run_attack,
    run_augmentation_experiment,
    write_manifest,
)
from .kernel import Rng
from .reinforce import RewardSpec, TrainConfig, pretrain_agent, train_mlpr

CONFIG_ENV = "DGVQA_CONFIG"
log = logging.getLogger("dgvqa")


def _features_for(dataset_path: str, features: str | None) -> Path:
    return Path(features) if features else Path(dataset_path).with_suffix(".dfv")


def _load(args):
    return load_dataset(args.dataset, _features_for(args.dataset, args.features))


def _inputs(args) -> dict:
    files = {"dataset": Path(args.dataset), "features": _features_for(args.dataset, args.features)}
    return files


def _manifest(args, out: Path, extra_files: dict | None = None) -> None:
    entries = {"command": args.command}
    entries["args"] = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command", "config")}
    files = {}
    if getattr(args, "dataset", None):
        files.update(_inputs(args))
    files.update(extra_files or {})
    target = out / "manifest.txt" if out.is_dir() else Path(str(out) + ".manifest")
    write_manifest(target, entries, files)


def _add_dataset(p) -> None:
    p.add_argument("--dataset", required=True, help="dataset .jsonl file")
    p.add_argument("--features", help="feature file (default: dataset path with .dfv suffix)")


def _add_net(p, epochs_default: int, lr_default: float, optimizer_default: str, epochs_flag: str = "--epochs") -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(epochs_flag, type=int, default=epochs_default)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=lr_default)
    p.add_argument("--optimizer", choices=("sgd", "adam"), default=optimizer_default)
    p.add_argument("--hidden", type=int, default=4096)
    p.add_argument("--dropout", type=float, default=0.5)


def cmd_gen_synth(args) -> int:
    spec = SyntheticSpec(n_items=args.n_items, K=args.K, d_img=args.d_img, d_txt=args.d_txt,
                         n_qtypes=args.n_qtypes, separability=args.separability, min_freq=args.min_freq)
    ds = generate_synthetic(spec, args.seed)
    out = Path(args.out)
    paths = save_dataset(ds, out)
    _manifest(args, out, {k: v for k, v in paths.items()})
    print(f"wrote {len(ds)} items, K={ds.pool.K} to {paths['dataset']}")
    return 0


def _env_config(args) -> EnvConfig:
    return EnvConfig(epochs=args.epochs, batch=args.batch, lr=args.lr, neg_per_pos=args.neg_per_pos,
                     hidden=args.hidden, dropout_p=args.dropout, optimizer=args.optimizer)


def cmd_train_env(args) -> int:
    ds = _load(args)
    disc = train_discriminator(ds, _env_config(args), Rng(args.seed))
    out = Path(args.out)
    disc.save(out)
    _manifest(args, out, {"checkpoint": out})
    print(f"wrote discriminator to {out}")
    return 0


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        pretrain_epochs=args.pretrain_epochs, rl_epochs=getattr(args, "rl_epochs", 0),
        samples_per_item=getattr(args, "samples", 4), batch=args.batch, lr=args.lr, optimizer=args.optimizer,
        seed=args.seed, hidden=args.hidden, dropout_p=args.dropout, use_baseline=getattr(args, "baseline", False),
    )


def cmd_pretrain(args) -> int:
    ds = _load(args)
    cfg = _train_config(args)
    rng = Rng(args.seed)
    agent = PolicyAgent.create(ds.d_img, ds.d_txt, ds.pool, rng.child(0), cfg.hidden, cfg.dropout_p)
    agent, train_log = pretrain_agent(agent, ds, cfg, rng.child(1))
    agent.meta.update({"variant": "pretrain", "seed": args.seed, "epoch": cfg.pretrain_epochs})
    out = Path(args.out)
    agent.save(out)
    train_log.write(Path(str(out) + ".log.jsonl"))
    _manifest(args, out, {"checkpoint": out})
    print(f"wrote pre-trained agent to {out}")
    return 0


def cmd_attack_train(args) -> int:
    ds = _load(args)
    envs = [Discriminator.load(p) for p in args.env]
    spec = RewardSpec(envs, SemEquivModel(ds.pool, args.tau), args.penalty)
    cfg = _train_config(args)
    init = PolicyAgent.load(args.init) if args.init else None
    agent, train_log = train_mlpr(ds, spec, cfg, args.variant, agent=init)
    out = Path(args.out)
    agent.save(out)
    train_log.write(Path(str(out) + ".log.jsonl"))
    Path(str(out) + ".config.txt").write_text("".join(f"{k}={v}\n" for k, v in sorted(asdict(cfg).items())))
    _manifest(args, out, {"checkpoint": out, **{f"env{i}": Path(p) for i, p in enumerate(args.env)}})
    last = train_log.phase("rl")[-1]["mean_reward"] if cfg.rl_epochs else float("nan")
    print(f"wrote {args.variant} agent to {out} (final mean reward {last:.4f})")
    return 0


def cmd_baseline(args) -> int:
    ds = _load(args)
    sem = SemEquivModel(ds.pool, args.tau)
    extra = {}
    if args.kind == "prior":
        gen = PriorGenerator(build_qtype_prior(ds), sem)
    elif args.kind == "matching":
        gen = MatchingGenerator(ds.pool, MatchingScorer(lam=args.lam), sem)
    else:
        if not args.env:
            raise ValueError("--env is required for the failure baseline")
        disc = Discriminator.load(args.env)
        fc = FailureConfig(args.epochs, args.batch, args.lr, args.optimizer, args.hidden, args.dropout)
        agent = train_failure_baseline(ds, disc, fc, Rng(args.seed))
        ckpt = Path(str(args.out) + ".dfm")
        agent.save(ckpt)
        extra["checkpoint"] = ckpt
        gen = AgentGenerator(agent, sem, name="failure")
    idx = ds.split_indices(args.split)
    out = Path(args.out)
    write_generated(out, ds, idx, gen.generate(ds, idx), args.kind)
    _manifest(args, out, {"generated": out, **extra})
    print(f"wrote {args.kind} distractors for {idx.size} items to {out}")
    return 0


def _generator(spec: str, ds, tau: float):
    name, sep, path = spec.partition("=")
    if not sep:
        name, path = Path(spec).stem, spec
    if path == "original":
        gen = OriginalGenerator()
        return gen if name == "original" else _renamed(gen, name)
    if path.endswith(".dfm"):
        return AgentGenerator(PolicyAgent.load(path), SemEquivModel(ds.pool, tau), name=name)
    return FileGenerator(path, name=name)


def _renamed(gen, name):
    gen.name = name
    return gen


def cmd_evaluate(args) -> int:
    ds = _load(args)
    envs = {}
    for spec in args.env:
        name, sep, path = spec.partition("=")
        if not sep:
            name, path = Path(spec).stem, spec
        envs[name] = Discriminator.load(path)
    gens = [_generator(g, ds, args.tau) for g in args.gen]
    report = run_attack(ds, envs, gens, seed=args.seed, split=args.split)
    paths = report.write(args.out)
    _manifest(args, paths["summary"], dict(paths))
    sys.stdout.write(report.table())
    return 0


def cmd_augment(args) -> int:
    ds = _load(args)
    gen = _generator(args.gen, ds, args.tau)
    if args.experiment:
        cfg = _env_config(args)
        report, _ = run_augmentation_experiment(ds, gen, cfg, args.seed, split=args.split)
        paths = report.write(args.out)
        _manifest(args, paths["summary"], dict(paths))
        sys.stdout.write(report.table())
        return 0
    aug = augment_dataset(ds, gen, args.ratio, Rng(args.seed))
    out = Path(args.out)
    paths = save_dataset(aug, out)
    _manifest(args, out, dict(paths))
    print(f"wrote augmented dataset to {paths['dataset']}")
    return 0


def cmd_report(args) -> int:
    path = Path(args.input)
    first = json.loads(path.read_text().splitlines()[1]) if len(path.read_text().splitlines()) > 1 else {}
    if "trained_on" in first:
        sys.stdout.write(path.with_suffix(".txt").read_text())
        return 0
    report = AttackReport.read(path)
    text = report.table()
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dgvqa", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV})")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="write a seeded synthetic dataset")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-items", type=int, default=2000)
    p.add_argument("--K", type=int, default=200)
    p.add_argument("--d-img", type=int, default=64)
    p.add_argument("--d-txt", type=int, default=32)
    p.add_argument("--n-qtypes", type=int, default=7)
    p.add_argument("--separability", type=float, default=0.9)
    p.add_argument("--min-freq", type=int, default=20)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train-env", help="train the triplet discriminator")
    _add_dataset(p)
    _add_net(p, 50, 0.1, "sgd")
    p.add_argument("--neg-per-pos", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_env)

    p = sub.add_parser("pretrain", help="cross-entropy pre-training of the agent")
    _add_dataset(p)
    _add_net(p, 80, 1e-4, "adam", "--pretrain-epochs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("attack-train", help="REINFORCE training against frozen environments")
    _add_dataset(p)
    _add_net(p, 80, 1e-4, "adam", "--pretrain-epochs")
    p.add_argument("--env", action="append", required=True, help="discriminator checkpoint (repeatable)")
    p.add_argument("--variant", choices=("mlpr", "mlpr_pretrain"), default="mlpr")
    p.add_argument("--rl-epochs", type=int, default=200)
    p.add_argument("--samples", type=int, default=4)
    p.add_argument("--baseline", action="store_true", help="subtract a moving-average reward baseline")
    p.add_argument("--tau", type=float, default=0.95)
    p.add_argument("--penalty", type=float, default=-1.0)
    p.add_argument("--init", help="start from this agent checkpoint")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attack_train)

    p = sub.add_parser("baseline", help="emit baseline distractors")
    _add_dataset(p)
    _add_net(p, 80, 1e-4, "adam")
    p.add_argument("--kind", choices=("prior", "matching", "failure"), required=True)
    p.add_argument("--env", help="discriminator checkpoint (failure baseline)")
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=0.95)
    p.add_argument("--split", default="all")
    p.add_argument("--out", required=True, help="generated-distractor .jsonl")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("evaluate", help="attack report: accuracy on original vs generated distractors")
    _add_dataset(p)
    p.add_argument("--env", action="append", required=True, help="NAME=checkpoint (repeatable)")
    p.add_argument("--gen", action="append", required=True,
                   help="NAME=agent.dfm | NAME=generated.jsonl | original (repeatable)")
    p.add_argument("--tau", type=float, default=0.95)
    p.add_argument("--split", default="test")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="report prefix (.jsonl and .txt are written)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("augment", help="swap in generated distractors, or run the retraining study")
    _add_dataset(p)
    _add_net(p, 50, 0.1, "sgd")
    p.add_argument("--neg-per-pos", type=int, default=3)
    p.add_argument("--gen", required=True, help="agent checkpoint or generated-distractor file")
    p.add_argument("--ratio", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=0.95)
    p.add_argument("--split", default="test")
    p.add_argument("--experiment", action="store_true", help="train on [O], [A], 0.5[O]+0.5[A] and report")
    p.add_argument("--out", required=True, help="output directory, or report prefix with --experiment")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("report", help="render a report summary as a table")
    p.add_argument("--input", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    path = known.config or os.environ.get(CONFIG_ENV)
    if not path:
        return
    cfg = json.loads(Path(path).read_text())
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    for action in parser._subparsers._group_actions:
        for sp in action.choices.values():
            valid = {a.dest for a in sp._actions}
            sp.set_defaults(**{k: v for k, v in cfg.items() if k in valid})
            for a in sp._actions:
                if a.dest in cfg and a.required:
                    a.required = False


def cli_main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (OSError, ValueError) as exc:
        print(f"dgvqa: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DatasetError, ValueError, OSError, KeyError, RuntimeError) as exc:
        print(f"dgvqa: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())
