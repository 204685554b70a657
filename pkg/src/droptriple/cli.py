"""Command-line entry point: ``droptriple <command> ...``.

Commands: ``gen-data``, ``train``, ``eval``, ``gradcheck``, ``sweep``.

Run configs are JSON files with the sections ``corpus`` (CorpusConfig
fields), ``train`` (TrainConfig fields) and ``eval`` (``{"mode": ...}``) plus
the top-level keys ``seed``, ``out`` and ``corpus_path``. ``--set a.b=v``
overrides any key; values are parsed as JSON when possible. The top-level
seed feeds both the corpus generator and the trainer. Every command that
writes files echoes the resolved config to ``<out>/config.json``.

Exit codes: 0 ok, 1 gradient check failed, 2 config error, 3 I/O error,
4 checkpoint format version mismatch, 5 dimension mismatch.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from collections import Counter
from dataclasses import replace
from pathlib import Path

from . import gradcheck
from .corpus import CorpusConfig, generate_corpus, load_corpus, save_corpus
from .encoder import PARAM_KEYS
from .errors import CorruptRecord, DimensionMismatch, DropTripleError, FormatVersionMismatch, InvalidConfig
from .evaluator import (
    evaluate_split,
    format_reports,
    threshold_sweep,
    write_reports_csv,
    write_sweep_csv,
)
from .loss import LossConfig
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train, write_metrics_csv

EXIT_OK, EXIT_GRAD, EXIT_CONFIG, EXIT_IO, EXIT_VERSION, EXIT_DIM = 0, 1, 2, 3, 4, 5
MODE_NAMES = {"exact": "exact_pair", "semantic": "semantic"}

DEFAULT_RUN = {
    "seed": 0,
    "out": "runs/default",
    "corpus_path": None,
    "corpus": {},
    "train": {},
    "eval": {"mode": "semantic"},
}


class ConfigError(Exception):
    pass


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def load_run_config(path, overrides=()) -> dict:
    cfg = copy.deepcopy(DEFAULT_RUN)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be an object")
        unknown = set(user) - set(DEFAULT_RUN)
        if unknown:
            raise ConfigError(f"unknown config key {sorted(unknown)[0]!r}")
        for key, value in user.items():
            if isinstance(cfg[key], dict) and isinstance(value, dict):
                cfg[key].update(value)
            else:
                cfg[key] = value
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"--set: {key!r} does not name a config section")
            node = node[p]
        node[parts[-1]] = _parse_value(raw)
    return cfg


def corpus_config(run: dict) -> CorpusConfig:
    d = dict(run["corpus"])
    d["seed"] = run["seed"]
    cfg = CorpusConfig.from_dict(d)
    cfg.validate()
    return cfg


def train_config(run: dict) -> TrainConfig:
    d = dict(run["train"])
    d["seed"] = run["seed"]
    d.setdefault("val_mode", MODE_NAMES.get(run["eval"].get("mode", "exact"), "exact_pair"))
    return TrainConfig.from_dict(d)


def _prevalidate(config: TrainConfig) -> None:
    # dims come from the corpus; stand-ins let every other field be checked first
    replace(config, pose_dim=config.pose_dim or 1, vocab_size=config.vocab_size or 2).validate()


def _echo(run: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(run, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _corpus_for(run: dict):
    if run.get("corpus_path"):
        return load_corpus(run["corpus_path"])
    return generate_corpus(corpus_config(run))


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    run = load_run_config(args.config, args.set)
    if args.seed is not None:
        run["seed"] = args.seed
    if args.out is not None:
        run["out"] = args.out
    corpus = generate_corpus(corpus_config(run))
    out = Path(run["out"])
    _echo(run, out)
    save_corpus(corpus.manifest, corpus.samples, out / "corpus.jsonl")
    sizes = Counter(Counter(s.equivalence_class_id for s in corpus.samples).values())
    print(f"samples: {len(corpus.samples)} (train {len(corpus.manifest.train_ids)}, test {len(corpus.manifest.test_ids)})")
    print(f"seed: {run['seed']}")
    print("equivalence classes by size:")
    for size in sorted(sizes):
        print(f"  size {size:3d}: {sizes[size]} classes")
    return EXIT_OK


def cmd_train(args) -> int:
    run = load_run_config(args.config, args.set)
    if args.seed is not None:
        run["seed"] = args.seed
    if args.out is not None:
        run["out"] = args.out
    if args.loss is not None:
        run["train"]["loss_kind"] = args.loss
    if args.corpus is not None:
        run["corpus_path"] = args.corpus
    config = train_config(run)
    _prevalidate(config)
    corpus = _corpus_for(run)
    out = Path(run["out"])
    resume = load_checkpoint(args.resume) if args.resume else None
    _echo(run, out)
    snap = None
    if args.snapshots:
        snap = out / "snapshots"
        snap.mkdir(parents=True, exist_ok=True)
    result = train(config, corpus, resume=resume, stop_after=args.stop_after, snapshot_dir=snap)
    save_checkpoint(result.checkpoint, out / "checkpoint.ckpt")
    write_metrics_csv(out / "metrics.csv", result.checkpoint.metrics)
    last = result.checkpoint.metrics[-1] if result.checkpoint.metrics else None
    if last is not None:
        print(f"epoch {last.epoch}: loss {last.mean_loss:.4f}, validation R-sum {last.val_rsum:.1f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    corpus = load_corpus(args.corpus)
    cc = corpus.manifest.config
    have = ckpt.params.config
    if have.pose_dim != cc.pose_dim:
        raise DimensionMismatch(f"pose_dim: checkpoint expects {have.pose_dim}, corpus has {cc.pose_dim}")
    if have.vocab_size != corpus.manifest.vocabulary.vocab_size:
        raise DimensionMismatch(
            f"vocab_size: checkpoint expects {have.vocab_size}, corpus has {corpus.manifest.vocabulary.vocab_size}"
        )
    split = corpus.split(args.split)
    motion, text = evaluate_split(ckpt.params, split, MODE_NAMES[args.mode])
    print(f"split: {args.split} ({len(split)} motions), mode: {args.mode}")
    print(format_reports(motion, text))
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_reports_csv(out / "report.csv", motion, text)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    try:
        batch, dim = (int(x) for x in args.sizes.split(","))
    except ValueError:
        raise ConfigError(f"--sizes expects 'batch,dim', got {args.sizes!r}") from None
    if args.perturb is not None and args.perturb not in PARAM_KEYS:
        raise ConfigError(f"--perturb must name a parameter ({', '.join(PARAM_KEYS)})")
    cfg = LossConfig(args.alpha, args.delta_hetero, args.delta_homo)
    kinds = tuple(args.loss) if args.loss else ("sh", "mh", "droptriple")
    worst = gradcheck.run_suite(args.seed, args.instances, batch, dim, kinds, cfg, args.perturb)
    failed = []
    for key in sorted(worst):
        ok = worst[key] <= gradcheck.TOLERANCE
        print(f"{'ok  ' if ok else 'FAIL'} {key:24s} max_rel_err={worst[key]:.3e}")
        if not ok:
            failed.append(key)
    if failed:
        print(f"gradient check failed: {', '.join(failed)}")
        return EXIT_GRAD
    print(f"gradient check passed ({len(worst)} components, tolerance {gradcheck.TOLERANCE:g})")
    return EXIT_OK


def parse_grid(text: str) -> list[tuple[float, float]]:
    """``"0.2:0.2,0.7:0.9"`` -> [(0.2, 0.2), (0.7, 0.9)] (hetero:homo)."""
    grid = []
    for item in (s.strip() for s in text.split(",")):
        if not item:
            continue
        try:
            a, b = item.split(":")
            grid.append((float(a), float(b)))
        except ValueError:
            raise ConfigError(f"malformed grid point {item!r}; expected hetero:homo") from None
    if not grid:
        raise ConfigError("threshold grid is empty")
    return grid


def cmd_sweep(args) -> int:
    grid = parse_grid(args.grid)
    run = load_run_config(args.config, args.set)
    if args.seed is not None:
        run["seed"] = args.seed
    if args.out is not None:
        run["out"] = args.out
    if args.corpus is not None:
        run["corpus_path"] = args.corpus
    config = train_config(run)
    _prevalidate(config)
    corpus = _corpus_for(run)
    out = Path(run["out"])
    _echo(run, out)
    rows = threshold_sweep(config, corpus, grid)
    write_sweep_csv(out / "sweep.csv", rows)
    for r in rows:
        print(f"hetero={r.delta_hetero:.2f} homo={r.delta_homo:.2f} R-sum={r.r_sum:6.1f} loss={r.final_loss:.4f} {r.label}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="droptriple", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", nargs="?", default=None, help="JSON run config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    g = sub.add_parser("gen-data", help="generate a synthetic corpus")
    common(g)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train encoders")
    common(t)
    t.add_argument("--loss", choices=["sh", "mh", "droptriple"])
    t.add_argument("--resume", metavar="CKPT")
    t.add_argument("--corpus", metavar="PATH", help="corpus file (default: generate from config)")
    t.add_argument("--snapshots", action="store_true", help="write per-epoch intra-modal similarity snapshots")
    t.add_argument("--stop-after", type=int, metavar="EPOCHS", help="stop once this many epochs are complete")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a corpus split")
    e.add_argument("checkpoint")
    e.add_argument("corpus")
    e.add_argument("--mode", choices=sorted(MODE_NAMES), default="exact")
    e.add_argument("--split", choices=["train", "test"], default="test")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference check of the full pipeline")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--sizes", default="4,6", help="batch,joint_dim")
    c.add_argument("--instances", type=int, default=20)
    c.add_argument("--loss", action="append", choices=["sh", "mh", "droptriple"])
    c.add_argument("--alpha", type=float, default=0.2)
    c.add_argument("--delta-hetero", type=float, default=0.7)
    c.add_argument("--delta-homo", type=float, default=0.9)
    c.add_argument("--perturb", help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("sweep", help="DropTriple threshold sweep")
    common(s)
    s.add_argument("--corpus", metavar="PATH", help="corpus file (default: generate from config)")
    s.add_argument("--grid", required=True, help="comma-separated hetero:homo pairs")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, InvalidConfig) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatVersionMismatch as exc:
        print(f"version error: {exc}", file=sys.stderr)
        return EXIT_VERSION
    except DimensionMismatch as exc:
        print(f"dimension mismatch: {exc}", file=sys.stderr)
        return EXIT_DIM
    except (OSError, CorruptRecord) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DropTripleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
