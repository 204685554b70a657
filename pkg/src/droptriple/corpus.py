"""Synthetic atomic-action motion/text corpus.

Each sample performs 1-3 distinct atomic actions. Its motion concatenates one
segment per action (in ascending action id order); a segment is the action's
prototype curve, a per-dimension sum of three sinusoids fixed by the corpus
seed, resampled to the segment length, plus Gaussian noise. Each of the
sample's texts lists the word tokens of its actions in the same order with
0-2 filler tokens before each action and at the end.

Two samples are semantically equivalent exactly when their action sets are
equal; ``class_id`` is the bitmask of the action set.

File format (UTF-8, one JSON object per line)
---------------------------------------------
Line 1, the manifest::

    {"format": "droptriple-corpus", "version": 1, "num_samples": N,
     "config": {...CorpusConfig fields...},
     "vocabulary": {"vocab_size": int, "fillers": [int], "action_tokens": [[int]]},
     "splits": {"train": [sample ids], "test": [sample ids]}}

Lines 2..N+1, one per sample in id order::

    {"id": int, "actions": [int], "class_id": int, "frames": F, "dim": D_p,
     "motion": [F*D_p floats, row-major], "texts": [[int], ...]}

Motion values are written with 17 significant digits so every float64
round-trips exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import CorruptRecord, EmptySplit, FormatVersionMismatch, InvalidConfig
from .numeric import Rng

FORMAT_NAME = "droptriple-corpus"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class CorpusConfig:
    num_actions: int = 12
    pose_dim: int = 8
    frames_per_action: tuple[int, int] = (8, 16)
    actions_per_sample: tuple[int, int] = (1, 3)
    tokens_per_action: tuple[int, int] = (1, 3)
    num_fillers: int = 8
    fillers_per_gap: tuple[int, int] = (0, 2)
    texts_per_motion: tuple[int, int] = (1, 5)
    noise_sigma: float = 0.1
    feature_offset: float = 0.0
    duplicate_rate: float = 0.3
    num_train: int = 600
    num_test: int = 100
    max_frames: int = 1000
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(sorted(unknown)[0], "unknown corpus field")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @property
    def num_samples(self) -> int:
        return self.num_train + self.num_test

    def validate(self) -> None:
        if self.num_actions < 2:
            raise InvalidConfig("num_actions", f"need at least 2 actions, got {self.num_actions}")
        if self.pose_dim < 1:
            raise InvalidConfig("pose_dim", "must be >= 1")
        if self.num_samples < 2:
            raise InvalidConfig("num_train", "need at least 2 samples in total")
        if self.num_train < 0 or self.num_test < 0:
            raise InvalidConfig("num_train", "split sizes must be >= 0")
        for name, floor in (
            ("frames_per_action", 1),
            ("actions_per_sample", 1),
            ("tokens_per_action", 1),
            ("fillers_per_gap", 0),
            ("texts_per_motion", 1),
        ):
            lo, hi = getattr(self, name)
            if lo < floor or hi < lo:
                raise InvalidConfig(name, f"invalid range [{lo}, {hi}]")
        if self.actions_per_sample[1] > self.num_actions:
            raise InvalidConfig("actions_per_sample", "upper bound exceeds num_actions")
        if self.fillers_per_gap[1] > 0 and self.num_fillers < 1:
            raise InvalidConfig("num_fillers", "fillers requested but num_fillers is 0")
        if self.actions_per_sample[1] * self.frames_per_action[1] > self.max_frames:
            raise InvalidConfig("max_frames", "longest possible motion exceeds max_frames")
        if self.noise_sigma < 0:
            raise InvalidConfig("noise_sigma", "must be >= 0")
        if not 0.0 <= self.duplicate_rate <= 1.0:
            raise InvalidConfig("duplicate_rate", "must lie in [0, 1]")


@dataclass
class ActionVocabulary:
    vocab_size: int
    fillers: list[int]
    action_tokens: list[list[int]]


@dataclass
class CorpusManifest:
    config: CorpusConfig
    vocabulary: ActionVocabulary
    train_ids: list[int]
    test_ids: list[int]
    version: int = FORMAT_VERSION


@dataclass
class CorpusSample:
    sample_id: int
    motion: np.ndarray
    texts: list[list[int]]
    action_set: tuple[int, ...]
    equivalence_class_id: int = field(init=False)

    def __post_init__(self):
        self.equivalence_class_id = class_id(self.action_set)


class Corpus(NamedTuple):
    manifest: CorpusManifest
    samples: list[CorpusSample]

    def split(self, name: str) -> list[CorpusSample]:
        ids = {"train": self.manifest.train_ids, "test": self.manifest.test_ids}.get(name)
        if ids is None:
            raise EmptySplit(f"unknown split {name!r}")
        return [self.samples[i] for i in ids]


def class_id(action_set) -> int:
    return sum(1 << int(a) for a in set(action_set))


def _prototypes(rng: Rng, cfg: CorpusConfig):
    shape = (cfg.num_actions, 3, cfg.pose_dim)
    freqs = rng.uniform(0.5, 3.0, shape)
    phases = rng.uniform(0.0, 2 * np.pi, shape)
    amps = rng.uniform(0.3, 1.0, shape)
    return freqs, phases, amps


def prototype_segment(protos, action: int, length: int) -> np.ndarray:
    freqs, phases, amps = protos
    tau = (np.arange(length) + 0.5) / length
    arg = 2 * np.pi * freqs[action][None] * tau[:, None, None] + phases[action][None]
    return (amps[action][None] * np.sin(arg)).sum(axis=1)


def _draw_action_set(rng: Rng, cfg: CorpusConfig) -> tuple[int, ...]:
    size = int(rng.integers(*cfg.actions_per_sample))
    chosen = rng.gen.choice(cfg.num_actions, size=size, replace=False)
    return tuple(sorted(int(a) for a in chosen))


def generate_corpus(config: CorpusConfig, seed: int | None = None) -> Corpus:
    """Deterministically generate a corpus; ``seed`` overrides ``config.seed``."""
    if seed is not None:
        config = CorpusConfig(**{**asdict(config), "seed": int(seed)})
    config.validate()
    rng = Rng(config.seed)

    fillers = list(range(config.num_fillers))
    action_tokens = []
    next_id = config.num_fillers
    for _ in range(config.num_actions):
        k = int(rng.integers(*config.tokens_per_action))
        action_tokens.append(list(range(next_id, next_id + k)))
        next_id += k
    vocab = ActionVocabulary(next_id, fillers, action_tokens)

    protos = _prototypes(rng, config)
    offset = config.feature_offset * rng.uniform(0.5, 1.0, config.pose_dim)

    n = config.num_samples
    n_dup = int(round(config.duplicate_rate * (n - 1)))
    duplicates = set((rng.permutation(n - 1)[:n_dup] + 1).tolist())

    samples = []
    for i in range(n):
        if i in duplicates:
            actions = samples[int(rng.integers(0, i - 1))].action_set
        else:
            actions = _draw_action_set(rng, config)
        segments = [prototype_segment(protos, a, int(rng.integers(*config.frames_per_action))) for a in actions]
        motion = np.concatenate(segments, axis=0) + offset
        motion = motion + config.noise_sigma * rng.gen.standard_normal(motion.shape)
        texts = []
        for _ in range(int(rng.integers(*config.texts_per_motion))):
            tokens: list[int] = []
            for a in actions:
                tokens += _fillers(rng, config)
                tokens += action_tokens[a]
            tokens += _fillers(rng, config)
            texts.append(tokens)
        samples.append(CorpusSample(i, motion, texts, actions))

    perm = rng.permutation(n)
    test_ids = sorted(int(k) for k in perm[: config.num_test])
    train_ids = sorted(int(k) for k in perm[config.num_test :])
    manifest = CorpusManifest(config, vocab, train_ids, test_ids)
    return Corpus(manifest, samples)


def _fillers(rng: Rng, cfg: CorpusConfig) -> list[int]:
    k = int(rng.integers(*cfg.fillers_per_gap))
    if k == 0:
        return []
    return [int(t) for t in rng.integers(0, cfg.num_fillers - 1, size=k)]


# ---------------------------------------------------------------------------
# I/O


def _manifest_record(m: CorpusManifest, n: int) -> dict:
    return {
        "format": FORMAT_NAME,
        "version": m.version,
        "num_samples": n,
        "config": m.config.to_dict(),
        "vocabulary": asdict(m.vocabulary),
        "splits": {"train": m.train_ids, "test": m.test_ids},
    }


def _sample_line(s: CorpusSample) -> str:
    head = json.dumps(
        {
            "id": s.sample_id,
            "actions": list(s.action_set),
            "class_id": s.equivalence_class_id,
            "frames": int(s.motion.shape[0]),
            "dim": int(s.motion.shape[1]),
        }
    )
    values = ",".join(format(float(x), ".17g") for x in s.motion.ravel())
    texts = json.dumps(s.texts)
    return f'{head[:-1]}, "motion": [{values}], "texts": {texts}}}'


def save_corpus(manifest: CorpusManifest, samples, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(_manifest_record(manifest, len(samples)), sort_keys=True) + "\n")
        for s in samples:
            fh.write(_sample_line(s) + "\n")


def load_corpus(path) -> Corpus:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise CorruptRecord("manifest", "file is empty")
    try:
        head = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CorruptRecord("manifest", f"unparseable ({exc.msg})") from None
    if not isinstance(head, dict) or head.get("format") != FORMAT_NAME:
        raise CorruptRecord("manifest", "not a droptriple corpus file")
    if head.get("version") != FORMAT_VERSION:
        raise FormatVersionMismatch(head.get("version"), FORMAT_VERSION)
    try:
        config = CorpusConfig.from_dict(head["config"])
        vocab = ActionVocabulary(**head["vocabulary"])
        manifest = CorpusManifest(config, vocab, list(head["splits"]["train"]), list(head["splits"]["test"]))
        n = int(head["num_samples"])
    except (KeyError, TypeError, InvalidConfig) as exc:
        raise CorruptRecord("manifest", f"missing or invalid field ({exc})") from None

    samples = []
    for idx in range(n):
        if idx + 1 >= len(lines):
            raise CorruptRecord(idx, f"missing (file holds {len(lines) - 1} of {n} sample records)")
        try:
            rec = json.loads(lines[idx + 1])
            motion = np.asarray(rec["motion"], dtype=np.float64).reshape(rec["frames"], rec["dim"])
            sample = CorpusSample(int(rec["id"]), motion, [list(map(int, t)) for t in rec["texts"]], tuple(rec["actions"]))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise CorruptRecord(idx, f"unparseable sample ({exc})") from None
        if sample.sample_id != idx or sample.equivalence_class_id != rec["class_id"]:
            raise CorruptRecord(idx, "id or class_id inconsistent")
        samples.append(sample)
    if len(lines) > n + 1:
        raise CorruptRecord(n, "unexpected trailing records")
    return Corpus(manifest, samples)
