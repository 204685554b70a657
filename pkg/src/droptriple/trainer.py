"""Mini-batch training with an SH warm-up curriculum, AdamW and checkpoints.

Checkpoint file layout
----------------------
::

    DROPTRIPLE-CKPT\\n
    <header: one line of JSON>\\n
    <raw little-endian float64 blocks, concatenated>

The header records the format version, resolved ``TrainConfig``, completed
epoch count, generator state, optimizer scalars, metrics history and a block
table (``name``, ``shape``, ``offset``, ``nbytes``, ``crc32``) locating every
parameter (``param/<key>``) and optimizer moment (``adam_m/<key>``,
``adam_v/<key>``) in the binary tail.

Metrics log
-----------
CSV with one row per epoch and the columns in ``METRIC_COLUMNS``:
``epoch`` (1-based), ``loss_kind`` (loss active that epoch), ``lr``,
``mean_loss`` (mean of per-batch summed losses), ``dropped_m`` /
``dropped_t`` (false negatives pruned, summed over batches),
``empty_negset_anchors``, ``anchors`` (2 x pairs seen), ``max_grad_norm``,
``grad_norm_flags`` (batches whose gradient norm exceeded 1e3) and
``val_rsum`` (validation R-sum after the epoch).
"""

from __future__ import annotations

import csv
import json
import logging
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .corpus import Corpus, CorpusSample
from .encoder import (
    PARAM_KEYS,
    EncoderConfig,
    EncoderParams,
    encode_motions,
    encode_texts,
    encoder_backward,
    init_params,
    zero_grads,
)
from .errors import (
    CorruptRecord,
    DimensionMismatch,
    EmptySplit,
    FormatVersionMismatch,
    InvalidConfig,
    ShapeMismatch,
)
from .evaluator import evaluate_split, export_similarity_snapshot, r_sum
from .loss import LOSSES, BatchEmbeddings, LossConfig, compute_loss
from .numeric import Rng

log = logging.getLogger(__name__)

CKPT_MAGIC = b"DROPTRIPLE-CKPT\n"
CKPT_VERSION = 1
GRAD_FLAG_NORM = 1e3

# Stream tags for Rng.spawn; one per consumer of the top-level seed.
INIT_STREAM = 1
BATCH_STREAM = 2


@dataclass(frozen=True)
class TrainConfig:
    loss_kind: str = "droptriple"
    alpha: float = 0.2
    delta_hetero: float = 0.7
    delta_homo: float = 0.9
    warmup_epochs: int = 5
    total_epochs: int = 40
    batch_size: int = 64
    learning_rate: float = 2e-3
    lr_decay_epoch: int = 30
    lr_decay_factor: float = 0.1
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    pose_dim: int | None = None
    motion_dim: int = 32
    word_dim: int = 32
    joint_dim: int = 32
    vocab_size: int | None = None
    val_mode: str = "exact_pair"

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidConfig(sorted(unknown)[0], "unknown train field")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        if self.loss_kind not in LOSSES:
            raise InvalidConfig("loss_kind", f"expected one of {sorted(LOSSES)}, got {self.loss_kind!r}")
        if self.total_epochs < 0:
            raise InvalidConfig("total_epochs", "must be >= 0")
        if not 0 <= self.warmup_epochs <= self.total_epochs:
            raise InvalidConfig("warmup_epochs", f"need 0 <= warmup_epochs <= total_epochs ({self.total_epochs})")
        if self.batch_size < 2:
            raise InvalidConfig("batch_size", "a batch needs at least one negative (>= 2)")
        if not self.learning_rate > 0:
            raise InvalidConfig("learning_rate", "must be > 0")
        if self.weight_decay < 0:
            raise InvalidConfig("weight_decay", "must be >= 0")
        if self.val_mode not in ("exact_pair", "semantic"):
            raise InvalidConfig("val_mode", "expected exact_pair or semantic")
        self.loss_config()
        self.encoder_config().validate()

    def loss_config(self) -> LossConfig:
        return LossConfig(self.alpha, self.delta_hetero, self.delta_homo)

    def encoder_config(self) -> EncoderConfig:
        if self.pose_dim is None or self.vocab_size is None:
            raise InvalidConfig("pose_dim", "encoder dims unresolved; call resolve_dims(corpus) first")
        return EncoderConfig(self.pose_dim, self.motion_dim, self.word_dim, self.joint_dim, self.vocab_size)

    def resolve_dims(self, corpus: Corpus) -> "TrainConfig":
        cc = corpus.manifest.config
        vocab = corpus.manifest.vocabulary.vocab_size
        for name, want in (("pose_dim", cc.pose_dim), ("vocab_size", vocab)):
            have = getattr(self, name)
            if have is not None and have != want:
                raise DimensionMismatch(f"{name}: config has {have}, corpus has {want}")
        return replace(self, pose_dim=cc.pose_dim, vocab_size=vocab)

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``."""
        return self.learning_rate * self.lr_decay_factor if epoch >= self.lr_decay_epoch else self.learning_rate

    def loss_at(self, epoch: int) -> str:
        return "sh" if epoch < self.warmup_epochs else self.loss_kind


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, beta1=0.9, beta2=0.999, eps=1e-8) -> "OptimizerState":
        arrays = params.arrays if isinstance(params, EncoderParams) else params
        return cls(
            {k: np.zeros_like(a) for k, a in arrays.items()},
            {k: np.zeros_like(a) for k, a in arrays.items()},
            0,
            beta1,
            beta2,
            eps,
        )


def adamw_step(params, grads, state: OptimizerState, lr: float, weight_decay: float):
    """One in-place AdamW update with decoupled weight decay.

    ``theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)``
    """
    arrays = params.arrays if isinstance(params, EncoderParams) else params
    if set(grads) != set(arrays) or set(state.m) != set(arrays):
        raise ShapeMismatch("parameter, gradient and optimizer keys differ")
    for k, theta in arrays.items():
        if grads[k].shape != theta.shape or state.m[k].shape != theta.shape:
            raise ShapeMismatch(f"{k}: param {theta.shape}, grad {grads[k].shape}, moment {state.m[k].shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for k, theta in arrays.items():
        g = grads[k]
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + state.eps) + weight_decay * theta
        theta -= lr * update
    if isinstance(params, EncoderParams):
        params.bump()
    return params, state


# ---------------------------------------------------------------------------
# batching


class Batch(NamedTuple):
    indices: np.ndarray  # positions into the split
    text_choice: np.ndarray  # which text of each sample fills the pair slot


def make_batches(split, batch_size: int, rng: Rng) -> list[Batch]:
    """Shuffle a split into batches and pick one text per sample.

    The trailing batch is dropped when it would hold fewer than 2 pairs.
    """
    n = len(split)
    if n == 0:
        raise EmptySplit("cannot batch an empty split")
    if batch_size < 2:
        raise InvalidConfig("batch_size", "must be >= 2")
    perm = rng.permutation(n)
    n_texts = np.array([len(s.texts) for s in split], dtype=np.int64)
    choice = rng.gen.integers(0, n_texts)
    batches = []
    for start in range(0, n, batch_size):
        idx = perm[start : start + batch_size]
        if idx.size < 2:
            break
        batches.append(Batch(idx, choice[idx]))
    return batches


# ---------------------------------------------------------------------------
# training


@dataclass
class EpochMetrics:
    epoch: int
    loss_kind: str
    lr: float
    mean_loss: float
    dropped_m: int
    dropped_t: int
    empty_negset_anchors: int
    anchors: int
    max_grad_norm: float
    grad_norm_flags: int
    val_rsum: float


METRIC_COLUMNS = [f.name for f in fields(EpochMetrics)]


@dataclass
class BatchRecord:
    epoch: int
    batch: int
    size: int
    loss: float
    dropped_m: int
    dropped_t: int
    empty_negset_anchors: int
    grad_norm: float


@dataclass
class Checkpoint:
    config: TrainConfig
    params: EncoderParams
    optimizer: OptimizerState
    epoch: int  # epochs completed
    rng_seed: int
    rng_state: dict
    metrics: list[EpochMetrics] = field(default_factory=list)
    version: int = CKPT_VERSION


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: list[EpochMetrics]
    batches: list[BatchRecord]


def batch_gradients(params: EncoderParams, samples, text_choice, kind: str, loss_cfg: LossConfig):
    """Loss and parameter gradients for one batch of aligned pairs."""
    M, mcache = encode_motions(params, [s.motion for s in samples])
    T, tcache = encode_texts(params, [s.texts[c] for s, c in zip(samples, text_choice)])
    result = compute_loss(kind, BatchEmbeddings(M, T), loss_cfg)
    grads = zero_grads(params)
    encoder_backward(params, mcache, result.grad_M, grads)
    encoder_backward(params, tcache, result.grad_T, grads)
    return result, grads


def _validate_corpus(corpus: Corpus) -> tuple[list[CorpusSample], list[CorpusSample]]:
    train_split = corpus.split("train")
    if not train_split:
        raise EmptySplit("training split is empty")
    return train_split, corpus.split("test")


def train(
    config: TrainConfig,
    corpus: Corpus,
    *,
    resume: Checkpoint | None = None,
    stop_after: int | None = None,
    snapshot_dir=None,
) -> TrainResult:
    """Run (or continue) training.

    ``stop_after`` ends the run once that many epochs are complete without
    touching the schedule, so a stopped run resumed from its checkpoint
    finishes bit-identical to an uninterrupted one.
    """
    config = config.resolve_dims(corpus)
    config.validate()
    train_split, test_split = _validate_corpus(corpus)
    loss_cfg = config.loss_config()

    if resume is not None:
        if resume.config != config:
            raise InvalidConfig("resume", "checkpoint config differs from the requested config")
        params = resume.params.copy()
        opt = OptimizerState(
            {k: a.copy() for k, a in resume.optimizer.m.items()},
            {k: a.copy() for k, a in resume.optimizer.v.items()},
            resume.optimizer.step,
            resume.optimizer.beta1,
            resume.optimizer.beta2,
            resume.optimizer.eps,
        )
        rng = Rng.from_state(resume.rng_seed, resume.rng_state)
        start = resume.epoch
        metrics = list(resume.metrics)
    else:
        top = Rng(config.seed)
        params = init_params(config.encoder_config(), top.spawn(INIT_STREAM).seed)
        opt = OptimizerState.zeros_like(params, config.beta1, config.beta2, config.eps)
        rng = top.spawn(BATCH_STREAM)
        start = 0
        metrics = []

    end = config.total_epochs if stop_after is None else min(stop_after, config.total_epochs)
    snap_batch = train_split[: config.batch_size]
    records: list[BatchRecord] = []

    for epoch in range(start, end):
        kind = config.loss_at(epoch)
        lr = config.lr_at(epoch)
        if snapshot_dir is not None:
            export_similarity_snapshot(params, snap_batch, epoch + 1, Path(snapshot_dir) / f"similarity_epoch{epoch + 1:03d}.csv")
        losses = []
        dropped_m = dropped_t = empty = anchors = flags = 0
        max_norm = 0.0
        for b, batch in enumerate(make_batches(train_split, config.batch_size, rng)):
            samples = [train_split[i] for i in batch.indices]
            result, grads = batch_gradients(params, samples, batch.text_choice, kind, loss_cfg)
            norm = float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads.values())))
            adamw_step(params, grads, opt, lr, config.weight_decay)
            losses.append(result.value)
            dropped_m += result.dropped_count_m
            dropped_t += result.dropped_count_t
            empty += result.empty_negset_anchors
            anchors += 2 * len(samples)
            max_norm = max(max_norm, norm)
            if norm > GRAD_FLAG_NORM:
                flags += 1
                log.debug("epoch %d batch %d: gradient norm %.3g exceeds %.0g", epoch + 1, b, norm, GRAD_FLAG_NORM)
            records.append(
                BatchRecord(epoch + 1, b, len(samples), result.value, result.dropped_count_m, result.dropped_count_t, result.empty_negset_anchors, norm)
            )
        val = r_sum(*evaluate_split(params, test_split, config.val_mode)) if test_split else float("nan")
        em = EpochMetrics(epoch + 1, kind, lr, float(np.mean(losses)), dropped_m, dropped_t, empty, anchors, max_norm, flags, val)
        metrics.append(em)
        log.info("epoch %d [%s] loss %.4f val R-sum %.1f", em.epoch, kind, em.mean_loss, val)

    ckpt = Checkpoint(config, params, opt, end if end > start else start, rng.seed, rng.state, metrics)
    return TrainResult(ckpt, metrics, records)


# ---------------------------------------------------------------------------
# persistence


def write_metrics_csv(path, metrics) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for m in metrics:
            w.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(m, c) for c in METRIC_COLUMNS)])


def read_metrics_csv(path) -> list[EpochMetrics]:
    out = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for f in fields(EpochMetrics):
                raw = row[f.name]
                kw[f.name] = raw if f.type == "str" else (int(raw) if f.type == "int" else float(raw))
            out.append(EpochMetrics(**kw))
    return out


def _blocks(ckpt: Checkpoint):
    for k in PARAM_KEYS:
        yield f"param/{k}", ckpt.params[k]
    for k in PARAM_KEYS:
        yield f"adam_m/{k}", ckpt.optimizer.m[k]
    for k in PARAM_KEYS:
        yield f"adam_v/{k}", ckpt.optimizer.v[k]


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    table, payload, offset = [], [], 0
    for name, arr in _blocks(ckpt):
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw), "crc32": zlib.crc32(raw)})
        payload.append(raw)
        offset += len(raw)
    header = {
        "format": "droptriple-checkpoint",
        "version": ckpt.version,
        "epoch": ckpt.epoch,
        "config": ckpt.config.to_dict(),
        "param_version": ckpt.params.version,
        "rng": {"seed": ckpt.rng_seed, "state": ckpt.rng_state},
        "optimizer": {"step": ckpt.optimizer.step, "beta1": ckpt.optimizer.beta1, "beta2": ckpt.optimizer.beta2, "eps": ckpt.optimizer.eps},
        "metrics": [asdict(m) for m in ckpt.metrics],
        "blocks": table,
    }
    with Path(path).open("wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for raw in payload:
            fh.write(raw)


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if not data.startswith(CKPT_MAGIC):
        raise CorruptRecord("header", "missing checkpoint magic")
    end = data.find(b"\n", len(CKPT_MAGIC))
    if end < 0:
        raise CorruptRecord("header", "unterminated header")
    try:
        header = json.loads(data[len(CKPT_MAGIC) : end])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptRecord("header", f"unparseable ({exc})") from None
    if header.get("version") != CKPT_VERSION:
        raise FormatVersionMismatch(header.get("version"), CKPT_VERSION)
    body = data[end + 1 :]
    arrays: dict[str, np.ndarray] = {}
    for blk in header["blocks"]:
        raw = body[blk["offset"] : blk["offset"] + blk["nbytes"]]
        if len(raw) != blk["nbytes"]:
            raise CorruptRecord(blk["name"], f"truncated ({len(raw)} of {blk['nbytes']} bytes)")
        if zlib.crc32(raw) != blk["crc32"]:
            raise CorruptRecord(blk["name"], "checksum mismatch")
        arrays[blk["name"]] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(blk["shape"])
    expected = sum(b["nbytes"] for b in header["blocks"])
    if len(body) != expected:
        raise CorruptRecord("tail", f"{len(body)} payload bytes, expected {expected}")
    try:
        config = TrainConfig.from_dict(header["config"])
        params = EncoderParams({k: arrays[f"param/{k}"] for k in PARAM_KEYS}, header["param_version"])
        o = header["optimizer"]
        opt = OptimizerState(
            {k: arrays[f"adam_m/{k}"] for k in PARAM_KEYS},
            {k: arrays[f"adam_v/{k}"] for k in PARAM_KEYS},
            o["step"],
            o["beta1"],
            o["beta2"],
            o["eps"],
        )
        metrics = [EpochMetrics(**m) for m in header["metrics"]]
    except KeyError as exc:
        raise CorruptRecord("header", f"missing field {exc}") from None
    return Checkpoint(config, params, opt, header["epoch"], header["rng"]["seed"], header["rng"]["state"], metrics)
