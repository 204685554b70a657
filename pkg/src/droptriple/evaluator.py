"""Retrieval metrics (R@K, median rank, R-sum), similarity snapshots and threshold sweeps."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _kernels
from .encoder import EncoderParams, encode_motions, encode_texts
from .errors import EmptyRanks, EmptySplit, InvalidConfig, MissingK, MissingRelevance

KS = (1, 5, 10)
MODES = ("exact_pair", "semantic")


@dataclass
class RetrievalReport:
    direction: str  # "motion_retrieval" or "text_retrieval"
    r_at: dict[int, float]
    med_r: float
    ranks: np.ndarray = field(repr=False)

    @classmethod
    def from_ranks(cls, direction: str, ranks, ks=KS) -> "RetrievalReport":
        ranks = np.asarray(ranks, dtype=np.int64)
        return cls(direction, {k: recall_at_k(ranks, k) for k in ks}, median_rank(ranks), ranks)


def _relevance_matrix(relevance, n_queries: int, n_gallery: int) -> np.ndarray:
    if isinstance(relevance, np.ndarray) and relevance.dtype == bool:
        if relevance.shape != (n_queries, n_gallery):
            raise MissingRelevance(f"relevance mask shape {relevance.shape} != {(n_queries, n_gallery)}")
        rel = relevance
    else:
        if len(relevance) != n_queries:
            raise MissingRelevance(f"{len(relevance)} relevance entries for {n_queries} queries")
        rel = np.zeros((n_queries, n_gallery), dtype=bool)
        for q, items in enumerate(relevance):
            idx = np.fromiter((int(g) for g in items), dtype=np.int64)
            if idx.size and (idx.min() < 0 or idx.max() >= n_gallery):
                raise MissingRelevance(f"query {q} names a gallery item outside [0, {n_gallery})")
            rel[q, idx] = True
    empty = np.flatnonzero(~rel.any(axis=1))
    if empty.size:
        raise MissingRelevance(f"query {int(empty[0])} has no relevant gallery item")
    return rel


def rank_queries(S, relevance) -> np.ndarray:
    """1-based rank of the best-ranked relevant gallery item for each query.

    Gallery order is similarity descending with ties broken by ascending
    gallery index.
    """
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    q, g = S.shape
    rel = _relevance_matrix(relevance, q, g)
    order = np.argsort(-S, axis=1, kind="stable")
    position = np.empty_like(order)
    np.put_along_axis(position, order, np.arange(g)[None, :].repeat(q, axis=0), axis=1)
    return np.where(rel, position, g).min(axis=1) + 1


def recall_at_k(ranks, k: int) -> float:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise EmptyRanks("recall over zero queries")
    return 100.0 * np.count_nonzero(ranks <= k) / ranks.size


def median_rank(ranks) -> float:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise EmptyRanks("median over zero queries")
    return float(np.median(ranks))


def r_sum(motion_report, text_report) -> float:
    total = 0.0
    for rep in (motion_report, text_report):
        r_at: Mapping[int, float] = rep.r_at if isinstance(rep, RetrievalReport) else rep
        for k in KS:
            if k not in r_at:
                raise MissingK(f"report lacks R@{k}")
            total += r_at[k]
    return total


def embed_split(params: EncoderParams, samples) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Embed every motion and every text of ``samples``.

    Returns (motion embeddings, text embeddings, owner index of each text).
    """
    if not samples:
        raise EmptySplit("cannot evaluate an empty split")
    M, _ = encode_motions(params, [s.motion for s in samples])
    texts, owner = [], []
    for k, s in enumerate(samples):
        texts += s.texts
        owner += [k] * len(s.texts)
    T, _ = encode_texts(params, texts)
    return M, T, np.asarray(owner, dtype=np.int64)


def evaluate_embeddings(M, T, owner, classes, mode: str = "exact_pair") -> tuple[RetrievalReport, RetrievalReport]:
    if mode not in MODES:
        raise InvalidConfig("mode", f"unknown mode {mode!r}; expected one of {MODES}")
    classes = np.asarray(classes)
    if mode == "exact_pair":
        rel_tm = owner[:, None] == np.arange(M.shape[0])[None, :]
    else:
        rel_tm = classes[owner][:, None] == classes[None, :]
    # text queries over the motion gallery, then motion queries over the text gallery
    motion_ranks = rank_queries(_kernels.sim_matrix(T, M), rel_tm)
    text_ranks = rank_queries(_kernels.sim_matrix(M, T), np.ascontiguousarray(rel_tm.T))
    return (
        RetrievalReport.from_ranks("motion_retrieval", motion_ranks),
        RetrievalReport.from_ranks("text_retrieval", text_ranks),
    )


def evaluate_split(params: EncoderParams, samples, mode: str = "exact_pair") -> tuple[RetrievalReport, RetrievalReport]:
    M, T, owner = embed_split(params, samples)
    classes = [s.equivalence_class_id for s in samples]
    return evaluate_embeddings(M, T, owner, classes, mode)


def format_reports(motion: RetrievalReport, text: RetrievalReport) -> str:
    """Both directions side by side followed by R-sum."""
    cols = ["R@1", "R@5", "R@10", "MedR"]
    head = f"{'':>6}| {'Motion Retrieval':^31} | {'Text Retrieval':^31} |"
    sub = "      | " + " ".join(f"{c:>7}" for c in cols) + " | " + " ".join(f"{c:>7}" for c in cols) + " |  R-sum"

    def vals(rep):
        return " ".join(f"{rep.r_at[k]:7.1f}" for k in KS) + f" {rep.med_r:7.1f}"

    row = f"{'':>6}| {vals(motion)} | {vals(text)} | {r_sum(motion, text):6.1f}"
    return "\n".join([head, sub, row])


REPORT_COLUMNS = ["direction", "R@1", "R@5", "R@10", "MedR", "num_queries"]


def write_reports_csv(path, motion: RetrievalReport, text: RetrievalReport) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS + ["R-sum"])
        rs = r_sum(motion, text)
        for rep in (motion, text):
            w.writerow([rep.direction] + [repr(rep.r_at[k]) for k in KS] + [repr(rep.med_r), rep.ranks.size, repr(rs)])


# ---------------------------------------------------------------------------
# Intra-modal similarity snapshots


def write_similarity_snapshot(S_mm: np.ndarray, S_tt: np.ndarray, epoch: int, path) -> None:
    """Comma-separated matrices, each preceded by a ``#`` header line."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# droptriple similarity snapshot\n# epoch: {epoch}\n")
        for name, S in (("motion", S_mm), ("text", S_tt)):
            fh.write(f"# modality: {name} rows={S.shape[0]} cols={S.shape[1]}\n")
            for row in S:
                fh.write(",".join(format(float(x), ".17g") for x in row) + "\n")


def read_similarity_snapshot(path) -> tuple[int, np.ndarray, np.ndarray]:
    epoch = None
    mats: dict[str, list] = {}
    current = None
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("# epoch:"):
            epoch = int(line.split(":", 1)[1])
        elif line.startswith("# modality:"):
            current = line.split()[2]
            mats[current] = []
        elif line and not line.startswith("#"):
            mats[current].append([float(x) for x in line.split(",")])
    return epoch, np.array(mats["motion"]), np.array(mats["text"])


def export_similarity_snapshot(params: EncoderParams, batch, epoch: int, path, text_choice: Sequence[int] | None = None) -> None:
    """Write intra-modal similarity matrices for a batch of corpus samples.

    Each sample contributes its motion and one text (``text_choice[k]``,
    default the first).
    """
    if not batch:
        raise EmptySplit("snapshot batch is empty")
    choice = text_choice if text_choice is not None else [0] * len(batch)
    M, _ = encode_motions(params, [s.motion for s in batch])
    T, _ = encode_texts(params, [s.texts[c] for s, c in zip(batch, choice)])
    write_similarity_snapshot(_kernels.sim_matrix(M, M), _kernels.sim_matrix(T, T), epoch, path)


# ---------------------------------------------------------------------------
# Threshold sweep


@dataclass
class SweepRow:
    delta_hetero: float
    delta_homo: float
    r_sum: float
    final_loss: float
    label: str = ""


SWEEP_COLUMNS = ["delta_hetero", "delta_homo", "r_sum", "final_loss", "label"]


def threshold_sweep(config, corpus, grid: Iterable[tuple[float, float]], mode: str | None = None) -> list[SweepRow]:
    """Train one DropTriple model per threshold pair and report R-sum.

    All runs share ``config.seed``; the (1.0, 1.0) cell is labelled
    ``MH-equivalent`` since no negative can be pruned there.
    """
    from dataclasses import replace

    from .trainer import train

    grid = [(float(a), float(b)) for a, b in grid]
    if not grid:
        raise InvalidConfig("grid", "threshold grid is empty")
    rows = []
    for dh, do in grid:
        cfg = replace(config, loss_kind="droptriple", delta_hetero=dh, delta_homo=do)
        if mode is not None:
            cfg = replace(cfg, val_mode=mode)
        result = train(cfg, corpus)
        last = result.metrics[-1]
        label = "MH-equivalent" if dh == 1.0 and do == 1.0 else ""
        rows.append(SweepRow(dh, do, last.val_rsum, last.mean_loss, label))
    return rows


def write_sweep_csv(path, rows: Sequence[SweepRow]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([repr(r.delta_hetero), repr(r.delta_homo), repr(r.r_sum), repr(r.final_loss), r.label])
