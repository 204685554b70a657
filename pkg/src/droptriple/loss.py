"""Triplet hinge losses over an in-batch similarity matrix.

``S[i, j] = m_i . t_j`` for a batch of aligned pairs (row i of M pairs with
row i of T). For anchor i two hinge directions exist:

* text side (text retrieval, motion anchor):   ``alpha - S[i, i] + S[i, j]``
* motion side (motion retrieval, text anchor): ``alpha - S[i, i] + S[j, i]``

``sh_loss`` sums every negative, ``mh_loss`` keeps the hardest one per anchor
and direction, and ``droptriple_loss`` keeps the hardest one after removing
negatives flagged as false negatives by intra-modal similarity thresholds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import InvalidBatch, InvalidConfig

UNIT_TOL = 1e-9


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.2
    delta_hetero: float = 0.7
    delta_homo: float = 0.9

    def __post_init__(self):
        if not self.alpha > 0:
            raise InvalidConfig("alpha", f"margin must be > 0, got {self.alpha}")
        for name in ("delta_hetero", "delta_homo"):
            v = getattr(self, name)
            if not -1.0 <= v <= 1.0:
                raise InvalidConfig(name, f"threshold must lie in [-1, 1], got {v}")


@dataclass(frozen=True)
class BatchEmbeddings:
    M: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        M = np.ascontiguousarray(self.M, dtype=np.float64)
        T = np.ascontiguousarray(self.T, dtype=np.float64)
        if M.ndim != 2 or M.shape != T.shape or M.shape[0] < 1:
            raise InvalidBatch(f"need matching (I, D) matrices with I >= 1, got {M.shape} and {T.shape}")
        for name, X in (("M", M), ("T", T)):
            if not np.all(np.isfinite(X)):
                raise InvalidBatch(f"{name} has non-finite entries")
            dev = np.abs(np.sqrt(np.einsum("ij,ij->i", X, X)) - 1.0)
            if dev.max() > UNIT_TOL:
                raise InvalidBatch(f"{name} row {int(dev.argmax())} is not unit norm")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "T", T)

    @property
    def size(self) -> int:
        return self.M.shape[0]

    def similarity(self) -> np.ndarray:
        return _kernels.sim_matrix(self.M, self.T)


@dataclass(frozen=True)
class FalseNegMasks:
    """``y_m[i, j]``: motion j is a false negative for text anchor i.
    ``y_t[i, j]``: text j is a false negative for motion anchor i."""

    y_m: np.ndarray
    y_t: np.ndarray


@dataclass
class LossResult:
    value: float
    grad_M: np.ndarray
    grad_T: np.ndarray
    grad_S: np.ndarray
    dropped_count_m: int = 0
    dropped_count_t: int = 0
    empty_negset_anchors: int = 0
    hardest_t: np.ndarray | None = field(default=None, repr=False)  # -1 when none
    hardest_m: np.ndarray | None = field(default=None, repr=False)

    @property
    def diagnostics(self) -> dict[str, int]:
        return {
            "dropped_count_m": self.dropped_count_m,
            "dropped_count_t": self.dropped_count_t,
            "empty_negset_anchors": self.empty_negset_anchors,
        }


def masks_from_similarity(S_mm: np.ndarray, S_tt: np.ndarray, cfg: LossConfig) -> FalseNegMasks:
    """Threshold intra-modal similarities into false-negative masks.

    Thresholds act by role: ``delta_hetero`` gates similarity in the modality
    being retrieved, ``delta_homo`` gates similarity in the anchor's modality.
    Similarities are clipped to [-1, 1] first so rounding on near-identical
    vectors cannot trip a threshold of exactly 1.0.
    """
    S_mm = np.clip(S_mm, -1.0, 1.0)
    S_tt = np.clip(S_tt, -1.0, 1.0)
    off = ~np.eye(S_mm.shape[0], dtype=bool)
    y_m = ((S_mm > cfg.delta_hetero) | (S_tt > cfg.delta_homo)) & off
    y_t = ((S_tt > cfg.delta_hetero) | (S_mm > cfg.delta_homo)) & off
    return FalseNegMasks(y_m=y_m, y_t=y_t)


def false_negative_masks(M, T, cfg: LossConfig) -> FalseNegMasks:
    batch = M if isinstance(M, BatchEmbeddings) else BatchEmbeddings(M, T)
    return masks_from_similarity(
        _kernels.sim_matrix(batch.M, batch.M), _kernels.sim_matrix(batch.T, batch.T), cfg
    )


def sh_from_similarity(S: np.ndarray, alpha: float) -> LossResult:
    S = np.ascontiguousarray(S, dtype=np.float64)
    value, dS = _kernels.sum_of_hinges(S, alpha)
    return LossResult(value, None, None, dS)


def hardest_from_similarity(S: np.ndarray, alpha: float, masks: FalseNegMasks | None = None) -> LossResult:
    S = np.ascontiguousarray(S, dtype=np.float64)
    n = S.shape[0]
    if masks is None:
        none = np.zeros((n, n), dtype=np.bool_)
        masks = FalseNegMasks(none, none)
    value, dS, sel_t, sel_m, empty = _kernels.hardest_negative(S, masks.y_t, masks.y_m, alpha)
    return LossResult(
        value,
        None,
        None,
        dS,
        dropped_count_m=int(masks.y_m.sum()),
        dropped_count_t=int(masks.y_t.sum()),
        empty_negset_anchors=int(empty),
        hardest_t=sel_t,
        hardest_m=sel_m,
    )


def loss_backward_to_embeddings(result: LossResult, batch: BatchEmbeddings) -> tuple[np.ndarray, np.ndarray]:
    """Chain the similarity gradient through ``S = M T^T``."""
    dS = result.grad_S
    return dS @ batch.T, dS.T @ batch.M


def _finish(result: LossResult, batch: BatchEmbeddings) -> LossResult:
    result.grad_M, result.grad_T = loss_backward_to_embeddings(result, batch)
    return result


def _as_batch(batch) -> BatchEmbeddings:
    if isinstance(batch, BatchEmbeddings):
        return batch
    M, T = batch
    return BatchEmbeddings(M, T)


def sh_loss(batch, cfg: LossConfig) -> LossResult:
    batch = _as_batch(batch)
    return _finish(sh_from_similarity(batch.similarity(), cfg.alpha), batch)


def mh_loss(batch, cfg: LossConfig) -> LossResult:
    batch = _as_batch(batch)
    return _finish(hardest_from_similarity(batch.similarity(), cfg.alpha), batch)


def droptriple_loss(batch, cfg: LossConfig) -> LossResult:
    batch = _as_batch(batch)
    masks = false_negative_masks(batch, None, cfg)
    return _finish(hardest_from_similarity(batch.similarity(), cfg.alpha, masks), batch)


LOSSES = {"sh": sh_loss, "mh": mh_loss, "droptriple": droptriple_loss}


def compute_loss(kind: str, batch, cfg: LossConfig) -> LossResult:
    try:
        fn = LOSSES[kind.lower()]
    except KeyError:
        raise InvalidConfig("loss_kind", f"unknown loss {kind!r}; expected one of {sorted(LOSSES)}") from None
    return fn(batch, cfg)
