"""Dense float64 primitives and the seeded random stream.

Randomness comes from numpy's PCG64 bit generator (O'Neill's permuted
congruential generator, 128-bit state, 64-bit output). Its stream for a given
seed is fixed across platforms and numpy releases, which is what makes the
synthetic corpora reproducible.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .errors import DimensionMismatch, InvalidRange, NonUnitRows, ZeroVector

ZERO_NORM = 1e-12
UNIT_TOL = 1e-9


def l2_normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DimensionMismatch(f"expected a non-empty vector, got shape {v.shape}")
    norm = float(np.sqrt(np.dot(v, v)))
    if norm < ZERO_NORM:
        raise ZeroVector(f"vector norm {norm:.3g} is below {ZERO_NORM}")
    return v / norm


def normalize_rows(Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise l2 normalization. Returns (unit rows, row norms)."""
    Z = np.asarray(Z, dtype=np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", Z, Z))
    bad = np.flatnonzero(norms < ZERO_NORM)
    if bad.size:
        raise ZeroVector(f"row {int(bad[0])} has norm {norms[bad[0]]:.3g}")
    return Z / norms[:, None], norms


def normalize_rows_backward(E: np.ndarray, norms: np.ndarray, grad_E: np.ndarray) -> np.ndarray:
    """Pull a gradient back through z -> z/|z|: (I - e e^T) g / |z| per row."""
    radial = np.einsum("ij,ij->i", E, grad_E)
    return (grad_E - E * radial[:, None]) / norms[:, None]


def _check_unit_rows(X: np.ndarray, name: str) -> None:
    dev = np.abs(np.sqrt(np.einsum("ij,ij->i", X, X)) - 1.0)
    if dev.size and dev.max() > UNIT_TOL:
        raise NonUnitRows(f"{name} row {int(dev.argmax())} deviates from unit norm by {dev.max():.3g}")


def cosine_sim_matrix(A, B) -> np.ndarray:
    """All pairwise dot products between unit-norm rows of ``A`` and ``B``."""
    A = np.ascontiguousarray(A, dtype=np.float64)
    B = np.ascontiguousarray(B, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise DimensionMismatch(f"cannot compare rows of {A.shape} and {B.shape}")
    _check_unit_rows(A, "A")
    _check_unit_rows(B, "B")
    return _kernels.sim_matrix(A, B)


class Rng:
    """Single-owner deterministic random stream.

    Thin wrapper over ``numpy.random.Generator(PCG64(seed))``; ``state`` /
    ``from_state`` expose the full generator state so checkpoints can resume
    mid-stream.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, lo: float, hi: float, size=None):
        if not lo < hi:
            raise InvalidRange(f"uniform needs lo < hi, got [{lo}, {hi})")
        return self.gen.uniform(lo, hi, size)

    def gaussian(self, mean: float, sigma: float, size=None):
        if sigma < 0:
            raise InvalidRange(f"sigma must be >= 0, got {sigma}")
        return mean + sigma * self.gen.standard_normal(size)

    def integers(self, lo: int, hi: int, size=None):
        """Integers in [lo, hi]."""
        if hi < lo:
            raise InvalidRange(f"integers needs lo <= hi, got [{lo}, {hi}]")
        return self.gen.integers(lo, hi, size=size, endpoint=True)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def spawn(self, tag: int) -> "Rng":
        """Independent child stream keyed by (seed, tag); does not advance self."""
        seq = np.random.SeedSequence([self.seed, int(tag)])
        return Rng(int(seq.generate_state(1, np.uint64)[0]))

    @property
    def state(self) -> dict:
        return self.gen.bit_generator.state

    @classmethod
    def from_state(cls, seed: int, state: dict) -> "Rng":
        rng = cls(seed)
        rng.gen.bit_generator.state = state
        return rng


def rng_new(seed: int) -> Rng:
    return Rng(seed)


def rng_uniform(rng: Rng, lo: float, hi: float) -> float:
    return float(rng.uniform(lo, hi))


def rng_gaussian(rng: Rng, mean: float, sigma: float) -> float:
    return float(rng.gaussian(mean, sigma))
