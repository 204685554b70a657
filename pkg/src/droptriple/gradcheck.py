"""End-to-end finite-difference check: encoders composed with each loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import PARAM_KEYS, EncoderConfig, EncoderParams, init_params
from .loss import LossConfig
from .numeric import Rng
from .trainer import batch_gradients

FD_EPS = 1e-5
TOLERANCE = 1e-4


@dataclass
class Instance:
    params: EncoderParams
    samples: list
    choice: np.ndarray


class _Sample:
    __slots__ = ("motion", "texts")

    def __init__(self, motion, texts):
        self.motion = motion
        self.texts = texts


def random_instance(seed: int, batch: int = 4, joint_dim: int = 6) -> Instance:
    """Small random encoder + batch; parameters are rescaled away from zero
    so that hinges are neither all active nor all idle."""
    rng = Rng(seed)
    cfg = EncoderConfig(pose_dim=3, motion_dim=4, word_dim=4, joint_dim=joint_dim, vocab_size=7)
    params = init_params(cfg, rng.spawn(1).seed)
    for k in PARAM_KEYS:
        params.arrays[k] = rng.gaussian(0.0, 0.8, params[k].shape)
    samples = [
        _Sample(rng.gaussian(0.0, 1.0, (int(rng.integers(1, 4)), cfg.pose_dim)), [list(rng.integers(0, cfg.vocab_size - 1, int(rng.integers(1, 4))))])
        for _ in range(batch)
    ]
    return Instance(params, samples, np.zeros(batch, dtype=np.int64))


def loss_value(inst: Instance, kind: str, cfg: LossConfig) -> float:
    result, _ = batch_gradients(inst.params, inst.samples, inst.choice, kind, cfg)
    return result.value


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(max|a|, max|n|); 0 when both vanish."""
    scale = max(float(np.abs(analytic).max()), float(np.abs(numeric).max()))
    if scale == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max()) / scale


def numeric_gradients(inst: Instance, kind: str, cfg: LossConfig, eps: float = FD_EPS) -> dict[str, np.ndarray]:
    out = {}
    for k in PARAM_KEYS:
        arr = inst.params.arrays[k]
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            inst.params.bump()
            up = loss_value(inst, kind, cfg)
            flat[idx] = orig - eps
            inst.params.bump()
            down = loss_value(inst, kind, cfg)
            flat[idx] = orig
            inst.params.bump()
            gflat[idx] = (up - down) / (2 * eps)
        out[k] = g
    return out


def check_instance(inst: Instance, kind: str, cfg: LossConfig, perturb: str | None = None) -> dict[str, float]:
    """Max relative error per parameter tensor. ``perturb`` corrupts one
    analytic gradient on purpose (harness self-test)."""
    _, grads = batch_gradients(inst.params, inst.samples, inst.choice, kind, cfg)
    if perturb is not None:
        grads[perturb] = grads[perturb] + 1e-2 * (1.0 + np.abs(grads[perturb]))
    numeric = numeric_gradients(inst, kind, cfg)
    return {k: relative_error(grads[k], numeric[k]) for k in PARAM_KEYS}


def run_suite(seed: int = 0, instances: int = 20, batch: int = 4, joint_dim: int = 6,
              kinds=("sh", "mh", "droptriple"), cfg: LossConfig | None = None,
              perturb: str | None = None) -> dict[str, float]:
    """Worst relative error per ``<loss>/<param>`` over seeded instances."""
    cfg = cfg or LossConfig()
    worst: dict[str, float] = {}
    for i in range(instances):
        inst = random_instance(seed * 1000 + i, batch, joint_dim)
        for kind in kinds:
            errs = check_instance(inst, kind, cfg, perturb)
            for k, e in errs.items():
                key = f"{kind}/{k}"
                worst[key] = max(worst.get(key, 0.0), e)
    return worst
