"""Time the numba kernels against the pure-numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N] [--batch I] [--dim D]

Each kernel is timed on identical inputs through both implementations
(the first numba call, which compiles or loads the cache, is excluded).
A final row times one full training epoch under each backend by toggling
the DROPTRIPLE_PURE_NUMPY flag.
"""

import argparse
import os
import timeit

import numpy as np

from droptriple import _kernels
from droptriple.corpus import CorpusConfig, generate_corpus
from droptriple.trainer import TrainConfig, train


def kernel_cases(batch, dim, frames):
    rng = np.random.default_rng(0)
    A = rng.standard_normal((batch, dim))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    B = rng.standard_normal((batch, dim))
    B /= np.linalg.norm(B, axis=1, keepdims=True)
    S = A @ B.T
    masks = (A @ A.T) > 0.3
    np.fill_diagonal(masks, False)
    lengths = rng.integers(frames // 2, frames + 1, batch)
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    H = rng.standard_normal((int(offsets[-1]), dim))
    q = rng.standard_normal(dim)
    scale = 1 / np.sqrt(dim)
    _, attn = _kernels.pool_forward_np(H, offsets, q, scale)
    dpooled = rng.standard_normal((batch, dim))
    return {
        "sim_matrix": (A, B),
        "sum_of_hinges": (S, 0.2),
        "hardest_negative": (S, masks, masks.T.copy(), 0.2),
        "pool_forward": (H, offsets, q, scale),
        "pool_backward": (H, offsets, q, scale, attn, dpooled),
    }


def best_of(fn, args, repeat):
    timer = timeit.Timer(lambda: fn(*args))
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number


def epoch_time(backend):
    os.environ[_kernels.FLAG] = "1" if backend == "numpy" else "0"
    corpus = generate_corpus(CorpusConfig(seed=0))
    cfg = TrainConfig(total_epochs=1, warmup_epochs=0)
    train(cfg, corpus)  # warm caches
    return best_of(lambda: train(cfg, corpus), (), 3)


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--frames", type=int, default=40)
    args = ap.parse_args()
    if _kernels.numba is None:
        raise SystemExit("numba is not installed; nothing to compare")

    print(f"batch={args.batch} dim={args.dim} frames<={args.frames}")
    print(f"{'kernel':18s} {'numpy (us)':>12s} {'numba (us)':>12s} {'speedup':>8s}")
    for name, args_ in kernel_cases(args.batch, args.dim, args.frames).items():
        np_fn = getattr(_kernels, f"{name}_np")
        nb_fn = getattr(_kernels, f"{name}_nb")
        nb_fn(*args_)
        t_np, t_nb = best_of(np_fn, args_, args.repeat), best_of(nb_fn, args_, args.repeat)
        print(f"{name:18s} {t_np * 1e6:12.1f} {t_nb * 1e6:12.1f} {t_np / t_nb:8.2f}")
    t_np, t_nb = epoch_time("numpy"), epoch_time("numba")
    print(f"{'train epoch':18s} {t_np * 1e6:12.0f} {t_nb * 1e6:12.0f} {t_np / t_nb:8.2f}")


if __name__ == "__main__":
    main()
