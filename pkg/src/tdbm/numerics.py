"""Dense primitives and seeded random streams.

Matrices are numpy ``float64`` arrays; weight matrices are oriented
visible x hidden, so ``W[i, j]`` couples visible unit ``i`` with hidden
unit ``j``.  Batched operations take one sample per row.
"""

from __future__ import annotations

import numpy as np

from tdbm.errors import DimensionError, InvalidArgumentError

SIGMOID_CLAMP = 500.0
_EPS = np.finfo(np.float64).eps


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Return a PCG64 generator for ``seed`` and an optional stream tag.

    The same ``(seed, *stream)`` always yields the same draws on every
    platform.  Distinct stream tags give statistically independent streams.
    """
    if seed < 0 or seed >= 2**64:
        raise InvalidArgumentError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, stream)])))


def derive_seed(seed: int, *tags: int) -> int:
    """Mix ``seed`` with integer tags into a new 64-bit seed."""
    ss = np.random.SeedSequence([int(seed), *map(int, tags)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sigmoid(x):
    """Logistic sigmoid, strictly inside (0, 1).

    Inputs are clamped to +-500 before exponentiation so activations divided
    by small temperatures cannot overflow.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("sigmoid input contains non-finite values")
    out = sigmoid_unchecked(x)
    return out if out.ndim else float(out)


def sigmoid_unchecked(x: np.ndarray) -> np.ndarray:
    """``sigmoid`` for float arrays already known to be finite (hot loops)."""
    out = 1.0 / (1.0 + np.exp(-np.clip(x, -SIGMOID_CLAMP, SIGMOID_CLAMP)))
    return np.clip(out, _EPS, 1.0 - _EPS)


def affine_forward(W: np.ndarray, x: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Compute ``x @ W + bias``, i.e. ``W^T x + bias`` for each row of ``x``."""
    W = np.asarray(W, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if W.ndim != 2 or x.shape[-1:] != W.shape[:1] or bias.shape != W.shape[1:]:
        raise DimensionError(
            f"cannot apply W{W.shape} to x{x.shape} with bias{bias.shape}"
        )
    return x @ W + bias


def sample_bernoulli(p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw independent bits, each 1 with the matching probability in ``p``."""
    p = np.asarray(p, dtype=np.float64)
    if not np.all((p >= 0.0) & (p <= 1.0)):
        raise InvalidArgumentError("probabilities must lie in [0, 1]")
    return (rng.random(p.shape) < p).astype(np.float64)


def outer_product(u: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.outer(np.asarray(u, dtype=np.float64), np.asarray(w, dtype=np.float64))


def as_batch(x, width: int, name: str = "input") -> tuple[np.ndarray, bool]:
    """Promote a vector to a one-row batch; return it with a was-vector flag."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != width:
        raise DimensionError(f"{name} has shape {np.shape(x)}, expected trailing size {width}")
    return arr, single
