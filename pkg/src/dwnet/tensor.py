"""Dense float64 tensor primitives and the project-wide deterministic RNG.

All numeric state in this project is a row-major numpy ndarray of 64-bit
reals. Randomness always flows through :class:`Rng`, which pins a single
named generator algorithm (PCG64) so that every experiment is replayable
from its seed alone.
"""

import hashlib

import numpy as np

GENERATOR_ALGORITHM = "pcg64"


class DimensionError(ValueError):
    """Tensor shapes do not line up for the requested operation."""


def tensor(values):
    """Coerce arbitrary nested values to a float64 ndarray."""
    return np.asarray(values, dtype=np.float64)


def zeros(shape):
    return np.zeros(shape, dtype=np.float64)


def ones(shape):
    return np.ones(shape, dtype=np.float64)


def matmul(a, b):
    """Matrix product a @ b with an explicit inner-extent check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    return a @ b


def hadamard(a, b):
    """Element-wise product; shapes must be identical (no broadcasting)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"hadamard shapes differ: {a.shape} vs {b.shape}")
    return a * b


def argmax_row(t):
    """Index of the maximum of a single row; ties break to the lowest index."""
    t = np.asarray(t, dtype=np.float64)
    row = t.reshape(-1)
    if row.size == 0:
        raise ValueError("argmax_row: empty row")
    return int(np.argmax(row))


def derive_seed(seed, *parts):
    """Derive a stable 64-bit child seed from a parent seed plus labels.

    blake2b over the decimal/string rendering of all parts; independent of
    platform, word size and hash randomization.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode("ascii"))
    for part in parts:
        h.update(b"/")
        h.update(str(part).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


class Rng:
    """Seeded PCG64 stream. One owner per instance; never shared.

    Parallel or structured work derives independent children via
    :meth:`child` rather than sharing a stream.
    """

    def __init__(self, seed):
        self.algorithm = GENERATOR_ALGORITHM
        self.seed = int(seed)
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, *parts):
        return Rng(derive_seed(self.seed, *parts))

    def permutation(self, n):
        return self.generator.permutation(n)

    def integers(self, low, high, size=None):
        return self.generator.integers(low, high, size=size)

    def normal(self, mean, sigma, size=None):
        return self.generator.normal(mean, sigma, size=size)

    def uniform(self, low, high, size=None):
        return self.generator.uniform(low, high, size=size)


def draw_truncated_normal(rng, shape, mean=0.0, sigma=0.1):
    """Normal(mean, sigma^2) draws, rejecting anything 2 sigma or more out.

    Every returned element lies strictly inside (mean - 2*sigma,
    mean + 2*sigma). Rejection keeps redrawing only the offending slots,
    so the draw sequence is a pure function of the rng state.
    """
    if sigma <= 0:
        raise ValueError(f"draw_truncated_normal: sigma must be > 0, got {sigma}")
    out = rng.generator.normal(mean, sigma, size=shape).astype(np.float64, copy=False)
    flat = out.reshape(-1)
    bad = np.flatnonzero(np.abs(flat - mean) >= 2.0 * sigma)
    while bad.size:
        flat[bad] = rng.generator.normal(mean, sigma, size=bad.size)
        bad = bad[np.abs(flat[bad] - mean) >= 2.0 * sigma]
    return out
