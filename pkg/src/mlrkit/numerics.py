"""Dense float64 tensor container, core vector kernels, and a deterministic RNG.

Everything downstream (heads, aggregation, loss, training) is built on the
three kernels here plus the counter-based random number generator.  All
public operations work in 64-bit floats and reject non-finite values.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateInputError, ShapeError


class Tensor:
    """Immutable dense tensor: a shape plus row-major float64 values.

    The backing array is made read-only so instances can be shared across
    threads without copies.
    """

    __slots__ = ("_array",)

    def __init__(self, shape: Sequence[int], values: Iterable[float]):
        shape = tuple(int(s) for s in shape)
        if any(s < 1 for s in shape):
            raise ShapeError(f"all dimensions must be >= 1, got {shape}")
        flat = np.asarray(list(values) if not isinstance(values, np.ndarray) else values,
                          dtype=np.float64).ravel()
        expected = int(np.prod(shape)) if shape else 1
        if flat.size != expected:
            raise ShapeError(
                f"shape {shape} requires {expected} values, got {flat.size}")
        arr = np.ascontiguousarray(flat.reshape(shape))
        if not np.all(np.isfinite(arr)):
            raise DegenerateInputError("tensor values must all be finite")
        arr.flags.writeable = False
        self._array = arr

    @classmethod
    def from_array(cls, array: np.ndarray) -> "Tensor":
        return cls(array.shape, np.asarray(array, dtype=np.float64))

    @property
    def shape(self) -> tuple[int, ...]:
        return self._array.shape

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the values (read-only)."""
        return self._array.reshape(-1)

    @property
    def array(self) -> np.ndarray:
        """Shaped read-only view of the values."""
        return self._array

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        return Tensor(shape, self._array.reshape(-1))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._array, other._array)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


def _as_vector(x, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise ShapeError(f"{name} must be a nonempty 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise DegenerateInputError(f"{name} contains non-finite values")
    return v


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two vectors, in [-1, 1].

    Zero-norm inputs are rejected rather than clamped: they indicate an
    upstream bug, not valid data.
    """
    av = _as_vector(a, "a")
    bv = _as_vector(b, "b")
    if av.size != bv.size:
        raise ShapeError(f"length mismatch: {av.size} vs {bv.size}")
    na = float(np.linalg.norm(av))
    nb = float(np.linalg.norm(bv))
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine_similarity undefined for zero-norm vector")
    c = float(np.dot(av, bv) / (na * nb))
    # rounding can push the quotient a few ulp outside [-1, 1]
    return min(1.0, max(-1.0, c))


def softmax_flat(x) -> np.ndarray:
    """Numerically stable softmax of a flat vector (max subtraction)."""
    v = _as_vector(x, "x")
    e = np.exp(v - v.max())
    return e / e.sum()


def l2_normalize(x) -> np.ndarray:
    """Scale a vector to unit Euclidean norm, preserving direction."""
    v = _as_vector(x, "x")
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise DegenerateInputError("cannot normalize the zero vector")
    return v / n


class Rng:
    """Deterministic random number generator on the Philox 4x64 counter cipher.

    Draws are a pure function of (seed, stream, counter), so identical seeds
    reproduce identical sequences on every platform.  Parallel code must not
    share one Rng; derive independent streams with :meth:`split`.
    """

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or stream < 0:
            raise ValueError("seed and stream must be non-negative")
        self.seed = int(seed)
        self.stream = int(stream)
        self._gen = np.random.Generator(
            np.random.Philox(key=np.array([self.seed, self.stream], dtype=np.uint64)))

    def split(self, stream: int) -> "Rng":
        """Independent stream with the same seed (for parallel workers)."""
        return Rng(self.seed, stream)

    def uniform(self, n: int) -> np.ndarray:
        """n i.i.d. draws from U[0, 1)."""
        if n < 0:
            raise ValueError("n must be >= 0")
        return self._gen.random(n)

    def normal(self, n: int) -> np.ndarray:
        """n i.i.d. standard normal draws."""
        if n < 0:
            raise ValueError("n must be >= 0")
        return self._gen.standard_normal(n)

    def permutation(self, n: int) -> np.ndarray:
        """Uniform random permutation of range(n) (Fisher-Yates)."""
        return self._gen.permutation(n)
