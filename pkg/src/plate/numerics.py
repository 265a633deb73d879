"""Dense linear algebra and seeded randomness used by every other module.

Matrices are plain ``numpy.ndarray`` objects: 2-D, row-major, float64.
All randomized routines are pure functions of their inputs and a
:class:`SeededRng`, so identical seeds give bitwise-identical results
regardless of call order or thread count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError, RankDeficiencyError

__all__ = [
    "SeededRng",
    "EigenDecomposition",
    "as_matrix",
    "sym_eig",
    "fwht",
    "qr_orthonormalize",
    "principal_angles",
    "gaussian_matrix",
    "rademacher_matrix",
]

_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class SeededRng:
    """A 64-bit seed with deterministic splitting.

    ``child(tag)`` derives an independent stream for one consumer;
    the derivation depends only on ``(seed, tag)``, never on draw
    order, so parallel consumers stay reproducible.
    """

    seed: int

    def child(self, tag: int) -> "SeededRng":
        state = np.random.SeedSequence((self.seed & _SEED_MASK, int(tag))).generate_state(2)
        return SeededRng(int(state[0]) | (int(state[1]) << 32))

    def generator(self) -> np.random.Generator:
        # Philox is counter-based: cheap to construct, stable across platforms.
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(self.seed & _SEED_MASK)))


@dataclass(frozen=True)
class EigenDecomposition:
    """Full symmetric eigendecomposition, eigenvalues ascending."""

    values: np.ndarray   # (n,)
    vectors: np.ndarray  # (n, n), columns are unit eigenvectors


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a float64 2-D array and validate finiteness."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ContractViolationError(f"{name} must be 2-D, got ndim={m.ndim}")
    if m.size and not np.isfinite(m).all():
        raise ContractViolationError(f"{name} contains non-finite entries")
    return m


def sym_eig(g) -> EigenDecomposition:
    """Eigendecomposition of a symmetric matrix.

    Requires a square matrix symmetric to 1e-10 relative in Frobenius
    norm.  Returns the full spectrum in ascending order with orthonormal
    eigenvectors; the reconstruction ``V diag(w) V^T`` matches the input
    to 1e-8 relative.
    """
    g = as_matrix(g, "sym_eig input")
    n, m = g.shape
    if n != m:
        raise ContractViolationError(f"sym_eig input must be square, got {n}x{m}")
    norm = np.linalg.norm(g)
    asym = np.linalg.norm(g - g.T)
    if asym > 1e-10 * max(norm, 1e-300):
        raise ContractViolationError(
            f"sym_eig input is not symmetric: relative asymmetry {asym / max(norm, 1e-300):.3e}"
        )
    values, vectors = np.linalg.eigh((g + g.T) / 2.0)
    return EigenDecomposition(values=values, vectors=vectors)


def fwht(a, axis: int = -1) -> np.ndarray:
    """Unnormalized Walsh-Hadamard transform along ``axis``.

    Length along the axis must be a power of two.  Involution up to the
    length factor: ``fwht(fwht(v)) == n * v`` exactly up to rounding.
    """
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[axis]
    if n < 1 or (n & (n - 1)) != 0:
        raise ContractViolationError(f"fwht length must be a power of two, got {n}")
    moved = np.moveaxis(a, axis, -1)
    shape = moved.shape
    x = moved.reshape(-1, n).copy()
    h = 1
    while h < n:
        x = x.reshape(x.shape[0], -1, 2, h)
        s = x[:, :, 0, :] + x[:, :, 1, :]
        d = x[:, :, 0, :] - x[:, :, 1, :]
        x = np.concatenate((s[:, :, None, :], d[:, :, None, :]), axis=2)
        h *= 2
    x = x.reshape(shape)
    return np.moveaxis(x, -1, axis)


def qr_orthonormalize(v) -> np.ndarray:
    """Orthonormal basis with the same column span as ``v``.

    Requires cols <= rows and full column rank; rank deficiency raises
    :class:`RankDeficiencyError` carrying the numerical rank.
    """
    v = as_matrix(v, "qr_orthonormalize input")
    rows, cols = v.shape
    if cols > rows:
        raise ContractViolationError(f"need cols <= rows, got {rows}x{cols}")
    if cols == 0:
        return np.zeros((rows, 0))
    svals = np.linalg.svd(v, compute_uv=False)
    tol = max(rows, cols) * np.finfo(np.float64).eps * (svals[0] if svals.size else 0.0)
    rank = int(np.sum(svals > tol))
    if rank < cols:
        raise RankDeficiencyError(
            f"qr_orthonormalize input {rows}x{cols} is rank deficient", rank
        )
    q, _ = np.linalg.qr(v)
    return q


def principal_angles(q1, q2) -> np.ndarray:
    """Principal angles between two subspaces given orthonormal bases.

    Returns angles in [0, pi/2], ascending.  Cosines come from the
    singular values of ``q1^T q2`` clamped to [-1, 1]; angles below
    pi/4 are refined through the complementary sine singular values,
    which stay well conditioned where arccos saturates.
    """
    q1 = as_matrix(q1, "principal_angles q1")
    q2 = as_matrix(q2, "principal_angles q2")
    if q1.shape[0] != q2.shape[0]:
        raise ContractViolationError(
            f"row counts differ: {q1.shape[0]} vs {q2.shape[0]}"
        )
    for name, q in (("q1", q1), ("q2", q2)):
        if q.shape[1]:
            dev = np.max(np.abs(q.T @ q - np.eye(q.shape[1])))
            if dev > 1e-8:
                raise ContractViolationError(
                    f"principal_angles {name} is not orthonormal (deviation {dev:.3e})"
                )
    cos_vals = np.clip(np.linalg.svd(q1.T @ q2, compute_uv=False), -1.0, 1.0)
    angles = np.sort(np.arccos(cos_vals))
    count = min(q1.shape[1], q2.shape[1])
    sin_vals = np.linalg.svd(q2 - q1 @ (q1.T @ q2), compute_uv=False)
    sin_vals = np.sort(np.clip(sin_vals, 0.0, 1.0))[:count]
    small = angles < np.pi / 4
    angles[small] = np.arcsin(sin_vals[small])
    return angles


def gaussian_matrix(rows: int, cols: int, rng: SeededRng) -> np.ndarray:
    """Matrix of i.i.d. standard normal entries, deterministic under seed."""
    if rows < 1 or cols < 1:
        raise ContractViolationError(f"gaussian_matrix needs positive dims, got {rows}x{cols}")
    return rng.generator().standard_normal((rows, cols))


def rademacher_matrix(rows: int, cols: int, rng: SeededRng) -> np.ndarray:
    """Matrix of i.i.d. +-1 entries, deterministic under seed."""
    if rows < 1 or cols < 1:
        raise ContractViolationError(f"rademacher_matrix needs positive dims, got {rows}x{cols}")
    return rng.generator().integers(0, 2, size=(rows, cols)).astype(np.float64) * 2.0 - 1.0
