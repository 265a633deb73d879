"""Low-energy input bases from frozen weight rows.

The Gram matrix ``G = W_frozen^T W_frozen`` measures how strongly each
input direction excites the frozen rows.  The basis spans its bottom
eigenspace; the dimension ``k`` is the largest count whose directions
leave a ``tau`` fraction of the total energy to the complementary
high-energy subspace.

Two construction paths:

* dense: full eigendecomposition of ``G`` (exact, used while the input
  width is affordable),
* randomized: a signed Walsh-Hadamard rotation of the operator, a
  Hutchinson-probe screen of per-coordinate energies, and an exact small
  eigenproblem restricted to the screened candidate coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError, NumericalError
from .numerics import SeededRng, as_matrix, fwht, qr_orthonormalize, rademacher_matrix, sym_eig

__all__ = [
    "InputBasis",
    "SrhtConfig",
    "gram",
    "choose_k",
    "dense_low_energy_basis",
    "srht_low_energy_basis",
]

# child tags for seed splitting
_TAG_SIGNS = 0
_TAG_PROBES = 1
_TAG_POWER = 2

# polish passes of the shifted subspace iteration; power iterations for
# the shift estimate.  The complement spectrum compresses the gap, so
# several cheap passes are needed for tight subspace agreement.
_POLISH_PASSES = 8
_SHIFT_POWER_ITERS = 20


@dataclass(frozen=True)
class InputBasis:
    """An orthonormal basis of a low-energy input subspace.

    ``energy_captured`` is the fraction of total trace energy left in
    the complementary high-energy subspace; it is >= tau up to solver
    and probe tolerance.
    """

    vectors: np.ndarray  # (d_in, k), orthonormal columns
    k: int
    tau: float
    energy_captured: float


@dataclass(frozen=True)
class SrhtConfig:
    """Knobs for the randomized path.

    ``coarse_probes`` screen all coordinates, ``refined_probes`` (>=
    coarse) refine the lower-energy half, and ``candidate_count``
    coordinates survive into the exact restricted eigenproblem.
    """

    coarse_probes: int = 8
    refined_probes: int = 32
    candidate_count: int | None = None  # default min(4 * k_max, d_in)
    seed: int = 0

    def __post_init__(self):
        if self.coarse_probes < 1:
            raise ContractViolationError("coarse_probes must be >= 1")
        if self.refined_probes < self.coarse_probes:
            raise ContractViolationError("refined_probes must be >= coarse_probes")
        if self.candidate_count is not None and self.candidate_count < 1:
            raise ContractViolationError("candidate_count must be >= 1")


def gram(w_frozen) -> np.ndarray:
    """``W^T W`` of the frozen rows; symmetric positive semidefinite."""
    w = as_matrix(w_frozen, "gram input")
    return w.T @ w


def choose_k(eigvals_ascending, tau: float, k_max: int) -> int:
    """Basis dimension induced by the energy threshold.

    ``k = min(k_max, d - m)`` where ``m`` is the smallest count of top
    eigenvalues summing to at least ``tau`` of the total.  A zero
    spectrum gives ``k = min(k_max, d)``; the result is floored at 1.
    """
    vals = np.asarray(eigvals_ascending, dtype=np.float64)
    if vals.ndim != 1 or vals.size == 0:
        raise ContractViolationError("choose_k needs a nonempty 1-D eigenvalue sequence")
    if np.any(vals < -1e-10):
        raise ContractViolationError("eigenvalues must be >= -1e-10")
    if not 0.0 < tau < 1.0:
        raise ContractViolationError(f"tau must be in (0, 1), got {tau}")
    if k_max < 1:
        raise ContractViolationError(f"k_max must be >= 1, got {k_max}")
    vals = np.clip(vals, 0.0, None)
    d = vals.size
    total = float(vals.sum())
    if total <= 0.0:
        return max(1, min(k_max, d))
    top_cumsum = np.cumsum(vals[::-1])
    # tiny slack so exact-fraction cases are not missed to rounding
    m = int(np.searchsorted(top_cumsum, tau * total - 1e-12 * total) + 1)
    m = min(m, d)
    return max(1, min(k_max, d - m))


def dense_low_energy_basis(w_frozen, tau: float, k_max: int) -> InputBasis:
    """Bottom-eigenspace basis via a full eigendecomposition of the Gram."""
    w = as_matrix(w_frozen, "dense_low_energy_basis input")
    d_in = w.shape[1]
    if d_in < 1:
        raise ContractViolationError("input width must be >= 1")
    g = gram(w)
    eig = sym_eig(g)
    vals = np.clip(eig.values, 0.0, None)
    k = choose_k(vals, tau, min(k_max, d_in))
    total = float(vals.sum())
    captured = float(vals[k:].sum() / total) if total > 0.0 else 1.0
    return InputBasis(vectors=eig.vectors[:, :k].copy(), k=k, tau=tau, energy_captured=captured)


def _next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


def srht_low_energy_basis(w_frozen, tau: float, k_max: int, cfg: SrhtConfig) -> InputBasis:
    """Randomized low-energy basis without forming the full Gram.

    Stage 1 builds the signed-Hadamard rotation of the operator over the
    zero-padded power-of-two width; its columns are the structured test
    directions.  Stage 2 estimates per-coordinate energies of the
    rotated Gram with Rademacher probes through the adjoint (coarse pass
    on all coordinates, refined pass pooled on the lower-energy half)
    and keeps the ``candidate_count`` lowest-energy coordinates: the
    test directions already tilted toward the low-energy subspace.
    Stage 3 polishes the candidate span with a short shifted subspace
    iteration (the complement operator ``sigma I - G`` applied through
    the frozen rows, never through a dense Gram), then solves the exact
    candidate-restricted eigenproblem and keeps its bottom-k
    eigenvectors mapped back to input space.

    ``k`` comes from the energy rule applied to a profile that splices
    the exact candidate-restricted spectrum (bottom) with the probe
    trace estimate spread over the remaining slots (top).
    """
    w = as_matrix(w_frozen, "srht_low_energy_basis input")
    rows, d_in = w.shape
    if d_in < 2:
        raise ContractViolationError("randomized path needs input width >= 2")
    if not 0.0 < tau < 1.0:
        raise ContractViolationError(f"tau must be in (0, 1), got {tau}")
    k_cap = min(k_max, d_in)
    if k_cap < 1:
        raise ContractViolationError(f"k_max must be >= 1, got {k_max}")
    c = cfg.candidate_count if cfg.candidate_count is not None else min(4 * k_cap, d_in)
    c = min(c, d_in)

    n = _next_pow2(d_in)
    rng = SeededRng(cfg.seed)
    signs = rademacher_matrix(1, n, rng.child(_TAG_SIGNS))[0]
    sqrt_n = np.sqrt(float(n))

    # Rotated operator M = W_pad * diag(signs) * H / sqrt(n); its adjoint
    # applied to a probe vector p is H (signs * (W^T p)) / sqrt(n).
    if rows > 0:
        probes = rademacher_matrix(cfg.refined_probes, rows, rng.child(_TAG_PROBES))
        u = probes @ w                      # (P, d_in)
        u_pad = np.zeros((cfg.refined_probes, n))
        u_pad[:, :d_in] = u
        u_pad *= signs[None, :]
        adj = fwht(u_pad, axis=1) / sqrt_n  # rows are (M^T p)^T
        sq = adj**2
        if not np.isfinite(sq).all():
            raise NumericalError("probe energies overflowed")
        coarse = sq[: cfg.coarse_probes].mean(axis=0)
        pooled = sq.mean(axis=0)
        energies = coarse.copy()
        low_half = np.argsort(coarse, kind="stable")[: n // 2]
        energies[low_half] = pooled[low_half]
        trace_est = float(pooled.sum())
    else:
        energies = np.zeros(n)
        trace_est = 0.0

    candidates = np.sort(np.argsort(energies, kind="stable")[:c])

    # candidate test directions mapped to input space (padding dropped)
    embed = np.zeros((n, c))
    embed[candidates, np.arange(c)] = 1.0
    omega = (signs[:, None] * fwht(embed, axis=0) / sqrt_n)[:d_in, :]

    if rows > 0 and trace_est > 0.0:
        # shift just above the top Gram eigenvalue so the complement
        # operator is positive and its subspace iteration converges to
        # the low-energy side
        v = rng.child(_TAG_POWER).generator().standard_normal(d_in)
        lam_max = 0.0
        for _ in range(_SHIFT_POWER_ITERS):
            gv = w.T @ (w @ v)
            norm = np.linalg.norm(gv)
            if norm <= 1e-300:
                break
            lam_max = float(v @ gv / (v @ v))
            v = gv / norm
        sigma = 1.25 * lam_max + 1e-12 * max(trace_est, 1.0)
        y = omega
        for _ in range(_POLISH_PASSES):
            y = sigma * y - w.T @ (w @ y)
            y, _ = np.linalg.qr(y)
        b = y
    else:
        b, _ = np.linalg.qr(omega)

    # exact candidate-restricted Gram, small eigenproblem
    t = w @ b
    eig = sym_eig(t.T @ t)
    mu = np.clip(eig.values, 0.0, None)

    if c < d_in:
        remainder = max(trace_est - float(mu.sum()), 0.0) / (d_in - c)
        profile = np.sort(np.concatenate([mu, np.full(d_in - c, remainder)]))
    else:
        profile = mu
    k = choose_k(profile, tau, k_cap)
    if k > c:
        raise ContractViolationError(
            f"candidate_count {c} is smaller than the induced basis dimension {k}"
        )

    q = qr_orthonormalize(b @ eig.vectors[:, :k])

    if trace_est > 0.0:
        low_energy = float(np.sum((w @ q) ** 2))
        captured = float(np.clip(1.0 - low_energy / trace_est, 0.0, 1.0))
    else:
        captured = 1.0
    return InputBasis(vectors=q, k=k, tau=tau, energy_captured=captured)
