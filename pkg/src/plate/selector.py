"""Redundant-output-row selection.

A row of a weight matrix is "redundant" when it is highly colinear with
many other rows.  Rows are scored by their average absolute cosine
similarity against a random anchor subset of rows, optionally after a
Johnson-Lindenstrauss-style Gaussian projection so scoring stays cheap
for wide inputs.  The top-scoring rows become the trainable row set; the
rest stay frozen and define the input geometry downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError
from .numerics import SeededRng, as_matrix, gaussian_matrix

__all__ = ["ScoringConfig", "SelectorB", "score_neurons", "select_redundant", "frozen_rows"]

_ZERO_ROW_TOL = 1e-12

# child tags for seed splitting
_TAG_ANCHORS = 0
_TAG_PROJECTION = 1


@dataclass(frozen=True)
class ScoringConfig:
    """How rows are scored.

    ``projection_dim`` is the sketch width; ``exact_mode`` skips the
    projection and scores in the full input space.  ``include_self``
    keeps the self-similarity term (always 1) in the average; the default
    drops it so anchor rows are not biased upward.
    """

    projection_dim: int = 256
    anchor_count: int = 64
    seed: int = 0
    exact_mode: bool = False
    include_self: bool = False

    def __post_init__(self):
        if self.projection_dim < 1:
            raise ContractViolationError("projection_dim must be >= 1")
        if self.anchor_count < 1:
            raise ContractViolationError("anchor_count must be >= 1")


@dataclass(frozen=True)
class SelectorB:
    """The selected trainable row set of one weight matrix.

    ``indices`` is strictly increasing; ``scores`` holds the redundancy
    score of every row (selected or not).
    """

    d_out: int
    indices: np.ndarray  # (r,) strictly increasing row indices
    scores: np.ndarray   # (d_out,)

    @property
    def r(self) -> int:
        return int(self.indices.size)


def _anchor_indices(d_out: int, cfg: ScoringConfig) -> np.ndarray:
    count = min(cfg.anchor_count, d_out)
    gen = SeededRng(cfg.seed).child(_TAG_ANCHORS).generator()
    return np.sort(gen.choice(d_out, size=count, replace=False))


def score_neurons(w, cfg: ScoringConfig) -> np.ndarray:
    """Redundancy score of every row of ``w``.

    Each row is unit-normalized, optionally sketched through a Gaussian
    projection, and scored by the mean absolute inner product with the
    anchor rows.  Rows with norm below 1e-12 score 0.  Deterministic
    under ``cfg.seed``.
    """
    w = as_matrix(w, "score_neurons input")
    d_out, d_in = w.shape
    if d_out < 1:
        raise ContractViolationError("score_neurons needs at least one row")
    if not cfg.exact_mode and cfg.projection_dim > d_in:
        raise ContractViolationError(
            f"projection_dim {cfg.projection_dim} exceeds input width {d_in}"
        )

    norms = np.linalg.norm(w, axis=1)
    alive = norms >= _ZERO_ROW_TOL
    z = np.zeros_like(w)
    z[alive] = w[alive] / norms[alive, None]
    if not cfg.exact_mode:
        # 1/sqrt(d') scaling keeps sketched inner products near cosines.
        r = gaussian_matrix(d_in, cfg.projection_dim, SeededRng(cfg.seed).child(_TAG_PROJECTION))
        z = z @ (r / np.sqrt(cfg.projection_dim))

    anchors = _anchor_indices(d_out, cfg)
    sims = np.abs(z @ z[anchors].T)  # (d_out, |anchors|)
    totals = sims.sum(axis=1)
    if cfg.include_self:
        scores = totals / anchors.size
    else:
        is_anchor = np.zeros(d_out, dtype=bool)
        is_anchor[anchors] = True
        self_term = np.where(is_anchor, np.abs(np.einsum("ij,ij->i", z, z)), 0.0)
        denom = anchors.size - is_anchor.astype(np.int64)
        scores = np.where(denom > 0, (totals - self_term) / np.maximum(denom, 1), 0.0)
    scores[~alive] = 0.0
    return scores


def select_redundant(w, r: int, cfg: ScoringConfig) -> SelectorB:
    """The ``r`` most redundant rows of ``w``; ties go to the lower index."""
    w = as_matrix(w, "select_redundant input")
    d_out = w.shape[0]
    if not 1 <= r <= d_out:
        raise ContractViolationError(f"need 1 <= r <= d_out, got r={r}, d_out={d_out}")
    scores = score_neurons(w, cfg)
    # lexsort: primary key descending score, secondary ascending index
    order = np.lexsort((np.arange(d_out), -scores))
    indices = np.sort(order[:r])
    return SelectorB(d_out=d_out, indices=indices, scores=scores)


def frozen_rows(w, sel: SelectorB) -> np.ndarray:
    """The rows of ``w`` not selected, original order preserved."""
    w = as_matrix(w, "frozen_rows input")
    if w.shape[0] != sel.d_out:
        raise ContractViolationError(
            f"selector built for {sel.d_out} rows, matrix has {w.shape[0]}"
        )
    return np.delete(w, sel.indices, axis=0)
