"""Geometric measurements of forgetting on a frozen old-task dataset.

Quantities, all over a linear update subspace S of flat parameter space:

* forgetting: old-task loss change between two parameter vectors,
* drift radius: worst-case first-order output change on old inputs per
  unit-norm update in S (top eigenvalue of the restricted Gauss matrix
  ``E[J^T J]``),
* restricted curvature: top eigenvalue of the old-loss Hessian
  restricted to S, with Hessian-vector products by central differences
  of analytic gradients or by the Gauss-Newton product,
* the drift bound check ``lambda(S) <= beta * eps(S)^2`` with an
  explicit residual allowance,
* worst-direction forgetting sweeps and input-Jacobian drift fields.

Subspaces are held as structured per-layer blocks with an orthogonal
projector, so families far too large to materialize (all row-scatter
directions of a wide layer, the full parameter space) still support
power iteration.  Explicit orthonormal columns are materialized only on
demand and only below a hard budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adapters import LoraAdapter, PlateAdapter
from .errors import ContractViolationError, ResourceError
from .model import (
    Mlp,
    ModelLayout,
    _activation_slope,
    forward,
    loss_and_grad,
    set_params,
)
from .numerics import SeededRng

__all__ = [
    "UpdateSubspace",
    "DriftReport",
    "CurvatureReport",
    "BoundCheck",
    "SweepResult",
    "subspace_basis",
    "random_subspace",
    "forgetting",
    "drift_radius",
    "restricted_curvature",
    "bound_check_gn",
    "worst_direction_sweep",
    "jacobian_drift_field",
    "loss_beta",
]

COLUMN_BUDGET = 20000

# beta: per-sample output-space curvature bound of each loss
_LOSS_BETA = {"mse": 2.0, "softmax_cross_entropy": 1.0}


def loss_beta(loss: str) -> float:
    if loss not in _LOSS_BETA:
        raise ContractViolationError(f"no curvature bound known for loss {loss!r}")
    return _LOSS_BETA[loss]


def _col_basis(mat: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the column space, rank-aware."""
    if mat.size == 0:
        return np.zeros((mat.shape[0], 0))
    u, s, _ = np.linalg.svd(mat, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((mat.shape[0], 0))
    rank = int(np.sum(s > max(mat.shape) * np.finfo(np.float64).eps * s[0]))
    return u[:, :rank]


# ---------------------------------------------------------------------------
# subspace blocks


@dataclass(frozen=True)
class _RowScatterBlock:
    """Directions scatter(C @ V^T) into selected rows of one layer weight."""

    layer: int
    rows: np.ndarray     # (r,)
    vectors: np.ndarray  # (d_in, k) orthonormal

    def dim(self) -> int:
        return int(self.rows.size) * self.vectors.shape[1]

    def project_weight(self, g: np.ndarray) -> np.ndarray:
        out = np.zeros_like(g)
        out[self.rows] = (g[self.rows] @ self.vectors) @ self.vectors.T
        return out


@dataclass(frozen=True)
class _BilateralSpanBlock:
    """Directions {L X + Y R^T} of one layer weight (tangent of a product)."""

    layer: int
    left: np.ndarray   # (d_out, p) orthonormal, possibly 0 columns
    right: np.ndarray  # (d_in, q) orthonormal, possibly 0 columns

    def dim(self) -> int:
        d_out, p = self.left.shape
        d_in, q = self.right.shape
        return p * d_in + q * d_out - p * q

    def project_weight(self, g: np.ndarray) -> np.ndarray:
        out = np.zeros_like(g)
        if self.left.shape[1]:
            out += self.left @ (self.left.T @ g)
        if self.right.shape[1]:
            gr = (g @ self.right) @ self.right.T
            out += gr
            if self.left.shape[1]:
                out -= self.left @ (self.left.T @ gr)
        return out


@dataclass(frozen=True)
class _DenseBlock:
    """Every weight (and optionally bias) entry of one layer."""

    layer: int
    include_bias: bool
    shape: tuple

    def dim(self) -> int:
        d_out, d_in = self.shape
        return d_out * d_in + (d_out if self.include_bias else 0)


@dataclass
class UpdateSubspace:
    """A linear family of parameter updates with an orthogonal projector.

    Either structured ``blocks`` over layer weights or explicit
    orthonormal ``columns`` over the flat space.  ``project`` maps a
    flat vector to its orthogonal projection onto the family.
    """

    provenance: str
    layout: ModelLayout
    blocks: list = field(default_factory=list)
    explicit: np.ndarray | None = None  # (n_params, dim) orthonormal columns

    def __post_init__(self):
        if self.explicit is not None and self.explicit.shape[1]:
            cols = self.explicit
            gram = cols.T @ cols
            dev = np.max(np.abs(gram - np.eye(gram.shape[0])))
            if dev > 1e-8:
                raise ContractViolationError(
                    f"explicit subspace columns are not orthonormal (deviation {dev:.3e})"
                )

    @classmethod
    def from_columns(cls, layout: ModelLayout, columns: np.ndarray, provenance: str = "custom"):
        columns = np.asarray(columns, dtype=np.float64)
        if columns.shape[0] != layout.size:
            raise ContractViolationError("column length does not match the parameter layout")
        return cls(provenance=provenance, layout=layout, explicit=columns)

    @property
    def dim(self) -> int:
        if self.explicit is not None:
            return self.explicit.shape[1]
        return sum(b.dim() for b in self.blocks)

    def project(self, flat: np.ndarray) -> np.ndarray:
        if self.explicit is not None:
            return self.explicit @ (self.explicit.T @ flat)
        table = self.layout.slices()
        out = np.zeros_like(flat)
        for block in self.blocks:
            ws, we, shape = table[f"layers.{block.layer}.weight"]
            if isinstance(block, _DenseBlock):
                out[ws:we] = flat[ws:we]
                if block.include_bias:
                    bs, be, _ = table[f"layers.{block.layer}.bias"]
                    out[bs:be] = flat[bs:be]
            else:
                g = flat[ws:we].reshape(shape)
                out[ws:we] += block.project_weight(g).ravel()
        return out

    def random_direction(self, gen: np.random.Generator) -> np.ndarray:
        """Unit vector uniform over the sphere of the family."""
        for _ in range(8):
            v = self.project(gen.standard_normal(self.layout.size))
            norm = np.linalg.norm(v)
            if norm > 1e-12:
                return v / norm
        raise ContractViolationError("subspace projector annihilates random probes; empty family?")

    def columns(self) -> np.ndarray:
        """Materialize explicit orthonormal columns.

        Raises :class:`ResourceError` above the column budget; such
        families must be used through the implicit projector instead.
        """
        if self.explicit is not None:
            return self.explicit
        if self.dim > COLUMN_BUDGET:
            raise ResourceError(
                f"family has {self.dim} columns (> {COLUMN_BUDGET}); "
                "use the implicit projector interface"
            )
        table = self.layout.slices()
        cols = []
        for block in self.blocks:
            ws, we, shape = table[f"layers.{block.layer}.weight"]
            d_out, d_in = shape
            if isinstance(block, _RowScatterBlock):
                for i in block.rows:
                    for j in range(block.vectors.shape[1]):
                        flat = np.zeros(self.layout.size)
                        w = np.zeros(shape)
                        w[int(i), :] = block.vectors[:, j]
                        flat[ws:we] = w.ravel()
                        cols.append(flat)
            elif isinstance(block, _BilateralSpanBlock):
                for a in range(block.left.shape[1]):
                    for b in range(d_in):
                        flat = np.zeros(self.layout.size)
                        w = np.zeros(shape)
                        w[:, b] = block.left[:, a]
                        flat[ws:we] = w.ravel()
                        cols.append(flat)
                if block.right.shape[1]:
                    # complete the left factor so the second family stays orthogonal
                    comp = _col_basis(np.eye(d_out) - block.left @ block.left.T)
                    for c in range(comp.shape[1]):
                        for dcol in range(block.right.shape[1]):
                            flat = np.zeros(self.layout.size)
                            flat[ws:we] = np.outer(comp[:, c], block.right[:, dcol]).ravel()
                            cols.append(flat)
            elif isinstance(block, _DenseBlock):
                for pos in range(ws, we):
                    flat = np.zeros(self.layout.size)
                    flat[pos] = 1.0
                    cols.append(flat)
                if block.include_bias:
                    bs, be, _ = table[f"layers.{block.layer}.bias"]
                    for pos in range(bs, be):
                        flat = np.zeros(self.layout.size)
                        flat[pos] = 1.0
                        cols.append(flat)
        return np.stack(cols, axis=1) if cols else np.zeros((self.layout.size, 0))


def subspace_basis(model: Mlp, adapters, kind: str) -> UpdateSubspace:
    """The update family of an adapter configuration.

    ``plate``: the exactly-orthonormal row-scatter directions of every
    structured adapter.  ``lora_tangent``: the tangent of the two-factor
    product at its current point (at a zero-init up factor this reduces
    to the span of up-factor moves).  ``full``: every backbone weight
    and bias coordinate.
    """
    layout = ModelLayout.of(model)
    blocks = []
    layers_used = []
    if kind == "plate":
        for idx, adapter in enumerate(adapters):
            if isinstance(adapter, PlateAdapter):
                blocks.append(
                    _RowScatterBlock(
                        layer=idx,
                        rows=np.asarray(adapter.selector.indices),
                        vectors=adapter.basis.vectors,
                    )
                )
                layers_used.append(idx)
    elif kind == "lora_tangent":
        for idx, adapter in enumerate(adapters):
            if isinstance(adapter, LoraAdapter):
                left = _col_basis(adapter.up)
                right = _col_basis(adapter.down.T)
                if left.shape[1] or right.shape[1]:
                    blocks.append(_BilateralSpanBlock(layer=idx, left=left, right=right))
                    layers_used.append(idx)
    elif kind == "full":
        for idx, layer in enumerate(model.layers):
            blocks.append(_DenseBlock(layer=idx, include_bias=True, shape=layer.weight.shape))
            layers_used.append(idx)
    else:
        raise ContractViolationError(f"unknown family kind {kind!r}")
    if not blocks:
        raise ContractViolationError(f"family {kind!r} is empty for these adapters")
    return UpdateSubspace(provenance=f"{kind}(layers={layers_used})", layout=layout, blocks=blocks)


def random_subspace(layout: ModelLayout, dim: int, seed: int, layers: list | None = None) -> UpdateSubspace:
    """Random orthonormal family supported on backbone weight segments."""
    gen = SeededRng(seed).generator()
    table = layout.slices()
    keys = [k for k in table if k.startswith("layers.") and k.endswith(".weight")]
    if layers is not None:
        keys = [f"layers.{i}.weight" for i in layers]
    mask = np.zeros(layout.size, dtype=bool)
    for key in keys:
        ws, we, _ = table[key]
        mask[ws:we] = True
    raw = np.zeros((layout.size, dim))
    raw[mask, :] = gen.standard_normal((int(mask.sum()), dim))
    q, _ = np.linalg.qr(raw)
    return UpdateSubspace.from_columns(layout, q, provenance=f"random(dim={dim})")


# ---------------------------------------------------------------------------
# forward/adjoint directional derivatives at a fixed parameter point


class _Linearization:
    """Caches one forward pass and exposes exact JVP/VJP at that point."""

    def __init__(self, model: Mlp, theta: np.ndarray, x: np.ndarray, head_name: str | None):
        self.model = model.copy()
        set_params(self.model, theta)
        self.layout = ModelLayout.of(model)
        self.table = self.layout.slices()
        self.head_name = head_name
        self.x = np.asarray(x, dtype=np.float64)
        self.outputs, self.cache = forward(self.model, None, self.x, head_name)
        self.n = self.x.shape[0]

    def _post_activation(self, idx: int) -> np.ndarray:
        if idx + 1 < len(self.model.layers):
            return self.cache["inputs"][idx + 1]
        return self.cache["hidden"]

    def jvp(self, flat_dir: np.ndarray) -> np.ndarray:
        """Directional derivative of the outputs along a parameter direction."""
        t = None
        for idx, layer in enumerate(self.model.layers):
            x_in = self.cache["inputs"][idx]
            ws, we, shape = self.table[f"layers.{idx}.weight"]
            bs, be, _ = self.table[f"layers.{idx}.bias"]
            dw = flat_dir[ws:we].reshape(shape)
            db = flat_dir[bs:be]
            tz = x_in @ dw.T + db
            if t is not None:
                tz += t @ layer.weight.T
            slope = _activation_slope(layer.activation, self.cache["pre"][idx], self._post_activation(idx))
            t = slope * tz
        if self.head_name is None:
            return t
        head = self.model.heads[self.head_name]
        ws, we, shape = self.table[f"heads.{self.head_name}.weight"]
        bs, be, _ = self.table[f"heads.{self.head_name}.bias"]
        dw = flat_dir[ws:we].reshape(shape)
        db = flat_dir[bs:be]
        return t @ head.weight.T + self.cache["hidden"] @ dw.T + db

    def vjp(self, upstream: np.ndarray) -> np.ndarray:
        """Adjoint: sum over samples of J(x)^T upstream_x, as a flat vector."""
        flat = np.zeros(self.layout.size)
        g = np.asarray(upstream, dtype=np.float64)
        if self.head_name is not None:
            head = self.model.heads[self.head_name]
            ws, we, _ = self.table[f"heads.{self.head_name}.weight"]
            bs, be, _ = self.table[f"heads.{self.head_name}.bias"]
            flat[ws:we] = (g.T @ self.cache["hidden"]).ravel()
            flat[bs:be] = g.sum(axis=0)
            g = g @ head.weight
        for idx in range(len(self.model.layers) - 1, -1, -1):
            layer = self.model.layers[idx]
            slope = _activation_slope(layer.activation, self.cache["pre"][idx], self._post_activation(idx))
            gz = g * slope
            ws, we, _ = self.table[f"layers.{idx}.weight"]
            bs, be, _ = self.table[f"layers.{idx}.bias"]
            flat[ws:we] = (gz.T @ self.cache["inputs"][idx]).ravel()
            flat[bs:be] = gz.sum(axis=0)
            g = gz @ layer.weight
        return flat


def _full_gradient(model: Mlp, theta: np.ndarray, x, y, head_name, loss: str) -> np.ndarray:
    lin = _Linearization(model, theta, x, head_name)
    _, out_grad = loss_and_grad(lin.outputs, y, loss)
    return lin.vjp(out_grad)


def _power_iteration(matvec, start: np.ndarray, max_iters: int, tol: float):
    """Dominant eigenvalue of a symmetric PSD-dominant operator.

    Returns (eigenvalue, unit eigenvector, iterations, converged).
    """
    norm = np.linalg.norm(start)
    if norm <= 1e-300:
        return 0.0, start, 0, True
    v = start / norm
    lam_prev = None
    lam = 0.0
    for it in range(1, max_iters + 1):
        w = matvec(v)
        lam = float(v @ w)
        wnorm = np.linalg.norm(w)
        if wnorm <= 1e-300:
            return 0.0, v, it, True
        v = w / wnorm
        if lam_prev is not None and abs(lam - lam_prev) <= tol * max(abs(lam), 1e-300):
            return lam, v, it, True
        lam_prev = lam
    return lam, v, max_iters, False


# ---------------------------------------------------------------------------
# reports


@dataclass
class DriftReport:
    epsilon: float
    iterations: int
    converged: bool
    samples_used: int

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "iterations": self.iterations,
            "converged": self.converged,
            "samples_used": self.samples_used,
        }


@dataclass
class CurvatureReport:
    lambda_s: float
    top_direction: np.ndarray
    hvp_mode: str
    iterations: int
    converged: bool
    samples_used: int

    def to_dict(self, include_direction: bool = False) -> dict:
        out = {
            "lambda": self.lambda_s,
            "hvp_mode": self.hvp_mode,
            "iterations": self.iterations,
            "converged": self.converged,
            "samples_used": self.samples_used,
        }
        if include_direction:
            out["top_direction"] = self.top_direction.tolist()
        return out


@dataclass
class BoundCheck:
    lambda_s: float
    beta_eps_sq: float
    residual: float
    holds: bool

    def to_dict(self) -> dict:
        return {
            "lambda": self.lambda_s,
            "beta_eps_sq": self.beta_eps_sq,
            "residual": self.residual,
            "holds": self.holds,
        }


@dataclass
class SweepResult:
    rows: list           # (rho, forgetting) pairs
    quad_coeff: float    # least-squares c in forgetting ~ c * rho^2

    def to_dict(self) -> dict:
        return {"rows": [[r, f] for r, f in self.rows], "quad_coeff": self.quad_coeff}


# ---------------------------------------------------------------------------
# measurements


def forgetting(model: Mlp, head_name, theta0: np.ndarray, theta1: np.ndarray, x, y, loss: str) -> float:
    """Old-task loss at theta1 minus at theta0 (may be negative)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        raise ContractViolationError("forgetting needs a nonempty dataset")
    work = model.copy()
    set_params(work, theta0)
    out0, _ = forward(work, None, x, head_name)
    l0, _ = loss_and_grad(out0, y, loss)
    set_params(work, theta1)
    out1, _ = forward(work, None, x, head_name)
    l1, _ = loss_and_grad(out1, y, loss)
    return l1 - l0


def drift_radius(
    model: Mlp,
    head_name,
    theta0: np.ndarray,
    subspace: UpdateSubspace,
    x,
    power_iters: int = 300,
    tol: float = 1e-9,
    seed: int = 0,
) -> DriftReport:
    """Worst-case first-order output drift per unit-norm update in S.

    The square is the dominant eigenvalue of the restricted operator
    ``P E[J^T J] P``; matvecs use one exact forward-mode pass and one
    adjoint pass over the dataset.
    """
    if subspace.dim == 0:
        raise ContractViolationError("drift_radius needs a nonempty family")
    lin = _Linearization(model, theta0, x, head_name)

    def matvec(v):
        t = lin.jvp(v)
        return subspace.project(lin.vjp(t / lin.n))

    start = subspace.project(SeededRng(seed).generator().standard_normal(subspace.layout.size))
    lam, _, iters, converged = _power_iteration(matvec, start, power_iters, tol)
    return DriftReport(
        epsilon=float(np.sqrt(max(lam, 0.0))),
        iterations=iters,
        converged=converged,
        samples_used=lin.n,
    )


def _gn_hvp(lin: _Linearization, y, loss: str, v: np.ndarray) -> np.ndarray:
    t = lin.jvp(v)
    if loss == "mse":
        upstream = 2.0 * t / lin.n
    elif loss == "softmax_cross_entropy":
        p = np.exp(lin.outputs - lin.outputs.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        upstream = (p * t - p * np.sum(p * t, axis=1, keepdims=True)) / lin.n
    else:
        raise ContractViolationError(f"no Gauss-Newton form for loss {loss!r}")
    return lin.vjp(upstream)


def restricted_curvature(
    model: Mlp,
    head_name,
    theta0: np.ndarray,
    subspace: UpdateSubspace,
    x,
    y,
    loss: str,
    power_iters: int = 300,
    tol: float = 1e-7,
    hvp_mode: str = "finite_difference",
    seed: int = 0,
) -> CurvatureReport:
    """Top eigenpair of the old-loss Hessian restricted to the family.

    ``finite_difference`` differentiates analytic gradients centrally
    (step 1e-4 scaled by the parameter magnitude); ``gauss_newton``
    uses the exact product through the output-space loss Hessian.
    """
    if subspace.dim == 0:
        raise ContractViolationError("restricted_curvature needs a nonempty family")
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if hvp_mode == "finite_difference":
        step = 1e-4 * (1.0 + float(np.max(np.abs(theta0))))

        def hvp(v):
            gp = _full_gradient(model, theta0 + step * v, x, y, head_name, loss)
            gm = _full_gradient(model, theta0 - step * v, x, y, head_name, loss)
            return (gp - gm) / (2.0 * step)

    elif hvp_mode == "gauss_newton":
        lin = _Linearization(model, theta0, x, head_name)

        def hvp(v):
            return _gn_hvp(lin, y, loss, v)

    else:
        raise ContractViolationError(f"unknown hvp_mode {hvp_mode!r}")

    def matvec(v):
        return subspace.project(hvp(v))

    start = subspace.project(SeededRng(seed).generator().standard_normal(subspace.layout.size))
    # Stage 1 estimates the extreme eigenvalue magnitude; stage 2 runs on
    # the shifted operator H + sigma*I, which is positive-dominant, so the
    # iteration isolates the largest *signed* eigenvalue even when the
    # restricted Hessian is indefinite (plain iteration would mix the two
    # extremes and under-report the supremum).
    magnitude, _, iters1, _ = _power_iteration(matvec, start, max(power_iters // 4, 10), tol)
    sigma = 1.25 * abs(magnitude) + 1e-12

    def shifted(v):
        return matvec(v) + sigma * v

    lam_shifted, vec, iters2, converged = _power_iteration(shifted, start, power_iters, tol)
    norm = np.linalg.norm(vec)
    direction = vec / norm if norm > 0 else vec
    lam = float(direction @ matvec(direction)) if norm > 0 else lam_shifted - sigma
    return CurvatureReport(
        lambda_s=lam,
        top_direction=direction,
        hvp_mode=hvp_mode,
        iterations=iters1 + iters2,
        converged=converged,
        samples_used=n,
    )


def bound_check_gn(
    model: Mlp,
    head_name,
    theta0: np.ndarray,
    subspace: UpdateSubspace,
    x,
    y,
    loss: str,
    power_iters: int = 300,
    tol: float = 1e-7,
    seed: int = 0,
) -> BoundCheck:
    """Check that restricted curvature is bounded by functional drift.

    ``holds`` compares the finite-difference curvature against
    ``beta * eps^2`` with a 5% slack plus an explicit allowance for the
    non-Gauss-Newton residual, estimated as the Rayleigh gap between
    the two Hessian-product modes at the top direction.
    """
    beta = loss_beta(loss)
    drift = drift_radius(model, head_name, theta0, subspace, x, power_iters, min(tol, 1e-9), seed)
    curv = restricted_curvature(
        model, head_name, theta0, subspace, x, y, loss, power_iters, tol, "finite_difference", seed
    )
    lin = _Linearization(model, theta0, x, head_name)
    v = curv.top_direction
    gn_rayleigh = float(v @ _gn_hvp(lin, y, loss, v))
    residual = abs(curv.lambda_s - gn_rayleigh)
    beta_eps_sq = beta * drift.epsilon**2
    holds = curv.lambda_s <= beta_eps_sq * 1.05 + residual + 1e-12
    return BoundCheck(
        lambda_s=curv.lambda_s, beta_eps_sq=beta_eps_sq, residual=residual, holds=bool(holds)
    )


def worst_direction_sweep(
    model: Mlp,
    head_name,
    theta0: np.ndarray,
    direction: np.ndarray,
    x,
    y,
    loss: str,
    rho_list,
) -> SweepResult:
    """Forgetting along a fixed unit direction for each step size.

    Also fits the least-squares quadratic coefficient for slope
    comparisons between families.
    """
    direction = np.asarray(direction, dtype=np.float64)
    rows = []
    for rho in rho_list:
        f = forgetting(model, head_name, theta0, theta0 + float(rho) * direction, x, y, loss)
        rows.append((float(rho), f))
    rhos = np.array([r for r, _ in rows])
    vals = np.array([f for _, f in rows])
    denom = float(np.sum(rhos**4))
    coeff = float(np.sum(vals * rhos**2) / denom) if denom > 0 else 0.0
    return SweepResult(rows=rows, quad_coeff=coeff)


def jacobian_drift_field(
    model: Mlp,
    head_name,
    theta0: np.ndarray,
    theta1: np.ndarray,
    points,
    step: float = 1e-4,
) -> np.ndarray:
    """Frobenius norm of the input-Jacobian change at each point.

    Input Jacobians are central finite differences over input
    coordinates at both parameter vectors.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ContractViolationError("points must be a 2-D batch")
    m0 = model.copy()
    set_params(m0, theta0)
    m1 = model.copy()
    set_params(m1, theta1)
    n, d = points.shape
    acc = np.zeros(n)
    for j in range(d):
        shift = np.zeros(d)
        shift[j] = step
        cols = []
        for mdl in (m0, m1):
            hi, _ = forward(mdl, None, points + shift, head_name)
            lo, _ = forward(mdl, None, points - shift, head_name)
            cols.append((hi - lo) / (2.0 * step))
        acc += np.sum((cols[1] - cols[0]) ** 2, axis=1)
    return np.sqrt(acc)
