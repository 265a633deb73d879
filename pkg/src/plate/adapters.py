"""Per-layer adapters: structured row/basis adapters, LoRA, full FT, frozen.

The structured adapter keeps the base weight frozen and adds
``rho * scatter(core @ basis^T)`` where the scatter targets the selected
redundant rows.  Only ``core`` trains.  The selector is stored as an
index set and applied by gather/scatter rather than as a dense matrix,
which keeps the branch exact and O(n r k).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import InputBasis, SrhtConfig, dense_low_energy_basis, srht_low_energy_basis
from .errors import ContractViolationError
from .numerics import SeededRng, as_matrix
from .selector import ScoringConfig, SelectorB, frozen_rows, select_redundant
from . import checkpoint as ckpt

__all__ = [
    "PlateAdapter",
    "LoraAdapter",
    "FullFineTune",
    "Frozen",
    "plate_init",
    "lora_init",
    "effective_weight",
    "adapter_forward",
    "adapter_grad",
    "adapter_input_grad",
    "trainable_param_count",
    "save_adapter",
    "load_adapter",
]

# width above which the dense basis path would be too expensive
DENSE_PATH_MAX_WIDTH = 1024
# width above which row scoring sketches through a random projection
EXACT_SCORING_MAX_WIDTH = 256

# child tags for seed splitting
_TAG_SELECTOR = 0
_TAG_BASIS = 1
_TAG_LORA = 2


@dataclass
class PlateAdapter:
    """Frozen selector + frozen input basis + trainable core."""

    selector: SelectorB
    basis: InputBasis
    core: np.ndarray  # (r, k), trainable, zero at init
    rho: float

    @property
    def r(self) -> int:
        return self.selector.r

    @property
    def k(self) -> int:
        return self.basis.k


@dataclass
class LoraAdapter:
    """Two-factor low-rank adapter; both factors train."""

    down: np.ndarray  # (r, d_in), Gaussian init
    up: np.ndarray    # (d_out, r), zero init
    scale: float


@dataclass(frozen=True)
class FullFineTune:
    """Marker: the base weight itself trains."""


@dataclass(frozen=True)
class Frozen:
    """Marker: nothing in this layer trains."""


def plate_init(
    w,
    r: int,
    tau: float,
    k_max: int,
    rho: float = 0.5,
    seed: int = 0,
    srht: str = "auto",
    scoring: ScoringConfig | None = None,
    srht_cfg: SrhtConfig | None = None,
) -> PlateAdapter:
    """Build a structured adapter from a frozen weight matrix.

    Selects the ``r`` most redundant rows, builds the low-energy basis
    from the remaining rows, and zero-initializes the core so the
    adapted layer equals the base layer exactly at init.  ``srht``
    chooses the basis path: ``auto`` uses the dense path up to width
    1024, ``on``/``off`` force it.
    """
    w = as_matrix(w, "plate_init weight")
    d_out, d_in = w.shape
    if not 1 <= r < d_out:
        raise ContractViolationError(
            f"selector leaves no frozen rows: need 1 <= r < d_out, got r={r}, d_out={d_out}"
        )
    if srht not in ("auto", "on", "off"):
        raise ContractViolationError(f"srht must be auto|on|off, got {srht!r}")
    rng = SeededRng(seed)
    if scoring is None:
        scoring = ScoringConfig(
            projection_dim=min(256, d_in),
            anchor_count=min(64, d_out),
            seed=rng.child(_TAG_SELECTOR).seed,
            exact_mode=d_in <= EXACT_SCORING_MAX_WIDTH,
        )
    sel = select_redundant(w, r, scoring)
    w_frozen = frozen_rows(w, sel)
    use_srht = srht == "on" or (srht == "auto" and d_in > DENSE_PATH_MAX_WIDTH)
    if use_srht:
        if srht_cfg is None:
            srht_cfg = SrhtConfig(seed=rng.child(_TAG_BASIS).seed)
        basis = srht_low_energy_basis(w_frozen, tau, k_max, srht_cfg)
    else:
        basis = dense_low_energy_basis(w_frozen, tau, k_max)
    core = np.zeros((sel.r, basis.k))
    return PlateAdapter(selector=sel, basis=basis, core=core, rho=rho)


def lora_init(d_out: int, d_in: int, r: int, scale: float = 0.5, seed: int = 0) -> LoraAdapter:
    """Standard two-factor init: Gaussian down with variance 1/r, zero up."""
    if r < 1 or d_out < 1 or d_in < 1:
        raise ContractViolationError("lora_init needs positive dimensions")
    gen = SeededRng(seed).child(_TAG_LORA).generator()
    down = gen.standard_normal((r, d_in)) / np.sqrt(r)
    up = np.zeros((d_out, r))
    return LoraAdapter(down=down, up=up, scale=scale)


def effective_weight(w, adapter) -> np.ndarray:
    """The merged weight the adapted layer realizes."""
    w = as_matrix(w, "effective_weight base")
    if isinstance(adapter, PlateAdapter):
        if adapter.selector.d_out != w.shape[0] or adapter.basis.vectors.shape[0] != w.shape[1]:
            raise ContractViolationError("adapter shapes do not match the base weight")
        out = w.copy()
        out[adapter.selector.indices, :] += adapter.rho * (adapter.core @ adapter.basis.vectors.T)
        return out
    if isinstance(adapter, LoraAdapter):
        if adapter.up.shape[0] != w.shape[0] or adapter.down.shape[1] != w.shape[1]:
            raise ContractViolationError("adapter shapes do not match the base weight")
        return w + adapter.scale * (adapter.up @ adapter.down)
    if isinstance(adapter, (FullFineTune, Frozen)):
        return w.copy()
    raise ContractViolationError(f"unknown adapter kind {type(adapter).__name__}")


def adapter_forward(adapter, x) -> np.ndarray | None:
    """The additive branch output for a batch, or None when there is none.

    For the structured adapter: project the batch onto the basis, apply
    the core, scatter into the selected output columns.  Equals
    ``x @ (rho * delta_w)^T`` to rounding.
    """
    if isinstance(adapter, (FullFineTune, Frozen)):
        return None
    x = np.asarray(x, dtype=np.float64)
    if isinstance(adapter, PlateAdapter):
        out = np.zeros((x.shape[0], adapter.selector.d_out))
        out[:, adapter.selector.indices] = adapter.rho * ((x @ adapter.basis.vectors) @ adapter.core.T)
        return out
    if isinstance(adapter, LoraAdapter):
        return adapter.scale * ((x @ adapter.down.T) @ adapter.up.T)
    raise ContractViolationError(f"unknown adapter kind {type(adapter).__name__}")


def adapter_grad(adapter, x, upstream) -> dict:
    """Gradients of the trainable adapter tensors.

    ``upstream`` is dL/d(layer pre-activation), shape (n, d_out).
    Frozen tensors get no entry at all.
    """
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if isinstance(adapter, PlateAdapter):
        return {"core": adapter.rho * (upstream[:, adapter.selector.indices].T @ (x @ adapter.basis.vectors))}
    if isinstance(adapter, LoraAdapter):
        mid = x @ adapter.down.T  # (n, r)
        return {
            "up": adapter.scale * (upstream.T @ mid),
            "down": adapter.scale * (adapter.up.T @ upstream.T) @ x,
        }
    if isinstance(adapter, FullFineTune):
        return {"weight": upstream.T @ x}
    if isinstance(adapter, Frozen):
        return {}
    raise ContractViolationError(f"unknown adapter kind {type(adapter).__name__}")


def adapter_input_grad(adapter, upstream) -> np.ndarray | None:
    """dL/dx contribution of the branch, or None when there is no branch."""
    if isinstance(adapter, (FullFineTune, Frozen)):
        return None
    upstream = np.asarray(upstream, dtype=np.float64)
    if isinstance(adapter, PlateAdapter):
        return adapter.rho * ((upstream[:, adapter.selector.indices] @ adapter.core) @ adapter.basis.vectors.T)
    if isinstance(adapter, LoraAdapter):
        return adapter.scale * ((upstream @ adapter.up) @ adapter.down)
    raise ContractViolationError(f"unknown adapter kind {type(adapter).__name__}")


def trainable_param_count(adapter, d_out: int | None = None, d_in: int | None = None) -> int:
    """Number of trainable weight entries the adapter contributes.

    FullFineTune needs the layer shape since the weight itself trains.
    """
    if isinstance(adapter, PlateAdapter):
        return adapter.core.size
    if isinstance(adapter, LoraAdapter):
        return adapter.down.size + adapter.up.size
    if isinstance(adapter, FullFineTune):
        if d_out is None or d_in is None:
            raise ContractViolationError("full fine-tune count needs the layer shape")
        return d_out * d_in
    if isinstance(adapter, Frozen):
        return 0
    raise ContractViolationError(f"unknown adapter kind {type(adapter).__name__}")


def save_adapter(directory: str, adapter) -> None:
    """Write an adapter checkpoint (manifest + raw tensors), bit-exact."""
    if isinstance(adapter, PlateAdapter):
        ckpt.save_checkpoint(
            directory,
            tensors={
                "core": adapter.core,
                "basis": adapter.basis.vectors,
                "scores": adapter.selector.scores,
            },
            metadata={
                "kind": "plate",
                "d_out": adapter.selector.d_out,
                "indices": [int(i) for i in adapter.selector.indices],
                "tau": adapter.basis.tau,
                "k": adapter.basis.k,
                "energy_captured": adapter.basis.energy_captured,
                "rho": adapter.rho,
            },
        )
    elif isinstance(adapter, LoraAdapter):
        ckpt.save_checkpoint(
            directory,
            tensors={"down": adapter.down, "up": adapter.up},
            metadata={"kind": "lora", "scale": adapter.scale},
        )
    else:
        raise ContractViolationError("only plate and lora adapters are persisted")


def load_adapter(directory: str):
    tensors, meta = ckpt.load_checkpoint(directory)
    kind = meta.get("kind")
    if kind == "plate":
        sel = SelectorB(
            d_out=int(meta["d_out"]),
            indices=np.asarray(meta["indices"], dtype=np.int64),
            scores=tensors["scores"],
        )
        basis = InputBasis(
            vectors=tensors["basis"],
            k=int(meta["k"]),
            tau=float(meta["tau"]),
            energy_captured=float(meta["energy_captured"]),
        )
        return PlateAdapter(selector=sel, basis=basis, core=tensors["core"], rho=float(meta["rho"]))
    if kind == "lora":
        return LoraAdapter(down=tensors["down"], up=tensors["up"], scale=float(meta["scale"]))
    raise ContractViolationError(f"unknown adapter kind in checkpoint: {kind!r}")
