import numpy as np
import pytest

from plate.adapters import (
    Frozen,
    FullFineTune,
    LoraAdapter,
    PlateAdapter,
    adapter_forward,
    adapter_grad,
    adapter_input_grad,
    effective_weight,
    load_adapter,
    lora_init,
    plate_init,
    save_adapter,
    trainable_param_count,
)
from plate.basis import InputBasis
from plate.errors import ContractViolationError
from plate.numerics import SeededRng, gaussian_matrix
from plate.selector import SelectorB


def make_plate(d_out, d_in, r, k, rho=0.5, seed=0):
    gen = SeededRng(seed).generator()
    q, _ = np.linalg.qr(gen.standard_normal((d_in, k)))
    indices = np.sort(gen.choice(d_out, size=r, replace=False))
    sel = SelectorB(d_out=d_out, indices=indices, scores=np.zeros(d_out))
    basis = InputBasis(vectors=q, k=k, tau=0.5, energy_captured=1.0)
    core = gen.standard_normal((r, k))
    return PlateAdapter(selector=sel, basis=basis, core=core, rho=rho)


def dense_delta(adapter, d_out, d_in):
    return effective_weight(np.zeros((d_out, d_in)), adapter)


class TestPlateInit:
    def test_zero_init_forward_identity(self):
        w = gaussian_matrix(12, 10, SeededRng(1))
        adapter = plate_init(w, r=4, tau=0.7, k_max=8, seed=2)
        assert np.array_equal(effective_weight(w, adapter), w)
        x = gaussian_matrix(5, 10, SeededRng(3))
        assert np.array_equal(adapter_forward(adapter, x), np.zeros((5, 12)))

    def test_parameter_budget_vs_lora(self):
        # 768x768 layer: structured adapter with r=32, k=100 vs rank-32 LoRA
        adapter = make_plate(768, 768, r=32, k=100)
        lora = lora_init(768, 768, 32)
        assert trainable_param_count(adapter) == 3200
        assert trainable_param_count(lora) == 49152

    def test_hand_selector_and_nullspace_basis(self):
        w = np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        adapter = plate_init(w, r=2, tau=0.9, k_max=3, seed=0)
        assert list(adapter.selector.indices) == [0, 1]
        # frozen row (0,1,0): Gram diag(0,1,0); any basis vector must carry
        # zero energy against it
        g = np.diag([0.0, 1.0, 0.0])
        for j in range(adapter.k):
            q = adapter.basis.vectors[:, j]
            assert abs(q @ g @ q) < 1e-12

    def test_r_too_large(self):
        w = gaussian_matrix(4, 3, SeededRng(0))
        with pytest.raises(ContractViolationError, match="frozen rows"):
            plate_init(w, r=4, tau=0.5, k_max=2)

    def test_determinism(self):
        w = gaussian_matrix(20, 16, SeededRng(5))
        a = plate_init(w, r=5, tau=0.6, k_max=8, seed=9)
        b = plate_init(w, r=5, tau=0.6, k_max=8, seed=9)
        assert np.array_equal(a.basis.vectors, b.basis.vectors)
        assert np.array_equal(a.selector.indices, b.selector.indices)


class TestEffectiveWeight:
    def test_zero_core_identity(self):
        w = gaussian_matrix(6, 4, SeededRng(0))
        adapter = make_plate(6, 4, 2, 2)
        adapter.core[...] = 0.0
        assert np.array_equal(effective_weight(w, adapter), w)

    def test_single_entry_hand_case(self):
        w = np.zeros((3, 4))
        q = np.zeros((4, 1))
        q[3, 0] = 1.0
        sel = SelectorB(d_out=3, indices=np.array([1]), scores=np.zeros(3))
        basis = InputBasis(vectors=q, k=1, tau=0.5, energy_captured=1.0)
        adapter = PlateAdapter(selector=sel, basis=basis, core=np.array([[2.0]]), rho=0.5)
        out = effective_weight(w, adapter)
        expected = np.zeros((3, 4))
        expected[1, 3] = 1.0
        assert np.array_equal(out, expected)

    def test_unselected_rows_unchanged(self):
        w = gaussian_matrix(8, 5, SeededRng(1))
        adapter = make_plate(8, 5, 3, 2, seed=4)
        out = effective_weight(w, adapter)
        frozen = np.setdiff1d(np.arange(8), adapter.selector.indices)
        assert np.array_equal(out[frozen], w[frozen])

    def test_lora(self):
        w = gaussian_matrix(5, 4, SeededRng(2))
        lora = lora_init(5, 4, 2, scale=0.5, seed=3)
        lora.up[...] = SeededRng(4).generator().standard_normal((5, 2))
        expected = w + 0.5 * lora.up @ lora.down
        assert np.allclose(effective_weight(w, lora), expected, atol=1e-15)

    def test_lora_init_equivalence(self):
        # zero up factor: the adapted layer equals the base layer exactly
        w = gaussian_matrix(6, 5, SeededRng(5))
        lora = lora_init(6, 5, 3, seed=6)
        assert np.array_equal(effective_weight(w, lora), w)
        x = gaussian_matrix(4, 5, SeededRng(7))
        assert np.array_equal(adapter_forward(lora, x), np.zeros((4, 6)))


class TestAdapterForward:
    def test_zero_core(self):
        adapter = make_plate(6, 4, 2, 2)
        adapter.core[...] = 0.0
        x = gaussian_matrix(3, 4, SeededRng(0))
        assert np.array_equal(adapter_forward(adapter, x), np.zeros((3, 6)))

    def test_matches_dense_delta(self):
        adapter = make_plate(7, 5, 3, 2, rho=0.7, seed=2)
        x = gaussian_matrix(4, 5, SeededRng(1))
        delta = dense_delta(adapter, 7, 5)
        assert np.max(np.abs(adapter_forward(adapter, x) - x @ delta.T)) < 1e-10

    def test_lora_matches_dense_delta(self):
        lora = lora_init(6, 5, 2, scale=0.3, seed=7)
        lora.up[...] = SeededRng(8).generator().standard_normal((6, 2))
        x = gaussian_matrix(4, 5, SeededRng(9))
        delta = effective_weight(np.zeros((6, 5)), lora)
        assert np.max(np.abs(adapter_forward(lora, x) - x @ delta.T)) < 1e-10

    def test_no_branch_kinds(self):
        x = np.ones((2, 3))
        assert adapter_forward(FullFineTune(), x) is None
        assert adapter_forward(Frozen(), x) is None


class TestAdapterGrad:
    def finite_difference(self, adapter, tensor, x, upstream, eps=1e-6):
        base = np.sum(adapter_forward(adapter, x) * upstream)
        grad = np.zeros_like(tensor)
        it = np.nditer(tensor, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            old = tensor[idx]
            tensor[idx] = old + eps
            hi = np.sum(adapter_forward(adapter, x) * upstream)
            tensor[idx] = old - eps
            lo = np.sum(adapter_forward(adapter, x) * upstream)
            tensor[idx] = old
            grad[idx] = (hi - lo) / (2 * eps)
            it.iternext()
        return grad

    def test_zero_upstream(self):
        adapter = make_plate(5, 4, 2, 2, seed=1)
        x = gaussian_matrix(3, 4, SeededRng(2))
        grads = adapter_grad(adapter, x, np.zeros((3, 5)))
        assert np.array_equal(grads["core"], np.zeros_like(adapter.core))

    def test_plate_matches_finite_difference(self):
        adapter = make_plate(6, 5, 2, 3, rho=0.4, seed=3)
        x = gaussian_matrix(4, 5, SeededRng(4))
        upstream = gaussian_matrix(4, 6, SeededRng(5))
        grads = adapter_grad(adapter, x, upstream)
        fd = self.finite_difference(adapter, adapter.core, x, upstream)
        assert np.max(np.abs(grads["core"] - fd)) < 1e-6

    def test_lora_matches_finite_difference(self):
        lora = lora_init(5, 4, 2, scale=0.6, seed=6)
        lora.up[...] = SeededRng(7).generator().standard_normal((5, 2))
        x = gaussian_matrix(3, 4, SeededRng(8))
        upstream = gaussian_matrix(3, 5, SeededRng(9))
        grads = adapter_grad(lora, x, upstream)
        assert np.max(np.abs(grads["down"] - self.finite_difference(lora, lora.down, x, upstream))) < 1e-6
        assert np.max(np.abs(grads["up"] - self.finite_difference(lora, lora.up, x, upstream))) < 1e-6

    def test_only_core_receives_grad(self):
        adapter = make_plate(5, 4, 2, 2)
        grads = adapter_grad(adapter, np.ones((2, 4)), np.ones((2, 5)))
        assert set(grads) == {"core"}

    def test_input_grad_matches_dense(self):
        adapter = make_plate(6, 5, 3, 2, rho=0.9, seed=11)
        upstream = gaussian_matrix(4, 6, SeededRng(12))
        delta = dense_delta(adapter, 6, 5)
        assert np.max(np.abs(adapter_input_grad(adapter, upstream) - upstream @ delta)) < 1e-10


class TestParamCount:
    def test_plate_formula(self):
        assert trainable_param_count(make_plate(60, 40, 50, 20)) == 1000

    def test_lora_formula(self):
        assert trainable_param_count(lora_init(512, 512, 8)) == 8192

    def test_frozen_and_full(self):
        assert trainable_param_count(Frozen()) == 0
        assert trainable_param_count(FullFineTune(), d_out=7, d_in=9) == 63


class TestStructure:
    def test_family_isometry(self):
        # orthonormal selector columns + orthonormal basis make the
        # scatter an isometry of the core
        for seed in range(5):
            adapter = make_plate(10, 8, 4, 3, rho=1.0, seed=seed)
            delta = dense_delta(adapter, 10, 8)
            assert abs(np.linalg.norm(delta) - np.linalg.norm(adapter.core)) < 1e-10

    def test_exact_protection_orthogonal_inputs(self):
        adapter = make_plate(6, 5, 2, 2, seed=3)
        q = adapter.basis.vectors
        gen = SeededRng(4).generator()
        h = gen.standard_normal((7, 5))
        h -= (h @ q) @ q.T  # inputs in the orthogonal complement of the basis
        out = adapter_forward(adapter, h)
        assert np.max(np.abs(out)) < 1e-12

    def test_checkpoint_roundtrip_plate(self, tmp_path):
        w = gaussian_matrix(12, 10, SeededRng(5))
        adapter = plate_init(w, r=3, tau=0.6, k_max=6, seed=6)
        adapter.core[...] = SeededRng(7).generator().standard_normal(adapter.core.shape)
        save_adapter(str(tmp_path / "ck"), adapter)
        loaded = load_adapter(str(tmp_path / "ck"))
        assert np.array_equal(loaded.core, adapter.core)
        assert np.array_equal(loaded.basis.vectors, adapter.basis.vectors)
        assert np.array_equal(loaded.selector.indices, adapter.selector.indices)
        assert loaded.rho == adapter.rho
        assert loaded.basis.k == adapter.basis.k

    def test_checkpoint_roundtrip_lora(self, tmp_path):
        lora = lora_init(6, 5, 2, scale=0.5, seed=8)
        lora.up[...] = SeededRng(9).generator().standard_normal((6, 2))
        save_adapter(str(tmp_path / "ck"), lora)
        loaded = load_adapter(str(tmp_path / "ck"))
        assert np.array_equal(loaded.down, lora.down)
        assert np.array_equal(loaded.up, lora.up)
        assert loaded.scale == lora.scale
