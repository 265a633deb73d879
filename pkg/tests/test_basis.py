import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plate.basis import (
    SrhtConfig,
    choose_k,
    dense_low_energy_basis,
    gram,
    srht_low_energy_basis,
)
from plate.errors import ContractViolationError
from plate.numerics import SeededRng, principal_angles, qr_orthonormalize, sym_eig


def planted_spectrum_matrix(d_in, null_dim, rows, seed, low=1e-6, high=1.0):
    """Rows whose Gram has a spread spectrum with a gap after `null_dim`.

    Bottom eigenvalues sweep [low, 2*low], the rest sweep [high, 2*high],
    all strictly increasing so every bottom-k subspace is unique.
    """
    gen = SeededRng(seed).generator()
    q, _ = np.linalg.qr(gen.standard_normal((d_in, d_in)))
    vals = np.concatenate(
        [np.linspace(low, 2 * low, null_dim), np.linspace(high, 2 * high, d_in - null_dim)]
    )
    factor = q @ np.diag(np.sqrt(vals))
    lift = qr_orthonormalize(gen.standard_normal((rows, d_in)))
    return lift @ factor.T


class TestGram:
    def test_orthonormal_rows_give_projector(self):
        w = qr_orthonormalize(SeededRng(0).generator().standard_normal((6, 4))).T  # 4x6? no
        w = qr_orthonormalize(SeededRng(0).generator().standard_normal((6, 4)))[:, :4].T
        g = gram(w)
        assert np.allclose(g @ g, g, atol=1e-10)

    def test_empty_rows(self):
        g = gram(np.zeros((0, 5)))
        assert g.shape == (5, 5)
        assert np.all(g == 0)

    def test_matches_double_loop(self):
        w = SeededRng(1).generator().standard_normal((6, 4))
        g = gram(w)
        brute = np.zeros((4, 4))
        for a in range(4):
            for b in range(4):
                brute[a, b] = sum(w[i, a] * w[i, b] for i in range(6))
        assert np.max(np.abs(g - brute)) <= 1e-12


class TestChooseK:
    def test_two_zero_modes(self):
        assert choose_k([0.0, 0.0, 5.0, 5.0], 0.9, 10) == 2

    def test_flat_spectrum(self):
        assert choose_k([1.0, 1.0, 1.0, 1.0], 0.5, 10) == 2

    def test_zero_spectrum(self):
        assert choose_k([0.0, 0.0, 0.0], 0.9, 2) == 2
        assert choose_k([0.0, 0.0, 0.0], 0.9, 10) == 3

    def test_floor_at_one(self):
        # all energy needed on top: m = d, k floors to 1
        assert choose_k([1.0, 1.0], 0.999, 10) == 1

    def test_k_max_cap(self):
        assert choose_k([0.0] * 9 + [1.0], 0.5, 3) == 3

    def test_empty_rejected(self):
        with pytest.raises(ContractViolationError):
            choose_k([], 0.5, 1)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), tau_lo=st.floats(0.05, 0.45), tau_hi=st.floats(0.5, 0.95))
    def test_monotone_in_tau(self, seed, tau_lo, tau_hi):
        vals = np.sort(SeededRng(seed).generator().uniform(0.0, 1.0, size=12))
        assert choose_k(vals, tau_hi, 12) <= choose_k(vals, tau_lo, 12)


class TestDenseBasis:
    def test_exact_nullspace(self):
        w = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        basis = dense_low_energy_basis(w, 0.9, 8)
        assert basis.k == 1
        e3 = np.zeros((3, 1))
        e3[2, 0] = 1.0
        assert np.max(principal_angles(basis.vectors, e3)) < 1e-10

    def test_zero_matrix(self):
        basis = dense_low_energy_basis(np.zeros((4, 6)), 0.5, 3)
        assert basis.k == 3
        assert np.allclose(basis.vectors.T @ basis.vectors, np.eye(3), atol=1e-10)
        assert np.linalg.norm(np.zeros((4, 6)) @ basis.vectors) == 0.0

    def test_columns_below_kth_eigenvalue(self):
        w = SeededRng(13).generator().standard_normal((32, 16))
        basis = dense_low_energy_basis(w, 0.9, 16)
        g = gram(w)
        spectrum = sym_eig(g).values
        lam_k = spectrum[basis.k - 1]
        for j in range(basis.k):
            q = basis.vectors[:, j]
            assert q @ g @ q <= lam_k + 1e-8

    def test_trace_optimality(self):
        w = SeededRng(14).generator().standard_normal((24, 12))
        basis = dense_low_energy_basis(w, 0.8, 12)
        g = gram(w)
        spectrum = np.clip(sym_eig(g).values, 0.0, None)
        trace_q = np.trace(basis.vectors.T @ g @ basis.vectors)
        assert abs(trace_q - spectrum[: basis.k].sum()) <= 1e-8 * max(spectrum.sum(), 1.0)

    def test_energy_captured_at_least_tau(self):
        w = SeededRng(15).generator().standard_normal((40, 20))
        for tau in (0.3, 0.6, 0.9):
            basis = dense_low_energy_basis(w, tau, 20)
            assert basis.energy_captured >= tau - 1e-10

    def test_k_monotone_in_tau(self):
        w = SeededRng(16).generator().standard_normal((30, 18))
        ks = [dense_low_energy_basis(w, tau, 18).k for tau in (0.2, 0.5, 0.8, 0.95)]
        assert ks == sorted(ks, reverse=True)


class TestSrhtBasis:
    def test_matches_dense_on_planted_nullspace(self):
        # k capped at the gap rank so the target subspace is unique
        w = planted_spectrum_matrix(64, null_dim=8, rows=96, seed=0)
        dense = dense_low_energy_basis(w, 0.9, 8)
        srht = srht_low_energy_basis(w, 0.9, 8, SrhtConfig(candidate_count=32, seed=1))
        assert srht.k == dense.k == 8
        angles = principal_angles(srht.vectors, dense.vectors)
        assert np.max(angles) < 0.05

    def test_zero_matrix(self):
        srht = srht_low_energy_basis(np.zeros((6, 16)), 0.5, 4, SrhtConfig(seed=3))
        assert np.allclose(srht.vectors.T @ srht.vectors, np.eye(srht.k), atol=1e-8)
        assert np.linalg.norm(np.zeros((6, 16)) @ srht.vectors) == 0.0

    def test_gapped_energy_within_2x_of_dense(self):
        w = planted_spectrum_matrix(64, null_dim=6, rows=80, seed=5)
        g = gram(w)
        dense = dense_low_energy_basis(w, 0.9, 16)
        srht = srht_low_energy_basis(w, 0.9, 16, SrhtConfig(candidate_count=32, seed=6))
        dense_energy = np.trace(dense.vectors.T @ g @ dense.vectors)
        srht_energy = np.trace(srht.vectors[:, : dense.k].T @ g @ srht.vectors[:, : dense.k])
        assert srht_energy <= 2.0 * dense_energy + 1e-9

    def test_agreement_over_ten_seeds(self):
        # spectral gap ratio >= 10 at rank k
        worst = 0.0
        for seed in range(10):
            w = planted_spectrum_matrix(64, null_dim=8, rows=96, seed=100 + seed, low=1e-3, high=1.0)
            dense = dense_low_energy_basis(w, 0.9, 8)
            srht = srht_low_energy_basis(w, 0.9, 8, SrhtConfig(candidate_count=32, seed=seed))
            angles = principal_angles(srht.vectors[:, : dense.k], dense.vectors)
            worst = max(worst, float(np.max(angles)))
        assert worst <= 0.1

    def test_candidate_count_too_small(self):
        w = np.zeros((4, 16))
        with pytest.raises(ContractViolationError):
            srht_low_energy_basis(w, 0.5, 8, SrhtConfig(candidate_count=2, seed=0))

    def test_non_power_of_two_width(self):
        w = planted_spectrum_matrix(48, null_dim=6, rows=64, seed=7)
        srht = srht_low_energy_basis(w, 0.9, 12, SrhtConfig(candidate_count=24, seed=8))
        assert np.allclose(srht.vectors.T @ srht.vectors, np.eye(srht.k), atol=1e-8)

    def test_determinism(self):
        w = planted_spectrum_matrix(32, null_dim=4, rows=40, seed=9)
        cfg = SrhtConfig(candidate_count=16, seed=10)
        a = srht_low_energy_basis(w, 0.8, 8, cfg)
        b = srht_low_energy_basis(w, 0.8, 8, cfg)
        assert np.array_equal(a.vectors, b.vectors)
        assert a.k == b.k
