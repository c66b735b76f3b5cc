import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from channorm.circulant import (
    Kernel,
    apply,
    commutation_matrix_apply,
    commutation_matrix_transpose_apply,
    compose_apply,
    inverse_spectrum,
    spectrum,
)


def dense_circulant(w):
    """Column j is w shifted down by j."""
    n = len(w)
    return np.stack([np.roll(w, j) for j in range(n)], axis=1)


def dense_dft(n):
    j = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(j, j) / n) / np.sqrt(n)


class TestKernel:
    def test_embed_places_support_first(self):
        k = Kernel([1.0, 2.0, 3.0], 6)
        np.testing.assert_array_equal(k.embed(), [1, 2, 3, 0, 0, 0])
        assert k.p == 3

    def test_from_column_roundtrip(self):
        k = Kernel.from_column([4.0, -1.0, 0.0, 0.0], p=2)
        np.testing.assert_array_equal(k.support, [4.0, -1.0])

    def test_from_column_rejects_entries_outside_support(self):
        with pytest.raises(ValueError):
            Kernel.from_column([1.0, 0.0, 1.0], p=2)

    def test_support_longer_than_n(self):
        with pytest.raises(ValueError):
            Kernel(np.ones(5), 4)


class TestSpectrum:
    def test_matches_dense_eigendecomposition(self):
        rng = np.random.default_rng(0)
        n = 12
        w = rng.standard_normal(n)
        F = dense_dft(n)
        W = F @ np.diag(spectrum(w)) @ F.conj().T
        np.testing.assert_allclose(W.real, dense_circulant(w), atol=1e-12)
        np.testing.assert_allclose(W.imag, 0.0, atol=1e-12)

    def test_delta_kernel_is_identity(self):
        np.testing.assert_allclose(spectrum(Kernel([1.0], 8)), np.ones(8), atol=1e-15)

    def test_inverse(self):
        rng = np.random.default_rng(1)
        w = rng.standard_normal(10)
        np.testing.assert_allclose(inverse_spectrum(spectrum(w)), w, atol=1e-13)

    def test_too_short(self):
        with pytest.raises(ValueError):
            spectrum([1.0])


class TestApply:
    @pytest.mark.parametrize("n", [2, 7, 16, 33])
    def test_against_dense(self, n):
        rng = np.random.default_rng(n)
        w, s = rng.standard_normal((2, n))
        np.testing.assert_allclose(apply(w, s), dense_circulant(w) @ s, atol=1e-12)

    def test_kernel_argument(self):
        rng = np.random.default_rng(2)
        k = Kernel(rng.standard_normal(3), 9)
        s = rng.standard_normal(9)
        np.testing.assert_allclose(apply(k, s), dense_circulant(k.embed()) @ s, atol=1e-12)

    def test_shift_direction_is_downward(self):
        # kernel e_1 (second entry) shifts the signal down by one position
        np.testing.assert_allclose(apply([0.0, 1.0, 0.0, 0.0], [1.0, 2.0, 3.0, 4.0]), [4.0, 1.0, 2.0, 3.0], atol=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            apply(np.ones(4), np.ones(5))

    def test_compose_against_dense_product(self):
        rng = np.random.default_rng(3)
        n, d = 8, 4
        ws = rng.standard_normal((d, n))
        s = rng.standard_normal(n)
        expected = s
        for w in ws:
            expected = dense_circulant(w) @ expected
        np.testing.assert_allclose(compose_apply(ws, s), expected, atol=1e-11)

    def test_compose_rejects_mixed_sizes(self):
        with pytest.raises(ValueError):
            compose_apply([np.ones(4), np.ones(5)], np.ones(4))
        with pytest.raises(ValueError):
            compose_apply([], np.ones(4))


class TestCommutationMatrix:
    def setup_method(self):
        rng = np.random.default_rng(4)
        self.n, self.d = 10, 3
        self.ws = rng.standard_normal((self.d, self.n))
        self.x = rng.standard_normal(self.n)
        self.s = rng.standard_normal(self.n)

    def dense(self, k):
        M = dense_circulant(self.x)
        for i, w in enumerate(self.ws, start=1):
            if i != k:
                M = dense_circulant(w) @ M
        return M

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_against_dense(self, k):
        np.testing.assert_allclose(commutation_matrix_apply(self.ws, k, self.s, self.x), self.dense(k) @ self.s, atol=1e-11)
        np.testing.assert_allclose(
            commutation_matrix_transpose_apply(self.ws, k, self.s, self.x), self.dense(k).T @ self.s, atol=1e-11
        )

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_applied_to_own_kernel_gives_output(self, k):
        out = commutation_matrix_apply(self.ws, k, self.ws[k - 1], self.x)
        np.testing.assert_allclose(out, compose_apply(self.ws, self.x), atol=1e-11)

    @pytest.mark.parametrize("k", [0, 4])
    def test_bad_index(self, k):
        with pytest.raises(IndexError):
            commutation_matrix_apply(self.ws, k, self.s, self.x)


vectors = st.integers(min_value=2, max_value=24).flatmap(
    lambda n: st.tuples(st.just(n), st.integers(min_value=0, max_value=2**32 - 1))
)


@settings(max_examples=50, deadline=None)
@given(vectors)
def test_circulants_commute(case):
    n, seed = case
    a, b, s = np.random.default_rng(seed).standard_normal((3, n))
    np.testing.assert_allclose(apply(a, apply(b, s)), apply(b, apply(a, s)), atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(vectors)
def test_apply_is_linear_and_spectrum_conjugate_symmetric(case):
    n, seed = case
    w, s, t = np.random.default_rng(seed).standard_normal((3, n))
    np.testing.assert_allclose(apply(w, 2.0 * s - t), 2.0 * apply(w, s) - apply(w, t), atol=1e-10)
    lam = spectrum(w)
    np.testing.assert_allclose(lam[1:], np.conj(lam[1:][::-1]), atol=1e-10)
