import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from channorm.channel_norm import (
    NormMode,
    NormParams,
    normalize,
    normalize_channels,
    normalize_channels_vjp,
    normalize_vjp,
)


def central_jacobian_vjp(z, params, upstream, h=1e-6):
    g = np.empty_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h
        g[i] = (np.dot(upstream, normalize(z + e, params)) - np.dot(upstream, normalize(z - e, params))) / (2 * h)
    return g


class TestNormalize:
    def test_zero_mean_unit_variance(self):
        z = np.random.default_rng(0).normal(3.0, 5.0, 50)
        out = normalize(z)
        assert abs(out.mean()) < 1e-12
        # biased variance of the output is var/(var + eps)
        np.testing.assert_allclose(out.var(), z.var() / (z.var() + 1e-6), rtol=1e-12)

    def test_affine(self):
        z = np.array([1.0, 2.0, 3.0, 6.0])
        base = normalize(z)
        np.testing.assert_allclose(normalize(z, NormParams(2.0, -1.0)), 2.0 * base - 1.0, atol=1e-14)

    def test_hand_computed(self):
        # mean 2, biased variance 2/3
        out = normalize([1.0, 2.0, 3.0], NormParams(epsilon=1e-12))
        np.testing.assert_allclose(out, np.array([-1.0, 0.0, 1.0]) * np.sqrt(1.5), rtol=1e-9)

    def test_constant_channel_maps_to_beta(self):
        np.testing.assert_allclose(normalize(np.full(5, 7.0), NormParams(3.0, 0.5)), 0.5)

    def test_rejects_scalar_and_bad_eps(self):
        with pytest.raises(ValueError):
            normalize([1.0])
        with pytest.raises(ValueError):
            NormParams(epsilon=0.0)

    def test_channels_are_independent(self):
        rng = np.random.default_rng(1)
        z = rng.standard_normal((3, 4, 5))
        out, _, _ = normalize_channels(z, np.ones(3), np.zeros(3))
        for c in range(3):
            np.testing.assert_allclose(out[c], normalize(z[c].ravel()).reshape(4, 5), atol=1e-14)

    def test_modes(self):
        assert NormMode("fixed").normalizes and NormMode.LEARNED.normalizes
        assert not NormMode.NONE.normalizes


class TestVJP:
    @pytest.mark.parametrize("seed", range(5))
    def test_against_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        z, upstream = rng.standard_normal((2, 8))
        params = NormParams(rng.uniform(0.5, 2.0), rng.standard_normal())
        gz, gg, gb = normalize_vjp(z, params, upstream)
        fd = central_jacobian_vjp(z, params, upstream)
        assert np.max(np.abs(gz - fd)) / np.max(np.abs(gz)) < 1e-6
        np.testing.assert_allclose(gb, upstream.sum(), rtol=1e-12)
        np.testing.assert_allclose(gg, np.dot(upstream, normalize(z)), rtol=1e-12)

    def test_gradient_orthogonal_to_ones_and_input(self):
        # output invariant to shifting and (up to eps) scaling z
        rng = np.random.default_rng(7)
        z, upstream = rng.standard_normal((2, 16))
        gz, _, _ = normalize_vjp(z, NormParams(epsilon=1e-14), upstream)
        assert abs(gz.sum()) < 1e-10
        assert abs(np.dot(gz, z)) < 1e-8

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            normalize_vjp(np.ones(4), NormParams(), np.ones(5))

    def test_batched_matches_single(self):
        rng = np.random.default_rng(3)
        z, g = rng.standard_normal((2, 2, 9))
        gamma, beta = np.array([0.5, 2.0]), np.array([1.0, -1.0])
        _, zhat, inv_std = normalize_channels(z, gamma, beta)
        gz, gg, gb = normalize_channels_vjp(g, zhat, inv_std, gamma)
        for c in range(2):
            ref = normalize_vjp(z[c], NormParams(gamma[c], beta[c]), g[c])
            np.testing.assert_allclose(gz[c], ref[0], atol=1e-14)
            np.testing.assert_allclose([gg[c], gb[c]], ref[1:], atol=1e-14)


@settings(max_examples=60, deadline=None)
@given(
    st.integers(min_value=2, max_value=40),
    st.floats(min_value=1e-2, max_value=1e3),
    st.floats(min_value=-1e3, max_value=1e3),
    st.integers(min_value=0, max_value=2**32 - 1),
)
def test_invariant_to_positive_scale_and_shift(n, scale, shift, seed):
    z = np.random.default_rng(seed).standard_normal(n)
    params = NormParams(epsilon=1e-14)
    np.testing.assert_allclose(normalize(scale * z + shift, params), normalize(z, params), atol=1e-6)
