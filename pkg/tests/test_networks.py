import numpy as np
import pytest

from channorm.channel_norm import NormMode, NormParams, normalize
from channorm.circulant import apply
from channorm.networks import (
    DegenerateForward,
    KernelStack,
    NetworkSpec,
    flatten,
    forward,
    forward_gen2d,
    forward_linear_norm,
    forward_linear_plain,
    forward_mcnn1d,
    layer_norms,
    layer_sizes,
    trainable_blocks,
    unflatten,
)


def linear_stack(rng, n, d, p, scale=1.0):
    kernels = np.zeros((d, n))
    kernels[:, :p] = rng.standard_normal((d, p)) / np.sqrt(p)
    return KernelStack.linear(list(kernels), scale)


def naive_conv1d(z, w):
    c_out, c_in, p = w.shape
    n = z.shape[1]
    out = np.zeros((c_out, n))
    for o in range(c_out):
        for i in range(c_in):
            for t in range(p):
                for m in range(n):
                    out[o, m] += w[o, i, t] * z[i, (m - t) % n]
    return out


def naive_conv2d(z, w):
    c_out, c_in, p, _ = w.shape
    n = z.shape[1]
    out = np.zeros((c_out, n, n))
    half = p // 2
    for o in range(c_out):
        for i in range(c_in):
            for a in range(p):
                for b in range(p):
                    shifted = np.roll(z[i], (a - half, b - half), axis=(0, 1))
                    out[o] += w[o, i, a, b] * shifted
    return out


def naive_multichannel(spec, stack, x, conv):
    z = x
    for i, w in enumerate(stack.kernels):
        a = conv(z, w)
        if spec.norm.normalizes:
            a = np.stack(
                [normalize(a[c].ravel(), NormParams(stack.gamma[i][c], stack.beta[i][c])).reshape(a[c].shape)
                 for c in range(a.shape[0])]
            )
        z = np.maximum(a, 0.0)
    return np.tensordot(stack.out_scale, z, axes=1)


class TestSpec:
    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(family="bogus", n=8, depth=1, kernel=3),
            dict(family="linear1c", n=8, depth=0, kernel=3),
            dict(family="linear1c", n=1, depth=1, kernel=1),
            dict(family="linear1c", n=8, depth=1, kernel=9),
            dict(family="linear1c", n=8, depth=1, kernel=3, channels=2),
            dict(family="mcnn1d", n=8, depth=1, kernel=3, channels=0),
            dict(family="mcnn1d", n=8, depth=1, kernel=3, epsilon=0.0),
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            NetworkSpec(**kwargs)

    def test_shapes(self):
        spec = NetworkSpec("gen2d", n=8, depth=2, kernel=3, channels=4)
        assert spec.input_shape == (4, 8, 8) and spec.output_shape == (8, 8) and spec.positions == 64
        assert NetworkSpec("mcnn1d", n=8, depth=2, kernel=3, channels=4).input_shape == (4, 8)

    def test_norm_from_string(self):
        assert NetworkSpec("linear1c", n=8, depth=1, kernel=2, norm="learned").norm is NormMode.LEARNED


class TestLinear:
    def test_plain_matches_sequential_circulants(self):
        rng = np.random.default_rng(0)
        stack = linear_stack(rng, 12, 4, 3)
        x = rng.standard_normal(12)
        expected = x
        for w in stack.kernels:
            expected = apply(w, expected)
        spec = NetworkSpec("linear1c", n=12, depth=4, kernel=3)
        np.testing.assert_allclose(forward(spec, stack, x), expected, atol=1e-12)
        np.testing.assert_allclose(forward_linear_plain(stack, x), expected, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_layerwise_equals_collapsed(self, seed):
        rng = np.random.default_rng(seed)
        n, d = 16, 5
        stack = linear_stack(rng, n, d, 3, scale=1.7)
        x = rng.standard_normal(n)
        x -= x.mean()
        spec = NetworkSpec("linear1c", n=n, depth=d, kernel=3, norm="fixed", epsilon=1e-14)
        np.testing.assert_allclose(forward(spec, stack, x), forward_linear_norm(stack, x), atol=1e-9)

    def test_layerwise_matches_explicit_normalization(self):
        # spatial-domain reimplementation with the per-layer affine parameters
        rng = np.random.default_rng(9)
        n, d = 10, 3
        stack = linear_stack(rng, n, d, 4, scale=0.8)
        stack.gamma = [np.array([g]) for g in rng.uniform(0.5, 2.0, d)]
        stack.beta = [np.array([b]) for b in rng.standard_normal(d)]
        x = rng.standard_normal(n)
        z = x
        for i, w in enumerate(stack.kernels):
            z = normalize(apply(w, z), NormParams(stack.gamma[i][0], stack.beta[i][0]))
        spec = NetworkSpec("linear1c", n=n, depth=d, kernel=4, norm="learned")
        np.testing.assert_allclose(forward(spec, stack, x), 0.8 * z / np.sqrt(n), atol=1e-12)

    def test_collapsed_requires_centered_input(self):
        stack = linear_stack(np.random.default_rng(1), 8, 2, 2)
        with pytest.raises(ValueError):
            forward_linear_norm(stack, np.ones(8))

    def test_collapsed_degenerate(self):
        stack = KernelStack.linear([np.zeros(8)], 1.0)
        x = np.arange(8.0) - 3.5
        with pytest.raises(DegenerateForward):
            forward_linear_norm(stack, x)

    def test_rejects_kernel_outside_support(self):
        spec = NetworkSpec("linear1c", n=8, depth=1, kernel=2)
        with pytest.raises(ValueError):
            forward(spec, KernelStack.linear([np.ones(8)]), np.ones(8))


class TestMultichannel:
    @pytest.mark.parametrize("norm", ["none", "fixed", "learned"])
    def test_mcnn1d_against_naive(self, norm):
        rng = np.random.default_rng(2)
        spec = NetworkSpec("mcnn1d", n=11, depth=3, kernel=4, channels=3, norm=norm)
        stack = KernelStack([rng.standard_normal((3, 3, 4)) for _ in range(3)], rng.standard_normal(3))
        if norm == "learned":
            stack.gamma = [rng.uniform(0.5, 2, 3) for _ in range(3)]
            stack.beta = [rng.standard_normal(3) for _ in range(3)]
        x = rng.uniform(size=(3, 11))
        expected = naive_multichannel(spec, stack, x, naive_conv1d)
        np.testing.assert_allclose(forward_mcnn1d(stack, x, spec), expected, atol=1e-11)

    @pytest.mark.parametrize("norm", ["none", "fixed"])
    def test_gen2d_against_naive(self, norm):
        rng = np.random.default_rng(3)
        spec = NetworkSpec("gen2d", n=6, depth=2, kernel=3, channels=2, norm=norm)
        stack = KernelStack([rng.standard_normal((2, 2, 3, 3)) for _ in range(2)], rng.standard_normal(2))
        x = rng.uniform(size=(2, 6, 6))
        expected = naive_multichannel(spec, stack, x, naive_conv2d)
        np.testing.assert_allclose(forward_gen2d(stack, x, spec), expected, atol=1e-11)

    def test_centered_kernel_delta_is_identity(self):
        spec = NetworkSpec("gen2d", n=5, depth=1, kernel=3, channels=1)
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        x = np.random.default_rng(4).uniform(size=(1, 5, 5))
        np.testing.assert_allclose(forward(spec, KernelStack([w], [1.0]), x), x[0], atol=1e-15)

    def test_wrong_family_and_shapes(self):
        spec = NetworkSpec("mcnn1d", n=8, depth=1, kernel=3, channels=2)
        stack = KernelStack([np.ones((2, 2, 3))], np.ones(2))
        with pytest.raises(ValueError):
            forward_gen2d(stack, np.ones((2, 8)), spec)
        with pytest.raises(ValueError):
            forward(spec, stack, np.ones((3, 8)))
        with pytest.raises(ValueError):
            forward(spec, KernelStack([np.ones((2, 2, 2))], np.ones(2)), np.ones((2, 8)))


class TestParameterBookkeeping:
    @pytest.mark.parametrize(
        "spec",
        [
            NetworkSpec("linear1c", n=8, depth=3, kernel=2),
            NetworkSpec("linear1c", n=8, depth=3, kernel=2, norm="learned"),
            NetworkSpec("mcnn1d", n=8, depth=2, kernel=3, channels=2, norm="fixed"),
            NetworkSpec("gen2d", n=4, depth=2, kernel=3, channels=2, norm="learned"),
        ],
    )
    def test_flatten_roundtrip(self, spec):
        rng = np.random.default_rng(5)
        if spec.family == "linear1c":
            template = linear_stack(rng, spec.n, spec.depth, spec.kernel)
        else:
            shape = (2, 2, 3) if spec.family == "mcnn1d" else (2, 2, 3, 3)
            template = KernelStack([rng.standard_normal(shape) for _ in range(spec.depth)], rng.standard_normal(2))
        vec = rng.standard_normal(flatten(spec, template).size)
        out = unflatten(spec, template, vec)
        np.testing.assert_array_equal(flatten(spec, out), vec)
        assert sum(layer_sizes(spec, out)) == vec.size
        assert len(layer_norms(spec, out)) == len(trainable_blocks(spec))
        if spec.family == "linear1c":
            assert all(np.all(k[spec.kernel:] == 0) for k in out.kernels)

    def test_trainable_layers(self):
        assert len(trainable_blocks(NetworkSpec("linear1c", n=8, depth=3, kernel=2))) == 3
        assert len(trainable_blocks(NetworkSpec("linear1c", n=8, depth=3, kernel=2, norm="fixed"))) == 4
        blocks = trainable_blocks(NetworkSpec("mcnn1d", n=8, depth=2, kernel=2, channels=2, norm="learned"))
        assert blocks[0] == [("kernel", 0), ("gamma", 0), ("beta", 0)]
        assert blocks[-1] == [("out_scale", None)]

    def test_unflatten_size_mismatch(self):
        spec = NetworkSpec("linear1c", n=8, depth=2, kernel=2)
        with pytest.raises(ValueError):
            unflatten(spec, linear_stack(np.random.default_rng(0), 8, 2, 2), np.ones(5))

    def test_scaled_layer_copies(self):
        stack = linear_stack(np.random.default_rng(6), 8, 2, 2)
        scaled = stack.scaled_layer(1, 3.0)
        np.testing.assert_allclose(scaled.kernels[1], 3.0 * stack.kernels[1])
        np.testing.assert_array_equal(scaled.kernels[0], stack.kernels[0])
