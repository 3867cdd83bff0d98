import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pclr.autodiff import kernels as K
from pclr.errors import ConfigError, DimensionError

from oracles import batchnorm_loops, conv1d_loops, maxpool_loops


# ---------------------------------------------------------------- conv1d

def test_conv_valid_sliding_sum():
    x = np.array([1.0, 2, 3, 4]).reshape(1, 4, 1)
    k = np.ones((2, 1, 1))
    out, _ = K.conv1d_forward(x, k, 1, "valid")
    np.testing.assert_array_equal(out.ravel(), [3, 5, 7])
    np.testing.assert_array_equal(out, conv1d_loops(x, k, 1, "valid"))


def test_conv_identity_kernel():
    x = np.random.default_rng(0).normal(size=(2, 9, 1))
    out, _ = K.conv1d_forward(x, np.ones((1, 1, 1)), 1, "same")
    np.testing.assert_array_equal(out, x)


def test_conv_stem_shape_and_weight_count():
    x = np.zeros((1, 4096, 12), dtype=np.float32)
    k = np.zeros((16, 12, 64), dtype=np.float32)
    out, _ = K.conv1d_forward(x, k, 1, "same")
    assert out.shape == (1, 4096, 64)
    assert k.size == 12288


@pytest.mark.parametrize("length,k,stride", [(7, 3, 1), (8, 4, 2), (9, 16, 4), (5, 2, 1), (16, 16, 4)])
@pytest.mark.parametrize("padding", ["same", "valid"])
def test_conv_matches_loop_oracle(length, k, stride, padding, rng):
    x = rng.normal(size=(2, length, 3))
    w = rng.normal(size=(k, 3, 2))
    if padding == "valid" and length < k:
        with pytest.raises(DimensionError, match="shorter than kernel"):
            K.conv1d_forward(x, w, stride, padding)
        return
    out, _ = K.conv1d_forward(x, w, stride, padding)
    np.testing.assert_allclose(out, conv1d_loops(x, w, stride, padding), rtol=1e-12, atol=1e-12)


def test_same_padding_extra_zero_goes_right():
    assert K.same_padding(4, 2, 1) == (0, 1)
    assert K.same_padding(4096, 16, 4) == (6, 6)
    assert K.same_padding(10, 4, 1) == (1, 2)


@settings(max_examples=200, deadline=None)
@given(length=st.integers(1, 64), stride=st.sampled_from([1, 2, 4]), k=st.integers(1, 8))
def test_same_conv_output_length_is_ceil(length, stride, k):
    out, _ = K.conv1d_forward(np.ones((1, length, 1)), np.ones((k, 1, 1)), stride, "same")
    assert out.shape[1] == -(-length // stride)


def test_conv_channel_mismatch_names_axis():
    with pytest.raises(DimensionError, match="axis 2"):
        K.conv1d_forward(np.zeros((1, 8, 3)), np.zeros((2, 4, 1)), 1, "same")


def test_conv_rejects_unknown_padding():
    with pytest.raises(ConfigError):
        K.conv1d_forward(np.zeros((1, 8, 1)), np.zeros((2, 1, 1)), 1, "causal")


def test_conv_keeps_dtype():
    out, _ = K.conv1d_forward(np.zeros((1, 8, 2), np.float32), np.zeros((3, 2, 2), np.float32))
    assert out.dtype == np.float32


# ---------------------------------------------------------------- batch norm

def _bn(x, c=None, training=True, eps=1e-3, momentum=0.99):
    c = x.shape[2] if c is None else c
    mm, mv = np.zeros(c), np.ones(c)
    out, _ = K.batchnorm_forward(x, np.ones(c), np.zeros(c), mm, mv, training, momentum, eps)
    return out, mm, mv


def test_bn_two_value_hand_case():
    out, _, _ = _bn(np.array([[[1.0]], [[3.0]]]), eps=0.0)
    np.testing.assert_allclose(out.ravel(), [-1.0, 1.0])


def test_bn_standardized_input_passes_through(rng):
    x = rng.normal(size=(8, 50, 4))
    x = (x - x.mean(axis=(0, 1))) / x.std(axis=(0, 1))
    out, _, _ = _bn(x, eps=1e-3)
    # unit variance plus epsilon shrinks values by 1/sqrt(1 + eps)
    np.testing.assert_allclose(out, x, rtol=1e-3 / 2 + 1e-9)


def test_bn_matches_loop_oracle(rng):
    x = rng.normal(2.0, 3.0, size=(3, 7, 2))
    gamma, beta = rng.normal(size=2), rng.normal(size=2)
    out, _ = K.batchnorm_forward(x, gamma, beta, np.zeros(2), np.ones(2), True, 0.99, 1e-3)
    np.testing.assert_allclose(out, batchnorm_loops(x, gamma, beta, 1e-3), rtol=1e-12)


def test_bn_moving_average_update(rng):
    x = rng.normal(5.0, 2.0, size=(4, 10, 3))
    _, mm, mv = _bn(x, momentum=0.9)
    np.testing.assert_allclose(mm, 0.1 * x.mean(axis=(0, 1)))
    np.testing.assert_allclose(mv, 0.9 + 0.1 * x.var(axis=(0, 1)))


def test_bn_infer_mode_uses_stored_statistics(rng):
    x = rng.normal(size=(2, 5, 1))
    mm, mv = np.array([1.0]), np.array([4.0])
    out, _ = K.batchnorm_forward(x, np.ones(1), np.zeros(1), mm, mv, False, 0.99, 0.0)
    np.testing.assert_allclose(out, (x - 1.0) / 2.0)
    assert mm[0] == 1.0 and mv[0] == 4.0


def test_bn_negative_epsilon_is_config_error():
    with pytest.raises(ConfigError):
        _bn(np.zeros((1, 2, 1)), eps=-1e-3)


def test_bn_parameter_shape_checked():
    with pytest.raises(DimensionError, match="gamma"):
        K.batchnorm_forward(np.zeros((1, 2, 3)), np.ones(2), np.zeros(3), np.zeros(3), np.ones(3), True)


# ---------------------------------------------------------------- max pool

def test_maxpool_window_max():
    x = np.array([1.0, 3, 2, 5, 4, 0]).reshape(1, 6, 1)
    out, _ = K.maxpool1d_forward(x, 2, 2)
    np.testing.assert_array_equal(out.ravel(), [3, 5, 4])


def test_maxpool_quarter_length():
    out, _ = K.maxpool1d_forward(np.zeros((1, 4096, 2)), 4, 4)
    assert out.shape == (1, 1024, 2)


def test_maxpool_constant_input():
    out, _ = K.maxpool1d_forward(np.full((2, 12, 3), 7.5), 4, 4)
    assert np.all(out == 7.5)


def test_maxpool_too_short():
    with pytest.raises(DimensionError):
        K.maxpool1d_forward(np.zeros((1, 3, 1)), 4, 4)


def test_maxpool_tie_routes_to_first_index():
    x = np.array([2.0, 2.0, 1.0, 1.0]).reshape(1, 4, 1)
    out, cache = K.maxpool1d_forward(x, 2, 2)
    dx = K.maxpool1d_backward(np.ones_like(out), cache)
    np.testing.assert_array_equal(dx.ravel(), [1, 0, 1, 0])


@settings(max_examples=100, deadline=None)
@given(
    length=st.integers(1, 32), pool=st.integers(1, 5), stride=st.integers(1, 5),
    seed=st.integers(0, 2**31 - 1),
)
def test_maxpool_backward_conserves_gradient_mass(length, pool, stride, seed):
    if length < pool:
        return
    r = np.random.default_rng(seed)
    x = r.integers(-3, 3, size=(2, length, 3)).astype(np.float64)  # integers force ties
    out, cache = K.maxpool1d_forward(x, pool, stride)
    np.testing.assert_allclose(out, maxpool_loops(x, pool, stride))
    g = r.normal(size=out.shape)
    dx = K.maxpool1d_backward(g, cache)
    assert dx.sum() == pytest.approx(g.sum(), abs=1e-10)


# ---------------------------------------------------------------- pooling, dense, relu

def test_global_average_pool():
    x = np.array([1.0, 2, 3, 4]).reshape(1, 4, 1)
    out, _ = K.global_avg_pool_forward(x)
    assert out.item() == 2.5
    out, _ = K.global_avg_pool_forward(np.zeros((3, 16, 320)))
    assert out.shape == (3, 320)
    out, _ = K.global_avg_pool_forward(np.full((1, 9, 2), -1.25))
    assert np.all(out == -1.25)


def test_dense_hand_case():
    out, _ = K.dense_forward(np.array([[1.0, 2.0]]), np.array([[1.0], [1.0]]), np.array([3.0]))
    np.testing.assert_array_equal(out, [[6.0]])


def test_dense_identity_and_size(rng):
    x = rng.normal(size=(4, 320))
    out, _ = K.dense_forward(x, np.eye(320), np.zeros(320))
    np.testing.assert_array_equal(out, x)
    assert np.eye(320).size + 320 == 102720


def test_dense_shape_mismatch():
    with pytest.raises(DimensionError, match="axis"):
        K.dense_forward(np.zeros((1, 3)), np.zeros((4, 2)), np.zeros(2))


def test_relu_zero_gradient_for_negative_inputs():
    out, mask = K.relu_forward(np.array([-2.0, 0.0, 3.0]))
    np.testing.assert_array_equal(out, [0, 0, 3])
    np.testing.assert_array_equal(K.relu_backward(np.ones(3), mask), [0, 0, 1])
