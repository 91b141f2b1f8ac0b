import numpy as np
import pytest

from mafnet import ConfigError, ShapeError, Tensor
from mafnet import ops

from helpers import identity_pointwise, naive_conv2d


rng = np.random.default_rng


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------

def test_conv_identity_pointwise():
    x = Tensor(rng(0).standard_normal((2, 3, 5, 5)).astype(np.float32))
    w = Tensor(identity_pointwise(3))
    y = ops.conv2d(x, w)
    np.testing.assert_array_equal(y.data, x.data)


def test_conv_allones_overlap_counts():
    x = Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
    w = Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
    y = ops.conv2d(x, w, stride=1, padding=1, groups=1)
    assert y.data[0, 0, 1, 1] == 9.0
    for i, j in ((0, 0), (0, 2), (2, 0), (2, 2)):
        assert y.data[0, 0, i, j] == 4.0


def test_conv_matches_naive_depthwise():
    r = rng(1)
    x = r.standard_normal((1, 4, 8, 8)).astype(np.float32)
    w = r.standard_normal((4, 1, 3, 3)).astype(np.float32)
    y = ops.conv2d(Tensor(x), Tensor(w), groups=4)
    ref = naive_conv2d(x, w, groups=4)
    np.testing.assert_allclose(y.data, ref, atol=1e-6)


@pytest.mark.parametrize("kernel", [1, 3, 5, 7, 9])
@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("depthwise", [False, True])
def test_conv_oracle_matrix(kernel, stride, depthwise):
    r = rng(kernel * 10 + stride + depthwise)
    cin = 4
    if depthwise:
        groups, cout = cin, cin
    else:
        groups, cout = 1, 3
    x = r.standard_normal((2, cin, 9, 9)).astype(np.float32)
    w = r.standard_normal((cout, cin // groups, kernel, kernel)).astype(np.float32)
    b = r.standard_normal(cout).astype(np.float32)
    y = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, groups=groups)
    ref = naive_conv2d(x, w, b, stride=stride, groups=groups)
    assert y.shape == ref.shape
    np.testing.assert_allclose(y.data, ref, atol=1e-5)


def test_conv_grouped_matches_naive():
    r = rng(9)
    x = r.standard_normal((1, 6, 6, 6)).astype(np.float32)
    w = r.standard_normal((4, 3, 3, 3)).astype(np.float32)
    y = ops.conv2d(Tensor(x), Tensor(w), groups=2)
    ref = naive_conv2d(x, w, groups=2)
    np.testing.assert_allclose(y.data, ref, atol=1e-5)


def test_conv_linearity():
    r = rng(2)
    x1 = r.standard_normal((1, 3, 6, 6)).astype(np.float32)
    x2 = r.standard_normal((1, 3, 6, 6)).astype(np.float32)
    w = Tensor(r.standard_normal((2, 3, 3, 3)).astype(np.float32))
    a, b = 1.7, -0.4
    lhs = ops.conv2d(Tensor(a * x1 + b * x2), w).data
    rhs = a * ops.conv2d(Tensor(x1), w).data + b * ops.conv2d(Tensor(x2), w).data
    np.testing.assert_allclose(lhs, rhs, rtol=1e-5, atol=1e-6)


def test_conv_output_shape_formula():
    x = Tensor(np.zeros((1, 2, 11, 13), dtype=np.float32))
    w = Tensor(np.zeros((4, 2, 5, 5), dtype=np.float32))
    y = ops.conv2d(x, w, stride=2, padding=2)
    assert y.shape == (1, 4, (11 + 4 - 5) // 2 + 1, (13 + 4 - 5) // 2 + 1)


def test_conv_errors_name_offending_dim():
    x = Tensor(np.zeros((1, 3, 4, 4), dtype=np.float32))
    w = Tensor(np.zeros((2, 4, 3, 3), dtype=np.float32))
    with pytest.raises(ShapeError, match="channels per group"):
        ops.conv2d(x, w)
    with pytest.raises(ConfigError, match="groups"):
        ops.conv2d(x, Tensor(np.zeros((2, 3, 3, 3), dtype=np.float32)), groups=2)
    with pytest.raises(ConfigError, match="kernel"):
        ops.conv2d(x, Tensor(np.zeros((2, 3, 2, 2), dtype=np.float32)))
    with pytest.raises(ShapeError, match="bias"):
        ops.conv2d(
            x,
            Tensor(np.zeros((2, 3, 3, 3), dtype=np.float32)),
            Tensor(np.zeros(3, dtype=np.float32)),
        )


# ---------------------------------------------------------------------------
# batch norm
# ---------------------------------------------------------------------------

def _bn(x, gamma, beta, mean, var, eps):
    return ops.batchnorm_infer(
        Tensor(np.asarray(x, dtype=np.float32)),
        Tensor(np.asarray(gamma, dtype=np.float32)),
        Tensor(np.asarray(beta, dtype=np.float32)),
        np.asarray(mean, dtype=np.float32),
        np.asarray(var, dtype=np.float32),
        eps,
    )


def test_bn_identity():
    x = rng(3).standard_normal((2, 3, 4, 4)).astype(np.float32)
    y = _bn(x, [1, 1, 1], [0, 0, 0], [0, 0, 0], [1, 1, 1], 0.0)
    np.testing.assert_array_equal(y.data, x)


def test_bn_hand_affine():
    y = _bn(np.full((1, 1, 1, 1), 5.0), [2.0], [3.0], [1.0], [4.0], 0.0)
    assert y.data.reshape(()) == pytest.approx(7.0)


def test_bn_zero_scale_gives_beta():
    x = rng(4).standard_normal((2, 2, 3, 3)).astype(np.float32)
    y = _bn(x, [0, 0], [1.5, -2.0], [0.3, 0.7], [1, 1], 1e-5)
    assert np.allclose(y.data[:, 0], 1.5)
    assert np.allclose(y.data[:, 1], -2.0)


def test_bn_channel_mismatch():
    with pytest.raises(ShapeError, match="channels"):
        _bn(np.zeros((1, 3, 2, 2)), [1, 1], [0, 0], [0, 0], [1, 1], 1e-5)


def test_bn_train_normalizes_batch():
    x = rng(5).standard_normal((4, 2, 5, 5)).astype(np.float32) * 3 + 1
    y, mu, var = ops.batchnorm_train(
        Tensor(x), Tensor(np.ones(2, dtype=np.float32)), Tensor(np.zeros(2, dtype=np.float32))
    )
    assert np.allclose(y.data.mean(axis=(0, 2, 3)), 0, atol=1e-5)
    assert np.allclose(y.data.std(axis=(0, 2, 3)), 1, atol=1e-3)
    assert np.allclose(mu, x.mean(axis=(0, 2, 3)), atol=1e-6)


# ---------------------------------------------------------------------------
# silu / upsample / concat / split / pool
# ---------------------------------------------------------------------------

def test_silu_values():
    x = Tensor(np.array([0.0, 1.0, -20.0], dtype=np.float32).reshape(1, 1, 1, 3))
    y = ops.silu(x).data.reshape(-1)
    assert y[0] == 0.0
    assert y[1] == pytest.approx(1.0 / (1.0 + np.exp(-1.0)), abs=1e-6)
    assert abs(y[2]) < 1e-7


def test_upsample_single_value():
    y = ops.upsample_nearest2x(Tensor(np.full((1, 1, 1, 1), 5.0, dtype=np.float32)))
    np.testing.assert_array_equal(y.data, np.full((1, 1, 2, 2), 5.0))


def test_upsample_block_layout():
    x = Tensor(np.array([[1, 2], [3, 4]], dtype=np.float32).reshape(1, 1, 2, 2))
    y = ops.upsample_nearest2x(x).data[0, 0]
    expect = np.array(
        [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]], dtype=np.float32
    )
    np.testing.assert_array_equal(y, expect)


def test_upsample_average_roundtrip():
    x = rng(6).standard_normal((2, 3, 5, 7)).astype(np.float32)
    up = ops.upsample_nearest2x(Tensor(x)).data
    down = up.reshape(2, 3, 5, 2, 7, 2).mean(axis=(3, 5))
    np.testing.assert_allclose(down, x, atol=1e-6)


def test_concat_shapes():
    a = Tensor(np.zeros((1, 2, 4, 4), dtype=np.float32))
    b = Tensor(np.zeros((1, 3, 4, 4), dtype=np.float32))
    assert ops.concat_channels([a, b]).shape == (1, 5, 4, 4)


def test_split_concat_roundtrip_bit_exact():
    x = rng(7).standard_normal((1, 6, 2, 2)).astype(np.float32)
    parts = ops.split_channels(Tensor(x), [3, 3])
    back = ops.concat_channels(parts)
    assert back.data.tobytes() == x.tobytes()


def test_concat_spatial_mismatch_error():
    a = Tensor(np.zeros((1, 2, 4, 4), dtype=np.float32))
    b = Tensor(np.zeros((1, 2, 8, 4), dtype=np.float32))
    with pytest.raises(ShapeError, match="spatial"):
        ops.concat_channels([a, b])


def test_split_bad_sizes_error():
    x = Tensor(np.zeros((1, 6, 2, 2), dtype=np.float32))
    with pytest.raises(ConfigError, match="sum"):
        ops.split_channels(x, [3, 2])


def test_global_avg_pool():
    x = rng(8).standard_normal((2, 3, 4, 6)).astype(np.float32)
    y = ops.global_avg_pool(Tensor(x))
    assert y.shape == (2, 3, 1, 1)
    np.testing.assert_allclose(y.data[:, :, 0, 0], x.mean(axis=(2, 3)), atol=1e-6)


def test_softmax_cross_entropy_uniform():
    logits = Tensor(np.zeros((4, 3), dtype=np.float32))
    loss = ops.softmax_cross_entropy(logits, np.array([0, 1, 2, 0]))
    assert loss.item() == pytest.approx(np.log(3.0), abs=1e-6)
