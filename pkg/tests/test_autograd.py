import numpy as np
import pytest

from mafnet import Tensor
from mafnet import ops
from mafnet.gradcheck import run_gradcheck


def test_sum_of_conv_weight_grad_is_border_clipped_count():
    # all-ones input, 3x3 depthwise, pad 1: a weight tap's gradient counts the
    # positions where that tap sees real data, so center = H*W and the corner
    # taps lose one clipped row and column each.
    h = w = 6
    x = Tensor(np.ones((1, 1, h, w), dtype=np.float32))
    k = Tensor(np.zeros((1, 1, 3, 3), dtype=np.float32), requires_grad=True)
    y = ops.conv2d(x, k, stride=1, padding=1, groups=1)
    ops.sum_all(y).backward()
    g = k.grad[0, 0]
    assert g[1, 1] == h * w
    assert g[0, 0] == (h - 1) * (w - 1)
    assert g[0, 1] == (h - 1) * w
    assert g[2, 2] == (h - 1) * (w - 1)


def test_grad_accumulates_across_uses():
    x = Tensor(np.ones((1, 1, 2, 2), dtype=np.float32), requires_grad=True)
    y = ops.concat_channels([x, x])
    ops.sum_all(y).backward()
    assert np.all(x.grad == 2.0)


def test_branch_sum_distributes_grads():
    x = Tensor(np.ones((1, 2, 3, 3), dtype=np.float32), requires_grad=True)
    a = ops.mul_scalar(x, 2.0)
    b = ops.mul_scalar(x, 3.0)
    ops.sum_all(a + b).backward()
    assert np.all(x.grad == 5.0)


@pytest.mark.parametrize(
    "group",
    ["conv2d", "batchnorm", "silu", "upsample", "concat", "split", "pool", "cross_entropy"],
)
def test_finite_difference_ops(group):
    ok, rows = run_gradcheck([group])
    assert ok, rows


def test_finite_difference_composites():
    ok, rows = run_gradcheck(["rephdw", "bottleneck"])
    assert ok, rows
