"""Shared test fixtures: independent oracles and identity constructors.

The convolution oracle is a direct nested-loop evaluation of the definition,
written in plain Python so it shares nothing with the library's offset
decomposition path.
"""

import numpy as np

from mafnet import BatchNorm2d, Conv2d, Tensor


def naive_conv2d(x, w, bias=None, stride=1, padding=None, groups=1):
    """Reference convolution: loops over batch, out-channel, output pixel, and
    accumulates over the in-group channels and the kernel window."""
    b_sz, cin, h, wdim = x.shape
    out_c, cg, k, _ = w.shape
    if padding is None:
        padding = k // 2
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wdim + 2 * padding - k) // stride + 1
    xp = np.zeros((b_sz, cin, h + 2 * padding, wdim + 2 * padding), dtype=np.float64)
    xp[:, :, padding : padding + h, padding : padding + wdim] = x
    og = out_c // groups
    out = np.zeros((b_sz, out_c, ho, wo), dtype=np.float64)
    for b in range(b_sz):
        for o in range(out_c):
            g = o // og
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for c in range(cg):
                        for ki in range(k):
                            for kj in range(k):
                                acc += float(w[o, c, ki, kj]) * float(
                                    xp[b, g * cg + c, i * stride + ki, j * stride + kj]
                                )
                    if bias is not None:
                        acc += float(bias[o])
                    out[b, o, i, j] = acc
    return out


def dirac_depthwise(channels, kernel, dtype=np.float32):
    """(C,1,k,k) depthwise identity kernel: 1 at the center tap."""
    w = np.zeros((channels, 1, kernel, kernel), dtype=dtype)
    w[:, 0, kernel // 2, kernel // 2] = 1.0
    return w


def identity_pointwise(channels, dtype=np.float32):
    """(C,C,1,1) identity 1x1 kernel."""
    w = np.zeros((channels, channels, 1, 1), dtype=dtype)
    for i in range(channels):
        w[i, i, 0, 0] = 1.0
    return w


def make_identity_bn(bn: BatchNorm2d) -> None:
    """gamma=1, beta=0, mean=0, var=1, eps=0: exact pass-through."""
    c = bn.channels
    bn.gamma.data = np.ones(c, dtype=bn.gamma.dtype)
    bn.beta.data = np.zeros(c, dtype=bn.beta.dtype)
    bn.set_buffer("running_mean", np.zeros(c, dtype=bn.running_mean.dtype))
    bn.set_buffer("running_var", np.ones(c, dtype=bn.running_var.dtype))
    bn.eps = 0.0


def make_identity_conv(conv: Conv2d) -> None:
    """Set a conv's weight to the identity mapping (square 1x1 or Dirac DW)."""
    s = conv.spec
    if s.depthwise:
        conv.weight.data = dirac_depthwise(s.in_channels, s.kernel, conv.weight.dtype)
    else:
        assert s.in_channels == s.out_channels and s.kernel == 1
        conv.weight.data = identity_pointwise(s.in_channels, conv.weight.dtype)
    if conv.bias is not None:
        conv.bias.data = np.zeros(s.out_channels, dtype=conv.bias.dtype)


def zero_module(module) -> None:
    """Zero every parameter (weights, biases, BN affine)."""
    for _, p in module.named_parameters():
        p.data = np.zeros_like(p.data)


def rand_tensor(rng, *shape, dtype=np.float32, requires_grad=False):
    return Tensor(rng.standard_normal(shape).astype(dtype), requires_grad=requires_grad)
