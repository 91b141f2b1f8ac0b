"""Functional operators over Tensor: convolution, batch norm, SiLU,
nearest-neighbor upsampling, channel concat/split, pooling and the toy loss.

Convolutions are evaluated by offset decomposition: a k x k kernel becomes
k^2 shifted pointwise products, which keeps memory flat and lets BLAS carry
the dense cases. Gradients are exact; everything here passes the central
finite-difference checker.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, make_op_output


def conv_output_hw(h: int, w: int, kernel: int, stride: int, padding: int) -> tuple[int, int]:
    return (h + 2 * padding - kernel) // stride + 1, (w + 2 * padding - kernel) // stride + 1


def _require_same_dtype(op: str, *arrays: np.ndarray) -> None:
    dtypes = {a.dtype for a in arrays}
    if len(dtypes) > 1:
        raise ShapeError(f"{op}: mixed dtypes {sorted(str(d) for d in dtypes)}")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _validate_conv(x: Tensor, w: Tensor, stride: int, padding: int, groups: int):
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be 4-D (B,C,H,W), got {x.shape}")
    if w.ndim != 4:
        raise ShapeError(f"conv2d: weight must be 4-D (out,in/groups,k,k), got {w.shape}")
    out_c, cg, kh, kw = w.shape
    if kh != kw:
        raise ShapeError(f"conv2d: kernel must be square, got {kh}x{kw}")
    if kh % 2 == 0 or kh < 1:
        raise ConfigError(f"conv2d: kernel must be odd and positive, got {kh}")
    if stride not in (1, 2):
        raise ConfigError(f"conv2d: stride must be 1 or 2, got {stride}")
    if padding < 0:
        raise ConfigError(f"conv2d: padding must be non-negative, got {padding}")
    b, cin, h, wdim = x.shape
    if groups < 1 or cin % groups or out_c % groups:
        raise ConfigError(
            f"conv2d: groups={groups} must divide in_channels={cin} and out_channels={out_c}"
        )
    if cg != cin // groups:
        raise ShapeError(
            f"conv2d: weight expects {cg} channels per group, input supplies {cin // groups}"
        )
    ho, wo = conv_output_hw(h, wdim, kh, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"conv2d: output would be {ho}x{wo} for input {h}x{wdim}, kernel {kh}, "
            f"stride {stride}, padding {padding}"
        )
    return out_c, kh, ho, wo


def _pad_hw(a: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return a
    return np.pad(a, ((0, 0), (0, 0), (p, p), (p, p)))


def _conv_forward(xd, wd, stride, padding, groups, ho, wo):
    b, cin, _, _ = xd.shape
    out_c, cg, k, _ = wd.shape
    xp = _pad_hw(xd, padding)
    if groups == cin and out_c == cin and cg == 1:
        out = np.zeros((b, cin, ho, wo), dtype=xd.dtype)
        wk = wd[:, 0]
        for i in range(k):
            for j in range(k):
                xs = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
                out += wk[:, i, j][None, :, None, None] * xs
        return out
    if groups == 1:
        acc = np.zeros((b, ho, wo, out_c), dtype=xd.dtype)
        for i in range(k):
            for j in range(k):
                xs = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
                acc += np.tensordot(xs, wd[:, :, i, j], axes=([1], [1]))
        return np.ascontiguousarray(acc.transpose(0, 3, 1, 2))
    og = out_c // groups
    wg = wd.reshape(groups, og, cg, k, k)
    acc = np.zeros((b, groups, og, ho, wo), dtype=xd.dtype)
    for i in range(k):
        for j in range(k):
            xs = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
            xs = xs.reshape(b, groups, cg, ho, wo)
            acc += np.einsum("bgchw,goc->bgohw", xs, wg[:, :, :, i, j])
    return acc.reshape(b, out_c, ho, wo)


def conv2d(
    x: Tensor,
    w: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int | None = None,
    groups: int = 1,
) -> Tensor:
    """2-D cross-correlation. `padding=None` means k//2 ("same" at stride 1)."""
    if padding is None:
        padding = w.shape[2] // 2
    out_c, k, ho, wo = _validate_conv(x, w, stride, padding, groups)
    _require_same_dtype("conv2d", x.data, w.data)
    if bias is not None:
        if bias.shape != (out_c,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} != ({out_c},)")
        _require_same_dtype("conv2d", x.data, bias.data)

    xd, wd = x.data, w.data
    out = _conv_forward(xd, wd, stride, padding, groups, ho, wo)
    if bias is not None:
        out += bias.data[None, :, None, None]

    b, cin, h, wdim = xd.shape
    parents = (x, w) if bias is None else (x, w, bias)

    def backward(gy):
        cg = cin // groups
        depthwise = groups == cin and out_c == cin and cg == 1
        if x.requires_grad:
            dxp = np.zeros((b, cin, h + 2 * padding, wdim + 2 * padding), dtype=xd.dtype)
            xp_slices = lambda i, j: (
                slice(None),
                slice(None),
                slice(i, i + stride * ho, stride),
                slice(j, j + stride * wo, stride),
            )
            if depthwise:
                wk = wd[:, 0]
                for i in range(k):
                    for j in range(k):
                        dxp[xp_slices(i, j)] += wk[:, i, j][None, :, None, None] * gy
            elif groups == 1:
                for i in range(k):
                    for j in range(k):
                        g = np.tensordot(gy, wd[:, :, i, j], axes=([1], [0]))
                        dxp[xp_slices(i, j)] += g.transpose(0, 3, 1, 2)
            else:
                og = out_c // groups
                wg = wd.reshape(groups, og, cg, k, k)
                gyg = gy.reshape(b, groups, og, ho, wo)
                for i in range(k):
                    for j in range(k):
                        g = np.einsum("bgohw,goc->bgchw", gyg, wg[:, :, :, i, j])
                        dxp[xp_slices(i, j)] += g.reshape(b, cin, ho, wo)
            if padding:
                dxp = dxp[:, :, padding : padding + h, padding : padding + wdim]
            x.accumulate_grad(dxp)
        if w.requires_grad:
            xp = _pad_hw(xd, padding)
            dw = np.zeros_like(wd)
            if depthwise:
                for i in range(k):
                    for j in range(k):
                        xs = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
                        dw[:, 0, i, j] = (gy * xs).sum(axis=(0, 2, 3))
            elif groups == 1:
                for i in range(k):
                    for j in range(k):
                        xs = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
                        dw[:, :, i, j] = np.tensordot(gy, xs, axes=([0, 2, 3], [0, 2, 3]))
            else:
                og = out_c // groups
                gyg = gy.reshape(b, groups, og, ho, wo)
                dwg = dw.reshape(groups, og, cg, k, k)
                for i in range(k):
                    for j in range(k):
                        xs = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
                        xs = xs.reshape(b, groups, cg, ho, wo)
                        dwg[:, :, :, i, j] = np.einsum("bgohw,bgchw->goc", gyg, xs)
            w.accumulate_grad(dw)
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(gy.sum(axis=(0, 2, 3)))

    return make_op_output(out, parents, backward, "conv2d")


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

def _validate_bn(op, x, channels_of):
    if x.ndim != 4:
        raise ShapeError(f"{op}: input must be 4-D, got {x.shape}")
    if x.shape[1] != channels_of:
        raise ShapeError(f"{op}: input has {x.shape[1]} channels, params have {channels_of}")


def batchnorm_infer(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    eps: float = 1e-5,
) -> Tensor:
    """Inference-mode affine normalization using frozen running statistics."""
    _validate_bn("batchnorm_infer", x, gamma.shape[0])
    istd = 1.0 / np.sqrt(running_var + eps)
    scale = (gamma.data * istd).astype(x.dtype, copy=False)
    shift = (beta.data - gamma.data * running_mean * istd).astype(x.dtype, copy=False)
    out = scale[None, :, None, None] * x.data + shift[None, :, None, None]

    xd = x.data
    mean = running_mean
    istd_x = istd.astype(x.dtype, copy=False)

    def backward(gy):
        if x.requires_grad:
            x.accumulate_grad(gy * scale[None, :, None, None])
        if gamma.requires_grad:
            xhat = (xd - mean[None, :, None, None]) * istd_x[None, :, None, None]
            gamma.accumulate_grad((gy * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            beta.accumulate_grad(gy.sum(axis=(0, 2, 3)))

    return make_op_output(out, (x, gamma, beta), backward, "batchnorm_infer")


def batchnorm_train(
    x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Training-mode batch norm; returns (y, batch_mean, batch_var).

    Variance is the biased (1/N) estimate, as used for normalization; the
    caller decides how to fold the returned statistics into running buffers.
    Gradient flows through the batch statistics.
    """
    _validate_bn("batchnorm_train", x, gamma.shape[0])
    xd = x.data
    n = xd.shape[0] * xd.shape[2] * xd.shape[3]
    mu = xd.mean(axis=(0, 2, 3))
    var = xd.var(axis=(0, 2, 3))
    istd = 1.0 / np.sqrt(var + eps)
    xc = xd - mu[None, :, None, None]
    xhat = xc * istd[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(gy):
        if gamma.requires_grad:
            gamma.accumulate_grad((gy * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            beta.accumulate_grad(gy.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxhat = gy * gamma.data[None, :, None, None]
            dvar = (dxhat * xc).sum(axis=(0, 2, 3)) * -0.5 * istd**3
            dmu = (dxhat.sum(axis=(0, 2, 3)) * -istd) + dvar * (-2.0 / n) * xc.sum(
                axis=(0, 2, 3)
            )
            dx = (
                dxhat * istd[None, :, None, None]
                + (2.0 / n) * dvar[None, :, None, None] * xc
                + dmu[None, :, None, None] / n
            )
            x.accumulate_grad(dx)

    y = make_op_output(out, (x, gamma, beta), backward, "batchnorm_train")
    return y, mu, var


# ---------------------------------------------------------------------------
# pointwise and structural ops
# ---------------------------------------------------------------------------

def _sigmoid(xd: np.ndarray) -> np.ndarray:
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(x: Tensor) -> Tensor:
    """y = x * sigmoid(x), element-wise."""
    s = _sigmoid(x.data)
    out = x.data * s

    def backward(gy):
        if x.requires_grad:
            x.accumulate_grad(gy * (s + x.data * s * (1.0 - s)))

    return make_op_output(out, (x,), backward, "silu")


def upsample_nearest2x(x: Tensor) -> Tensor:
    """Replicate every element into a 2x2 block: (B,C,H,W) -> (B,C,2H,2W)."""
    if x.ndim != 4:
        raise ShapeError(f"upsample_nearest2x: input must be 4-D, got {x.shape}")
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)
    b, c, h, w = x.shape

    def backward(gy):
        if x.requires_grad:
            x.accumulate_grad(gy.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)))

    return make_op_output(out, (x,), backward, "upsample_nearest2x")


def concat_channels(xs: list[Tensor]) -> Tensor:
    """Concatenate along the channel axis; batch and spatial dims must match."""
    if not xs:
        raise ConfigError("concat_channels: empty input list")
    ref = xs[0]
    for i, t in enumerate(xs):
        if t.ndim != 4:
            raise ShapeError(f"concat_channels: input {i} must be 4-D, got {t.shape}")
        if t.shape[0] != ref.shape[0] or t.shape[2:] != ref.shape[2:]:
            raise ShapeError(
                f"concat_channels: input {i} has shape {t.shape}, "
                f"incompatible with {ref.shape} (batch/spatial must match)"
            )
    _require_same_dtype("concat_channels", *[t.data for t in xs])
    sizes = [t.shape[1] for t in xs]
    out = np.concatenate([t.data for t in xs], axis=1)

    def backward(gy):
        off = 0
        for t, c in zip(xs, sizes):
            if t.requires_grad:
                t.accumulate_grad(gy[:, off : off + c])
            off += c

    return make_op_output(out, tuple(xs), backward, "concat_channels")


def split_channels(x: Tensor, sizes: list[int]) -> list[Tensor]:
    """Split along the channel axis; sizes must sum to the channel count."""
    if any(s <= 0 for s in sizes):
        raise ConfigError(f"split_channels: sizes must be positive, got {sizes}")
    if sum(sizes) != x.shape[1]:
        raise ConfigError(
            f"split_channels: sizes {sizes} sum to {sum(sizes)}, input has {x.shape[1]} channels"
        )
    outs = []
    off = 0
    for c in sizes:
        lo = off

        def backward(gy, lo=lo, c=c):
            if x.requires_grad:
                g = np.zeros_like(x.data)
                g[:, lo : lo + c] = gy
                x.accumulate_grad(g)

        piece = np.ascontiguousarray(x.data[:, lo : lo + c])
        outs.append(make_op_output(piece, (x,), backward, "split_channels"))
        off += c
    return outs


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial dims, keeping them as 1x1."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool: input must be 4-D, got {x.shape}")
    b, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def backward(gy):
        if x.requires_grad:
            x.accumulate_grad(np.broadcast_to(gy / (h * w), x.shape).copy())

    return make_op_output(out, (x,), backward, "global_avg_pool")


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    _require_same_dtype("add", a.data, b.data)
    out = a.data + b.data

    def backward(gy):
        if a.requires_grad:
            a.accumulate_grad(gy)
        if b.requires_grad:
            b.accumulate_grad(gy)

    return make_op_output(out, (a, b), backward, "add")


def add_scalar(a: Tensor, s: float) -> Tensor:
    out = a.data + a.dtype.type(s)

    def backward(gy):
        if a.requires_grad:
            a.accumulate_grad(gy)

    return make_op_output(out, (a,), backward, "add_scalar")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    _require_same_dtype("mul", a.data, b.data)
    out = a.data * b.data

    def backward(gy):
        if a.requires_grad:
            a.accumulate_grad(gy * b.data)
        if b.requires_grad:
            b.accumulate_grad(gy * a.data)

    return make_op_output(out, (a, b), backward, "mul")


def mul_scalar(a: Tensor, s: float) -> Tensor:
    sv = a.dtype.type(s)
    out = a.data * sv

    def backward(gy):
        if a.requires_grad:
            a.accumulate_grad(gy * sv)

    return make_op_output(out, (a,), backward, "mul_scalar")


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.dtype)

    def backward(gy):
        if x.requires_grad:
            x.accumulate_grad(np.broadcast_to(gy, x.shape).astype(x.dtype, copy=True))

    return make_op_output(out, (x,), backward, "sum_all")


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy between softmax(logits) and integer labels.

    Accepts (B, K) or (B, K, 1, 1) logits.
    """
    ld = logits.data
    if ld.ndim == 4:
        if ld.shape[2:] != (1, 1):
            raise ShapeError(f"softmax_cross_entropy: expected 1x1 spatial dims, got {ld.shape}")
        ld = ld.reshape(ld.shape[0], ld.shape[1])
    if ld.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: logits must be (B,K), got {logits.shape}")
    labels = np.asarray(labels)
    b, k = ld.shape
    if labels.shape != (b,):
        raise ShapeError(f"softmax_cross_entropy: labels shape {labels.shape} != ({b},)")
    z = ld - ld.max(axis=1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=1, keepdims=True)
    nll = -(z[np.arange(b), labels] - np.log(ez.sum(axis=1)))
    out = np.asarray(nll.mean(), dtype=ld.dtype)

    def backward(gy):
        if logits.requires_grad:
            g = p.copy()
            g[np.arange(b), labels] -= 1.0
            g *= gy / b
            logits.accumulate_grad(g.reshape(logits.shape))

    return make_op_output(out, (logits,), backward, "softmax_cross_entropy")
