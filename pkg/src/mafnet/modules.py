"""Light parameter-container layer on top of the functional ops.

Modules register parameters (Tensors with requires_grad) and buffers
(plain numpy arrays such as running statistics or fused kernels) so the
whole tree can be walked for serialization, cost accounting and inventory
introspection. Initialization is fully determined by the generator handed
to the constructor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .tensor import Tensor


@dataclass
class ConvSpec:
    """Static description of a 2-D convolution."""

    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int | None = None
    groups: int = 1
    has_bias: bool = False

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError(f"ConvSpec: kernel must be odd positive, got {self.kernel}")
        if self.stride not in (1, 2):
            raise ConfigError(f"ConvSpec: stride must be 1 or 2, got {self.stride}")
        if self.padding is None:
            self.padding = self.kernel // 2
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ConfigError(
                f"ConvSpec: groups={self.groups} must divide in={self.in_channels} "
                f"and out={self.out_channels}"
            )

    @property
    def depthwise(self) -> bool:
        return self.groups == self.in_channels == self.out_channels

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        return ops.conv_output_hw(h, w, self.kernel, self.stride, self.padding)

    def weight_param_count(self) -> int:
        return (self.in_channels // self.groups) * self.out_channels * self.kernel**2

    def param_count(self) -> int:
        return self.weight_param_count() + (self.out_channels if self.has_bias else 0)


@dataclass
class BatchNormParams:
    """Per-channel affine normalization statistics (numpy view of a BN layer)."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float

    def __post_init__(self):
        c = self.gamma.shape[0]
        for name in ("beta", "running_mean", "running_var"):
            v = getattr(self, name)
            if v.shape != (c,):
                raise ShapeError(f"BatchNormParams: {name} shape {v.shape} != ({c},)")
        if np.any(self.running_var < 0):
            raise ConfigError("BatchNormParams: running_var must be >= 0 element-wise")
        if self.eps < 0:
            raise ConfigError(f"BatchNormParams: eps must be >= 0, got {self.eps}")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


# When set, called as observer(module, result) after every Module.__call__;
# the cost counter uses this to attribute work to named layers.
_FORWARD_OBSERVER = None


def set_forward_observer(fn) -> None:
    global _FORWARD_OBSERVER
    _FORWARD_OBSERVER = fn


class Module:
    """Base class: tracks parameters, buffers and child modules in order."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        if name not in self._buffers:
            raise ConfigError(f"unknown buffer {name!r} on {type(self).__name__}")
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    # -- traversal -----------------------------------------------------------
    def named_modules(self, prefix: str = ""):
        yield prefix, self
        for name, child in self._children.items():
            sub = f"{prefix}.{name}" if prefix else name
            yield from child.named_modules(sub)

    def modules(self):
        for _, m in self.named_modules():
            yield m

    def named_parameters(self, prefix: str = ""):
        for path, m in self.named_modules(prefix):
            for name, p in m._params.items():
                yield (f"{path}.{name}" if path else name), p

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def named_buffers(self, prefix: str = ""):
        for path, m in self.named_modules(prefix):
            for name, b in m._buffers.items():
                yield (f"{path}.{name}" if path else name), b

    def state_entries(self, prefix: str = ""):
        """Deterministic (name, array) walk: per module, params then buffers."""
        for path, m in self.named_modules(prefix):
            for name, p in m._params.items():
                yield (f"{path}.{name}" if path else name), p.data
            for name, b in m._buffers.items():
                yield (f"{path}.{name}" if path else name), b

    def train(self, mode: bool = True):
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def param_count(self) -> int:
        return sum(int(p.data.size) for p in self.parameters())

    # -- forward -------------------------------------------------------------
    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        out = self.forward(*args, **kwargs)
        if _FORWARD_OBSERVER is not None:
            _FORWARD_OBSERVER(self, out)
        return out

    def forward_taps(self, x):
        """Default tap surface: just the final output under the name 'out'."""
        out = self(x)
        return out, {"out": out}


class ModuleList(Module):
    def __init__(self, mods=()):
        super().__init__()
        self._list = []
        for m in mods:
            self.append(m)

    def append(self, m: Module):
        self._children[str(len(self._list))] = m
        self._list.append(m)
        return self

    def __iter__(self):
        return iter(self._list)

    def __len__(self):
        return len(self._list)

    def __getitem__(self, i):
        return self._list[i]


class Sequential(Module):
    def __init__(self, *mods):
        super().__init__()
        self.items = ModuleList(mods)

    def forward(self, x):
        for m in self.items:
            x = m(x)
        return x


class Identity(Module):
    def forward(self, x):
        return x


def kaiming_weight(rng: np.random.Generator, spec: ConvSpec, dtype) -> np.ndarray:
    fan_in = (spec.in_channels // spec.groups) * spec.kernel**2
    std = np.sqrt(2.0 / fan_in)
    shape = (spec.out_channels, spec.in_channels // spec.groups, spec.kernel, spec.kernel)
    return (rng.standard_normal(shape) * std).astype(dtype)


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        stride: int = 1,
        padding: int | None = None,
        groups: int = 1,
        bias: bool = False,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
        init_std: float | None = None,
    ):
        super().__init__()
        self.spec = ConvSpec(in_channels, out_channels, kernel, stride, padding, groups, bias)
        rng = rng or np.random.default_rng(0)
        if init_std is None:
            w = kaiming_weight(rng, self.spec, dtype)
        else:
            shape = (out_channels, in_channels // groups, kernel, kernel)
            w = (rng.standard_normal(shape) * init_std).astype(dtype)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = (
            Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True) if bias else None
        )

    def forward(self, x):
        s = self.spec
        if x.shape[1] != s.in_channels:
            raise ShapeError(
                f"Conv2d: input has {x.shape[1]} channels, layer expects {s.in_channels}"
            )
        return ops.conv2d(x, self.weight, self.bias, s.stride, s.padding, s.groups)


class BatchNorm2d(Module):
    def __init__(
        self,
        channels: int,
        eps: float = 1e-5,
        momentum: float = 0.1,
        dtype=np.float32,
    ):
        super().__init__()
        self.channels = channels
        self.eps = float(eps)
        self.momentum = float(momentum)
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x):
        if self.training:
            y, mu, var = ops.batchnorm_train(x, self.gamma, self.beta, self.eps)
            m = self.momentum
            self.running_mean *= 1.0 - m
            self.running_mean += m * mu.astype(self.running_mean.dtype)
            self.running_var *= 1.0 - m
            self.running_var += m * var.astype(self.running_var.dtype)
            return y
        return ops.batchnorm_infer(
            x, self.gamma, self.beta, self.running_mean, self.running_var, self.eps
        )

    def bn_params(self) -> BatchNormParams:
        return BatchNormParams(
            self.gamma.data, self.beta.data, self.running_mean, self.running_var, self.eps
        )


class ConvBN(Module):
    """Conv (no bias) followed by batch norm, optionally SiLU-activated."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        stride: int = 1,
        act: bool = True,
        groups: int = 1,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ):
        super().__init__()
        self.conv = Conv2d(
            in_channels, out_channels, kernel, stride, groups=groups, rng=rng, dtype=dtype
        )
        self.bn = BatchNorm2d(out_channels, dtype=dtype)
        self.act = act

    def forward(self, x):
        y = self.bn(self.conv(x))
        return ops.silu(y) if self.act else y
