"""Parameter containers and the few layer types the networks are built from."""

import math

import numpy as np

from . import ops
from .engine import Tensor


def xavier_uniform(shape, fan_in, fan_out, rng, dtype=np.float64):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    training = True

    def _members(self):
        for name, val in vars(self).items():
            if isinstance(val, (Tensor, Module)):
                yield name, val
            elif isinstance(val, (list, tuple)):
                for i, v in enumerate(val):
                    if isinstance(v, (Tensor, Module)):
                        yield f"{name}.{i}", v

    def named_parameters(self, prefix=""):
        for name, val in self._members():
            full = f"{prefix}{name}"
            if isinstance(val, Tensor):
                yield full, val
            else:
                yield from val.named_parameters(full + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, val in vars(self).items():
            if isinstance(val, np.ndarray):
                yield f"{prefix}{name}", val
        for name, val in self._members():
            if isinstance(val, Module):
                yield from val.named_buffers(f"{prefix}{name}.")

    def modules(self):
        yield self
        for _, val in self._members():
            if isinstance(val, Module):
                yield from val.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def state_dict(self):
        out = {name: p.data for name, p in self.named_parameters()}
        out.update(dict(self.named_buffers()))
        return out

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = (set(params) | set(bufs)) - set(state)
        if missing:
            raise KeyError(f"state is missing entries: {sorted(missing)[:5]}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)
        for name, b in bufs.items():
            b[...] = state[name]

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    def __init__(self, cin, cout, k, rng, dilation=1, groups=1, bias=True, dtype=np.float64):
        cg = cin // groups
        self.weight = Tensor(
            xavier_uniform((k, k, cg, cout), cg * k * k, cout * k * k, rng, dtype), requires_grad=True
        )
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True) if bias else None
        self.dilation = dilation
        self.groups = groups

    def forward(self, x, weight=None):
        y = ops.conv2d(x, self.weight if weight is None else weight, self.dilation, self.groups)
        return y if self.bias is None else y + self.bias


class Dense(Module):
    """Pointwise linear map on the last axis (a 1x1 convolution)."""

    def __init__(self, cin, cout, rng, bias=True, dtype=np.float64):
        self.weight = Tensor(xavier_uniform((cin, cout), cin, cout, rng, dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True) if bias else None

    def forward(self, x):
        lead = x.shape[:-1]
        y = ops.matmul(ops.reshape(x, (-1, x.shape[-1])), self.weight)
        y = ops.reshape(y, lead + (y.shape[-1],))
        return y if self.bias is None else y + self.bias


class BatchNorm(Module):
    def __init__(self, c, momentum=0.1, eps=1e-5, dtype=np.float64):
        self.gamma = Tensor(np.ones(c, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(c)
        self.running_var = np.ones(c)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        return ops.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )


class ConvBNReLU(Module):
    def __init__(self, cin, cout, k, rng, dilation=1, dtype=np.float64):
        # bias is absorbed by the BN shift
        self.conv = Conv2d(cin, cout, k, rng, dilation=dilation, bias=False, dtype=dtype)
        self.bn = BatchNorm(cout, dtype=dtype)

    def forward(self, x):
        return ops.relu(self.bn(self.conv(x)))


class DenseBNReLU(Module):
    def __init__(self, cin, cout, rng, dtype=np.float64):
        self.lin = Dense(cin, cout, rng, bias=False, dtype=dtype)
        self.bn = BatchNorm(cout, dtype=dtype)

    def forward(self, x):
        return ops.relu(self.bn(self.lin(x)))


def scaled(c, width):
    """Channel count ``c`` under a width multiplier (at least 1)."""
    return max(1, int(round(c * width)))
