"""Minimal layer abstractions on top of the tensor engine.

A ``Module`` tracks parameters and child modules through attribute assignment
order, which gives deterministic parameter iteration (and therefore
deterministic checkpoints and optimizer behaviour).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.requires_grad = True  # parameters stay trainable even under no_grad


class Module:
    def __init__(self):
        self.training = True
        self._buffers: dict[str, np.ndarray] = {}

    def register_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        self._buffers[name] = value
        return value

    # -- traversal -----------------------------------------------------------

    def named_modules(self, prefix: str = ""):
        yield prefix, self
        for name, value in vars(self).items():
            if isinstance(value, Module):
                child = f"{prefix}.{name}" if prefix else name
                yield from value.named_modules(child)

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            full = f"{prefix}.{name}" if prefix else name
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for mod_name, mod in self.named_modules(prefix):
            for name, value in mod._buffers.items():
                yield (f"{mod_name}.{name}" if mod_name else name), value

    def named_state(self, prefix: str = ""):
        """Parameters followed by buffers, as (name, numpy array) pairs."""
        for name, p in self.named_parameters(prefix):
            yield name, p.data
        yield from self.named_buffers(prefix)

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            if name not in state:
                raise KeyError(f"missing parameter {name!r} in state")
            if state[name].shape != p.data.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: have {p.data.shape}, got {state[name].shape}"
                )
            p.data = state[name].astype(p.data.dtype)
        for (name, buf) in self.named_buffers():
            if name in state:
                buf[...] = state[name].astype(buf.dtype)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self):
        for _, m in self.named_modules():
            m.training = True
        return self

    def eval(self):
        for _, m in self.named_modules():
            m.training = False
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        for i, m in enumerate(modules):
            setattr(self, str(i), m)

    def __iter__(self):
        i = 0
        while hasattr(self, str(i)):
            yield getattr(self, str(i))
            i += 1

    def __len__(self):
        return sum(1 for _ in self)


class Conv2d(Module):
    """2-D convolution with bias; He-normal initialized."""

    def __init__(self, in_channels, out_channels, kernel_size, stride=1,
                 padding=0, pad_mode="zeros", rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        fan_in = in_channels * kernel_size * kernel_size
        std = float(np.sqrt(2.0 / fan_in))
        self.weight = Parameter(
            rng.normal(0.0, std, size=(out_channels, in_channels, kernel_size, kernel_size))
        )
        self.bias = Parameter(np.zeros(out_channels))
        self.stride = stride
        self.padding = padding
        self.pad_mode = pad_mode

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.pad_mode)


class Linear(Module):
    """Dense layer x @ W + b; Xavier-uniform initialized."""

    def __init__(self, in_features, out_features, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        limit = float(np.sqrt(6.0 / (in_features + out_features)))
        self.weight = Parameter(rng.uniform(-limit, limit, size=(in_features, out_features)))
        self.bias = Parameter(np.zeros(out_features))

    def forward(self, x):
        return x @ self.weight + self.bias


class BatchNorm(Module):
    """Per-channel batch normalization with running statistics.

    ``channel_axis=1`` for (B, C, H, W) feature maps, ``channel_axis=-1`` for
    (…, features) node matrices. Batch variance is biased; running stats use
    the same convention.
    """

    def __init__(self, num_features, channel_axis=1, momentum=0.1, eps=1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(num_features))
        self.beta = Parameter(np.zeros(num_features))
        self.channel_axis = channel_axis
        self.momentum = momentum
        self.eps = eps
        self.running_mean = self.register_buffer(
            "running_mean", np.zeros(num_features, dtype=np.float64)
        )
        self.running_var = self.register_buffer(
            "running_var", np.ones(num_features, dtype=np.float64)
        )

    def forward(self, x):
        return T.batch_norm(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            training=self.training,
            channel_axis=self.channel_axis,
            momentum=self.momentum,
            eps=self.eps,
        )


def parameter_count(module: Module) -> int:
    """Total number of learnable scalar entries (buffers excluded)."""
    return int(sum(p.data.size for p in module.parameters()))
