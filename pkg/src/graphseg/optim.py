"""Adam with the max-of-second-moment (AMSGrad) correction, parameter groups,
and the composed polynomial + stepwise learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import BatchNorm, Module, Parameter


@dataclass
class ParamGroup:
    params: list
    lr_scale: float = 1.0
    weight_decay: float = 0.0
    tag: str = ""


def build_param_groups(model: Module, weight_decay: float,
                       bias_lr_multiplier: float = 2.0) -> list[ParamGroup]:
    """Weights get decay; biases get a doubled rate and no decay; batch-norm
    parameters get neither."""
    norm_params = set()
    for _, mod in model.named_modules():
        if isinstance(mod, BatchNorm):
            norm_params.update(id(p) for p in (mod.gamma, mod.beta))
    weights, biases, norms = [], [], []
    for name, p in model.named_parameters():
        if id(p) in norm_params:
            norms.append(p)
        elif name.endswith(".bias"):
            biases.append(p)
        else:
            weights.append(p)
    return [
        ParamGroup(weights, 1.0, weight_decay, "weights"),
        ParamGroup(biases, bias_lr_multiplier, 0.0, "biases"),
        ParamGroup(norms, 1.0, 0.0, "norm"),
    ]


class Adam:
    """Adam; with ``amsgrad=True`` the denominator uses the running max of the
    second-moment estimate. Weight decay is classic L2 added to the gradient."""

    def __init__(self, groups: list[ParamGroup], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, amsgrad: bool = True):
        self.groups = groups
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.amsgrad = amsgrad
        self.step_count = 0
        self._m = {}
        self._v = {}
        self._vmax = {}
        for group in groups:
            for p in group.params:
                key = id(p)
                self._m[key] = np.zeros_like(p.data)
                self._v[key] = np.zeros_like(p.data)
                if amsgrad:
                    self._vmax[key] = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for group in self.groups:
            for p in group.params:
                p.grad = None

    def step(self, lr: float) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for group in self.groups:
            g_lr = lr * group.lr_scale
            for p in group.params:
                if p.grad is None:
                    continue
                grad = p.grad
                if group.weight_decay:
                    grad = grad + group.weight_decay * p.data
                key = id(p)
                m = self._m[key]
                v = self._v[key]
                m *= self.beta1
                m += (1.0 - self.beta1) * grad
                v *= self.beta2
                v += (1.0 - self.beta2) * grad * grad
                if self.amsgrad:
                    vmax = self._vmax[key]
                    np.maximum(vmax, v, out=vmax)
                    denom = np.sqrt(vmax / bc2) + self.eps
                else:
                    denom = np.sqrt(v / bc2) + self.eps
                p.data = p.data - (g_lr / bc1) * m / denom


@dataclass
class LearningRateSchedule:
    """lr(iter, epoch) = initial * (1 - iter/max_iter)^power * factor^(epoch // every)."""

    initial_lr: float
    poly_power: float = 0.9
    poly_max_iter: float = 1e8
    step_decay_factor: float = 0.85
    step_decay_epochs: int = 15

    def poly_factor(self, cur_iter: int) -> float:
        frac = min(float(cur_iter) / float(self.poly_max_iter), 1.0)
        return (1.0 - frac) ** self.poly_power

    def step_factor(self, epoch: int) -> float:
        return self.step_decay_factor ** (epoch // self.step_decay_epochs)

    def at(self, cur_iter: int, epoch: int) -> float:
        return self.initial_lr * self.poly_factor(cur_iter) * self.step_factor(epoch)
