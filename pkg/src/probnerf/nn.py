"""Parameter containers and dense layers on top of :mod:`probnerf.autodiff`."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    """Collects ``Tensor`` parameters from attributes, recursing into sub-modules and lists."""

    def named_parameters(self, prefix=""):
        return {k: v for k, v in self.state_tensors(prefix).items() if v.requires_grad}

    def state_tensors(self, prefix=""):
        """Every tensor held by the module tree, learnable or not, keyed by dotted path."""
        out = {}
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            _collect(val, f"{prefix}{key}", out)
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def _collect(val, name, out):
    if isinstance(val, Tensor):
        out[name] = val
    elif isinstance(val, Module):
        out.update(val.state_tensors(prefix=name + "."))
    elif isinstance(val, (list, tuple)):
        for i, item in enumerate(val):
            _collect(item, f"{name}.{i}", out)


class Linear(Module):
    def __init__(self, n_in, n_out, rng, zero=False):
        bound = 1.0 / np.sqrt(n_in)
        w = np.zeros((n_in, n_out)) if zero else rng.uniform(-bound, bound, (n_in, n_out))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x):
        return x @ self.weight + self.bias


ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh, "leaky_relu": ad.leaky_relu,
               "softplus": ad.softplus}


class MLP(Module):
    """Dense stack with ``activation`` between layers and none after the last."""

    def __init__(self, widths, rng, activation="relu", zero_last=False):
        n = len(widths) - 1
        self.layers = [Linear(widths[i], widths[i + 1], rng, zero=zero_last and i == n - 1)
                       for i in range(n)]
        self._act = ACTIVATIONS[activation]

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = self._act(x)
        return x
