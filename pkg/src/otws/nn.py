"""Minimal dense network stack: linear layers, ReLU, batch norm, MSE, Adam.

Everything runs in double precision on plain (batch, features) numpy
arrays with hand-written reverse-mode gradients; see the test suite for
the finite-difference checks that pin them down.  Training is
single-threaded over minibatches so that a fixed seed reproduces
parameters bit for bit.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "LinearLayer",
    "ReluLayer",
    "BatchNormLayer",
    "Sequential",
    "Adam",
    "mse",
    "mse_grad",
    "set_debug",
]

_debug = False


def set_debug(flag):
    """Toggle the NaN/Inf guard applied after every layer forward."""
    global _debug
    _debug = bool(flag)


def _guard(name, x):
    if _debug and not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values after {name}")
    return x


class LinearLayer:
    """Affine map x -> x W^T + b with gradient buffers.

    Weights initialize uniformly in +-sqrt(1/fan_in); biases at zero.
    """

    def __init__(self, in_dim, out_dim, rng=None):
        bound = np.sqrt(1.0 / in_dim)
        if rng is None:
            self.weight = np.zeros((out_dim, in_dim))
        else:
            self.weight = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        self.bias = np.zeros(out_dim)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._input = None

    def forward(self, x, train=True):
        self._input = x
        return _guard("linear", x @ self.weight.T + self.bias)

    def backward(self, grad_out):
        if self._input is None:
            raise RuntimeError("backward called without a cached forward pass")
        self.grad_weight += grad_out.T @ self._input
        self.grad_bias += grad_out.sum(axis=0)
        return grad_out @ self.weight

    def params(self):
        return [("weight", self.weight, self.grad_weight), ("bias", self.bias, self.grad_bias)]


class ReluLayer:
    def __init__(self):
        self._mask = None

    def forward(self, x, train=True):
        self._mask = x > 0.0
        return x * self._mask

    def backward(self, grad_out):
        if self._mask is None:
            raise RuntimeError("backward called without a cached forward pass")
        # gradient is exactly zero wherever the pre-activation was <= 0
        return grad_out * self._mask

    def params(self):
        return []


class BatchNormLayer:
    """Per-feature batch normalization over the batch dimension.

    Train mode normalizes with biased batch statistics and updates the
    running estimates as (1 - momentum) * running + momentum * batch;
    eval mode uses the running estimates only.  Pass
    ``update_running=False`` to run a train-mode forward without touching
    model state (used when a training pass must leave the model as found).
    """

    def __init__(self, num_features, epsilon=1e-5, momentum=0.1):
        self.gamma = np.ones(num_features)
        self.beta = np.zeros(num_features)
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)
        self.epsilon = epsilon
        self.momentum = momentum
        self.grad_gamma = np.zeros_like(self.gamma)
        self.grad_beta = np.zeros_like(self.beta)
        self._cache = None

    def forward(self, x, train=True, update_running=True):
        if train:
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            inv_std = 1.0 / np.sqrt(var + self.epsilon)
            xhat = (x - mean) * inv_std
            if update_running:
                # in place so external references (checkpointing) stay valid
                self.running_mean *= 1.0 - self.momentum
                self.running_mean += self.momentum * mean
                self.running_var *= 1.0 - self.momentum
                self.running_var += self.momentum * var
            self._cache = (xhat, inv_std, x.shape[0])
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + self.epsilon)
            xhat = (x - self.running_mean) * inv_std
            self._cache = None
        return _guard("batchnorm", self.gamma * xhat + self.beta)

    def backward(self, grad_out):
        if self._cache is None:
            raise RuntimeError("backward requires a train-mode forward pass")
        xhat, inv_std, batch = self._cache
        self.grad_gamma += np.sum(grad_out * xhat, axis=0)
        self.grad_beta += np.sum(grad_out, axis=0)
        # backprop through the batch statistics
        dxhat = grad_out * self.gamma
        return (
            dxhat - dxhat.mean(axis=0) - xhat * np.mean(dxhat * xhat, axis=0)
        ) * inv_std

    def params(self):
        return [("gamma", self.gamma, self.grad_gamma), ("beta", self.beta, self.grad_beta)]


class Sequential:
    """A straight-line stack of layers with shared forward/backward plumbing."""

    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, train=True, update_running=True):
        for layer in self.layers:
            if isinstance(layer, BatchNormLayer):
                x = layer.forward(x, train=train, update_running=update_running)
            else:
                x = layer.forward(x, train=train)
        return x

    def backward(self, grad_out):
        for layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out

    def params(self):
        out = []
        for idx, layer in enumerate(self.layers):
            for name, value, grad in layer.params():
                out.append((f"layers.{idx}.{name}", value, grad))
        return out

    def zero_grad(self):
        for _, _, grad in self.params():
            grad[...] = 0.0


def mse(pred, target):
    """Mean of squared differences over every batch x feature entry."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    d = pred - target
    return float(np.sum(d * d) / d.size)


def mse_grad(pred, target):
    """Gradient of :func:`mse` with respect to ``pred``."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return 2.0 * (pred - target) / pred.size


def adam_step(value, grad, m, v, t, lr, beta1, beta2, eps):
    """One in-place Adam update on a single parameter array."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    value -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Adam with bias correction over a fixed list of (value, grad) pairs.

    ``step(lr, maximize=True)`` ascends instead of descending by negating
    the gradients fed to the moment updates.
    """

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self._params = [(value, grad) for _, value, grad in params]
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(value) for value, _ in self._params]
        self.v = [np.zeros_like(value) for value, _ in self._params]

    def step(self, lr, maximize=False):
        self.t += 1
        for k, (value, grad) in enumerate(self._params):
            g = -grad if maximize else grad
            adam_step(value, g, self.m[k], self.v[k], self.t, lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        for _, grad in self._params:
            grad[...] = 0.0
