"""The measure-pair generator and the potential approximator.

The generator maps a Gaussian latent vector to a pair of strictly positive
probability vectors: each latent half is reshaped to a square image,
bilinearly upsampled to the output grid, rectified and scaled by ``lam``;
a single rectified linear layer of the full latent plus a positive
constant ``c`` is added, and each half is normalized to sum one.

The approximator is a three-layer fully connected network taking the
concatenated pair (2n inputs) to a predicted potential on the first
measure's side (n outputs); the first two layers carry ReLU activations
followed by batch normalization, the last layer neither.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .nn import BatchNormLayer, LinearLayer, ReluLayer, Sequential

__all__ = [
    "GeneratorConfig",
    "ApproximatorConfig",
    "Generator",
    "Approximator",
    "bilinear_interp_matrix",
    "spectral_rescale",
    "lipschitz_estimate",
    "pair_ratio_range",
]


def _square_side(size, what):
    side = int(round(np.sqrt(size)))
    if side * side != size:
        raise ValueError(f"{what} of size {size} is not a square image")
    return side


@dataclass(frozen=True)
class GeneratorConfig:
    """Shapes and constants of the generator.

    ``latent_dim`` splits into two halves, one per output measure; each
    half must be a square image so it can be upsampled to the (square)
    output grid of ``n`` cells.
    """

    latent_dim: int = 128
    n: int = 784
    lam: float = 0.3
    c: float = 1e-2

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise ValueError("lam must lie in (0, 1)")
        if self.c <= 0.0:
            raise ValueError("c must be positive")
        if self.latent_dim % 2 != 0:
            raise ValueError("latent_dim must be even")
        _square_side(self.latent_dim // 2, "latent half")
        _square_side(self.n, "output grid")

    @property
    def half_dim(self):
        return self.latent_dim // 2


@dataclass(frozen=True)
class ApproximatorConfig:
    """Width schedule 2n -> 6n -> 6n -> n for output dimension n."""

    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")

    @property
    def widths(self):
        return (2 * self.n, 6 * self.n, 6 * self.n, self.n)


def bilinear_interp_matrix(src_side, dst_side):
    """Dense matrix upsampling a src x src image to dst x dst, corner-aligned.

    Output pixel (i, j) samples the source at
    (i * (src-1)/(dst-1), j * (src-1)/(dst-1)) with bilinear weights; for
    src == dst this is exactly the identity.  A singleton output samples
    the source center.
    """
    if src_side < 1 or dst_side < 1:
        raise ValueError("image sides must be positive")

    def axis_weights(dst):
        # rows: output index; cols: (low index, high index, fraction)
        if dst == 1:
            pos = np.array([(src_side - 1) / 2.0])
        else:
            pos = np.arange(dst) * (src_side - 1) / (dst - 1)
        low = np.floor(pos).astype(np.int64)
        low = np.minimum(low, src_side - 2) if src_side > 1 else np.zeros_like(low)
        frac = pos - low
        return low, frac

    li, fi = axis_weights(dst_side)
    lj, fj = axis_weights(dst_side)
    T = np.zeros((dst_side * dst_side, src_side * src_side))
    for i in range(dst_side):
        for j in range(dst_side):
            r = i * dst_side + j
            i0, ti = li[i], fi[i]
            j0, tj = lj[j], fj[j]
            i1 = min(i0 + 1, src_side - 1)
            j1 = min(j0 + 1, src_side - 1)
            T[r, i0 * src_side + j0] += (1 - ti) * (1 - tj)
            T[r, i0 * src_side + j1] += (1 - ti) * tj
            T[r, i1 * src_side + j0] += ti * (1 - tj)
            T[r, i1 * src_side + j1] += ti * tj
    return T


class Generator:
    """Latent batch -> pair of strictly positive probability vectors."""

    def __init__(self, config, rng):
        self.config = config
        self.net = LinearLayer(config.latent_dim, 2 * config.n, rng)
        src = _square_side(config.half_dim, "latent half")
        dst = _square_side(config.n, "output grid")
        self._interp = bilinear_interp_matrix(src, dst)
        self._cache = None

    def raw_output(self, z):
        """Pre-normalization output: lam*relu(T z) + relu(W z + b) + c.

        Entries are >= c for any input, so normalization never divides by
        zero.  Also caches the linear layer's input for backward passes.
        """
        cfg = self.config
        if z.ndim != 2 or z.shape[1] != cfg.latent_dim:
            raise ValueError(f"latent batch must have {cfg.latent_dim} columns")
        half = cfg.half_dim
        skip = np.concatenate(
            [z[:, :half] @ self._interp.T, z[:, half:] @ self._interp.T], axis=1
        )
        skip_pos = np.maximum(skip, 0.0)
        net_pre = self.net.forward(z)
        net_pos = np.maximum(net_pre, 0.0)
        raw = cfg.lam * skip_pos + net_pos + cfg.c
        return raw, net_pre

    def forward(self, z):
        """Map latents (B, latent_dim) to measure-pair weights (B, n), (B, n)."""
        cfg = self.config
        raw, net_pre = self.raw_output(z)
        mu_raw = raw[:, : cfg.n]
        nu_raw = raw[:, cfg.n :]
        mu_sum = mu_raw.sum(axis=1, keepdims=True)
        nu_sum = nu_raw.sum(axis=1, keepdims=True)
        mu = mu_raw / mu_sum
        nu = nu_raw / nu_sum
        self._cache = (net_pre > 0.0, mu, nu, mu_sum, nu_sum)
        return mu, nu

    def backward_params(self, dmu, dnu):
        """Accumulate parameter gradients given gradients on the outputs.

        Only the linear layer carries parameters; the skip branch and the
        +c shift are parameter-free.  Gradients flow through the per-half
        normalization (quotient rule) and the net's ReLU mask.
        """
        if self._cache is None:
            raise RuntimeError("backward_params called without a cached forward pass")
        net_mask, mu, nu, mu_sum, nu_sum = self._cache
        # y = x / sum(x): dL/dx = (dL/dy - <dL/dy, y>) / sum(x)
        dmu_raw = (dmu - np.sum(dmu * mu, axis=1, keepdims=True)) / mu_sum
        dnu_raw = (dnu - np.sum(dnu * nu, axis=1, keepdims=True)) / nu_sum
        draw = np.concatenate([dmu_raw, dnu_raw], axis=1)
        self.net.backward(draw * net_mask)

    def params(self):
        return [(f"net.{name}", value, grad) for name, value, grad in self.net.params()]

    def zero_grad(self):
        for _, _, grad in self.params():
            grad[...] = 0.0

    def state_tensors(self):
        return {name: value for name, value, _ in self.params()}


class Approximator:
    """Concatenated measure pair -> predicted potential on the first side."""

    def __init__(self, config, rng):
        self.config = config
        d_in, d_h, _, d_out = config.widths
        self.stack = Sequential(
            [
                LinearLayer(d_in, d_h, rng),
                ReluLayer(),
                BatchNormLayer(d_h),
                LinearLayer(d_h, d_h, rng),
                ReluLayer(),
                BatchNormLayer(d_h),
                LinearLayer(d_h, d_out, rng),
            ]
        )

    def forward(self, mu, nu, train=False, update_running=True):
        mu = np.atleast_2d(mu)
        nu = np.atleast_2d(nu)
        if mu.shape[1] != self.config.n or nu.shape[1] != self.config.n:
            raise ValueError(f"expected measures of dimension {self.config.n}")
        x = np.concatenate([mu, nu], axis=1)
        return self.stack.forward(x, train=train, update_running=update_running)

    def backward(self, grad_out):
        """Backprop to the concatenated input; returns (dmu, dnu)."""
        grad_in = self.stack.backward(grad_out)
        return grad_in[:, : self.config.n], grad_in[:, self.config.n :]

    def predict_potential(self, mu_weights, nu_weights):
        """Eval-mode prediction for a single (mu, nu) pair, as a 1-D vector."""
        out = self.forward(mu_weights[None, :], nu_weights[None, :], train=False)
        return out[0]

    def params(self):
        return self.stack.params()

    def zero_grad(self):
        self.stack.zero_grad()

    def state_tensors(self):
        """All persistent arrays (trainable and running stats), by name."""
        out = {}
        for name, value, _ in self.stack.params():
            out[name] = value
        for idx, layer in enumerate(self.stack.layers):
            if isinstance(layer, BatchNormLayer):
                out[f"layers.{idx}.running_mean"] = layer.running_mean
                out[f"layers.{idx}.running_var"] = layer.running_var
        return out


def _power_iteration_sigma(weight, iters=100):
    """Largest singular value by power iteration on W^T W."""
    n = weight.shape[1]
    v = np.ones(n) / np.sqrt(n)
    for _ in range(iters):
        w = weight.T @ (weight @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
    return float(np.linalg.norm(weight @ v))


def spectral_rescale(layer, target, iters=100):
    """Copy of ``layer`` with its weight scaled so sigma_max <= target.

    Layers already below the target are returned unchanged (still copied).
    The bias is untouched.
    """
    if target <= 0.0:
        raise ValueError("target must be positive")
    out = copy.deepcopy(layer)
    sigma = _power_iteration_sigma(out.weight, iters)
    if sigma > target:
        out.weight *= target / sigma
    return out


def pair_ratio_range(fn, sampler, pairs, rng, batch=4096):
    """Min and max of ||fn(x) - fn(y)|| / ||x - y|| over sampled pairs.

    ``sampler(count, rng)`` must return a (count, dim) array; ``fn`` maps
    such batches to equally shaped batches.  Coincident pairs are skipped.
    The max is a lower bound on the true Lipschitz constant; the min is an
    upper bound on the best co-Lipschitz (expansion lower) constant.
    """
    if pairs < 1:
        raise ValueError("pairs must be >= 1")
    lo = np.inf
    hi = 0.0
    remaining = pairs
    while remaining > 0:
        count = min(batch, remaining)
        x = sampler(count, rng)
        y = sampler(count, rng)
        dx = np.linalg.norm(x - y, axis=1)
        keep = dx > 0.0
        if keep.any():
            df = np.linalg.norm(fn(x[keep]) - fn(y[keep]), axis=1)
            ratios = df / dx[keep]
            lo = min(lo, float(ratios.min()))
            hi = max(hi, float(ratios.max()))
        remaining -= count
    return lo, hi


def lipschitz_estimate(fn, sampler, pairs, rng):
    """Max sampled difference ratio: a lower bound on the Lipschitz constant."""
    return pair_ratio_range(fn, sampler, pairs, rng)[1]
