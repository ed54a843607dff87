"""Alternating scaling iteration with pluggable initialization.

Two equivalent iterations are provided: the textbook linear-domain update
on the scaling vectors (u, v), and a log-domain variant on the potentials
(phi, psi) = (eps log u, eps log v) using max-shifted log-sum-exp
reductions.  The latter is the default for benchmarks because the kernel
exp(-C/eps) underflows entirely once C/eps exceeds ~745 (e.g. unit-square
squared distances at eps = 0.00025).

Progress is recorded at a fixed checkpoint cadence; the coupling matrix is
materialized only at checkpoints.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import NumericalFailure
from .measures import (
    CTransformDirection,
    Centering,
    DualPair,
    TransportPlan,
    c_transform,
    gibbs_kernel,
    mcv_arrays,
)

__all__ = [
    "SinkhornConfig",
    "SinkhornTrace",
    "sinkhorn_run",
    "scalings_to_potentials",
    "warm_start_vector",
    "relative_distance_error",
]


@dataclass(frozen=True)
class SinkhornConfig:
    """Knobs of one scaling run.

    ``stop_mcv`` is checked every ``check_every`` iterations; ``None`` runs
    to ``max_iters``.  ``clamp_lo``/``clamp_hi`` bound warm-start vectors
    built by :func:`warm_start_vector`.
    """

    eps: float
    max_iters: int = 1000
    check_every: int = 25
    stop_mcv: float | None = None
    domain: str = "log"
    clamp_lo: float = 1e-35
    clamp_hi: float = 1e35

    def __post_init__(self):
        if self.eps <= 0.0:
            raise ValueError("eps must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.check_every < 1:
            raise ValueError("check_every must be >= 1")
        if self.domain not in ("linear", "log"):
            raise ValueError(f"unknown domain {self.domain!r}")
        if not self.clamp_lo < self.clamp_hi:
            raise ValueError("clamp_lo must be < clamp_hi")


@dataclass(frozen=True)
class SinkhornTrace:
    """Checkpoint records plus the final state of one run.

    ``iterations[k]`` is a multiple of the checkpoint cadence (the last
    entry may be the final partial window).  ``u``/``v`` are the final
    scalings; in the log domain they are exp(potential/eps) and may
    overflow to inf at extreme eps - ``potentials`` is always finite.
    """

    iterations: np.ndarray
    mcv: np.ndarray
    primal_cost: np.ndarray
    wall_time_ns: np.ndarray
    u: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    potentials: DualPair = field(repr=False)
    plan: TransportPlan = field(repr=False)
    converged: bool
    config: SinkhornConfig


@njit(cache=True)
def _linear_window(K, mu, nu, u, v, iters):  # pragma: no cover - via sinkhorn_run
    """Run `iters` full (u, v) updates in place; returns the 0-based index
    of the first iteration that produced a non-finite scaling, or -1."""
    m, n = K.shape
    for it in range(iters):
        for i in range(m):
            s = 0.0
            for j in range(n):
                s += K[i, j] * v[j]
            # IEEE semantics: x/0 -> inf, flagged by the finiteness check
            u[i] = mu[i] / s if s != 0.0 else np.inf
        for j in range(n):
            s = 0.0
            for i in range(m):
                s += K[i, j] * u[i]
            v[j] = nu[j] / s if s != 0.0 else np.inf
        for i in range(m):
            if not np.isfinite(u[i]):
                return it
        for j in range(n):
            if not np.isfinite(v[j]):
                return it
    return -1


@njit(cache=True)
def _log_window(C, eps, log_mu, log_nu, phi, psi, iters):  # pragma: no cover
    """Run `iters` full (phi, psi) updates in place (log-domain)."""
    m, n = C.shape
    for it in range(iters):
        for i in range(m):
            mx = -np.inf
            for j in range(n):
                x = psi[j] - C[i, j]
                if x > mx:
                    mx = x
            s = 0.0
            for j in range(n):
                s += np.exp((psi[j] - C[i, j] - mx) / eps)
            phi[i] = eps * log_mu[i] - (mx + eps * np.log(s))
        for j in range(n):
            mx = -np.inf
            for i in range(m):
                x = phi[i] - C[i, j]
                if x > mx:
                    mx = x
            s = 0.0
            for i in range(m):
                s += np.exp((phi[i] - C[i, j] - mx) / eps)
            psi[j] = eps * log_nu[j] - (mx + eps * np.log(s))


def sinkhorn_run(mu, nu, cost, cfg, v0=None, extra_time_ns=0):
    """Alternating scaling updates from the initialization ``v0``.

    Parameters
    ----------
    mu, nu : DiscreteMeasure
        Strictly positive marginals (zero entries are rejected: the update
        divides by kernel-weighted sums).
    cost : CostMatrix
    cfg : SinkhornConfig
    v0 : array or None
        Strictly positive, finite starting vector; defaults to all ones.
        In the log domain it enters as psi0 = eps * log(v0).
    extra_time_ns : int
        Added to every checkpoint's wall time; used to charge warm-start
        construction to the run that benefits from it.

    Raises
    ------
    NumericalFailure
        If the linear-domain iteration produces NaN/Inf (carries the
        1-based iteration index; callers may retry with domain="log").
    """
    m, n = mu.dim, nu.dim
    if cost.shape != (m, n):
        raise ValueError("cost dimensions disagree with marginals")
    if not mu.strictly_positive or not nu.strictly_positive:
        raise ValueError("marginals must be strictly positive")
    if v0 is None:
        v0 = np.ones(n)
    v0 = np.ascontiguousarray(v0, dtype=np.float64)
    if v0.shape != (n,):
        raise ValueError(f"v0 must have length {n}")
    if not np.all(np.isfinite(v0)) or v0.min() <= 0.0:
        raise ValueError("v0 must be strictly positive and finite")

    eps = cfg.eps
    mu_w = mu.weights
    nu_w = nu.weights
    t0 = time.monotonic_ns()

    linear = cfg.domain == "linear"
    if linear:
        K = gibbs_kernel(cost, eps)
        u = np.ones(m)
        v = v0.copy()
    else:
        C = cost.entries
        log_mu = np.log(mu_w)
        log_nu = np.log(nu_w)
        phi = np.zeros(m)
        psi = eps * np.log(v0)

    iters_rec = []
    mcv_rec = []
    cost_rec = []
    time_rec = []
    done = 0
    converged = False
    plan_entries = None
    while done < cfg.max_iters:
        window = min(cfg.check_every, cfg.max_iters - done)
        if linear:
            bad = _linear_window(K, mu_w, nu_w, u, v, window)
            if bad >= 0:
                raise NumericalFailure(
                    "non-finite scaling in linear-domain iteration", done + bad + 1
                )
            plan_entries = u[:, None] * K * v[None, :]
        else:
            _log_window(C, eps, log_mu, log_nu, phi, psi, window)
            plan_entries = np.exp((phi[:, None] + psi[None, :] - C) / eps)
        done += window
        iters_rec.append(done)
        mcv_rec.append(mcv_arrays(plan_entries, mu_w, nu_w))
        cost_rec.append(float(np.sum(cost.entries * plan_entries)))
        time_rec.append(time.monotonic_ns() - t0 + extra_time_ns)
        if cfg.stop_mcv is not None and mcv_rec[-1] <= cfg.stop_mcv:
            converged = True
            break

    if linear:
        with np.errstate(divide="ignore"):
            f = eps * np.log(u)
            g = eps * np.log(v)
    else:
        f, g = phi, psi
        with np.errstate(over="ignore"):
            u = np.exp(phi / eps)
            v = np.exp(psi / eps)

    plan = TransportPlan(plan_entries, row_marginal_target=mu, col_marginal_target=nu)
    return SinkhornTrace(
        iterations=np.asarray(iters_rec, dtype=np.int64),
        mcv=np.asarray(mcv_rec),
        primal_cost=np.asarray(cost_rec),
        wall_time_ns=np.asarray(time_rec, dtype=np.int64),
        u=u,
        v=v,
        potentials=DualPair(f=f, g=g, centering=Centering.NONE),
        plan=plan,
        converged=converged,
        config=cfg,
    )


def scalings_to_potentials(u, v, eps):
    """Map scalings to potentials: f = eps log u, g = eps log v (no centering)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.size == 0 or v.size == 0 or u.min() <= 0.0 or v.min() <= 0.0:
        raise ValueError("scalings must be strictly positive")
    return DualPair(f=eps * np.log(u), g=eps * np.log(v), centering=Centering.NONE)


def warm_start_vector(f_pred, cost, cfg):
    """Starting vector from a predicted potential.

    The prediction is conjugated through the hard-minimum transform, then
    exponentiated and clamped into [clamp_lo, clamp_hi].  Exponents are
    range-checked first, so out-of-range entries land exactly on the clamp
    bounds without any intermediate overflow.
    """
    g = c_transform(f_pred, cost, CTransformDirection.ROWS_TO_COLS)
    x = g / cfg.eps
    lo_exp = np.log(cfg.clamp_lo)
    hi_exp = np.log(cfg.clamp_hi)
    v0 = np.empty_like(x)
    hi = x >= hi_exp
    lo = x <= lo_exp
    mid = ~(hi | lo)
    v0[hi] = cfg.clamp_hi
    v0[lo] = cfg.clamp_lo
    v0[mid] = np.exp(x[mid])
    return v0


def relative_distance_error(trace, exact_value):
    """Per-checkpoint |<C, plan> - exact| / exact."""
    if exact_value <= 0.0:
        raise ValueError("exact_value must be positive")
    return np.abs(trace.primal_cost - exact_value) / exact_value
