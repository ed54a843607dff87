"""Transport barycenters by gradient descent on dual potentials.

Each step solves (or predicts) the dual potential f_i of the current
iterate against every input measure, treats those potentials as fixed,
and moves the iterate down their sum - the classic envelope gradient of
sum_i W(mu', nu_i).  The iterate is kept on the probability simplex
either by Euclidean projection or by a softmax reparametrization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError
from .exact import solve_exact
from .measures import CTransformDirection, DiscreteMeasure, c_transform

__all__ = [
    "BarycenterConfig",
    "NoiseCancellationReport",
    "barycenter_descent",
    "noise_cancellation_check",
    "project_simplex",
]


@dataclass(frozen=True)
class BarycenterConfig:
    """Step size, iteration budget, and where potentials come from.

    ``source`` is "exact" (LP solves per step) or "approximator" (network
    predictions; inputs must then be strictly positive, its training
    domain).  ``stop_decrease`` ends the descent early once the objective
    improves by less than this amount; None runs all steps.
    """

    step_size: float
    max_steps: int
    source: str = "exact"
    simplex: str = "euclidean_project"
    stop_decrease: float | None = None

    def __post_init__(self):
        if self.step_size <= 0.0:
            raise ValueError("step_size must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.source not in ("exact", "approximator"):
            raise ValueError(f"unknown potential source {self.source!r}")
        if self.simplex not in ("euclidean_project", "softmax_reparam"):
            raise ValueError(f"unknown simplex handling {self.simplex!r}")


def project_simplex(v):
    """Euclidean projection onto the probability simplex (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    rho = np.nonzero(u + (1.0 - css) / np.arange(1, len(v) + 1) > 0.0)[0][-1]
    lam = (1.0 - css[rho]) / (rho + 1.0)
    return np.maximum(v + lam, 0.0)


def _potentials_for(mu_weights, nus, cost, cfg, approximator):
    """Per-input (f_i, g_i) for the current iterate, plus the objective."""
    fs = np.empty((len(nus), mu_weights.shape[0]))
    objective = 0.0
    geometry = nus[0].geometry
    if cfg.source == "exact":
        mu = DiscreteMeasure(mu_weights, geometry)
        for k, nu in enumerate(nus):
            sol = solve_exact(mu, nu, cost)
            fs[k] = sol.duals.f
            objective += float(
                np.sum(sol.duals.f * mu_weights) + np.sum(sol.duals.g * nu.weights)
            )
    else:
        for k, nu in enumerate(nus):
            f = approximator.predict_potential(mu_weights, nu.weights)
            g = c_transform(f, cost, CTransformDirection.ROWS_TO_COLS)
            fs[k] = f
            objective += float(np.sum(f * mu_weights) + np.sum(g * nu.weights))
    return fs, objective


def barycenter_descent(nus, cost, cfg, approximator=None, mu0=None):
    """Descend sum_i [<f_i, mu'> + <g_i, nu_i>] over the simplex.

    Potentials are recomputed from the current iterate every step and held
    fixed within it, so the descent direction is simply sum_i f_i.
    Returns the final measure and the per-step objective values (length =
    steps taken, evaluated before each update).

    Raises :class:`DivergenceError` after 10 consecutive objective
    increases - try a smaller step size.
    """
    if cfg.source == "approximator" and approximator is None:
        raise ValueError("source='approximator' needs an approximator")
    geometry = nus[0].geometry
    for nu in nus:
        if nu.geometry is not geometry and (
            nu.geometry.rows != geometry.rows or nu.geometry.cols != geometry.cols
        ):
            raise ValueError("all input measures must share one geometry")
        if cfg.source == "approximator" and not nu.strictly_positive:
            raise ValueError("approximator potentials need strictly positive inputs")
    n = geometry.size
    mu = np.full(n, 1.0 / n) if mu0 is None else mu0.weights.copy()

    softmax = cfg.simplex == "softmax_reparam"
    if softmax:
        logits = np.log(np.maximum(mu, 1e-300))

    objectives = []
    increases = 0
    for _ in range(cfg.max_steps):
        fs, objective = _potentials_for(mu, nus, cost, cfg, approximator)
        if objectives:
            if objective > objectives[-1]:
                increases += 1
                if increases >= 10:
                    raise DivergenceError(
                        "objective increased 10 steps in a row; reduce step_size"
                    )
            else:
                increases = 0
                if (
                    cfg.stop_decrease is not None
                    and objectives[-1] - objective < cfg.stop_decrease
                ):
                    objectives.append(objective)
                    break
        objectives.append(objective)
        grad = fs.sum(axis=0)
        if softmax:
            # chain rule through mu = softmax(logits)
            logits = logits - cfg.step_size * mu * (grad - float(np.dot(grad, mu)))
            e = np.exp(logits - logits.max())
            mu = e / e.sum()
        else:
            mu = project_simplex(mu - cfg.step_size * grad)
    return DiscreteMeasure(mu, geometry), np.asarray(objectives)


@dataclass(frozen=True)
class NoiseCancellationReport:
    """Monte-Carlo evidence that zero-mean potential noise integrates out."""

    baseline: float
    mean_deviation: float
    std_error: float
    trials: int

    def within(self, k_std_errors):
        return abs(self.mean_deviation) <= k_std_errors * self.std_error


def noise_cancellation_check(f, mu, noise_scale, trials, rng=None):
    """Estimate E[<f + sigma, mu>] - <f, mu> for i.i.d. zero-mean Gaussian sigma.

    The per-trial deviation is <sigma, mu>; the report carries its sample
    mean and standard error over ``trials`` draws.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    f = np.asarray(f, dtype=np.float64)
    baseline = float(np.sum(f * mu.weights))
    noise = rng.standard_normal((trials, f.shape[0])) * noise_scale
    deviations = noise @ mu.weights
    mean_dev = float(np.mean(deviations))
    if trials > 1:
        std_error = float(np.std(deviations, ddof=1) / np.sqrt(trials))
    else:
        std_error = 0.0
    return NoiseCancellationReport(
        baseline=baseline, mean_deviation=mean_dev, std_error=std_error, trials=trials
    )
