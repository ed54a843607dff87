"""Core domain types and objectives of discrete optimal transport.

Measures live on rectangular grids embedded in the unit square; costs are
powers of the Euclidean distance between grid points.  All types are
immutable after construction and all operations are pure functions, so
everything here is safe to share across threads.

Index convention: grid point ``(i, j)`` of an ``r x c`` grid has flat index
``i * c + j`` (row-major) and coordinates ``(i/(r-1), j/(c-1))``; a singleton
row or column maps to 0.5.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

__all__ = [
    "GridGeometry",
    "DiscreteMeasure",
    "CostMatrix",
    "TransportPlan",
    "DualPair",
    "Centering",
    "CTransformDirection",
    "build_cost",
    "primal_cost",
    "dual_value",
    "entropy",
    "entropic_primal_objective",
    "gibbs_kernel",
    "entropic_dual_value",
    "c_transform",
    "marginal_constraint_violation",
    "center_f_zero_sum",
]

#: absolute tolerance for dual feasibility f_i + g_j <= C_ij
DUAL_FEAS_TOL = 1e-9

#: tolerance on probability-vector normalization
WEIGHT_SUM_TOL = 1e-12


def _as_readonly(arr, dtype=np.float64):
    out = np.ascontiguousarray(arr, dtype=dtype)
    out.flags.writeable = False
    return out


def _sumexp(x):
    """Sum of exp over all entries of ``x``, max-shifted.

    Exact (no log/exp round trip) whenever the max is zero, and immune to
    intermediate overflow otherwise: exp(max) may saturate to inf but the
    shifted terms never do.
    """
    m = np.max(x)
    if m == -np.inf:
        return 0.0
    with np.errstate(over="ignore"):
        return float(np.exp(m) * np.sum(np.exp(x - m)))


@dataclass(frozen=True)
class GridGeometry:
    """A rectangular grid of support points in the unit square.

    ``coordinates`` has shape ``(rows * cols, 2)`` in row-major point order;
    each row holds the ``(x, y)`` position of one grid point.
    """

    rows: int
    cols: int
    coordinates: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid dimensions must be positive")
        coords = _as_readonly(self.coordinates)
        if coords.shape != (self.rows * self.cols, 2):
            raise ValueError(
                f"expected {self.rows * self.cols} coordinate pairs, got {coords.shape}"
            )
        if coords.size and (coords.min() < 0.0 or coords.max() > 1.0):
            raise ValueError("coordinates must lie in the unit square")
        object.__setattr__(self, "coordinates", coords)

    @staticmethod
    def regular(rows, cols):
        """Evenly spaced ``rows x cols`` grid spanning [0, 1]^2."""
        xs = np.linspace(0.0, 1.0, rows) if rows > 1 else np.array([0.5])
        ys = np.linspace(0.0, 1.0, cols) if cols > 1 else np.array([0.5])
        coords = np.empty((rows * cols, 2))
        coords[:, 0] = np.repeat(xs, cols)
        coords[:, 1] = np.tile(ys, rows)
        return GridGeometry(rows, cols, coords)

    @property
    def size(self):
        return self.rows * self.cols


@dataclass(frozen=True)
class DiscreteMeasure:
    """A probability vector supported on a grid.

    Weights must be nonnegative and sum to one (within 1e-12).
    ``strictly_positive`` records whether every weight is > 0, which the
    scaling iteration requires of its inputs.
    """

    weights: np.ndarray = field(repr=False)
    geometry: GridGeometry

    def __post_init__(self):
        w = _as_readonly(self.weights)
        if w.ndim != 1 or w.shape[0] != self.geometry.size:
            raise ValueError(
                f"weight vector of length {w.shape} does not match grid size {self.geometry.size}"
            )
        if w.size == 0 or w.min() < 0.0:
            raise ValueError("weights must be nonnegative")
        total = float(np.sum(w))
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights must sum to 1, got {total!r}")
        object.__setattr__(self, "weights", w)

    @property
    def strictly_positive(self):
        return bool(self.weights.min() > 0.0)

    @property
    def dim(self):
        return self.weights.shape[0]


@dataclass(frozen=True)
class CostMatrix:
    """Ground cost between two grids; entries are ||x_i - y_j||^metric_power."""

    entries: np.ndarray = field(repr=False)
    metric_power: float = 2.0

    def __post_init__(self):
        c = _as_readonly(self.entries)
        if c.ndim != 2:
            raise ValueError("cost matrix must be 2-D")
        if c.size == 0:
            raise ValueError("cost matrix must be nonempty")
        if c.min() < 0.0:
            raise ValueError("cost entries must be nonnegative")
        if self.metric_power < 1.0:
            raise ValueError("metric_power must be >= 1")
        object.__setattr__(self, "entries", c)

    @property
    def shape(self):
        return self.entries.shape


@dataclass(frozen=True)
class TransportPlan:
    """A nonnegative coupling with its target marginals attached."""

    entries: np.ndarray = field(repr=False)
    row_marginal_target: DiscreteMeasure
    col_marginal_target: DiscreteMeasure

    def __post_init__(self):
        p = _as_readonly(self.entries)
        m, n = self.row_marginal_target.dim, self.col_marginal_target.dim
        if p.shape != (m, n):
            raise ValueError(f"plan shape {p.shape} does not match marginals ({m}, {n})")
        if p.min() < 0.0:
            raise ValueError("plan entries must be nonnegative")
        object.__setattr__(self, "entries", p)

    def row_marginal(self):
        return np.sum(self.entries, axis=1)

    def col_marginal(self):
        return np.sum(self.entries, axis=0)

    def feasible(self, tol):
        """True iff both marginals match their targets within ``tol`` in l1."""
        row_err = float(np.sum(np.abs(self.row_marginal() - self.row_marginal_target.weights)))
        col_err = float(np.sum(np.abs(self.col_marginal() - self.col_marginal_target.weights)))
        return row_err <= tol and col_err <= tol


class Centering(Enum):
    NONE = "none"
    F_ZERO_SUM = "f_zero_sum"


@dataclass(frozen=True)
class DualPair:
    """Dual potentials (f, g) with their centering convention."""

    f: np.ndarray = field(repr=False)
    g: np.ndarray = field(repr=False)
    centering: Centering = Centering.NONE

    def __post_init__(self):
        f = _as_readonly(self.f)
        g = _as_readonly(self.g)
        if f.ndim != 1 or g.ndim != 1:
            raise ValueError("potentials must be vectors")
        if self.centering is Centering.F_ZERO_SUM and abs(float(np.sum(f))) > DUAL_FEAS_TOL:
            raise ValueError("f declared zero-sum but does not sum to 0")
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "g", g)

    def feasible(self, cost):
        """True iff f_i + g_j <= C_ij everywhere (within the fixed tolerance)."""
        slack = cost.entries - self.f[:, None] - self.g[None, :]
        return bool(slack.min() >= -DUAL_FEAS_TOL)


class CTransformDirection(Enum):
    ROWS_TO_COLS = "rows_to_cols"
    COLS_TO_ROWS = "cols_to_rows"


def build_cost(geom_a, geom_b, power=2.0):
    """Cost matrix C_ij = ||x_i - y_j||^power between two grids.

    Parameters
    ----------
    geom_a, geom_b : GridGeometry
        Row-indexed and column-indexed supports (row-major point order).
    power : float
        Exponent applied to the Euclidean distance; must be >= 1.
    """
    if geom_a.size == 0 or geom_b.size == 0:
        raise ValueError("geometries must be nonempty")
    if power < 1.0:
        raise ValueError("power must be >= 1")
    diff = geom_a.coordinates[:, None, :] - geom_b.coordinates[None, :, :]
    sq = np.sum(diff * diff, axis=2)
    if power == 2.0:
        entries = sq
    else:
        entries = np.sqrt(sq) ** power
    return CostMatrix(entries, metric_power=float(power))


def primal_cost(plan, cost):
    """Transport cost <C, Gamma> of a plan."""
    if plan.entries.shape != cost.entries.shape:
        raise ValueError("plan and cost dimensions disagree")
    return float(np.sum(cost.entries * plan.entries))


def dual_value(duals, mu, nu):
    """Dual objective <f, mu> + <g, nu>; feasibility is the caller's concern."""
    if duals.f.shape[0] != mu.dim or duals.g.shape[0] != nu.dim:
        raise ValueError("potential and measure dimensions disagree")
    return float(np.sum(duals.f * mu.weights) + np.sum(duals.g * nu.weights))


def entropy(p):
    """Matrix entropy -sum p_ij (log p_ij - 1), with 0 log 0 = 0.

    Returns ``-inf`` if any entry is negative.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.size and p.min() < 0.0:
        return float("-inf")
    pos = p > 0.0
    terms = np.zeros_like(p)
    terms[pos] = p[pos] * (np.log(p[pos]) - 1.0)
    return float(-np.sum(terms))


def entropic_primal_objective(plan, cost, eps):
    """<C, Gamma> - eps * H(Gamma)."""
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    return primal_cost(plan, cost) - eps * entropy(plan.entries)


def gibbs_kernel(cost, eps):
    """Elementwise exp(-C/eps).

    Entries may underflow to exactly 0.0 in double precision when
    ``C_ij / eps`` exceeds ~745; the scaling iteration offers a log-domain
    path for that regime.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    return np.exp(-cost.entries / eps)


def entropic_dual_value(duals, mu, nu, cost, eps):
    """Unconstrained entropic dual objective at (f, g).

    Evaluates ``<f,mu> + <g,nu> - eps * sum_ij exp((f_i + g_j - C_ij)/eps)``.
    The bilinear term is reduced in log domain (max-shifted log-sum-exp over
    ``f_i + g_j - C_ij``) so it neither overflows nor underflows for any
    feasible pair.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    if duals.f.shape[0] != mu.dim or duals.g.shape[0] != nu.dim:
        raise ValueError("potential and measure dimensions disagree")
    if cost.shape != (mu.dim, nu.dim):
        raise ValueError("cost dimensions disagree")
    linear = np.sum(duals.f * mu.weights) + np.sum(duals.g * nu.weights)
    exponents = (duals.f[:, None] + duals.g[None, :] - cost.entries) / eps
    return float(linear - eps * _sumexp(exponents))


def c_transform(f, cost, direction=CTransformDirection.ROWS_TO_COLS):
    """Hard-minimum conjugate of a potential under the cost.

    ``rows_to_cols`` maps an m-vector f to the n-vector ``g_j = min_i C_ij - f_i``;
    ``cols_to_rows`` maps an n-vector g to ``f_i = min_j C_ij - g_j``.
    Ties need no resolution: only the minimum value is used.
    """
    f = np.asarray(f, dtype=np.float64)
    m, n = cost.shape
    if direction is CTransformDirection.ROWS_TO_COLS:
        if f.shape != (m,):
            raise ValueError(f"expected potential of length {m}, got {f.shape}")
        return np.min(cost.entries - f[:, None], axis=0)
    if f.shape != (n,):
        raise ValueError(f"expected potential of length {n}, got {f.shape}")
    return np.min(cost.entries - f[None, :], axis=1)


def marginal_constraint_violation(plan):
    """Average l1 distance of the plan's marginals from their targets."""
    row_err = np.sum(np.abs(plan.row_marginal() - plan.row_marginal_target.weights))
    col_err = np.sum(np.abs(plan.col_marginal() - plan.col_marginal_target.weights))
    return float((row_err + col_err) / 2.0)


def mcv_arrays(plan_entries, mu_weights, nu_weights):
    """marginal_constraint_violation on raw arrays (hot loops, no wrapping)."""
    row_err = np.sum(np.abs(np.sum(plan_entries, axis=1) - mu_weights))
    col_err = np.sum(np.abs(np.sum(plan_entries, axis=0) - nu_weights))
    return float((row_err + col_err) / 2.0)


def center_f_zero_sum(duals):
    """Shift f to zero sum, leaving g untouched.

    Used on training targets where only f is learned; because g is not
    compensated, the dual value is generally not preserved.
    """
    f = duals.f - np.mean(duals.f)
    return DualPair(f=f, g=duals.g, centering=Centering.F_ZERO_SUM)
