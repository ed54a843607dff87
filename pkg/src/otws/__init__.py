"""Discrete optimal transport with learned scaling-iteration warm starts.

The package splits into:

- :mod:`otws.measures` - grids, probability vectors, costs, plans, duals,
  and the objectives/transforms connecting them;
- :mod:`otws.exact` - network-simplex solver with optimality certificates;
- :mod:`otws.sinkhorn` - the alternating scaling iteration (linear and
  log domain) with pluggable starting vectors;
- :mod:`otws.nn` / :mod:`otws.models` - a small dense network stack and
  the measure-pair generator / potential approximator built from it;
- :mod:`otws.train` - the adversarial training loop on exact targets;
- :mod:`otws.data` - dataset generation, image ingestion, serialization;
- :mod:`otws.barycenter` - dual-potential barycenter descent;
- :mod:`otws.bench` / :mod:`otws.cli` - benchmark harness and CLI.
"""

from .measures import (
    Centering,
    CostMatrix,
    CTransformDirection,
    DiscreteMeasure,
    DualPair,
    GridGeometry,
    TransportPlan,
    build_cost,
    c_transform,
    center_f_zero_sum,
    dual_value,
    entropic_dual_value,
    entropic_primal_objective,
    entropy,
    gibbs_kernel,
    marginal_constraint_violation,
    primal_cost,
)
from .exact import ExactSolution, solve_exact, verify_certificate
from .sinkhorn import (
    SinkhornConfig,
    SinkhornTrace,
    relative_distance_error,
    scalings_to_potentials,
    sinkhorn_run,
    warm_start_vector,
)

__version__ = "0.1.0"
