import numpy as np
import pytest

from otws.errors import NumericalFailure
from otws.exact import solve_exact
from otws.measures import (
    CostMatrix,
    DiscreteMeasure,
    GridGeometry,
    build_cost,
    entropic_dual_value,
    gibbs_kernel,
    marginal_constraint_violation,
)
from otws.sinkhorn import (
    SinkhornConfig,
    relative_distance_error,
    scalings_to_potentials,
    sinkhorn_run,
    warm_start_vector,
)


def measure(weights):
    weights = np.asarray(weights, dtype=np.float64)
    return DiscreteMeasure(weights, GridGeometry.regular(1, weights.size))


def random_pair(rng, n):
    a = rng.random(n) + 0.05
    b = rng.random(n) + 0.05
    return measure(a / a.sum()), measure(b / b.sum())


def grid_cost(side):
    g = GridGeometry.regular(side, side)
    return build_cost(g, g, 2.0)


# ---------------------------------------------------------------- basic runs


def test_single_point_converges_in_one_iteration():
    mu = measure([1.0])
    cfg = SinkhornConfig(eps=0.3, max_iters=1, check_every=25, domain="linear")
    tr = sinkhorn_run(mu, mu, CostMatrix(np.array([[0.7]])), cfg, v0=np.array([1.0]))
    assert tr.iterations.tolist() == [1]
    assert np.allclose(tr.plan.entries, [[1.0]], atol=1e-15)
    assert tr.mcv[0] <= 1e-15


def test_constant_cost_gives_product_plan_in_one_iteration():
    rng = np.random.default_rng(1)
    mu, nu = random_pair(rng, 6)
    c = CostMatrix(np.full((6, 6), 0.8))
    for domain in ("linear", "log"):
        cfg = SinkhornConfig(eps=0.1, max_iters=1, check_every=25, domain=domain)
        tr = sinkhorn_run(mu, nu, c, cfg)
        assert np.allclose(tr.plan.entries, np.outer(mu.weights, nu.weights), atol=1e-12)


def test_matches_long_run_fixed_point():
    rng = np.random.default_rng(2)
    mu, nu = random_pair(rng, 8)
    c = CostMatrix(rng.random((8, 8)))
    cfg = SinkhornConfig(eps=0.05, max_iters=20_000, check_every=100, stop_mcv=1e-13)
    tr = sinkhorn_run(mu, nu, c, cfg)
    # reference: a much longer run from scratch
    ref_cfg = SinkhornConfig(eps=0.05, max_iters=1_000_000, check_every=10_000, stop_mcv=1e-15)
    ref = sinkhorn_run(mu, nu, c, ref_cfg)
    assert np.abs(tr.plan.entries - ref.plan.entries).max() <= 1e-10


# ---------------------------------------------------------------- trace contract


def test_checkpoint_iterations_are_cadence_multiples_plus_final():
    rng = np.random.default_rng(3)
    mu, nu = random_pair(rng, 5)
    c = CostMatrix(rng.random((5, 5)))
    cfg = SinkhornConfig(eps=0.1, max_iters=110, check_every=25)
    tr = sinkhorn_run(mu, nu, c, cfg)
    assert tr.iterations.tolist() == [25, 50, 75, 100, 110]
    assert not tr.converged


def test_wall_time_offset_is_added():
    rng = np.random.default_rng(4)
    mu, nu = random_pair(rng, 4)
    c = CostMatrix(rng.random((4, 4)))
    cfg = SinkhornConfig(eps=0.1, max_iters=25, check_every=25)
    tr = sinkhorn_run(mu, nu, c, cfg, extra_time_ns=10**12)
    assert tr.wall_time_ns[0] >= 10**12


def test_column_marginal_exact_after_full_update():
    rng = np.random.default_rng(5)
    mu, nu = random_pair(rng, 7)
    c = CostMatrix(rng.random((7, 7)))
    cfg = SinkhornConfig(eps=0.05, max_iters=50, check_every=25, domain="log")
    tr = sinkhorn_run(mu, nu, c, cfg)
    col = tr.plan.entries.sum(axis=0)
    assert np.abs(col - nu.weights).max() <= 1e-10


def test_mcv_nonincreasing_at_moderate_eps():
    rng = np.random.default_rng(6)
    for _ in range(5):
        mu, nu = random_pair(rng, 9)
        c = CostMatrix(rng.random((9, 9)))
        cfg = SinkhornConfig(eps=0.05, max_iters=500, check_every=25, domain="log")
        tr = sinkhorn_run(mu, nu, c, cfg)
        assert np.all(np.diff(tr.mcv) <= 1e-12)


def test_linear_and_log_domains_agree():
    rng = np.random.default_rng(7)
    for _ in range(5):
        mu, nu = random_pair(rng, 8)
        c = CostMatrix(rng.random((8, 8)))
        plans = {}
        for domain in ("linear", "log"):
            cfg = SinkhornConfig(eps=0.05, max_iters=100, check_every=25, domain=domain)
            plans[domain] = sinkhorn_run(mu, nu, c, cfg).plan.entries
        assert np.abs(plans["linear"] - plans["log"]).max() <= 1e-8


def test_plan_is_diag_u_K_diag_v():
    rng = np.random.default_rng(8)
    mu, nu = random_pair(rng, 6)
    c = CostMatrix(rng.random((6, 6)))
    for domain in ("linear", "log"):
        cfg = SinkhornConfig(eps=0.2, max_iters=75, check_every=25, domain=domain)
        tr = sinkhorn_run(mu, nu, c, cfg)
        K = gibbs_kernel(c, 0.2)
        rebuilt = tr.u[:, None] * K * tr.v[None, :]
        assert np.abs(tr.plan.entries - rebuilt).max() <= 1e-12


def test_warm_start_from_converged_scalings_is_a_fixed_point():
    rng = np.random.default_rng(9)
    mu, nu = random_pair(rng, 8)
    c = CostMatrix(rng.random((8, 8)))
    cfg = SinkhornConfig(eps=0.05, max_iters=100_000, check_every=100, stop_mcv=1e-13)
    tr = sinkhorn_run(mu, nu, c, cfg)
    v0 = np.exp(tr.potentials.g / 0.05)
    cfg2 = SinkhornConfig(eps=0.05, max_iters=10_000, check_every=25, stop_mcv=1e-9)
    tr2 = sinkhorn_run(mu, nu, c, cfg2, v0=v0)
    assert tr2.converged and tr2.iterations[0] == 25
    assert tr2.mcv[0] <= 1e-9


# ---------------------------------------------------------------- potentials / warm start


def test_scalings_to_potentials_examples():
    duals = scalings_to_potentials(np.ones(3), np.ones(4), 0.5)
    assert np.all(duals.f == 0.0) and np.all(duals.g == 0.0)
    duals = scalings_to_potentials(np.full(3, np.e), np.ones(3), 1.0)
    assert np.allclose(duals.f, 1.0, atol=1e-15)
    rng = np.random.default_rng(10)
    u = rng.random(5) + 0.1
    v = rng.random(5) + 0.1
    duals = scalings_to_potentials(u, v, 0.25)
    assert np.allclose(np.exp(duals.f / 0.25), u, rtol=1e-12)
    assert np.allclose(np.exp(duals.g / 0.25), v, rtol=1e-12)
    with pytest.raises(ValueError):
        scalings_to_potentials(np.array([1.0, 0.0]), np.ones(2), 0.5)


def test_warm_start_zero_prediction_recovers_ones():
    c = CostMatrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    cfg = SinkhornConfig(eps=0.5, max_iters=10)
    v0 = warm_start_vector(np.zeros(2), c, cfg)
    assert np.array_equal(v0, np.ones(2))


def test_warm_start_clamps_exactly():
    # conjugate of f = -25*1 under a zero-diagonal cost is +25; at
    # eps = 0.00025 the exponent is 1e5, far beyond the upper clamp
    c = CostMatrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    cfg = SinkhornConfig(eps=0.00025, max_iters=10)
    v0 = warm_start_vector(np.full(2, -25.0), c, cfg)
    assert np.all(v0 == 1e35)
    v0 = warm_start_vector(np.full(2, 25.0), c, cfg)
    assert np.all(v0 == 1e-35)


def test_warm_start_feeds_log_domain_at_tiny_eps():
    rng = np.random.default_rng(11)
    mu, nu = random_pair(rng, 16)
    c = grid_cost(4)
    sol = solve_exact(mu, nu, c)
    cfg = SinkhornConfig(eps=0.00025, max_iters=200, check_every=25, domain="log")
    v0 = warm_start_vector(sol.duals.f, c, cfg)
    tr = sinkhorn_run(mu, nu, c, cfg, v0=v0)
    assert np.all(np.isfinite(tr.mcv))


def test_proposition_bracket_via_warm_start_potentials():
    # the exact duals' entropic value sits within m*n*eps below the
    # converged optimum, and never above it
    rng = np.random.default_rng(12)
    n = 8
    mu, nu = random_pair(rng, n)
    c = CostMatrix(rng.random((n, n)))
    sol = solve_exact(mu, nu, c)
    for eps in (0.1, 0.01):
        cfg = SinkhornConfig(eps=eps, max_iters=500_000, check_every=500, stop_mcv=1e-12)
        tr = sinkhorn_run(mu, nu, c, cfg)
        opt = entropic_dual_value(tr.potentials, mu, nu, c, eps)
        at_exact = entropic_dual_value(sol.duals, mu, nu, c, eps)
        assert 0.0 <= opt - at_exact <= n * n * eps


# ---------------------------------------------------------------- relative error


def test_relative_distance_error_values():
    rng = np.random.default_rng(13)
    mu, nu = random_pair(rng, 5)
    c = CostMatrix(rng.random((5, 5)))
    cfg = SinkhornConfig(eps=0.05, max_iters=50, check_every=25)
    tr = sinkhorn_run(mu, nu, c, cfg)
    exact = float(tr.primal_cost[-1])
    err = relative_distance_error(tr, exact)
    assert err[-1] == 0.0
    err2 = relative_distance_error(tr, exact / 2.0)
    assert err2[-1] == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        relative_distance_error(tr, 0.0)


def test_relative_error_trend_on_solved_instance():
    rng = np.random.default_rng(14)
    mu, nu = random_pair(rng, 8)
    c = CostMatrix(rng.random((8, 8)))
    sol = solve_exact(mu, nu, c)
    cfg = SinkhornConfig(eps=0.01, max_iters=2000, check_every=25, domain="log")
    tr = sinkhorn_run(mu, nu, c, cfg)
    err = relative_distance_error(tr, sol.primal_value)
    # fixed-seed regression: the error decreases monotonically until it
    # enters the entropic-bias plateau (it never vanishes: the plan
    # converges to the regularized optimum, not the LP one)
    plateau = err[-1]
    k = int(np.argmax(err <= 2 * plateau))
    assert k > 3
    assert np.all(np.diff(err[: k + 1]) <= 1e-12)
    assert plateau < err[0] / 100


# ---------------------------------------------------------------- failure modes


def test_linear_domain_fails_loudly_at_tiny_eps():
    # a strictly positive cost underflows the whole kernel at this eps,
    # so the first linear-domain update divides by zero
    rng = np.random.default_rng(15)
    mu, nu = random_pair(rng, 16)
    c = CostMatrix(rng.random((16, 16)) + 0.5)
    cfg = SinkhornConfig(eps=0.00025, max_iters=100, check_every=25, domain="linear")
    with pytest.raises(NumericalFailure) as exc_info:
        sinkhorn_run(mu, nu, c, cfg)
    assert exc_info.value.iteration == 1
    # the log domain handles the same instance
    cfg_log = SinkhornConfig(eps=0.00025, max_iters=100, check_every=25, domain="log")
    tr = sinkhorn_run(mu, nu, c, cfg_log)
    assert np.all(np.isfinite(tr.mcv))


def test_zero_marginal_rejected():
    mu = measure([0.5, 0.5, 0.0])
    nu = measure([0.4, 0.3, 0.3])
    c = CostMatrix(np.ones((3, 3)))
    cfg = SinkhornConfig(eps=0.1, max_iters=10)
    with pytest.raises(ValueError):
        sinkhorn_run(mu, nu, c, cfg)


def test_bad_v0_rejected():
    mu = measure([0.5, 0.5])
    c = CostMatrix(np.ones((2, 2)))
    cfg = SinkhornConfig(eps=0.1, max_iters=10)
    with pytest.raises(ValueError):
        sinkhorn_run(mu, mu, c, cfg, v0=np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        sinkhorn_run(mu, mu, c, cfg, v0=np.array([1.0, np.inf]))


def test_config_validation():
    with pytest.raises(ValueError):
        SinkhornConfig(eps=0.0, max_iters=10)
    with pytest.raises(ValueError):
        SinkhornConfig(eps=0.1, max_iters=0)
    with pytest.raises(ValueError):
        SinkhornConfig(eps=0.1, max_iters=10, domain="quantum")
    with pytest.raises(ValueError):
        SinkhornConfig(eps=0.1, max_iters=10, clamp_lo=1.0, clamp_hi=0.5)
