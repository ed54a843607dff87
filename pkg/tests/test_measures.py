import numpy as np
import pytest

from otws.measures import (
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


def measure(weights, geometry=None):
    weights = np.asarray(weights, dtype=np.float64)
    if geometry is None:
        geometry = GridGeometry.regular(1, weights.size)
    return DiscreteMeasure(weights, geometry)


def random_pair(rng, m, n):
    a = rng.random(m) + 0.05
    b = rng.random(n) + 0.05
    return measure(a / a.sum()), measure(b / b.sum())


# ---------------------------------------------------------------- geometry


def test_grid_coordinates_span_unit_square():
    g = GridGeometry.regular(3, 5)
    assert g.size == 15
    assert g.coordinates.min() == 0.0 and g.coordinates.max() == 1.0
    # row-major: flat index i*cols + j
    assert np.allclose(g.coordinates[7], [0.5, 0.5])


def test_singleton_grid_centers():
    g = GridGeometry.regular(1, 1)
    assert np.allclose(g.coordinates, [[0.5, 0.5]])


def test_measure_invariants():
    g = GridGeometry.regular(2, 2)
    m = DiscreteMeasure(np.array([0.25, 0.25, 0.25, 0.25]), g)
    assert m.strictly_positive
    m2 = DiscreteMeasure(np.array([0.5, 0.5, 0.0, 0.0]), g)
    assert not m2.strictly_positive
    with pytest.raises(ValueError):
        DiscreteMeasure(np.array([0.5, 0.6, 0.0, 0.0]), g)
    with pytest.raises(ValueError):
        DiscreteMeasure(np.array([1.5, -0.5, 0.0, 0.0]), g)


# ---------------------------------------------------------------- build_cost


def test_build_cost_2x2_squared_euclidean():
    g = GridGeometry.regular(2, 2)
    c = build_cost(g, g, 2.0)
    # corners of the unit square: opposite corners at squared distance 2
    assert c.entries[0, 3] == 2.0
    assert np.all(np.diag(c.entries) == 0.0)
    assert np.array_equal(c.entries, c.entries.T)


def test_build_cost_single_points():
    c = build_cost(GridGeometry.regular(1, 1), GridGeometry.regular(1, 1), 2.0)
    assert c.entries.shape == (1, 1) and c.entries[0, 0] == 0.0


def test_build_cost_28x28_max_at_opposite_corners():
    g = GridGeometry.regular(28, 28)
    c = build_cost(g, g, 2.0)
    # oracle: exhaustive max over all 784^2 pairs
    flat = c.entries.ravel()
    assert flat.max() == 2.0
    where = np.argwhere(c.entries == 2.0)
    corners = {0, 27, 27 * 28, 27 * 28 + 27}
    assert all(i in corners and j in corners for i, j in where)


def test_build_cost_power_one_is_plain_distance():
    g = GridGeometry.regular(2, 2)
    c = build_cost(g, g, 1.0)
    assert c.entries[0, 3] == pytest.approx(np.sqrt(2.0), abs=1e-15)


def test_build_cost_errors():
    g = GridGeometry.regular(2, 2)
    with pytest.raises(ValueError):
        build_cost(g, g, 0.5)
    with pytest.raises(ValueError):
        GridGeometry(0, 2, np.zeros((0, 2)))


# ---------------------------------------------------------------- primal objective


def test_primal_cost_identity_coupling_zero():
    g = GridGeometry.regular(2, 2)
    c = build_cost(g, g, 2.0)
    mu = measure([0.1, 0.2, 0.3, 0.4], g)
    plan = TransportPlan(np.diag(mu.weights), mu, mu)
    assert primal_cost(plan, c) == 0.0


def test_primal_cost_unique_plan():
    mu = measure([1.0, 0.0])
    nu = measure([0.0, 1.0])
    c = CostMatrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    plan = TransportPlan(np.array([[0.0, 1.0], [0.0, 0.0]]), mu, nu)
    assert primal_cost(plan, c) == 1.0


def test_primal_cost_matches_scalar_loop():
    rng = np.random.default_rng(3)
    p = rng.random((3, 3))
    p /= p.sum()
    mu = measure(p.sum(axis=1))
    nu = measure(p.sum(axis=0))
    c = CostMatrix(rng.random((3, 3)))
    plan = TransportPlan(p, mu, nu)
    expected = sum(c.entries[i, j] * p[i, j] for i in range(3) for j in range(3))
    assert primal_cost(plan, c) == pytest.approx(expected, abs=1e-15)


def test_primal_cost_dimension_mismatch():
    mu = measure([1.0, 0.0])
    nu = measure([0.0, 1.0])
    plan = TransportPlan(np.zeros((2, 2)) + np.array([[0, 1], [0, 0]]), mu, nu)
    with pytest.raises(ValueError):
        primal_cost(plan, CostMatrix(np.zeros((3, 3)) + 1.0))


# ---------------------------------------------------------------- dual objective


def test_dual_value_zero_potentials():
    mu, nu = random_pair(np.random.default_rng(0), 3, 3)
    duals = DualPair(np.zeros(3), np.zeros(3))
    assert dual_value(duals, mu, nu) == 0.0


def test_dual_value_constant_shift_cancels():
    mu, nu = random_pair(np.random.default_rng(1), 4, 4)
    for c in (0.7, -3.2):
        duals = DualPair(np.full(4, c), np.full(4, -c))
        assert dual_value(duals, mu, nu) == pytest.approx(0.0, abs=1e-12)


def test_dual_value_zero_gap_at_optimum():
    # oracle: certified primal-dual pair from the exact solver
    from otws.exact import solve_exact

    rng = np.random.default_rng(7)
    mu, nu = random_pair(rng, 4, 4)
    c = CostMatrix(rng.random((4, 4)))
    sol = solve_exact(mu, nu, c)
    assert dual_value(sol.duals, mu, nu) == pytest.approx(sol.primal_value, abs=1e-9)


def test_dual_value_dimension_mismatch():
    mu, nu = random_pair(np.random.default_rng(2), 3, 3)
    with pytest.raises(ValueError):
        dual_value(DualPair(np.zeros(2), np.zeros(3)), mu, nu)


# ---------------------------------------------------------------- entropy


def test_entropy_all_ones():
    assert entropy(np.ones((2, 2))) == 4.0


def test_entropy_zero_entry_convention():
    assert entropy(np.array([[0.0, 1.0], [1.0, 1.0]])) == 3.0


def test_entropy_negative_entry():
    assert entropy(np.array([[-0.1, 1.0], [1.0, 1.0]])) == float("-inf")


def test_entropy_concavity_spot_check():
    rng = np.random.default_rng(11)
    for _ in range(20):
        p = rng.random((4, 5)) + 0.01
        q = rng.random((4, 5)) + 0.01
        mid = entropy(0.5 * p + 0.5 * q)
        assert mid >= 0.5 * entropy(p) + 0.5 * entropy(q) - 1e-12


# ---------------------------------------------------------------- entropic objectives


def test_entropic_primal_zero_cost_identity():
    g = GridGeometry.regular(1, 3)
    mu = measure([1 / 3, 1 / 3, 1 / 3], g)
    plan = TransportPlan(np.diag(mu.weights), mu, mu)
    c = CostMatrix(np.zeros((3, 3)))
    eps = 0.25
    assert entropic_primal_objective(plan, c, eps) == pytest.approx(
        -eps * entropy(plan.entries), abs=1e-15
    )


def test_entropic_primal_cost_free():
    rng = np.random.default_rng(4)
    p = rng.random((3, 3))
    p /= p.sum()
    mu = measure(p.sum(axis=1))
    nu = measure(p.sum(axis=0))
    plan = TransportPlan(p, mu, nu)
    assert entropic_primal_objective(plan, CostMatrix(np.zeros((3, 3))), 1.0) == pytest.approx(
        -entropy(p), abs=1e-15
    )


def test_entropic_primal_matches_scalar_loop():
    rng = np.random.default_rng(5)
    p = rng.random((3, 3))
    p /= p.sum()
    mu = measure(p.sum(axis=1))
    nu = measure(p.sum(axis=0))
    c = CostMatrix(rng.random((3, 3)))
    plan = TransportPlan(p, mu, nu)
    eps = 0.1
    expected = 0.0
    for i in range(3):
        for j in range(3):
            expected += c.entries[i, j] * p[i, j]
            expected += eps * p[i, j] * (np.log(p[i, j]) - 1.0)
    assert entropic_primal_objective(plan, c, eps) == pytest.approx(expected, abs=1e-12)


def test_entropic_primal_eps_validation():
    g = GridGeometry.regular(1, 2)
    mu = measure([0.5, 0.5], g)
    plan = TransportPlan(np.diag(mu.weights), mu, mu)
    with pytest.raises(ValueError):
        entropic_primal_objective(plan, CostMatrix(np.zeros((2, 2))), 0.0)


# ---------------------------------------------------------------- Gibbs kernel


def test_gibbs_zero_cost_all_ones():
    k = gibbs_kernel(CostMatrix(np.zeros((3, 4))), 0.5)
    assert np.all(k == 1.0)


def test_gibbs_cost_equal_eps():
    k = gibbs_kernel(CostMatrix(np.full((2, 2), 0.25)), 0.25)
    assert np.allclose(k, np.exp(-1.0))


def test_gibbs_underflow_at_small_eps():
    # exp(-2 / 0.00025) = exp(-8000); extended-precision oracle confirms it
    # lies far below the smallest subnormal double, so 0.0 is the correct
    # double-precision value.
    mpmath = pytest.importorskip("mpmath")
    assert mpmath.exp(-8000) < mpmath.mpf(5e-324)
    k = gibbs_kernel(CostMatrix(np.full((2, 2), 2.0)), 0.00025)
    assert np.all(k == 0.0)


def test_gibbs_eps_validation():
    with pytest.raises(ValueError):
        gibbs_kernel(CostMatrix(np.zeros((2, 2))), -1.0)


# ---------------------------------------------------------------- entropic dual value


def test_entropic_dual_value_zero_everything():
    g = GridGeometry.regular(1, 3)
    mu = measure([1 / 3, 1 / 3, 1 / 3], g)
    nu = measure([1 / 3, 1 / 3, 1 / 3], g)
    c = CostMatrix(np.zeros((3, 3)))
    duals = DualPair(np.zeros(3), np.zeros(3))
    for eps in (0.5, 0.01):
        assert entropic_dual_value(duals, mu, nu, c, eps) == -eps * 9


def test_entropic_dual_value_at_converged_fixed_point():
    # oracle: long-run scaling iteration at moderate eps; strong duality
    # ties the dual optimum to the entropic primal at the optimal plan
    from otws.sinkhorn import SinkhornConfig, sinkhorn_run

    rng = np.random.default_rng(12)
    mu, nu = random_pair(rng, 5, 5)
    c = CostMatrix(rng.random((5, 5)))
    eps = 0.1
    cfg = SinkhornConfig(eps=eps, max_iters=200_000, check_every=500, stop_mcv=1e-14)
    tr = sinkhorn_run(mu, nu, c, cfg)
    plan = tr.plan
    primal = primal_cost(plan, c) - eps * entropy(plan.entries)
    dual = entropic_dual_value(tr.potentials, mu, nu, c, eps)
    assert dual == pytest.approx(primal, abs=1e-10)


def test_entropic_dual_value_bracket_against_exact_duals():
    # value at exact unregularized duals sits within m*n*eps of the optimum
    from otws.exact import solve_exact
    from otws.sinkhorn import SinkhornConfig, sinkhorn_run

    rng = np.random.default_rng(13)
    m = n = 6
    mu, nu = random_pair(rng, m, n)
    c = CostMatrix(rng.random((m, n)))
    sol = solve_exact(mu, nu, c)
    for eps in (0.1, 0.01):
        cfg = SinkhornConfig(eps=eps, max_iters=500_000, check_every=500, stop_mcv=1e-13)
        tr = sinkhorn_run(mu, nu, c, cfg)
        opt = entropic_dual_value(tr.potentials, mu, nu, c, eps)
        at_exact = entropic_dual_value(sol.duals, mu, nu, c, eps)
        assert 0.0 <= opt - at_exact <= m * n * eps


def test_entropic_dual_value_validation():
    mu, nu = random_pair(np.random.default_rng(2), 3, 3)
    c = CostMatrix(np.zeros((3, 3)))
    duals = DualPair(np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError):
        entropic_dual_value(duals, mu, nu, c, 0.0)


# ---------------------------------------------------------------- C-transform


def test_c_transform_zero_potential():
    c = CostMatrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert np.array_equal(c_transform(np.zeros(2), c), np.zeros(2))


def test_c_transform_constant_shift():
    c = CostMatrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    out = c_transform(np.array([0.5, 0.5]), c)
    assert np.array_equal(out, np.array([-0.5, -0.5]))


def test_c_transform_exhaustive_min():
    c = CostMatrix(np.array([[0.0, 2.0], [1.0, 0.0]]))
    f = np.array([1.0, 0.0])
    # column-wise oracle: min_i C_ij - f_i
    expected = np.array([min(0.0 - 1.0, 1.0 - 0.0), min(2.0 - 1.0, 0.0 - 0.0)])
    assert np.array_equal(c_transform(f, c), expected)
    assert np.array_equal(expected, np.array([-1.0, 0.0]))


def test_c_transform_directions_and_errors():
    c = CostMatrix(np.arange(6, dtype=float).reshape(2, 3))
    f = np.array([0.0, 0.0])
    g = c_transform(f, c, CTransformDirection.ROWS_TO_COLS)
    assert g.shape == (3,)
    back = c_transform(np.zeros(3), c, CTransformDirection.COLS_TO_ROWS)
    assert back.shape == (2,)
    with pytest.raises(ValueError):
        c_transform(np.zeros(3), c, CTransformDirection.ROWS_TO_COLS)


def test_c_transform_round_trip_idempotent():
    # One round trip reproduces the conjugate.  The identity is exact in
    # real arithmetic; in doubles the pattern a - (a - x) double-rounds, so
    # one ulp of drift (~4.5e-16 at this scale) is the attainable bound.
    rng = np.random.default_rng(21)
    for _ in range(50):
        e = rng.random((8, 8))
        c = CostMatrix(e + e.T)
        f = rng.standard_normal(8)
        g = c_transform(f, c, CTransformDirection.ROWS_TO_COLS)
        f2 = c_transform(g, c, CTransformDirection.COLS_TO_ROWS)
        g2 = c_transform(f2, c, CTransformDirection.ROWS_TO_COLS)
        assert np.abs(g2 - g).max() <= 1e-15


def test_c_transform_pair_is_dual_feasible():
    rng = np.random.default_rng(22)
    for _ in range(10):
        c = CostMatrix(rng.random((6, 9)))
        f = rng.standard_normal(6) * 3
        g = c_transform(f, c, CTransformDirection.ROWS_TO_COLS)
        f_cc = c_transform(g, c, CTransformDirection.COLS_TO_ROWS)
        assert np.all(f_cc[:, None] + g[None, :] <= c.entries + 1e-12)


# ---------------------------------------------------------------- MCV


def _plan_for(p, mu, nu):
    return TransportPlan(p, mu, nu)


def test_mcv_feasible_plan_zero():
    rng = np.random.default_rng(30)
    p = rng.random((3, 4))
    p /= p.sum()
    mu = measure(p.sum(axis=1))
    nu = measure(p.sum(axis=0))
    assert marginal_constraint_violation(_plan_for(p, mu, nu)) == pytest.approx(0.0, abs=1e-15)


def test_mcv_zero_plan_is_one():
    mu, nu = random_pair(np.random.default_rng(31), 3, 4)
    assert marginal_constraint_violation(_plan_for(np.zeros((3, 4)), mu, nu)) == 1.0


def test_mcv_product_coupling_zero():
    mu, nu = random_pair(np.random.default_rng(32), 3, 4)
    p = np.outer(mu.weights, nu.weights)
    assert marginal_constraint_violation(_plan_for(p, mu, nu)) == pytest.approx(0.0, abs=1e-15)


# ---------------------------------------------------------------- centering


def test_center_f_zero_sum_examples():
    g = DualPair(np.array([1.0, 1.0]), np.zeros(2))
    assert np.array_equal(center_f_zero_sum(g).f, np.zeros(2))
    g = DualPair(np.array([2.0, 0.0]), np.zeros(2))
    assert np.array_equal(center_f_zero_sum(g).f, np.array([1.0, -1.0]))
    g = DualPair(np.array([1.0, -1.0]), np.zeros(2))
    out = center_f_zero_sum(g)
    assert np.array_equal(out.f, np.array([1.0, -1.0]))
    assert out.centering is Centering.F_ZERO_SUM


def test_dual_pair_zero_sum_validation():
    with pytest.raises(ValueError):
        DualPair(np.array([1.0, 1.0]), np.zeros(2), centering=Centering.F_ZERO_SUM)


def test_dual_pair_feasibility():
    c = CostMatrix(np.ones((2, 2)))
    assert DualPair(np.array([0.5, 0.5]), np.array([0.5, 0.5])).feasible(c)
    assert not DualPair(np.array([0.6, 0.5]), np.array([0.5, 0.5])).feasible(c)


# ---------------------------------------------------------------- immutability


def test_types_are_immutable():
    g = GridGeometry.regular(2, 2)
    m = measure([0.25, 0.25, 0.25, 0.25], g)
    with pytest.raises(ValueError):
        m.weights[0] = 1.0
    c = build_cost(g, g)
    with pytest.raises(ValueError):
        c.entries[0, 0] = 5.0
