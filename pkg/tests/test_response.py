import math

import numpy as np
import pytest

from measurefw.exceptions import PreconditionError
from measurefw.geometry import pairwise_distances
from measurefw.measure import DiscreteMeasure, point_mass, tv_distance, uniform_on
from measurefw.response import (
    ResponseProfile,
    SampleBatch,
    correction_gradient,
    directional_derivative,
    draw_batch,
    influence,
    influence_gradient,
    influence_grid,
    objective_exact,
    objective_mc,
    simulate_objective,
    smoothness_constant,
    survival_integral,
)
from measurefw.scenario import DeathCurve, Problem, beta, builtin_scenario, discrete
from tests.helpers import SINGLE_POINT_J, random_discrete_problem, random_measure

ORIGIN = (0.0, 0.0)


def test_survival_without_volunteers(curve: DeathCurve) -> None:
    """Test the zero-mass limit is the whole curve mass."""
    assert survival_integral(point_mass(ORIGIN, 0.0), ORIGIN, curve) == pytest.approx(1.0 - beta(curve, 0.0))
    assert 1.0 - beta(curve, 0.0) == pytest.approx(0.33646, abs=1e-4)


def test_survival_single_atom_at_incident(curve: DeathCurve) -> None:
    """Test the one-segment closed form."""
    assert survival_integral(point_mass(ORIGIN, 1.0), ORIGIN, curve) == pytest.approx(SINGLE_POINT_J, rel=1e-14)
    assert SINGLE_POINT_J == pytest.approx(0.12378, abs=1e-5)


def test_survival_single_atom_at_distance_one(curve: DeathCurve) -> None:
    """Test the two-segment closed form."""
    b0, b1 = beta(curve, 0.0), beta(curve, 1.0)
    expected = (b1 - b0) + math.exp(-1.0) * (1.0 - b1)
    assert survival_integral(point_mass((1.0, 0.0), 1.0), ORIGIN, curve) == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(0.15907, abs=1e-4)


def test_survival_tied_atoms_merge(curve: DeathCurve) -> None:
    """Test that atoms at equal distance act as one atom."""
    split = DiscreteMeasure([[1.0, 0.0], [0.0, 1.0]], [0.5, 0.5], 1.0)
    assert survival_integral(split, ORIGIN, curve) == pytest.approx(
        survival_integral(point_mass((1.0, 0.0), 1.0), ORIGIN, curve), rel=1e-14
    )


def test_survival_decreases_when_mass_moves_closer(curve: DeathCurve, rng: np.random.Generator) -> None:
    """Test that moving an atom toward the incident never increases survival integral."""
    for _ in range(20):
        mu = random_measure(rng, 1.5, atoms=3)
        closer = mu.locations.copy()
        closer[0] *= 0.5
        nu = DiscreteMeasure(closer, mu.weights, mu.budget)
        assert survival_integral(nu, ORIGIN, curve) <= survival_integral(mu, ORIGIN, curve) + 1e-15


def test_objective_single_demand(single_point: Problem) -> None:
    """Test J at the optimum of a one-point instance."""
    assert objective_exact(point_mass(ORIGIN, 1.0), single_point.eta, single_point.curve) == pytest.approx(SINGLE_POINT_J)


def test_objective_two_point_optimum(two_point: Problem, curve: DeathCurve) -> None:
    """Test J at the equal split of the two-point instance."""
    mu = uniform_on(two_point.eta.points, 1.0)
    b0, b1 = beta(curve, 0.0), beta(curve, 1.0)
    expected = math.exp(-0.5) * (b1 - b0) + math.exp(-1.0) * (1.0 - b1)
    assert objective_exact(mu, two_point.eta, curve) == pytest.approx(expected, rel=1e-13)
    assert expected == pytest.approx(0.13713, abs=1e-4)


def test_objective_exact_rejects_continuous(curve: DeathCurve) -> None:
    """Test that continuous laws need a batch."""
    with pytest.raises(PreconditionError):
        objective_exact(point_mass(ORIGIN, 1.0), builtin_scenario("uniform").eta, curve)


def test_l1_objective_dominates_l2(curve: DeathCurve, rng: np.random.Generator) -> None:
    """Test J under the Manhattan norm is never below J under the Euclidean norm."""
    for _ in range(100):
        problem = random_discrete_problem(rng, n=3, budget=float(rng.uniform(0.5, 4.0)))
        mu = random_measure(rng, problem.budget, atoms=3)
        l2 = objective_exact(mu, problem.eta, curve, "l2")
        l1 = objective_exact(mu, problem.eta, curve, "l1")
        assert l2 <= l1 + 1e-15


def test_objective_mc_single_and_weighted_batches(three_point: Problem, curve: DeathCurve) -> None:
    """Test a batch made of the demand points reproduces the exact objective."""
    mu = uniform_on([[0.2, 0.1], [0.6, 0.5]], 1.0)
    one = SampleBatch(np.array([[0.5, 0.5]]), seed=0)
    assert objective_mc(mu, one, curve) == pytest.approx(survival_integral(mu, (0.5, 0.5), curve), rel=1e-14)
    batch = SampleBatch(np.repeat(three_point.eta.points, 2, axis=0), seed=0)
    assert objective_mc(mu, batch, curve) == pytest.approx(objective_exact(mu, three_point.eta, curve), rel=1e-13)


def test_objective_mc_self_consistent(curve: DeathCurve) -> None:
    """Test J_n and J_2n agree within their Monte-Carlo error."""
    eta = builtin_scenario("uniform").eta
    mu = uniform_on([[0.25, 0.25], [0.75, 0.75]], 2.0)
    small, large = draw_batch(eta, 100_000, 1), draw_batch(eta, 200_000, 2)
    values_small = ResponseProfile(mu, small, curve).survival
    values_large = ResponseProfile(mu, large, curve).survival
    pooled = math.sqrt(values_small.var() / len(small) + values_large.var() / len(large))
    assert abs(values_small.mean() - values_large.mean()) < 3 * pooled


def test_draw_batch_is_frozen() -> None:
    """Test batch determinism and immutability."""
    eta = builtin_scenario("mixture").eta
    a, b = draw_batch(eta, 50, 7), draw_batch(eta, 50, 7)
    np.testing.assert_array_equal(a.points, b.points)
    with pytest.raises(ValueError):
        a.points[0, 0] = 1.0


def test_influence_zero_at_own_atom(single_point: Problem, curve: DeathCurve) -> None:
    """Test h vanishes at the only atom when it sits on the only demand point."""
    assert influence(point_mass(ORIGIN, 1.0), ORIGIN, single_point.eta, curve) == pytest.approx(0.0, abs=1e-16)


def test_influence_closer_point_is_negative(curve: DeathCurve) -> None:
    """Test the two-segment closed form for a point closer than the atom."""
    b = 2.0
    eta = discrete([ORIGIN])
    mu = point_mass((1.0, 0.0), b)
    h = influence(mu, (0.3, 0.0), eta, curve)
    assert h == pytest.approx(-b * (beta(curve, 1.0) - beta(curve, 0.3)), rel=1e-12)
    assert h < 0


def test_influence_three_point_centroid(three_point: Problem, triangle_uniform: DiscreteMeasure, curve: DeathCurve) -> None:
    """Test the uniform vertex measure is beaten at the centroid."""
    centroid = three_point.eta.points.mean(axis=0)
    h = influence(triangle_uniform, centroid, three_point.eta, curve)
    assert h == pytest.approx(math.exp(-1 / 3) * (-0.0129) / 3, abs=2e-4)


def test_influence_zero_mean(curve: DeathCurve, rng: np.random.Generator) -> None:
    """Test the weighted average of h over the measure's own atoms vanishes."""
    for _ in range(100):
        b = float(rng.uniform(0.2, 5.0))
        problem = random_discrete_problem(rng, n=int(rng.integers(1, 6)), budget=b)
        mu = random_measure(rng, b, atoms=int(rng.integers(1, 6)))
        norm = "l1" if rng.random() < 0.5 else "l2"
        h = ResponseProfile(mu, problem.eta, curve, norm).influence(mu.locations)
        assert abs(np.dot(mu.weights, h)) <= 1e-8 * b


def test_directional_derivative_identities(three_point: Problem, triangle_uniform: DiscreteMeasure, curve: DeathCurve) -> None:
    """Test the derivative along zero and toward a point mass."""
    eta = three_point.eta
    assert directional_derivative(triangle_uniform, triangle_uniform, eta, curve) == pytest.approx(0.0, abs=1e-12)
    x = (0.4, 0.3)
    assert directional_derivative(triangle_uniform, point_mass(x, 1.0), eta, curve) == pytest.approx(
        influence(triangle_uniform, x, eta, curve), rel=1e-12
    )
    with pytest.raises(ValueError, match="budget mismatch"):
        directional_derivative(triangle_uniform, point_mass(x, 2.0), eta, curve)


def test_directional_derivative_finite_difference(curve: DeathCurve, rng: np.random.Generator) -> None:
    """Test the derivative against a one-sided difference quotient of J."""
    t = 1e-6
    for _ in range(20):
        problem = random_discrete_problem(rng, n=4, budget=1.5)
        mu, nu = random_measure(rng, 1.5, 3), random_measure(rng, 1.5, 2)
        base = objective_exact(mu, problem.eta, curve)
        quotient = (objective_exact(mu.mix(nu, t), problem.eta, curve) - base) / t
        assert directional_derivative(mu, nu, problem.eta, curve) == pytest.approx(quotient, rel=1e-3, abs=1e-7)


def _clear_of_kinks(mu: DiscreteMeasure, points: np.ndarray, x: np.ndarray, margin: float) -> bool:
    r = pairwise_distances(points, x)[:, 0]
    d = pairwise_distances(points, mu.locations)
    return bool(np.all(r > margin) and np.all(np.abs(d - r[:, None]) > margin))


def test_influence_gradient_finite_difference(curve: DeathCurve, rng: np.random.Generator) -> None:
    """Test the analytic gradient against central differences at generic points."""
    step, checked = 1e-5, 0
    while checked < 100:
        problem = random_discrete_problem(rng, n=5, budget=float(rng.uniform(0.5, 3.0)))
        mu = random_measure(rng, problem.budget, atoms=4)
        x = rng.random((1, 2))
        if not _clear_of_kinks(mu, problem.eta.points, x, 1e-3):
            continue
        grad = influence_gradient(mu, x[0], problem.eta, curve)
        fd = [
            (influence(mu, x[0] + e, problem.eta, curve) - influence(mu, x[0] - e, problem.eta, curve)) / (2 * step)
            for e in (np.array([step, 0.0]), np.array([0.0, step]))
        ]
        np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-8)
        checked += 1


def test_influence_gradient_symmetric_centroid(three_point: Problem, triangle_uniform: DiscreteMeasure, curve: DeathCurve) -> None:
    """Test the gradient vanishes at the centre of a symmetric configuration."""
    centroid = three_point.eta.points.mean(axis=0)
    np.testing.assert_allclose(influence_gradient(triangle_uniform, centroid, three_point.eta, curve), 0.0, atol=1e-10)


def test_influence_gradient_points_away(single_point: Problem, curve: DeathCurve) -> None:
    """Test the radial sign of the gradient around a lone demand point."""
    grad = influence_gradient(point_mass(ORIGIN, 1.0), (0.3, 0.4), single_point.eta, curve)
    assert np.dot(grad, [0.3, 0.4]) > 0


def test_influence_gradient_singular(single_point: Problem, curve: DeathCurve) -> None:
    """Test the singular point error."""
    with pytest.raises(ValueError, match="gradient singular at demand point"):
        influence_gradient(point_mass((1.0, 1.0), 1.0), ORIGIN, single_point.eta, curve)


def test_correction_gradient_symmetric(two_point: Problem) -> None:
    """Test equal components on a symmetric instance."""
    g = correction_gradient(two_point.eta.points, [0.5, 0.5], two_point, two_point.eta)
    assert g[0] == pytest.approx(g[1], rel=1e-14)


def test_correction_gradient_finite_difference(curve: DeathCurve, rng: np.random.Generator) -> None:
    """Test the weight gradient against central differences of J in p."""
    step = 1e-6
    for _ in range(100):
        b = float(rng.uniform(0.5, 3.0))
        problem = random_discrete_problem(rng, n=4, budget=b)
        support = rng.random((3, 2))
        p = rng.dirichlet(np.ones(3))
        g = correction_gradient(support, p, problem, problem.eta)

        def j(q: np.ndarray) -> float:
            w = b * q
            return ResponseProfile(DiscreteMeasure(support, w, float(w.sum())), problem.eta, curve).objective

        for i in range(3):
            e = np.zeros(3)
            e[i] = step
            assert g[i] == pytest.approx((j(p + e) - j(p - e)) / (2 * step), rel=1e-4, abs=1e-8)


def test_correction_gradient_single_support(single_point: Problem, curve: DeathCurve) -> None:
    """Test dJ/dp of the one-segment formula."""
    b0 = beta(curve, 0.0)
    g = correction_gradient([ORIGIN], [1.0], single_point, single_point.eta)
    assert g[0] == pytest.approx(-math.exp(-1.0) * (1.0 - b0), rel=1e-14)


def test_correction_gradient_off_simplex(two_point: Problem) -> None:
    """Test that weights off the simplex are rejected."""
    with pytest.raises(ValueError, match="simplex"):
        correction_gradient(two_point.eta.points, [0.7, 0.7], two_point, two_point.eta)


def test_simulate_single_point(single_point: Problem, curve: DeathCurve) -> None:
    """Test the Poisson simulation against the closed form."""
    estimate, se = simulate_objective(point_mass(ORIGIN, 1.0), single_point.eta, 1_000_000, np.random.default_rng(11))
    assert abs(estimate - SINGLE_POINT_J) < 3 * se


def test_simulate_agrees_with_closed_form(rng: np.random.Generator) -> None:
    """Test the Poisson simulation brackets the closed form on random instances."""
    within = 0
    for i in range(30):
        norm = "l1" if i % 2 else "l2"
        problem = random_discrete_problem(rng, n=int(rng.integers(1, 6)), budget=float(rng.uniform(0.5, 4.0)), norm=norm)
        mu = random_measure(rng, problem.budget, atoms=int(rng.integers(1, 6)))
        exact = objective_exact(mu, problem.eta, problem.curve, norm)
        estimate, se = simulate_objective(mu, problem.eta, 40_000, rng, problem.curve, norm)
        within += abs(estimate - exact) <= 3 * se
    assert within >= 28


def test_simulate_without_volunteers(single_point: Problem, curve: DeathCurve) -> None:
    """Test the vanishing-budget limit of the simulation."""
    estimate, _ = simulate_objective(point_mass(ORIGIN, 1e-9), single_point.eta, 100_000, np.random.default_rng(3))
    assert estimate == pytest.approx(1.0 - beta(curve, 0.0), abs=1e-6)


def test_simulate_rejects_zero_reps(single_point: Problem) -> None:
    """Test the replication count check."""
    with pytest.raises(ValueError, match="reps"):
        simulate_objective(point_mass(ORIGIN, 1.0), single_point.eta, 0, np.random.default_rng(0))


@pytest.mark.parametrize("b, expected", [(1.0, 3.0), (5.0, 11.0), (0.5, 2.0)])
def test_smoothness_constant(b: float, expected: float) -> None:
    """Test the smoothness constant."""
    assert smoothness_constant(b) == expected


def test_convexity_along_segments(curve: DeathCurve, rng: np.random.Generator) -> None:
    """Test J lies below its chords."""
    for _ in range(100):
        problem = random_discrete_problem(rng, n=3, budget=2.0)
        mu1, mu2 = random_measure(rng, 2.0, 3), random_measure(rng, 2.0, 3)
        j1, j2 = (objective_exact(m, problem.eta, curve) for m in (mu1, mu2))
        for alpha in (0.1, 0.25, 0.5, 0.75, 0.9):
            mid = objective_exact(mu1.mix(mu2, alpha), problem.eta, curve)
            assert mid <= (1 - alpha) * j1 + alpha * j2 + 1e-12


def test_smoothness_bound(curve: DeathCurve, rng: np.random.Generator) -> None:
    """Test sup |h1 - h2| is at most (2b + 1) times the total variation distance."""
    grid = np.stack(np.meshgrid(np.linspace(0, 1, 25), np.linspace(0, 1, 25)), axis=-1).reshape(-1, 2)
    for _ in range(100):
        b = float(rng.uniform(0.2, 4.0))
        problem = random_discrete_problem(rng, n=3, budget=b)
        mu1, mu2 = random_measure(rng, b, 3), random_measure(rng, b, 3)
        h1 = ResponseProfile(mu1, problem.eta, curve).influence(grid)
        h2 = ResponseProfile(mu2, problem.eta, curve).influence(grid)
        assert np.max(np.abs(h1 - h2)) <= smoothness_constant(b) * tv_distance(mu1, mu2) + 1e-9


def test_smooth_functional_inequality(curve: DeathCurve, rng: np.random.Generator) -> None:
    """Test the first-order expansion error is nonnegative and quadratically bounded."""
    for _ in range(100):
        b = float(rng.uniform(0.2, 4.0))
        problem = random_discrete_problem(rng, n=3, budget=b)
        mu, tilde = random_measure(rng, b, 3), random_measure(rng, b, 3)
        gap = (
            objective_exact(tilde, problem.eta, curve)
            - objective_exact(mu, problem.eta, curve)
            - directional_derivative(mu, tilde, problem.eta, curve)
        )
        tv = tv_distance(mu, tilde)
        assert -1e-12 <= gap <= smoothness_constant(b) / (2 * b) * tv * tv + 1e-9


def test_influence_grid_marks_outside_cells(three_point: Problem, triangle_uniform: DiscreteMeasure) -> None:
    """Test the lattice covers the bounding box with NaN outside the domain."""
    grid = influence_grid(triangle_uniform, three_point, 21, three_point.eta)
    assert grid.values.shape == (21, 21)
    assert np.isnan(grid.values[-1, 0])
    assert not np.isnan(grid.values[0, 10])
    value, where = grid.argmin()
    assert value < 0.0
    assert three_point.region.contains(where, tol=1e-9)[0]


def test_influence_grid_single_cell(three_point: Problem, triangle_uniform: DiscreteMeasure) -> None:
    """Test a resolution of one gives one cell at the box centre."""
    grid = influence_grid(triangle_uniform, three_point, 1, three_point.eta)
    assert grid.values.shape == (1, 1)
    assert grid.xs[0] == pytest.approx(0.5)


def test_influence_independent_of_query_batch(two_point: Problem, curve: DeathCurve) -> None:
    """Test a far-away query in the same call leaves nearby influence values unchanged."""
    mu = DiscreteMeasure([[0.3, 0.0], [0.7, 0.0]], [0.5, 0.5], 1.0)
    profile = ResponseProfile(mu, two_point.eta, curve)
    near = np.array([[0.3 - 1e-5, 0.0], [0.7 + 1e-5, 0.0], [0.5, 0.0], [0.3, 0.0]])
    alone = profile.influence(near)
    together = profile.influence(np.vstack([near, [[1e12, 0.0]]]))[: len(near)]
    one_by_one = np.concatenate([profile.influence(x) for x in near])
    np.testing.assert_allclose(together, alone, rtol=0, atol=1e-13)
    np.testing.assert_allclose(one_by_one, alone, rtol=0, atol=1e-13)
