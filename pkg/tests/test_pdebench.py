import numpy as np
import pytest

from advpinn import netmod as nm
from advpinn import pdebench as pb

WITH_EXACT = ("laplace1", "laplace2", "poisson", "reaction_diffusion", "klein_gordon")
GEN = nm.NetworkSpec(2, (6, 6), residual_links=True)


def interior(problem, n, seed):
    rng = np.random.default_rng(seed)
    (a, b), (c, d) = problem.bounds
    return np.stack([rng.uniform(a, b, n), rng.uniform(c, d, n)], axis=1)


def test_poisson_exact_value():
    assert pb.make_problem("poisson").exact([[0.5, 0.5]])[0] == pytest.approx(0.0625, abs=1e-15)


def test_reaction_diffusion_exact_vanishes_at_x0():
    p = pb.make_problem("reaction_diffusion")
    pts = np.stack([np.zeros(5), np.linspace(0, 5, 5)], axis=1)
    assert np.all(p.exact(pts) == 0)


def test_klein_gordon_initial_condition():
    p = pb.make_problem("klein_gordon")
    x = np.linspace(0, 1, 7)
    pts = np.stack([x, np.zeros(7)], axis=1)
    assert np.allclose(p.exact(pts), -0.2 * np.sin(np.pi * x), atol=1e-15)


@pytest.mark.parametrize("seed", range(3))
def test_ansatz_hard_constraints(seed):
    params = nm.init(GEN, seed)
    lap = pb.make_problem("laplace1")
    assert abs(pb.ansatz_eval(lap, GEN, params, [0.37, 0.0]).value) < 1e-14
    kg = pb.make_problem("klein_gordon")
    assert abs(pb.ansatz_eval(kg, GEN, params, [0.41, 0.0]).d1[1]) < 1e-14


@pytest.mark.parametrize("name", pb.PROBLEMS)
def test_constraint_violation_small(name):
    prob = pb.make_problem(name)
    for s in range(3):
        assert pb.constraint_violation(prob, GEN, nm.init(GEN, s), seed=s) < 1e-12


def test_mask_vanishes_on_constrained_sides():
    for name in pb.PROBLEMS:
        prob = pb.make_problem(name)
        for side, pts in pb.boundary_points(prob, 20, np.random.default_rng(0)).items():
            H = prob.mask(pb.Jet.constant(pts)).data[0, :, 0]
            assert np.max(np.abs(H)) < 1e-14, (name, side)


def test_zero_network_gives_lift():
    prob = pb.make_problem("laplace2")
    pts = interior(prob, 10, 0)
    u = pb.solution(prob, GEN, nm.zeros(GEN), pts)
    assert np.array_equal(u, prob.lift(pb.Jet.constant(pts)).data[0, :, 0])


def test_zero_network_laplace1_residual_is_lift_laplacian():
    prob = pb.make_problem("laplace1")
    pts = interior(prob, 20, 1)
    r = pb.residuals(prob, GEN, nm.zeros(GEN), pts)
    x, y = pts[:, 0], pts[:, 1]
    want = -np.pi**2 * np.tanh(np.pi) * y * np.sin(np.pi * x)
    assert np.allclose(r, want, rtol=1e-12, atol=1e-13)


@pytest.mark.parametrize("name", WITH_EXACT)
def test_exact_solution_annihilates_residual(name):
    prob = pb.make_problem(name)
    assert np.max(np.abs(pb.exact_residuals(prob, interior(prob, 50, 2)))) < 1e-9


def test_collocation_layout():
    prob = pb.make_problem("poisson")
    g = pb.collocation(prob, 2)
    assert sorted(map(tuple, g.points)) == [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)]
    for n, seed in ((5, None), (8, 3)):
        pts = pb.collocation(prob, n, seed).points
        assert len(pts) == n * n
        assert np.all((pts > 0) & (pts < 1))
    with pytest.raises(pb.ConfigurationError):
        pb.collocation(prob, 1)


def test_validation_mse_zero_network_against_double_loop():
    prob = pb.make_problem("poisson")
    m = 5
    got = pb.validation_mse(prob, GEN, nm.zeros(GEN), m)
    acc = 0.0
    for i in range(m):
        for j in range(m):
            x, y = (i + 1) / (m + 1), (j + 1) / (m + 1)
            exact = x * (1 - x) * y * (1 - y) * np.exp(x - y)
            acc += exact**2  # the lift is zero
    assert got == pytest.approx(acc / m**2, rel=1e-13)
    assert got >= 0


def test_burgers_has_no_validation_metric():
    prob = pb.make_problem("burgers")
    with pytest.raises(pb.UnsupportedMetricError):
        pb.validation_mse(prob, GEN, nm.zeros(GEN), 4)
    r = pb.residuals(prob, GEN, nm.init(GEN, 0), interior(prob, 8, 0))
    assert np.all(np.isfinite(r))


def test_unknown_problem():
    with pytest.raises((pb.ConfigurationError, ValueError)):
        pb.make_problem("heat")
