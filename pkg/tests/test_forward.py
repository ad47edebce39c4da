import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import (
    brute_force_2x2,
    central_diff,
    phi_entropy,
    phi_quadratic,
    random_marginals,
    random_sh,
    sinkhorn_classic,
)

from bregiot import (
    DomainError,
    DualPotentials,
    MaxIterationsExceeded,
    SolverConfig,
    TransportProblem,
    bregman_divergence,
    dual_gradient,
    dual_objective,
    dual_objective_general,
    get_generator,
    kkt_residual,
    plan_from_potentials,
    solve_forward,
)
from bregiot.forward import _row_update, solve_rows

ENT = get_generator("entropy")
QUAD = get_generator("quadratic")
SMOOTH = ["entropy", "burg", "fermi-dirac", "beta:0.5"]


def problem(rng, n, gamma, gen="entropy", C=None):
    mu, nu = random_marginals(rng, n)
    if C is None:
        C = rng.uniform(size=(n, n))
    return TransportProblem(C, mu, nu, gamma, get_generator(gen))


# -- plan from potentials ------------------------------------------------------

def test_plan_from_potentials_examples():
    n = 3
    p = TransportProblem(np.zeros((n, n)), np.ones(n) / n, np.ones(n) / n, 1.0, ENT)
    assert np.array_equal(plan_from_potentials(p, DualPotentials(np.zeros(n), np.zeros(n))), np.ones((n, n)))
    q = TransportProblem(2 * np.ones((n, n)), np.ones(n) / n, np.ones(n) / n, 1.0, QUAD)
    assert np.array_equal(plan_from_potentials(q, DualPotentials(np.zeros(n), np.zeros(n))), np.zeros((n, n)))
    p2 = TransportProblem(np.zeros((2, 2)), np.ones(2) / 2, np.ones(2) / 2, 1.0, ENT)
    X = plan_from_potentials(p2, DualPotentials([math.log(2), 0.0], [0.0, 0.0]))
    assert np.allclose(X, [[2, 2], [1, 1]], atol=1e-15)


def test_plan_from_potentials_domain_error():
    g = get_generator("burg")
    p = TransportProblem(np.zeros((2, 2)), np.ones(2) / 2, np.ones(2) / 2, 1.0, g)
    with pytest.raises(DomainError):
        plan_from_potentials(p, DualPotentials([1.0, 0.0], [0.0, 0.0]))


def test_problem_validation():
    with pytest.raises(ValueError):
        TransportProblem(np.zeros((2, 2)), [0.5, 0.6], [0.5, 0.5], 1.0, ENT)
    with pytest.raises(ValueError):
        TransportProblem(np.zeros((2, 2)), [0.5, 0.5], [0.5, 0.5], 0.0, ENT)


# -- dual objective --------------------------------------------------------------

def test_dual_objective_at_zero_is_zero_for_entropy():
    # exp - 1 conjugate: sum psi(0) = 0 and the inner product vanishes
    n = 4
    p = TransportProblem(np.zeros((n, n)), np.ones(n) / n, np.ones(n) / n, 1.0, ENT)
    X = np.full((n, n), 1.0 / n**2)
    assert dual_objective(p, DualPotentials(np.zeros(n), np.zeros(n)), X) == 0.0


def test_dual_objective_decreases_after_one_sweep(rng):
    p = problem(rng, 3, 0.5)
    X_target = sinkhorn_classic(p.C, p.mu, p.nu, p.gamma)
    zero = DualPotentials(np.zeros(3), np.zeros(3))
    sol = solve_forward(p, SolverConfig(max_iter=1, tol=np.inf))
    assert dual_objective(p, sol.potentials, X_target) < dual_objective(p, zero, X_target)


@pytest.mark.parametrize("gen", SMOOTH)
def test_dual_gradient_matches_finite_differences(rng, gen):
    # dual_objective has gradient (X 1 - mu, X^T 1 - nu) / gamma
    p = problem(rng, 4, 0.7, gen)
    X_target = np.outer(p.mu, p.nu)
    u0 = rng.normal(scale=0.05, size=4) - 0.3
    v0 = rng.normal(scale=0.05, size=4) - 0.3
    fu = central_diff(lambda u: dual_objective(p, DualPotentials(u, v0), X_target), u0)
    fv = central_diff(lambda v: dual_objective(p, DualPotentials(u0, v), X_target), v0)
    gu, gv = dual_gradient(p, DualPotentials(u0, v0))
    for fd, g in ((fu, gu / p.gamma), (fv, gv / p.gamma)):
        assert np.max(np.abs(fd - g)) / max(1.0, np.max(np.abs(g))) <= 1e-5


@pytest.mark.parametrize("gen", SMOOTH + ["quadratic"])
def test_general_dual_gradient_matches_finite_differences(rng, gen):
    # the clamped dual is differentiable with the marginal defects as gradient
    p = problem(rng, 4, 0.7, gen)
    u0 = rng.normal(scale=0.05, size=4) - 0.3
    v0 = rng.normal(scale=0.05, size=4) - 0.3
    fu = central_diff(lambda u: dual_objective_general(p, DualPotentials(u, v0)), u0)
    gu, _ = dual_gradient(p, DualPotentials(u0, v0))
    assert np.max(np.abs(fu - gu)) <= 1e-5 * max(1.0, np.max(np.abs(gu)))


# -- solver ------------------------------------------------------------------------

def test_product_plan_for_zero_cost(rng):
    mu, nu = random_marginals(rng, 6)
    sol = solve_forward(TransportProblem(np.zeros((6, 6)), mu, nu, 0.3, ENT))
    assert np.max(np.abs(sol.plan - np.outer(mu, nu))) <= 1e-14


def test_quadratic_sparse_example():
    a, b, g = 0.2, 0.5, 1.0
    p = TransportProblem(np.array([[0, g], [g, 0]]), [a, 1 - a], [b, 1 - b], g, QUAD)
    X = solve_forward(p).plan
    assert np.max(np.abs(X - [[0.2, 0.0], [0.3, 0.5]])) <= 1e-9


def test_quadratic_sparse_plans_converge_with_newton_steps():
    # small gamma gives very sparse plans, where alternating sweeps alone crawl
    r = np.random.default_rng(2)
    for _ in range(10):
        p = problem(r, 30, 0.005, "quadratic")
        sol = solve_forward(p)
        assert sol.report.converged
        assert np.mean(sol.plan > 0) < 0.2
    assert sol.report.extra["newton_steps"] > 0


@pytest.mark.parametrize("n, gamma", [(5, 0.1), (5, 0.05), (10, 0.1), (50, 1.0), (50, 0.05)])
def test_entropy_matches_classic_sinkhorn(rng, n, gamma):
    p = problem(rng, n, gamma)
    sol = solve_forward(p)
    assert np.max(np.abs(sol.plan - sinkhorn_classic(p.C, p.mu, p.nu, gamma))) <= 1e-10


@pytest.mark.parametrize("gen", SMOOTH + ["quadratic"])
@pytest.mark.parametrize("n", [3, 8])
def test_solver_postconditions(rng, gen, n):
    p = problem(rng, n, 0.5, gen)
    sol = solve_forward(p)
    assert sol.report.converged
    assert sol.report.termination == "tolerance"
    assert len(sol.report.residuals) == sol.report.iterations
    assert np.all(sol.plan >= 0)
    assert kkt_residual(p, sol) <= 1e-10
    assert sol.report.residuals[-1] <= 1e-10


@pytest.mark.parametrize("gen", SMOOTH + ["quadratic"])
def test_brute_force_projection_n2(rng, gen):
    # plan minimises <C, X> + gamma phi(X) over the 1-parameter polytope;
    # equivalently the Bregman projection of grad psi(-C / gamma)
    g = get_generator(gen)
    for _ in range(3):
        p = problem(rng, 2, 0.4, gen)
        X = solve_forward(p).plan
        phi = (lambda x: g._phi(np.clip(x, 1e-300, None))) if gen != "quadratic" else phi_quadratic
        Xb = brute_force_2x2(p.C, p.mu, p.nu, p.gamma, phi)
        assert np.max(np.abs(X - Xb)) <= 2e-5


def test_brute_force_bregman_projection_form(rng):
    p = problem(rng, 2, 0.6)
    X = solve_forward(p).plan
    Y = np.exp(-p.C / p.gamma)
    t = np.arange(max(0, p.mu[0] + p.nu[0] - 1), min(p.mu[0], p.nu[0]), 1e-5)[1:]
    best = min(
        t,
        key=lambda s: bregman_divergence(
            ENT,
            np.array([[s, p.mu[0] - s], [p.nu[0] - s, 1 - p.mu[0] - p.nu[0] + s]]),
            Y,
        ),
    )
    assert abs(X[0, 0] - best) <= 2e-5


def test_shift_invariance(rng):
    for gen in SMOOTH + ["quadratic"]:
        p = problem(rng, 6, 0.5, gen)
        a = rng.uniform(0, 0.3, 6)
        b = rng.uniform(0, 0.3, 6)
        X1 = solve_forward(p).plan
        X2 = solve_forward(p.with_cost(p.C + a[:, None] + b[None, :])).plan
        assert np.max(np.abs(X1 - X2)) <= 1e-8


def test_duality_identity(rng):
    # B(X_hat || X^C) = F(Z^C) + phi(X_hat) with F(Z) = psi(Z) - <Z, X_hat>
    for _ in range(5):
        n = 6
        mu, nu = random_marginals(rng, n)
        C = random_sh(rng, n)
        X_hat = solve_forward(TransportProblem(random_sh(rng, n), mu, nu, 0.5, ENT)).plan
        sol = solve_forward(TransportProblem(C, mu, nu, 0.5, ENT))
        Z = (sol.potentials.tensor_sum() - C) / 0.5
        F = np.sum(np.expm1(Z)) - np.sum(Z * X_hat)
        rhs = F + np.sum(phi_entropy(X_hat))
        assert bregman_divergence(ENT, X_hat, sol.plan) == pytest.approx(rhs, abs=1e-8)


def test_quadratic_zero_entry_invariance(rng):
    a, b, g = 0.2, 0.5, 1.0
    p = TransportProblem(np.array([[0, g], [g, 0]]), [a, 1 - a], [b, 1 - b], g, QUAD)
    X = solve_forward(p).plan
    zeros = np.argwhere(X == 0)
    assert len(zeros) > 0
    for i, j in zeros:
        for lam in (0.1, 1.0):
            E = np.zeros((2, 2))
            E[i, j] = lam
            assert np.max(np.abs(solve_forward(p.with_cost(p.C + E)).plan - X)) <= 1e-8


def test_quadratic_zero_entry_invariance_random(rng):
    hits = 0
    for _ in range(20):
        p = problem(rng, 5, 0.05, "quadratic", C=rng.uniform(size=(5, 5)))
        X = solve_forward(p).plan
        for i, j in np.argwhere(X == 0)[:3]:
            for lam in (0.1, 1.0):
                E = np.zeros((5, 5))
                E[i, j] = lam
                assert np.max(np.abs(solve_forward(p.with_cost(p.C + E)).plan - X)) <= 1e-8
                hits += 1
    assert hits > 0


# -- kkt residual --------------------------------------------------------------------

def test_kkt_residual_exact_and_perturbed(rng):
    p = problem(rng, 3, 1.0)
    sol = solve_forward(p)
    assert kkt_residual(p, sol) <= 1e-10
    # exact triple from potentials
    X = plan_from_potentials(p, sol.potentials)
    exact = type(sol)(X, sol.potentials, sol.report)
    base = kkt_residual(p, exact)
    u = np.array(sol.potentials.u)
    u[0] += 0.1
    pert = type(sol)(X, DualPotentials(u, sol.potentials.v), sol.report)
    assert kkt_residual(p, pert) > base


def test_exact_kkt_triple_residual():
    n = 3
    mu = nu = np.ones(n) / n
    p = TransportProblem(np.zeros((n, n)), mu, nu, 1.0, ENT)
    pots = DualPotentials(np.log(mu), np.log(nu))
    sol = solve_forward(p)
    exact = type(sol)(plan_from_potentials(p, pots), pots, sol.report)
    assert kkt_residual(p, exact) <= 1e-14


# -- failure paths ---------------------------------------------------------------------

def test_max_iterations_exceeded_carries_trace(rng):
    p = problem(rng, 5, 0.05)
    with pytest.raises(MaxIterationsExceeded) as exc:
        solve_forward(p, SolverConfig(max_iter=2, tol=1e-30))
    assert len(exc.value.report.residuals) == 2
    assert exc.value.residual == exc.value.report.residuals[-1]


def test_warm_start_is_fixed_point(rng):
    p = problem(rng, 6, 0.3, "burg")
    sol = solve_forward(p)
    again = solve_forward(p, SolverConfig(warm_start=sol.potentials))
    assert again.report.iterations == 1
    assert np.max(np.abs(again.plan - sol.plan)) <= 1e-10


# -- compiled kernel against the numpy reference -----------------------------------------

@pytest.mark.parametrize("gen", ["burg", "fermi-dirac", "beta:0.5", "beta:0.2"])
def test_compiled_rows_match_reference(rng, gen):
    g = get_generator(gen)
    n, gamma = 7, 0.4
    mu, _ = random_marginals(rng, n)
    A = -rng.uniform(0.5, 1.5, size=(n, n))
    t_ref = solve_rows(g, A, mu, gamma, np.zeros(n))
    t_jit = _row_update(g, A, mu, gamma, np.zeros(n))
    assert np.max(np.abs(t_ref - t_jit)) <= 1e-12


def test_burg_unreachable_marginal_raises():
    # dom psi is (-inf, 1): each entry is below 1 / (1 - t) so a row of
    # tiny gamma and huge spread cannot carry the target
    g = get_generator("burg")
    A = np.array([[0.0, -1e6]])
    with pytest.raises(DomainError):
        solve_rows(g, A, np.array([1e9]), 1.0, np.zeros(1))


@settings(max_examples=25, deadline=None)
@given(
    st.integers(2, 6),
    st.floats(0.05, 5.0),
    st.sampled_from(SMOOTH + ["quadratic"]),
    st.integers(0, 2**32 - 1),
)
def test_marginals_property(n, gamma, gen, seed):
    r = np.random.default_rng(seed)
    p = problem(r, n, gamma, gen)
    X = solve_forward(p).plan
    assert np.max(np.abs(X.sum(axis=1) - p.mu)) + np.max(np.abs(X.sum(axis=0) - p.nu)) <= 1e-10
    assert np.all(X >= 0)
