import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import random_marginals, random_sh, squared_distances

from bregiot import (
    ED,
    DomainError,
    GeneratorError,
    MetricCone,
    Sh,
    UnsupportedCase,
    closed_form_inverse,
    construct_cost_nonneg,
    g_map,
    get_generator,
    preimage_representative,
    set_membership,
    stability_rhs,
)
from bregiot.closed_form import forward_plan

PHI0_INF = ["entropy", "burg", "fermi-dirac", "beta:0.5"]


def plan_from_cost(gen, C, rng, gamma=1.0):
    mu, nu = random_marginals(rng, C.shape[0])
    return forward_plan(gen, C, gamma, mu, nu)


# -- G map ------------------------------------------------------------------------

@pytest.mark.parametrize("gen", PHI0_INF + ["quadratic"])
def test_g_map_uniform_plan_is_zero(gen):
    assert np.array_equal(g_map(gen, np.full((2, 2), 0.25), 1.0), np.zeros((2, 2)))


def test_g_map_entropy_example():
    G = g_map("entropy", [[0.4, 0.1], [0.1, 0.4]], 1.0)
    assert G[0, 1] == pytest.approx(math.log(4), abs=1e-15)
    assert G[1, 0] == G[0, 1]
    assert G[0, 0] == G[1, 1] == 0.0


def test_g_map_zero_entry_raises():
    with pytest.raises(DomainError):
        g_map("entropy", [[0.5, 0.0], [0.0, 0.5]], 1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 8), st.sampled_from(PHI0_INF), st.floats(0.01, 10), st.integers(0, 2**32 - 1))
def test_g_map_symmetric_hollow(n, gen, gamma, seed):
    X = np.random.default_rng(seed).uniform(0.01, 0.99, (n, n)) / n
    G = g_map(gen, X, gamma)
    assert np.array_equal(G, G.T)
    assert np.all(np.diag(G) == 0)


# -- set membership -----------------------------------------------------------------

def test_membership_examples():
    X = np.full((3, 3), 1 / 9)
    assert set_membership("entropy", X, 1.0, "u_phi")
    assert not set_membership("entropy", [[0.1, 0.4], [0.4, 0.1]], 1.0, "u_phi")
    G12 = g_map("entropy", [[0.1, 0.4], [0.4, 0.1]], 1.0)[0, 1]
    assert G12 == pytest.approx(math.log(0.01 / 0.16) / 2, abs=1e-15)


def test_membership_u_phi_w_shift():
    X = np.array([[0.1, 0.4], [0.4, 0.1]])
    G12 = g_map("entropy", X, 1.0)[0, 1]
    w = np.full(2, -G12 + 1e-3)
    assert set_membership("entropy", X, 1.0, "u_phi_w", w=w)
    assert not set_membership("entropy", X, 1.0, "u_phi_w", w=np.zeros(2))
    with pytest.raises(ValueError):
        set_membership("entropy", X, 1.0, "u_phi_w")


@pytest.mark.parametrize("gen", PHI0_INF)
def test_ed_costs_give_w_phi_plans(gen, rng):
    for _ in range(5):
        C = squared_distances(rng.uniform(size=(6, 3)))
        X = plan_from_cost(gen, C, rng)
        assert set_membership(gen, X, 1.0, "w_phi")
        assert set_membership(gen, X, 1.0, "v_phi") == MetricCone().contains(C, 1e-8)


@pytest.mark.parametrize("gen", PHI0_INF)
def test_metric_costs_give_v_phi_plans(gen, rng):
    for _ in range(5):
        # Euclidean distances form a metric
        C = np.sqrt(squared_distances(rng.uniform(size=(6, 2))))
        X = plan_from_cost(gen, C, rng)
        assert set_membership(gen, X, 1.0, "v_phi")


def test_non_metric_cost_fails_v_phi(rng):
    C = np.array([[0, 1, 5], [1, 0, 1], [5, 1, 0.0]])
    X = plan_from_cost("entropy", C, rng)
    assert set_membership("entropy", X, 1.0, "u_phi")
    assert not set_membership("entropy", X, 1.0, "v_phi")


def test_v_phi_triple_condition_matches_metric_test_on_g(rng):
    for _ in range(20):
        X = rng.uniform(0.05, 1.0, (5, 5))
        X /= X.sum()
        G = g_map("entropy", X, 1.0)
        expected = bool(np.all(G >= -1e-9)) and MetricCone().contains(G, 1e-9)
        assert set_membership("entropy", X, 1.0, "v_phi") == expected


def test_unknown_plan_set():
    with pytest.raises(ValueError):
        set_membership("entropy", np.full((2, 2), 0.25), 1.0, "z_phi")


# -- nonnegative construction ---------------------------------------------------------

def test_construct_nonneg_entropy_example():
    C = construct_cost_nonneg("entropy", [[0.2, 0.3], [0.3, 0.2]], 1.0)
    assert np.allclose(C, [[math.log(1.5), 0], [0, math.log(1.5)]], atol=1e-15)


@pytest.mark.parametrize("gen", PHI0_INF + ["quadratic"])
def test_construct_nonneg_uniform_is_zero(gen):
    assert np.array_equal(construct_cost_nonneg(gen, np.full((3, 3), 1 / 9), 0.7), np.zeros((3, 3)))


@pytest.mark.parametrize("gen", PHI0_INF)
def test_construct_nonneg_reproduces_plan(gen, rng):
    X = plan_from_cost(gen, rng.uniform(size=(5, 5)), rng)
    C = construct_cost_nonneg(gen, X, 0.5)
    assert np.all(C >= 0)
    assert np.max(np.abs(forward_plan(gen, C, 0.5, X.sum(1), X.sum(0)) - X)) <= 1e-8


def test_construct_nonneg_quadratic_zero_entry():
    X = np.array([[0.2, 0.0], [0.3, 0.5]])
    C = construct_cost_nonneg("quadratic", X, 1.0)
    assert np.all(C >= 0)
    assert np.max(np.abs(forward_plan("quadratic", C, 1.0, X.sum(1), X.sum(0)) - X)) <= 1e-8


def test_construct_nonneg_rejects_zeros_for_entropy():
    with pytest.raises(UnsupportedCase):
        construct_cost_nonneg("entropy", [[0.5, 0.0], [0.0, 0.5]], 1.0)


# -- preimage hyperplane -----------------------------------------------------------------

def test_preimage_representatives(rng):
    X = plan_from_cost("entropy", rng.uniform(size=(4, 4)), rng)
    base = preimage_representative("entropy", X, 1.0)
    assert np.array_equal(base, construct_cost_nonneg("entropy", X, 1.0))
    a, b = np.ones(4), -np.ones(4)
    shifted = preimage_representative("entropy", X, 1.0, a, b)
    assert np.allclose(shifted - base, a[:, None] + b[None, :], atol=1e-14)
    mu, nu = X.sum(1), X.sum(0)
    X1 = forward_plan("entropy", base, 1.0, mu, nu)
    X2 = forward_plan("entropy", shifted, 1.0, mu, nu)
    assert np.max(np.abs(X1 - X2)) <= 1e-8
    assert np.max(np.abs(X1 - X)) <= 1e-8


def test_preimage_random_shifts_reproduce(rng):
    X = plan_from_cost("burg", rng.uniform(size=(5, 5)), rng)
    for _ in range(5):
        a = rng.uniform(0, 1, 5)
        b = rng.uniform(0, 1, 5)
        C = preimage_representative("burg", X, 1.0, a, b)
        assert np.all(C >= 0)
        assert np.max(np.abs(forward_plan("burg", C, 1.0, X.sum(1), X.sum(0)) - X)) <= 1e-8


def test_preimage_needs_infinite_slope():
    with pytest.raises(GeneratorError):
        preimage_representative("quadratic", np.full((2, 2), 0.25), 1.0)


# -- stability bound -----------------------------------------------------------------------

def test_stability_rhs_examples():
    X = np.array([[0.2, 0.3], [0.3, 0.2]])
    assert stability_rhs("entropy", X, X, 1.0) == 0.0
    Y = X.copy()
    Y[0, 0] = 0.1
    assert stability_rhs("entropy", X, Y, 1.0) == pytest.approx(2 * math.log(2), abs=1e-15)


def test_stability_rhs_zero_entry_policy():
    X = np.array([[0.5, 0.0], [0.0, 0.5]])
    with pytest.raises(DomainError):
        stability_rhs("entropy", X, X, 1.0)
    assert stability_rhs("entropy", X, X, 1.0, eps=1e-20) == 0.0


@pytest.mark.parametrize("gen", PHI0_INF)
def test_stability_bound_holds(gen, rng):
    sh = Sh()
    for _ in range(50):
        n = 10
        mu, nu = random_marginals(rng, n)
        C = random_sh(rng, n)
        N = rng.standard_normal((n, n))
        C2 = sh.project(C + 0.01 / np.abs(N).max() * N)
        X = forward_plan(gen, C, 0.5, mu, nu)
        Y = forward_plan(gen, C2, 0.5, mu, nu)
        lhs = np.abs(g_map(gen, X, 0.5) - g_map(gen, Y, 0.5)).max()
        assert lhs <= stability_rhs(gen, X, Y, 0.5) + 1e-9


# -- round trips ----------------------------------------------------------------------------

@pytest.mark.parametrize("gen", PHI0_INF)
def test_round_trip_sh(gen, rng):
    for _ in range(5):
        C = random_sh(rng, 8)
        X = plan_from_cost(gen, C, rng, 0.5)
        assert np.max(np.abs(g_map(gen, X, 0.5) - C)) <= 1e-8
        cert = closed_form_inverse(gen, X, 0.5, "sh")
        assert cert.membership_ok
        assert cert.roundtrip_residual <= 1e-8
        assert np.allclose(cert.cost, cert.cost.T, atol=0)
        assert np.all(np.diag(cert.cost) == 0)
        assert np.all(cert.cost >= -1e-12)


def test_round_trip_shw(rng):
    for _ in range(5):
        w = rng.uniform(0, 1, 6)
        C = random_sh(rng, 6) + 0.5 * (w[:, None] + w[None, :])
        np.fill_diagonal(C, w)
        X = plan_from_cost("entropy", C, rng)
        cert = closed_form_inverse("entropy", X, 1.0, "shw", w=w)
        assert cert.membership_ok
        assert np.max(np.abs(cert.cost - C)) <= 1e-8
        assert np.max(np.abs(cert.cost - (g_map("entropy", X, 1.0) + 0.5 * (w[:, None] + w[None, :])))) <= 1e-15
        assert cert.roundtrip_residual <= 1e-8


def test_round_trip_ed(rng):
    C = squared_distances(rng.uniform(size=(7, 3)))
    X = plan_from_cost("entropy", C, rng)
    cert = closed_form_inverse("entropy", X, 1.0, "ed")
    assert cert.membership_ok
    assert ED().contains(cert.cost, 1e-8)
    assert np.max(np.abs(cert.cost - C)) <= 1e-8


def test_certificate_flags_non_member():
    cert = closed_form_inverse("entropy", [[0.1, 0.4], [0.4, 0.1]], 1.0, "sh")
    assert not cert.membership_ok


def test_whole_space_certificate_quadratic():
    X = np.array([[0.2, 0.0], [0.3, 0.5]])
    cert = closed_form_inverse("quadratic", X, 1.0, "whole_space")
    assert cert.membership_ok
    assert cert.roundtrip_residual <= 1e-8
    d = cert.to_dict()
    assert d["set_id"] == "whole_space" and len(d["cost"]) == 2


def test_closed_form_rejects_bad_input():
    X = np.full((2, 2), 0.25)
    with pytest.raises(ValueError):
        closed_form_inverse("entropy", X, 1.0, "affine")
    with pytest.raises(GeneratorError):
        closed_form_inverse("quadratic", X, 1.0, "sh")
    with pytest.raises(ValueError):
        closed_form_inverse("entropy", X, 1.0, "shw")


def test_quadratic_example_one():
    # X = [[a, 0], [b - a, 1 - b]] is the plan of C = [[0, g], [g, 0]]
    # whenever g >= max(1/2 + a - b, 0)
    a, b = 0.2, 0.5
    X = np.array([[a, 0], [b - a, 1 - b]])
    for g in (0.2, 0.5, 1.0, 3.0):
        C = np.array([[0, g], [g, 0]])
        Y = forward_plan("quadratic", C, 1.0, [a, 1 - a], [b, 1 - b])
        assert np.max(np.abs(Y - X)) <= 1e-9
    # below the threshold the zero entry fills in
    Y = forward_plan("quadratic", np.array([[0, 0.1], [0.1, 0]]), 1.0, [a, 1 - a], [b, 1 - b])
    assert Y[0, 1] > 1e-3


def test_quadratic_example_two():
    X1 = np.array([[0.25, 0.5], [0.0, 0.25]])
    X2 = np.array([[0.25, 0.0], [0.5, 0.25]])
    m1, n1 = np.array([0.75, 0.25]), np.array([0.25, 0.75])
    for g in (0.0, 0.5, 1.0, 4.0):
        C = np.array([[0, g], [g, 0]])
        assert ED().contains(C, 1e-12)
        assert np.max(np.abs(forward_plan("quadratic", C, 1.0, m1, n1) - X1)) <= 1e-9
        assert np.max(np.abs(forward_plan("quadratic", C, 1.0, n1, m1) - X2)) <= 1e-9
    assert np.all((X1 > 0) | (X2 > 0))
