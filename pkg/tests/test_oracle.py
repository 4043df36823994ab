import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kawasaki_stefan import oracle
from kawasaki_stefan.hydro import HydroParams, heat_evolve
from kawasaki_stefan.kawasaki import SimParams, total_event_rate
from kawasaki_stefan.lattice import PairConfig, Torus


@pytest.fixture(scope="module")
def space4():
    return oracle.enumerate_states(4)


@pytest.mark.parametrize("N,size", [(1, 4), (2, 16), (8, 65536)])
def test_state_space_sizes(N, size):
    assert oracle.enumerate_states(N).size == size


def test_state_space_budget():
    with pytest.raises(MemoryError):
        oracle.enumerate_states(oracle.MAX_SITES + 1)


def test_state_indexing_round_trip(space4):
    for s in (0, 1, 77, 255):
        assert space4.index(space4.config(s)) == s
    cfg = PairConfig(Torus(1, 4), np.array([1, 0, 0, 0]), np.array([0, 0, 0, 1]))
    # bit 2x holds sigma1, bit 2x+1 holds sigma2
    assert space4.index(cfg) == 1 + 2**7


def test_product_measure_is_a_full_support_probability(space4):
    nu = oracle.product_measure([0.2, 0.4, 0.6, 0.8], [0.9, 0.1, 0.5, 0.3], space4)
    assert nu.sum() == pytest.approx(1.0, abs=1e-12)
    assert nu.min() > 0


def test_product_measure_factorises():
    sp = oracle.enumerate_states(2)
    nu = oracle.product_measure([0.2, 0.7], [0.4, 0.5], sp)
    s = sp.index(PairConfig(Torus(1, 2), np.array([1, 0]), np.array([1, 1])))
    assert nu[s] == pytest.approx(0.2 * 0.3 * 0.4 * 0.5)


# generator


@pytest.mark.parametrize("K", [0.0, 1.0, 2.0])
def test_generator_row_sums(space4, K):
    L = oracle.build_generator(4, 1.0, 1.7, K, space4)
    assert np.abs(L.sum(axis=1)).max() <= 1e-13
    off = L - np.diag(L.diagonal())
    assert off.min() >= 0


def test_generator_hand_rates():
    # N = 2, state sigma1 = (1,0), sigma2 = (1,1): species-1 exchange on two bonds, kill at site 0
    sp = oracle.enumerate_states(2)
    L = oracle.build_generator(2, 1.5, 2.0, 3.0, sp).toarray()
    s = sp.index(PairConfig(Torus(1, 2), np.array([1, 0]), np.array([1, 1])))
    assert -L[s, s] == pytest.approx(2 * 4 * 1.5 + 3.0)
    killed = sp.index(PairConfig(Torus(1, 2), np.array([0, 0]), np.array([0, 1])))
    assert L[s, killed] == 3.0


@pytest.mark.parametrize("p", [0.1, 0.5, 0.8])
def test_constant_product_measure_is_stationary_without_killing(space4, p):
    L = oracle.build_generator(4, 1.0, 2.0, 0.0, space4)
    nu = oracle.product_measure(np.full(4, p), np.full(4, 1 - p), space4)
    assert np.abs(L.T @ nu).max() <= 1e-13


def test_out_rates_match_simulator(space4):
    L = oracle.build_generator(4, 1.3, 0.7, 2.5, space4)
    params = SimParams(1.3, 0.7, 2.5, 4)
    for s in range(0, space4.size, 17):
        assert -L[s, s] == pytest.approx(total_event_rate(space4.config(s), params), rel=1e-14)


# master equation


def test_evolve_zero_time(space4):
    L = oracle.build_generator(4, 1.0, 1.0, 1.0, space4)
    mu0 = oracle.product_measure(np.full(4, 0.3), np.full(4, 0.6), space4)
    assert np.array_equal(oracle.evolve_master(mu0, L, 0.0), mu0)


def test_evolve_keeps_stationary_measure(space4):
    L = oracle.build_generator(4, 1.0, 1.0, 0.0, space4)
    nu = oracle.product_measure(np.full(4, 0.3), np.full(4, 0.6), space4)
    assert oracle.evolve_master(nu, L, 0.5) == pytest.approx(nu, abs=1e-10)


def test_dop853_agrees_with_expm():
    sp = oracle.enumerate_states(3)
    L = oracle.build_generator(3, 1.0, 2.0, 1.5, sp)
    mu0 = oracle.product_measure([0.2, 0.5, 0.9], [0.6, 0.3, 0.4], sp)
    a = oracle.evolve_master(mu0, L, 0.1, tol=1e-12)
    b = oracle.evolve_master(mu0, L, 0.1, method="expm")
    assert a == pytest.approx(b, abs=1e-11)
    assert a.sum() == pytest.approx(1.0, abs=1e-10)


def test_marginals_follow_heat_flow_without_killing(space4):
    u1 = np.array([0.1, 0.8, 0.4, 0.6])
    u2 = np.array([0.5, 0.2, 0.7, 0.3])
    d1, d2, T = 1.0, 2.0, 0.05
    L = oracle.build_generator(4, d1, d2, 0.0, space4)
    mu = oracle.evolve_master(oracle.product_measure(u1, u2, space4), L, T, tol=1e-12)
    torus = Torus(1, 4)
    assert mu @ space4.sigma1 == pytest.approx(heat_evolve(u1, T, torus, d1), abs=1e-8)
    assert mu @ space4.sigma2 == pytest.approx(heat_evolve(u2, T, torus, d2), abs=1e-8)


# entropy and Dirichlet form


def test_relative_entropy_of_point_mass():
    sp = oracle.enumerate_states(2)
    nu = oracle.product_measure(np.full(2, 0.5), np.full(2, 0.5), sp)
    mu = np.zeros(sp.size)
    mu[5] = 1.0
    assert oracle.relative_entropy(mu, nu) == pytest.approx(4 * math.log(2))
    assert oracle.relative_entropy(nu, nu) == 0.0


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25)
def test_relative_entropy_gibbs(seed):
    rng = np.random.default_rng(seed)
    mu = rng.random(16)
    mu /= mu.sum()
    nu = rng.random(16) + 0.01
    nu /= nu.sum()
    assert oracle.relative_entropy(mu, nu) >= 0


def test_dirichlet_form_single_site_function():
    # f = sigma1(0) on N = 2: every ordered neighbour pair sees P(sigma1(0) != sigma1(1))
    sp = oracle.enumerate_states(2)
    nu = oracle.product_measure([0.3, 0.6], [0.5, 0.5], sp)
    f = sp.sigma1[:, 0].astype(float)
    assert oracle.dirichlet_form(f, nu, sp, d1=2.0, d2=5.0) == pytest.approx(2.0 * (0.3 * 0.4 + 0.6 * 0.7))


def test_dirichlet_form_of_constant_is_zero(space4):
    nu = oracle.product_measure(np.full(4, 0.4), np.full(4, 0.4), space4)
    assert oracle.dirichlet_form(np.full(space4.size, 3.0), nu, space4) == 0.0


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=10)
def test_dirichlet_form_nonnegative(seed):
    sp = oracle.enumerate_states(3)
    rng = np.random.default_rng(seed)
    nu = oracle.product_measure(rng.uniform(0.1, 0.9, 3), rng.uniform(0.1, 0.9, 3), sp)
    assert oracle.dirichlet_form(rng.normal(size=sp.size), nu, sp) >= 0


def test_adjoint_of_one_has_zero_mean(space4):
    L = oracle.build_generator(4, 1.0, 1.5, 2.0, space4)
    nu = oracle.product_measure([0.2, 0.5, 0.7, 0.4], [0.6, 0.3, 0.2, 0.8], space4)
    assert abs(nu @ oracle.adjoint_one(L, nu)) <= 1e-12


# V-decomposition


def test_vdecomp_constant_densities(space4):
    u1, u2 = np.full(4, 0.3), np.full(4, 0.55)
    V1, V2, _ = oracle.v_terms(u1, u2, 2.0, 1.0, 1.0, space4)
    assert np.all(V1 == 0) and np.all(V2 == 0)
    assert oracle.verify_V_decomposition(u1, u2, 2.0, 4, space=space4) <= 1e-11


@given(st.integers(0, 2**32 - 1), st.sampled_from([0.0, 1.0, 2.0, 4.0]))
@settings(max_examples=20)
def test_vdecomp_random_fields(seed, K):
    rng = np.random.default_rng(seed)
    u1 = rng.uniform(0.05, 0.95, 4)
    u2 = rng.uniform(0.05, 0.95, 4)
    d1, d2 = rng.uniform(0.5, 2, 2)
    assert oracle.verify_V_decomposition(u1, u2, K, 4, d1, d2) <= 1e-10


def test_vdecomp_rejects_boundary_densities():
    with pytest.raises(ValueError):
        oracle.verify_V_decomposition(np.array([0.0, 0.5]), np.full(2, 0.5), 1.0, 2)


# entropy inequality


def test_entropy_inequality_from_product_start():
    x = np.arange(4) / 4
    u1 = 0.5 + 0.3 * np.sin(2 * np.pi * x)
    u2 = 0.5 - 0.3 * np.cos(2 * np.pi * x)
    r = oracle.verify_entropy_inequality(u1, u2, HydroParams(1.0, 1.0, 1.0, 4), np.linspace(0, 1, 11))
    assert r.entropy[0] == pytest.approx(0.0, abs=1e-15)
    assert np.all(r.entropy >= -1e-12)
    assert np.all(r.margin >= -1e-6)
    assert np.all(r.margin_fd[1:] >= -1e-6)
    assert np.isnan(r.margin_fd[0])


def test_entropy_derivative_matches_finite_difference():
    x = np.arange(4) / 4
    u1 = 0.5 + 0.2 * np.sin(2 * np.pi * x)
    u2 = 0.4 + 0.2 * np.cos(2 * np.pi * x)
    r = oracle.verify_entropy_inequality(u1, u2, HydroParams(1.0, 2.0, 1.0, 4), [0.2, 0.5])
    assert r.margin == pytest.approx(r.margin_fd, abs=1e-5)


def test_entropy_stationary_case_is_flat():
    u = np.full(4, 0.4)
    r = oracle.verify_entropy_inequality(u, u, HydroParams(1.0, 1.0, 0.0, 4), [0.0, 0.5, 1.0])
    assert np.abs(r.entropy).max() <= 1e-10
    assert np.abs(r.margin).max() <= 1e-10


def test_entropy_per_site_stays_bounded_and_decreases():
    per_site = []
    for N in (2, 4, 6):
        x = np.arange(N) / N
        u1 = 0.5 + 0.3 * np.sin(2 * np.pi * x)
        u2 = 0.5 - 0.3 * np.cos(2 * np.pi * x)
        r = oracle.verify_entropy_inequality(u1, u2, HydroParams(1.0, 1.0, 1.0, N), np.linspace(0, 1, 6), tol=1e-10)
        per_site.append(float((r.entropy / N).max()))
    assert max(per_site) < 0.1
    assert per_site[2] < per_site[1] < per_site[0]


# integration by parts


def test_ibp_trivial_h_and_f(space4):
    u1 = np.full(4, 0.5)
    u2 = np.array([0.2, 0.6, 0.3, 0.7])
    one = np.ones(space4.size)
    r = oracle.verify_ibp(one, one, u1, u2, 1, 2, 1.0, space4)
    assert r.lhs == pytest.approx(u2[2] - u2[1], abs=1e-15)


def test_ibp_constant_u2_and_invariant_h_has_no_remainder(space4):
    rng = np.random.default_rng(0)
    sw = oracle.swap2(space4, 0, 1)
    h = rng.normal(size=space4.size)
    h = 0.5 * (h + h[sw])
    f = rng.random(space4.size)
    r = oracle.verify_ibp(h, f, rng.uniform(0.2, 0.8, 4), np.full(4, 0.4), 0, 1, 1.0, space4)
    assert abs(r.R1) <= 1e-15


@given(st.integers(0, 2**32 - 1), st.booleans())
@settings(max_examples=20)
def test_ibp_identity_and_bound(seed, invariant):
    sp = oracle.enumerate_states(4)
    rng = np.random.default_rng(seed)
    u1 = rng.uniform(0.1, 0.9, 4)
    u2 = rng.uniform(0.1, 0.9, 4)
    x = int(rng.integers(4))
    y = (x + 1) % 4
    h = rng.normal(size=sp.size)
    if invariant:
        h = 0.5 * (h + h[oracle.swap2(sp, x, y)])
    f = rng.random(sp.size) + 0.05
    r = oracle.verify_ibp(h, f, u1, u2, x, y, 2.0, sp)
    assert r.defect <= 1e-12
    assert r.within_bound


def test_swap2_is_an_involution(space4):
    sw = oracle.swap2(space4, 1, 2)
    assert np.array_equal(sw[sw], np.arange(space4.size))


# exponential bound


def test_binomial_exceedance_small_case():
    # n = 4, p = 1/2, eps = 0.3: only S in {0, 4} deviate by more than 0.3
    assert oracle.binomial_exceedance(4, 0.5, 0.3) == pytest.approx(2 / 16)


def test_clopper_pearson_brackets_estimate():
    lo, hi = oracle.clopper_pearson(30, 1000, 0.05)
    assert lo < 0.03 < hi
    assert oracle.clopper_pearson(0, 100)[0] == 0.0
    assert oracle.clopper_pearson(100, 100)[1] == 1.0


def test_exceedance_empty_when_eps_exceeds_phi():
    res = oracle.ldp_check(lambda p: np.full(len(p), 0.5), lambda p: np.full(len(p), 0.5), 0.6, [8], 1000)
    assert res[0].p_hat == 0.0 and res[0].exact == 0.0


def test_exceedance_matches_exact_binomial():
    res = oracle.ldp_check(lambda p: np.full(len(p), 0.5), lambda p: np.ones(len(p)), 0.1, [16, 32], 100_000, seed=3)
    for r in res:
        lo, hi = oracle.clopper_pearson(r.exceed, r.replicas, 0.001)
        assert lo <= r.exact <= hi
        assert r.rate > 0
