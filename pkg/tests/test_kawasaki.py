import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from kawasaki_stefan import oracle
from kawasaki_stefan.kawasaki import (
    KILL,
    AbsorbingState,
    EventLog,
    KawasakiSimulator,
    SimParams,
    count_rates,
    empirical_pairing,
    replica_rng,
    sample_bernoulli_pair,
    simulate,
    step,
    total_event_rate,
)
from kawasaki_stefan.lattice import PairConfig, Torus


def _config(s1, s2, d=1):
    s1 = np.asarray(s1)
    N = round(len(s1) ** (1 / d))
    return PairConfig(Torus(d, N), s1, np.asarray(s2))


configs = st.integers(2, 12).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 1), min_size=n, max_size=n), st.lists(st.integers(0, 1), min_size=n, max_size=n))
)


def test_total_rate_hand_count():
    c = _config([1, 0, 0, 0], [1, 0, 0, 0])
    assert count_rates(c) == (2, 2, 1)
    assert total_event_rate(c, SimParams(1, 1, 5, 4)) == 69.0


def test_empty_and_full_configs_have_no_events():
    t = Torus(1, 6)
    assert total_event_rate(PairConfig.empty(t), SimParams(1, 1, 3, 6)) == 0
    full = PairConfig(t, np.ones(6), np.zeros(6))
    assert total_event_rate(full, SimParams(1, 2, 7, 6)) == 0


def test_bernoulli_sampling_degenerate_and_mean():
    t = Torus(1, 10_000)
    c = sample_bernoulli_pair(np.zeros(t.size), np.ones(t.size), t, replica_rng(1))
    assert c.counts == (0, t.size)
    c = sample_bernoulli_pair(np.full(t.size, 0.5), np.full(t.size, 0.5), t, replica_rng(2))
    # 99% normal interval for the mean of 10^4 fair coins is about +-0.013
    assert abs(c.counts[0] / t.size - 0.5) < 0.02


def test_bernoulli_sampling_rejects_bad_densities():
    t = Torus(1, 4)
    with pytest.raises(ValueError):
        sample_bernoulli_pair(np.full(4, 1.2), np.zeros(4), t, replica_rng(0))


def test_sampling_is_deterministic_per_seed():
    t = Torus(2, 8)
    u = np.full(t.size, 0.3)
    assert sample_bernoulli_pair(u, u, t, replica_rng(5, 2)) == sample_bernoulli_pair(u, u, t, replica_rng(5, 2))
    assert sample_bernoulli_pair(u, u, t, replica_rng(5, 2)) != sample_bernoulli_pair(u, u, t, replica_rng(5, 3))


def test_single_kill_is_forced():
    c = _config([1, 1, 1, 1], [1, 1, 1, 1])
    new, dt, (kind, loc) = step(c, SimParams(1, 1, 2.0, 4), replica_rng(0))
    assert kind == KILL
    assert new.sigma1[loc] == 0 and new.sigma2[loc] == 0
    assert dt > 0


def test_holding_time_is_exponential():
    c = _config([1, 1, 1, 1], [1, 0, 0, 0])
    params = SimParams(1.0, 1.0, 3.0, 4)
    rate = total_event_rate(c, params)
    rng = replica_rng(11)
    waits = np.array([KawasakiSimulator(c, params, rng).step()[0] for _ in range(4000)])
    assert stats.kstest(waits, "expon", args=(0, 1 / rate)).pvalue > 1e-3


def test_absorbing_state_signalled():
    with pytest.raises(AbsorbingState):
        step(PairConfig.empty(Torus(1, 4)), SimParams(1, 1, 1, 4), replica_rng(0))


@given(configs, st.integers(0, 2**32 - 1), st.one_of(st.just(0.0), st.floats(1e-3, 5)))
@settings(max_examples=60)
def test_conservation_and_bookkeeping(cfg, seed, K):
    c = _config(*cfg)
    params = SimParams(1.0, 0.7, K, c.torus.N)
    sim = KawasakiSimulator(c, params, replica_rng(seed))
    n1, n2 = c.counts
    elog = EventLog()
    sim.advance(np.inf, max_events=200, event_log=elog)
    m1, m2 = sim.counts
    assert m1 - m2 == n1 - n2
    kills = int(np.count_nonzero(elog.kind == KILL))
    assert n1 - m1 == kills == n2 - m2
    assert sim.check_bookkeeping()
    assert np.all(np.diff(elog.time) > 0)


def test_kills_only_at_double_sites():
    t = Torus(1, 16)
    rng = replica_rng(3)
    c = sample_bernoulli_pair(np.full(16, 0.6), np.full(16, 0.6), t, rng)
    sim = KawasakiSimulator(c, SimParams(1, 1, 50.0, 16), rng)
    for _ in range(300):
        if sim.total_rate == 0:
            break
        before1, before2 = sim.s1.copy(), sim.s2.copy()
        _, kind, loc = sim.step()
        if kind == KILL:
            assert before1[loc] == 1 and before2[loc] == 1


def test_K0_preserves_particle_numbers():
    t = Torus(2, 8)
    rng = replica_rng(4)
    c = sample_bernoulli_pair(np.full(t.size, 0.4), np.full(t.size, 0.7), t, rng)
    res = simulate(c, 0.05, SimParams(1, 2, 0.0, 8, d=2), rng)
    assert res.config.counts == c.counts
    assert res.n_events > 0


def test_simulate_zero_time_is_identity():
    t = Torus(1, 8)
    c = sample_bernoulli_pair(np.full(8, 0.5), np.full(8, 0.5), t, replica_rng(0))
    res = simulate(c, 0.0, SimParams(1, 1, 1, 8), replica_rng(0), record_events=True)
    assert res.config == c and len(res.log) == 0


def test_event_log_is_reproducible():
    t = Torus(1, 32)
    c = sample_bernoulli_pair(np.full(32, 0.5), np.full(32, 0.3), t, replica_rng(9))
    logs = [simulate(c, 0.02, SimParams(1, 1, 2, 32), replica_rng(9, 1), record_events=True).log.tobytes() for _ in range(2)]
    assert logs[0] == logs[1] and len(logs[0]) > 0


def test_pairing_hand_value():
    c = _config([1, 0, 1, 0], [0, 0, 0, 0])
    assert empirical_pairing(c, lambda p: p[:, 0], 1) == pytest.approx(0.125)
    assert empirical_pairing(c, lambda p: np.ones(len(p)), 1) == 0.5
    assert empirical_pairing(c, lambda p: p[:, 0], 2) == 0.0


def test_generator_out_rates_match_simulator_rates():
    N = 3
    space = oracle.enumerate_states(N)
    L = oracle.build_generator(N, 1.0, 2.5, 1.5, space)
    params = SimParams(1.0, 2.5, 1.5, N)
    for s in range(space.size):
        assert -L[s, s] == pytest.approx(total_event_rate(space.config(s), params), rel=1e-14)


def test_law_at_small_time_matches_master_equation():
    # chi-square of simulated terminal states against the exact forward solution
    N, T, R = 3, 0.03, 6000
    params = SimParams(1.0, 2.0, 4.0, N)
    space = oracle.enumerate_states(N)
    c0 = _config([1, 1, 0], [0, 1, 1])
    mu0 = np.zeros(space.size)
    mu0[space.index(c0)] = 1.0
    exact = oracle.evolve_master(mu0, oracle.build_generator(N, 1.0, 2.0, 4.0, space), T)
    counts = np.zeros(space.size)
    for r in range(R):
        counts[space.index(simulate(c0, T, params, replica_rng(77, r)).config)] += 1
    keep = exact * R >= 5
    rest = exact[~keep].sum()
    obs, exp = counts[keep], exact[keep] * R
    if rest * R >= 1:
        obs, exp = np.append(obs, counts[~keep].sum()), np.append(exp, rest * R)
    assert counts[exact < 1e-12].sum() == 0
    exp *= obs.sum() / exp.sum()
    assert stats.chisquare(obs, exp).pvalue > 1e-3


def test_equilibrium_occupation_is_bernoulli():
    # K = 0 from constant-density product measure: time-T marginals stay Bernoulli(p)
    N, p, R = 64, 0.5, 60
    t = Torus(1, N)
    params = SimParams(1.0, 1.0, 0.0, N)
    occ = []
    for r in range(R):
        rng = replica_rng(123, r)
        c = sample_bernoulli_pair(np.full(N, p), np.full(N, p), t, rng)
        occ.append(simulate(c, 0.05, params, rng).config.sigma1.mean())
    se = np.sqrt(p * (1 - p) / (N * R))
    assert abs(np.mean(occ) - p) < 3 * se
