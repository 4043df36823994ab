import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kawasaki_stefan import stefan
from kawasaki_stefan.lattice import Torus
from kawasaki_stefan.profiles import get_profile


def test_flux_hand_values():
    assert stefan.flux(0.0, 1.0, 2.0) == 0.0
    assert stefan.flux(0.5, 1.0, 2.0) == 0.5
    assert stefan.flux(-0.5, 1.0, 2.0) == -1.0


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.1, 5), st.floats(0.1, 5))
def test_flux_is_monotone(a, b, d1, d2):
    if a < b:
        assert stefan.flux(a, d1, d2) < stefan.flux(b, d1, d2)


def test_constants_are_stationary():
    w0 = np.full(32, 0.3)
    traj = stefan.solve_limit(w0, 0.05, 1.0, 2.0, 32)
    assert np.all(traj.final == 0.3)


def test_step_size():
    assert stefan.stefan_dt(10, 2, 1.0, 3.0) == pytest.approx(0.9 / (2 * 2 * 3 * 100))


def test_rejects_large_initial_data():
    with pytest.raises(ValueError):
        stefan.solve_limit(np.full(8, 1.5), 0.01, 1.0, 1.0, 8)


@pytest.mark.parametrize("M", [64, 128, 256])
def test_heat_comparison_within_scheme_error(M):
    T, D = 0.1, 1.5
    prof = get_profile("mixed")
    torus = Torus(1, M)
    w0 = prof.signed(torus)
    traj = stefan.solve_limit(w0, T, D, D, M)
    ref = stefan.heat_reference(prof.w0, T, D, M)  # the floors cancel in w0
    err = np.abs(traj.final - ref).max()
    assert err <= 5 * (traj.dt + M**-2) * np.abs(w0).max()


def test_mass_conserved_with_different_slopes():
    M = 128
    w0 = get_profile("two-bump").signed(Torus(1, M))
    traj = stefan.solve_limit(w0, 0.05, 1.0, 3.0, M, output_times=np.linspace(0, 0.05, 6))
    mass = traj.w.sum(axis=1)
    assert np.abs(mass - mass[0]).max() <= 1e-12 * max(1.0, np.abs(w0).sum())


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=15)
def test_l1_contraction(seed):
    rng = np.random.default_rng(seed)
    M = 32
    a = rng.uniform(-1, 1, M)
    b = rng.uniform(-1, 1, M)
    ta = stefan.solve_limit(a, 0.02, 1.0, 2.5, M, output_times=np.linspace(0, 0.02, 5))
    tb = stefan.solve_limit(b, 0.02, 1.0, 2.5, M, output_times=np.linspace(0, 0.02, 5))
    dist = np.abs(ta.w - tb.w).sum(axis=1)
    assert np.all(np.diff(dist) <= 1e-12)


def test_segregated_densities_from_limit():
    M = 64
    w = stefan.solve_limit(get_profile("sine").signed(Torus(1, M)), 0.02, 1.0, 2.0, M).final
    u1, u2 = np.maximum(w, 0), np.maximum(-w, 0)
    assert np.all(u1 * u2 == 0)


def test_psi_zero_gives_zero_residual():
    zero = stefan.TestFunction("zero", lambda t: 0.0, lambda t: 0.0, lambda r: np.zeros(len(np.atleast_2d(r))), lambda r: np.zeros(len(np.atleast_2d(r))))
    traj = stefan.solve_limit(get_profile("sine").signed(Torus(1, 16)), 0.01, 1.0, 2.0, 16)
    assert stefan.weak_residual(traj, zero) == 0.0


def test_constant_solution_residual_is_quadrature_small():
    M, T = 32, 0.05
    traj = stefan.solve_limit(np.full(M, 0.4), T, 1.0, 2.0, M, store_every=1)
    for psi in stefan.builtin_test_functions(T):
        assert stefan.weak_residual(traj, psi) < 1e-8


def test_builtin_family_vanishes_at_final_time():
    T = 0.3
    r = np.linspace(0, 1, 7)[:, None]
    for psi in stefan.builtin_test_functions(T, 1):
        assert np.all(psi.psi(T, r) == 0)


def test_residual_converges_under_refinement():
    T = 0.05
    prof = get_profile("mixed")
    psis = stefan.builtin_test_functions(T)
    res = {}
    for M in (32, 64, 128):
        torus = Torus(1, M)
        obs = [stefan.StreamingResidual(p, torus, 1.0, 1.0) for p in psis]
        stefan.solve_limit(prof.signed(torus), T, 1.0, 1.0, M, observers=obs)
        res[M] = np.array([o.value for o in obs])
    order = np.log2(res[64] / res[128])
    assert np.all(res[128] < res[64]) and np.all(res[64] < res[32])
    assert np.all(order >= 1.0)


def test_streaming_residual_matches_stored_trajectory():
    M, T = 32, 0.02
    torus = Torus(1, M)
    w0 = get_profile("mixed").signed(torus)
    psi = stefan.builtin_test_functions(T)[2]
    obs = stefan.StreamingResidual(psi, torus, 1.0, 2.0)
    traj = stefan.solve_limit(w0, T, 1.0, 2.0, M, store_every=1, observers=[obs])
    assert obs.value == pytest.approx(stefan.weak_residual(traj, psi), rel=1e-10, abs=1e-15)


def test_interface_empty_for_constant_sign():
    assert stefan.interface_extract_1d(np.full(16, 0.3)) == []


def test_interface_of_smoothed_sign_wave():
    M = 201  # odd, so no cell sits exactly on a zero
    r = np.arange(M) / M
    w = 0.2 * np.tanh(20 * np.sin(2 * np.pi * r + 1e-3))
    cr = stefan.interface_extract_1d(w)
    locs = sorted(c.r for c in cr)
    assert len(locs) == 2
    near0 = min(locs, key=lambda x: min(x, 1 - x))
    near_half = min(locs, key=lambda x: abs(x - 0.5))
    assert min(near0, 1 - near0) < 1 / M
    assert abs(near_half - 0.5) < 1 / M


def test_interface_slopes_of_tent():
    # w = r - 1/2 near the crossing on the positive side, steeper on the other
    M = 40
    r = (np.arange(M) + 0.5) / M  # shifted grid keeps w nonzero at every site
    w = np.where(r > 0.5, r - 0.5, 2 * (r - 0.5))
    w = np.where(r < 0.1, 0.8, w)  # keep a single crossing in [0.1, 1)
    cr = [c for c in stefan.interface_extract_1d(w) if abs(c.r - 0.5) < 0.1][0]
    assert cr.slope_pos == pytest.approx(1.0)
    assert cr.slope_neg == pytest.approx(2.0)
    assert cr.flux_mismatch(2.0, 1.0) == pytest.approx(0.0)


def test_stefan_flux_balance_improves_with_refinement():
    T, d1, d2 = 0.02, 1.0, 2.0
    prof = get_profile("sine")
    mismatch = []
    for M in (64, 128, 256):
        w = stefan.solve_limit(prof.signed(Torus(1, M)), T, d1, d2, M).final
        cr = stefan.interface_extract_1d(w)
        assert len(cr) == 2
        scale = max(max(abs(d1 * c.slope_pos), abs(d2 * c.slope_neg)) for c in cr)
        mismatch.append(max(c.flux_mismatch(d1, d2) for c in cr) / scale)
    assert mismatch[2] < mismatch[1] < mismatch[0]
