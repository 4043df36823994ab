"""Verification suites behind ``verify --suite``.

Each suite returns :class:`SuiteRow` records: a defect (compared as
``value <= bound``) or a margin (compared as ``value >= bound``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import flows, oracle
from .hydro import HydroParams
from .kawasaki import SimParams, total_event_rate
from .lattice import Torus
from .profiles import random_admissible

__all__ = ["SuiteRow", "SUITES", "run_suite", "ldp_summary"]


@dataclass(frozen=True)
class SuiteRow:
    suite: str
    instance_id: str
    value: float
    bound: float
    kind: str = "defect"  # or "margin"

    @property
    def passed(self) -> bool:
        if not np.isfinite(self.value):
            return False
        return self.value <= self.bound if self.kind == "defect" else self.value >= self.bound


def _rand_state_fields(N, rng, lo=0.05, hi=0.9):
    return random_admissible(Torus(1, N), rng, lo, hi, modes=2)


def suite_adjoint(N: int, K: float, seed: int) -> list[SuiteRow]:
    """Generator structure: row sums, equilibrium at K = 0, outgoing rates, ``E_nu[L^{*,nu} 1] = 0``."""
    rng = np.random.default_rng(seed)
    space = oracle.enumerate_states(N)
    rows = []
    for k in (0.0, 1.0, 2.0, float(K)):
        L = oracle.build_generator(N, 1.0, 1.0, k, space)
        rows.append(SuiteRow("adjoint", f"rowsum_K{k:g}", float(np.abs(L.sum(axis=1)).max()), 1e-13))
    L0 = oracle.build_generator(N, 1.0, 1.5, 0.0, space)
    for p in (0.2, 0.5, 0.7):
        nu = oracle.product_measure(np.full(N, p), np.full(N, 1 - p), space)
        rows.append(SuiteRow("adjoint", f"stationary_p{p:g}", float(np.abs(L0.T @ nu).max()), 1e-13))
    L = oracle.build_generator(N, 1.0, 1.5, K, space)
    params = SimParams(1.0, 1.5, K, N)
    out_rate = -L.diagonal()
    for s in rng.choice(space.size, size=min(10, space.size), replace=False):
        ref = total_event_rate(space.config(int(s)), params)
        rows.append(SuiteRow("adjoint", f"out_rate_s{int(s)}", abs(out_rate[s] - ref) / max(1.0, ref), 1e-13))
    for i in range(5):
        u1, u2 = _rand_state_fields(N, rng)
        nu = oracle.product_measure(u1, u2, space)
        rows.append(SuiteRow("adjoint", f"mean_zero_{i}", abs(float(np.dot(nu, oracle.adjoint_one(L, nu)))), 1e-12))
    return rows


def suite_vdecomp(N: int, K: float, seed: int, n: int = 25) -> list[SuiteRow]:
    rng = np.random.default_rng(seed)
    space = oracle.enumerate_states(N)
    rows = []
    for i in range(n):
        d1, d2 = rng.uniform(0.5, 2.0, size=2)
        L = oracle.build_generator(N, d1, d2, K, space)
        u1, u2 = _rand_state_fields(N, rng)
        defect = oracle.verify_V_decomposition(u1, u2, K, N, d1, d2, space=space, L=L)
        rows.append(SuiteRow("vdecomp", str(i), defect, 1e-10))
    return rows


def suite_entropy(N: int, K: float, seed: int, n_times: int = 50, h: float = 1e-4, T: float = 1.0) -> list[SuiteRow]:
    """Margins at ``n_times`` equispaced times in ``(0, T]`` with ``mu_0 = nu_0``.

    One row per time for the centred-difference margin and one for the
    closed-form derivative (which also covers ``t = 0``).
    """
    rng = np.random.default_rng(seed)
    u1, u2 = _rand_state_fields(N, rng, 0.1, 0.85)
    times = T * np.arange(1, n_times + 1) / n_times
    res = oracle.verify_entropy_inequality(u1, u2, HydroParams(1.0, 1.0, K, N), np.concatenate([[0.0], times]), h=h)
    rows = []
    for t, m, mfd in zip(res.times, res.margin, res.margin_fd):
        if t > 0:
            rows.append(SuiteRow("entropy-ineq", f"fd_t{t:.4f}", float(mfd), -1e-6, "margin"))
        rows.append(SuiteRow("entropy-ineq", f"exact_t{t:.4f}", float(m), -1e-6, "margin"))
    return rows


def suite_ibp(N: int, K: float, seed: int, n: int = 50) -> list[SuiteRow]:
    """Exact identity and remainder bound; half of the instances use a swap-invariant ``h``."""
    if K <= 0:
        raise ValueError("the integration-by-parts bound needs K > 0")
    rng = np.random.default_rng(seed)
    space = oracle.enumerate_states(N)
    rows = []
    for i in range(n):
        u1, u2 = _rand_state_fields(N, rng)
        x = int(rng.integers(N))
        y = (x + 1) % N
        sw = oracle.swap2(space, x, y)
        h = rng.normal(size=space.size)
        if i % 2 == 0:
            h = 0.5 * (h + h[sw])
        nu = oracle.product_measure(u1, u2, space)
        f = rng.random(space.size) + 0.05
        f /= np.dot(f, nu)
        r = oracle.verify_ibp(h, f, u1, u2, x, y, K, space)
        rows.append(SuiteRow("ibp", f"{i}_identity", r.defect, 1e-12))
        rows.append(SuiteRow("ibp", f"{i}_remainder", r.bound - abs(r.R1), 0.0, "margin"))
    return rows


def ldp_summary(results: list[oracle.LDPResult]) -> dict:
    Ns = np.array([r.N for r in results], float)
    neglog = np.array([-math.log(r.p_hat) if r.p_hat > 0 else -math.log(r.p_upper) for r in results])
    slope = float(np.polyfit(Ns, neglog, 1)[0]) if len(Ns) > 1 else float("nan")
    return {"N": Ns, "neglog": neglog, "rate": neglog / Ns, "slope": slope}


def suite_ldp(N: int, K: float, seed: int, Ns=(16, 32, 64), eps: float = 0.1, replicas: int = 200_000) -> list[SuiteRow]:
    """Bernoulli(1/2) deviations of the mass pairing, with the exact binomial tail alongside."""
    res = oracle.ldp_check(lambda p: np.full(len(p), 0.5), lambda p: np.ones(len(p)), eps, Ns, replicas, seed=seed)
    summ = ldp_summary(res)
    rows = []
    for r, nl in zip(res, summ["neglog"]):
        rows.append(SuiteRow("ldp", f"rate_N{r.N}", nl / r.N, 0.0, "margin"))
        lo, hi = oracle.clopper_pearson(r.exceed, r.replicas, 0.01)
        # exact tail must lie inside the 99% interval of the estimate
        inside = max(lo - r.exact, r.exact - hi, 0.0)
        rows.append(SuiteRow("ldp", f"exact_N{r.N}", inside, 0.0))
    for a, b, na, nb in zip(res, res[1:], summ["neglog"], summ["neglog"][1:]):
        rows.append(SuiteRow("ldp", f"increase_N{a.N}_N{b.N}", nb - na, 0.0, "margin"))
    rows.append(SuiteRow("ldp", "slope_vs_volume", summ["slope"], 0.0, "margin"))
    return rows


def suite_concentration(N: int, K: float, seed: int, n_max: int = 12, n_gamma: int = 6) -> list[SuiteRow]:
    """Exact enumeration for two-point variables, ``gamma`` on a grid up to ``1/kappa``.

    The recorded value is ``rhs - lhs``.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for n in range(1, n_max + 1):
        for rep in range(3):
            a = rng.uniform(-1, 1, n)
            b = a + rng.uniform(0.1, 2, n)
            p = rng.uniform(0.02, 0.98, n)
            kappa = float(np.sum((b - a) ** 2))
            for g in np.linspace(0, 1 / kappa, n_gamma):
                lhs, rhs = flows.concentration_check(a, b, p, float(g))
                rows.append(SuiteRow("concentration", f"n{n}_r{rep}_g{g * kappa:.2f}", rhs - lhs, -1e-12, "margin"))
    return rows


SUITES = {
    "adjoint": suite_adjoint,
    "vdecomp": suite_vdecomp,
    "entropy-ineq": suite_entropy,
    "ibp": suite_ibp,
    "ldp": suite_ldp,
    "concentration": suite_concentration,
}


def run_suite(name: str, N: int = 4, K: float = 1.0, seed: int = 0) -> list[SuiteRow]:
    try:
        fn = SUITES[name]
    except KeyError:
        raise KeyError(f"unknown suite {name!r}") from None
    return fn(N, K, seed)
