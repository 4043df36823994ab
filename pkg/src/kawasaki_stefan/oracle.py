"""Exact master-equation oracle on tiny one-dimensional lattices.

The state space is ``{0,1}^N x {0,1}^N`` with ``4**N`` states. State ``s``
stores ``sigma_{1,x}`` in bit ``2x`` and ``sigma_{2,x}`` in bit ``2x + 1``.
Generators act on functions as ``(L f)(s) = sum_t L[s, t] f(t)``; laws evolve
as row vectors, ``mu' = mu L``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse, stats
from scipy.integrate import solve_ivp
from scipy.sparse.linalg import expm_multiply

from .flows import omega
from .hydro import HydroParams, rhs as hydro_rhs
from .lattice import PairConfig, Torus, laplacian

__all__ = [
    "MAX_SITES",
    "StateSpace",
    "enumerate_states",
    "build_generator",
    "product_measure",
    "evolve_master",
    "relative_entropy",
    "dirichlet_form",
    "adjoint_one",
    "dlog_psi",
    "v_terms",
    "verify_V_decomposition",
    "entropy_derivative",
    "entropy_derivative_rhs",
    "EntropyCheck",
    "verify_entropy_inequality",
    "IBPResult",
    "swap2",
    "verify_ibp",
    "LDPResult",
    "exceedance_probability",
    "binomial_exceedance",
    "clopper_pearson",
    "ldp_check",
]

MAX_SITES = 10


@dataclass(frozen=True)
class StateSpace:
    N: int
    sigma1: np.ndarray  # (4**N, N) uint8
    sigma2: np.ndarray

    @property
    def size(self) -> int:
        return 4**self.N

    def index(self, config: PairConfig) -> int:
        s1 = config.sigma1.astype(np.int64)
        s2 = config.sigma2.astype(np.int64)
        x = np.arange(self.N)
        return int(np.sum(s1 << (2 * x)) + np.sum(s2 << (2 * x + 1)))

    def config(self, s: int) -> PairConfig:
        return PairConfig(Torus(1, self.N), self.sigma1[s], self.sigma2[s])


def enumerate_states(N: int) -> StateSpace:
    if N < 1 or N > MAX_SITES:
        raise MemoryError(f"4**{N} states exceeds the oracle budget (N <= {MAX_SITES})")
    idx = np.arange(4**N, dtype=np.int64)[:, None]
    x = np.arange(N)[None, :]
    s1 = ((idx >> (2 * x)) & 1).astype(np.uint8)
    s2 = ((idx >> (2 * x + 1)) & 1).astype(np.uint8)
    return StateSpace(N, s1, s2)


def _bonds(N: int):
    """Bonds ``(x, x+1 mod N)``; for N = 2 both orientations appear, as on the torus."""
    return [(x, (x + 1) % N) for x in range(N)]


def build_generator(N: int, d1: float, d2: float, K: float, space: StateSpace | None = None) -> sparse.csr_matrix:
    """Sparse generator of ``N^2 (d1 L0(sigma1) + d2 L0(sigma2)) + K L_G``."""
    space = space or enumerate_states(N)
    n = space.size
    idx = np.arange(n, dtype=np.int64)
    rows, cols, vals = [], [], []
    for x, y in _bonds(N):
        for sp, (sig, rate, off) in enumerate(((space.sigma1, d1, 0), (space.sigma2, d2, 1))):
            diff = sig[:, x] != sig[:, y]
            src = idx[diff]
            tgt = src ^ ((1 << (2 * x + off)) | (1 << (2 * y + off)))
            rows.append(src)
            cols.append(tgt)
            vals.append(np.full(len(src), N**2 * rate))
    if K:
        for x in range(N):
            both = (space.sigma1[:, x] == 1) & (space.sigma2[:, x] == 1)
            src = idx[both]
            rows.append(src)
            cols.append(src ^ (3 << (2 * x)))
            vals.append(np.full(len(src), float(K)))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    off = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    out = np.asarray(off.sum(axis=1)).ravel()
    return (off - sparse.diags(out)).tocsr()


def product_measure(u1, u2, space: StateSpace) -> np.ndarray:
    """Weights of the Bernoulli product measure with site means ``u1``, ``u2``."""
    u1 = np.asarray(u1, float)
    u2 = np.asarray(u2, float)
    logw = np.zeros(space.size)
    for sig, u in ((space.sigma1, u1), (space.sigma2, u2)):
        with np.errstate(divide="ignore"):
            logw += np.where(sig == 1, np.log(u), np.log1p(-u)).sum(axis=1)
    return np.exp(logw)


def evolve_master(mu0, L: sparse.spmatrix, T: float, tol: float = 1e-10, method: str = "DOP853") -> np.ndarray:
    """Law at time ``T`` of the chain started from ``mu0``.

    ``method`` is a :func:`scipy.integrate.solve_ivp` method, or ``"expm"``
    for the action of the matrix exponential.
    """
    mu0 = np.asarray(mu0, float)
    if T == 0:
        return mu0.copy()
    LT = L.T.tocsr()
    if method == "expm":
        return expm_multiply(LT * T, mu0)
    sol = solve_ivp(lambda t, m: LT @ m, (0.0, T), mu0, method=method, rtol=tol, atol=tol * 1e-3)
    if not sol.success:
        raise RuntimeError(f"master equation solve failed: {sol.message}")
    return sol.y[:, -1]


def relative_entropy(mu, nu) -> float:
    """``sum mu log(mu / nu)`` with ``0 log 0 = 0``."""
    mu = np.asarray(mu, float)
    nu = np.asarray(nu, float)
    if np.any(nu <= 0):
        raise ValueError("reference measure must have full support")
    pos = mu > 0
    return float(np.sum(mu[pos] * np.log(mu[pos] / nu[pos])))


def _swap_targets(space: StateSpace, x: int, y: int, off: int) -> np.ndarray:
    """State index after exchanging species ``off + 1`` between sites x and y."""
    idx = np.arange(space.size, dtype=np.int64)
    sig = space.sigma1 if off == 0 else space.sigma2
    diff = sig[:, x] != sig[:, y]
    mask = (1 << (2 * x + off)) | (1 << (2 * y + off))
    return np.where(diff, idx ^ mask, idx)


def dirichlet_form(f, nu, space: StateSpace, d1: float = 1.0, d2: float = 1.0) -> float:
    """``1/4 sum_{ordered |x-y|=1} E_nu[d1 (f(s1^{xy}) - f)^2 + d2 (f(s2^{xy}) - f)^2]``."""
    f = np.asarray(f, float)
    nu = np.asarray(nu, float)
    total = 0.0
    for x, y in _bonds(space.N):
        for off, rate in ((0, d1), (1, d2)):
            tgt = _swap_targets(space, x, y, off)
            # each unordered bond appears twice among ordered pairs
            total += 2 * rate * np.dot(nu, (f[tgt] - f) ** 2)
    return 0.25 * total


def adjoint_one(L: sparse.spmatrix, nu) -> np.ndarray:
    """``L^{*,nu} 1 = (nu L) / nu``."""
    nu = np.asarray(nu, float)
    return (L.T @ nu) / nu


def dlog_psi(u1, u2, du1, du2, space: StateSpace) -> np.ndarray:
    """``d/dt log(nu_t / m)`` for product measures, exact in the state variables.

    The reference ``m`` is time independent, so this is the time derivative
    of ``log nu_t(s) = sum_x [s log u + (1-s) log(1-u)]``.
    """
    out = np.zeros(space.size)
    for sig, u, du in ((space.sigma1, u1, du1), (space.sigma2, u2, du2)):
        u = np.asarray(u, float)
        out += (np.where(sig == 1, 1.0 / u, -1.0 / (1 - u)) * du).sum(axis=1)
    return out


def v_terms(u1, u2, K: float, d1: float, d2: float, space: StateSpace):
    """``(V1, V2, V)`` as functions on the state space."""
    N = space.N
    w1 = omega(space.sigma1, u1)
    w2 = omega(space.sigma2, u2)
    V = []
    for w, u, di in ((w1, np.asarray(u1), d1), (w2, np.asarray(u2), d2)):
        acc = np.zeros(space.size)
        for x, y in _bonds(N):
            # ordered pairs (x,y) and (y,x) give equal contributions
            acc += 2 * (u[y] - u[x]) ** 2 * w[:, x] * w[:, y]
        V.append(-di * N**2 / 2 * acc)
    u1 = np.asarray(u1, float)
    u2 = np.asarray(u2, float)
    V.append(K * (((u1 + u2 - 1) * u1 * u2) * w1 * w2).sum(axis=1))
    return tuple(V)


def verify_V_decomposition(u1, u2, K: float, N: int, d1: float = 1.0, d2: float = 1.0, space=None, L=None) -> float:
    """``max_s |L^{*,nu}1 - dlog psi - (V1 + V2 + V)|`` with ``du/dt`` from the hydro equation."""
    u1 = np.asarray(u1, float)
    u2 = np.asarray(u2, float)
    if np.any((u1 <= 0) | (u1 >= 1) | (u2 <= 0) | (u2 >= 1)):
        raise ValueError("densities must lie strictly inside (0, 1)")
    space = space or enumerate_states(N)
    L = build_generator(N, d1, d2, K, space) if L is None else L
    nu = product_measure(u1, u2, space)
    du1, du2 = hydro_rhs(u1, u2, HydroParams(d1, d2, K, N))
    lhs = adjoint_one(L, nu) - dlog_psi(u1, u2, du1, du2, space)
    V1, V2, V = v_terms(u1, u2, K, d1, d2, space)
    return float(np.abs(lhs - (V1 + V2 + V)).max())


def _joint_rhs(LT, params: HydroParams, n_states: int):
    def f(t, y):
        mu = y[:n_states]
        u1 = y[n_states : n_states + params.N]
        u2 = y[n_states + params.N :]
        du1, du2 = hydro_rhs(u1, u2, params)
        return np.concatenate([LT @ mu, du1, du2])

    return f


def entropy_derivative_rhs(mu, u1, u2, params: HydroParams, L, space: StateSpace) -> float:
    """``-2 N^2 D(sqrt(mu/nu); nu) + E_mu[L^{*,nu}1 - dlog psi]``."""
    nu = product_measure(u1, u2, space)
    f = np.asarray(mu) / nu
    du1, du2 = hydro_rhs(u1, u2, params)
    drift = np.dot(mu, adjoint_one(L, nu) - dlog_psi(u1, u2, du1, du2, space))
    dir_ = dirichlet_form(np.sqrt(np.clip(f, 0, None)), nu, space, params.d1, params.d2)
    return float(-2 * params.N**2 * dir_ + drift)


def entropy_derivative(mu, u1, u2, params: HydroParams, L, space: StateSpace) -> float:
    """Exact ``dH(mu_t | nu_t)/dt`` from the master and hydro equations.

    ``dH/dt = sum (mu L) log(mu / nu) - E_mu[d/dt log nu]``; the ``sum mu'``
    term vanishes because ``L`` conserves mass.
    """
    mu = np.asarray(mu, float)
    nu = product_measure(u1, u2, space)
    dmu = L.T @ mu
    du1, du2 = hydro_rhs(u1, u2, params)
    pos = mu > 0
    lr = np.zeros_like(mu)
    lr[pos] = np.log(mu[pos] / nu[pos])
    return float(np.dot(dmu, lr) - np.dot(mu, dlog_psi(u1, u2, du1, du2, space)))


@dataclass(frozen=True)
class EntropyCheck:
    times: np.ndarray
    margin: np.ndarray  # bound - exact dH/dt
    margin_fd: np.ndarray  # bound - centred difference of H; nan where t < h
    entropy: np.ndarray


def verify_entropy_inequality(
    u1_0,
    u2_0,
    params: HydroParams,
    times,
    h: float = 1e-4,
    mu0=None,
    tol: float = 1e-12,
) -> EntropyCheck:
    """Margin of the entropy-production inequality along the exact dynamics.

    ``mu`` solves the master equation and ``nu_t`` is the product measure of
    the hydro solution; both are integrated jointly. The margin is reported
    twice: against the closed-form ``dH/dt`` and against a centred
    difference of step ``h`` (the latter needs ``t >= h``).
    """
    N = params.N
    space = enumerate_states(N)
    L = build_generator(N, params.d1, params.d2, params.K, space)
    nu0 = product_measure(u1_0, u2_0, space)
    mu0 = nu0 if mu0 is None else np.asarray(mu0, float)
    n = space.size
    f = _joint_rhs(L.T.tocsr(), params, n)
    y = np.concatenate([mu0, np.asarray(u1_0, float), np.asarray(u2_0, float)])

    def advance(y, t0, t1):
        if t1 == t0:
            return y
        sol = solve_ivp(f, (t0, t1), y, method="DOP853", rtol=tol, atol=tol * 1e-3)
        if not sol.success:
            raise RuntimeError(sol.message)
        return sol.y[:, -1]

    def split(y):
        return y[:n], y[n : n + N], y[n + N :]

    def entropy(y):
        mu, a, b = split(y)
        return relative_entropy(mu, product_measure(a, b, space))

    ts = np.array(sorted(times), float)
    margins, margins_fd, ents = [], [], []
    t = 0.0
    for tk in ts:
        ym = None
        if tk >= h:
            y = advance(y, t, tk - h)
            t = tk - h
            ym = y
        y = advance(y, t, tk)
        t = tk
        mu, a, b = split(y)
        bound = entropy_derivative_rhs(mu, a, b, params, L, space)
        margins.append(bound - entropy_derivative(mu, a, b, params, L, space))
        if ym is not None:
            yp = advance(y, tk, tk + h)
            margins_fd.append(bound - (entropy(yp) - entropy(ym)) / (2 * h))
        else:
            margins_fd.append(np.nan)
        ents.append(entropy(y))
    return EntropyCheck(ts, np.array(margins), np.array(margins_fd), np.array(ents))


def swap2(space: StateSpace, x: int, y: int) -> np.ndarray:
    """Index map ``s -> (sigma1, sigma2^{x,y})``."""
    idx = np.arange(space.size, dtype=np.int64)
    s2 = space.sigma2
    mask = (1 << (2 * x + 1)) | (1 << (2 * y + 1))
    return np.where(s2[:, x] != s2[:, y], idx ^ mask, idx)


@dataclass(frozen=True)
class IBPResult:
    lhs: float
    main: float
    R1: float
    R1_parts: float  # the two remainder integrals evaluated separately
    bound: float
    C: float

    @property
    def defect(self) -> float:
        return abs(self.R1 - self.R1_parts)

    @property
    def within_bound(self) -> bool:
        return abs(self.R1) <= self.bound * (1 + 1e-12) + 1e-15


def verify_ibp(h, f, u1, u2, x: int, y: int, K: float, space: StateSpace) -> IBPResult:
    """Exchange-integration-by-parts for ``sigma_2`` across the bond ``{x, y}``.

    ``lhs = E_nu[h (s2_y - s2_x) f]`` and ``main = E_nu[h o swap * s2_x * (f o swap - f)]``;
    ``R1 = lhs - main`` is also assembled from its two constituent integrals.
    The bound is ``C e^{2 c1 K} |u2(x) - u2(y)| E_nu[|h| f] + ||h - h o swap||``
    with ``e^{-c1 K} = min(u2(x), u2(y))``, ``c2 = max(u2(x), u2(y))`` and
    ``C = C0 (1 + 2 c2 C0)``, ``C0 = 1/(1 - c2)``.
    """
    h = np.asarray(h, float)
    f = np.asarray(f, float)
    u2 = np.asarray(u2, float)
    nu = product_measure(u1, u2, space)
    sw = swap2(space, x, y)
    s2x = space.sigma2[:, x].astype(float)
    s2y = space.sigma2[:, y].astype(float)
    lhs = float(np.sum(h * (s2y - s2x) * f * nu))
    main = float(np.sum(h[sw] * s2x * (f[sw] - f) * nu))
    # r(s) = nu(s^{xy}) / nu(s) - 1
    ux, uy = u2[x], u2[y]
    r = np.where(
        (space.sigma2[:, x] == 1) & (space.sigma2[:, y] == 0),
        (uy - ux) / (ux * (1 - uy)),
        np.where((space.sigma2[:, x] == 0) & (space.sigma2[:, y] == 1), (ux - uy) / ((1 - ux) * uy), 0.0),
    )
    part_h = float(np.sum((h[sw] - h) * s2x * f * nu))
    part_r = float(np.sum(h[sw] * s2x * f[sw] * r * nu))
    lo, hi = min(ux, uy), max(ux, uy)
    if K <= 0:
        raise ValueError("the remainder bound needs K > 0")
    c1 = -math.log(lo) / K
    C0 = 1.0 / (1.0 - hi)
    C = C0 * (1 + 2 * hi * C0)
    bound = C * math.exp(2 * c1 * K) * abs(ux - uy) * float(np.sum(np.abs(h) * f * nu)) + float(np.abs(h - h[sw]).max())
    return IBPResult(lhs, main, lhs - main, part_h + part_r, bound, C)


@dataclass(frozen=True)
class LDPResult:
    N: int
    exceed: int
    replicas: int
    p_hat: float
    p_upper: float
    rate: float  # -log(p_hat) / N^d, or from the upper bound when no exceedance is seen
    exact: float | None = None


def exceedance_probability(u, phi_vals, eps: float, replicas: int, rng) -> tuple[int, int]:
    """Monte Carlo count of ``|N^{-d} sum (sigma_x - u_x) phi_x| > eps`` under Bernoulli(u)."""
    u = np.asarray(u, float)
    phi_vals = np.broadcast_to(np.asarray(phi_vals, float), u.shape)
    target = np.dot(u, phi_vals) / u.size
    hits = 0
    done = 0
    batch = max(1, min(replicas, 2_000_000 // max(u.size, 1)))
    while done < replicas:
        b = min(batch, replicas - done)
        s = rng.random((b, u.size)) < u
        vals = s @ phi_vals / u.size
        hits += int(np.count_nonzero(np.abs(vals - target) > eps))
        done += b
    return hits, replicas


def binomial_exceedance(n_sites: int, p: float, eps: float) -> float:
    """Exact ``P(|S/n - p| > eps)`` for ``S ~ Binomial(n, p)``."""
    k = np.arange(n_sites + 1)
    mask = np.abs(k / n_sites - p) > eps
    return float(stats.binom.pmf(k[mask], n_sites, p).sum())


def clopper_pearson(k: int, n: int, alpha: float = 0.05) -> tuple[float, float]:
    lo = 0.0 if k == 0 else float(stats.beta.ppf(alpha / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1 - alpha / 2, k + 1, n - k))
    return lo, hi


def ldp_check(u_fn, phi, eps: float, Ns, replicas: int, d: int = 1, seed: int = 0) -> list[LDPResult]:
    """Exceedance estimates across system sizes for the product measure with profile ``u_fn``."""
    out = []
    for N in Ns:
        torus = Torus(d, N)
        pts = torus.points()
        u = np.broadcast_to(np.asarray(u_fn(pts), float), (torus.size,))
        phv = np.broadcast_to(np.asarray(phi(pts), float), (torus.size,))
        rng = np.random.default_rng([seed, N])
        if eps >= np.abs(phv).max():
            # |<sigma - u, phi>| <= sup |phi| can never exceed eps
            out.append(LDPResult(N, 0, replicas, 0.0, 0.0, math.inf, 0.0))
            continue
        k, n = exceedance_probability(u, phv, eps, replicas, rng)
        _, hi = clopper_pearson(k, n)
        p_hat = k / n
        rate = -math.log(p_hat) / torus.size if k else -math.log(hi) / torus.size
        exact = None
        if np.allclose(phv, 1.0) and np.allclose(u, u[0]):
            exact = binomial_exceedance(torus.size, float(u[0]), eps)
        out.append(LDPResult(N, k, n, p_hat, hi, rate, exact))
    return out
