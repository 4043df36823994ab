"""Flows, block averages, the telescoping identity and a concentration bound.

Boxes are ``Lambda_l = {0, ..., l-1}^d``. ``p_l`` is uniform on ``Lambda_l``,
``q_l = p_l * p_l`` lives on ``Lambda_{2l-1}``, and a flow connecting
``delta_0`` and ``q_l`` is an antisymmetric edge function on ``Lambda_{2l}``
with outflow ``delta_0(x) - q_l(x)`` at every site.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import sparse, stats
from scipy.sparse.linalg import spsolve

from .lattice import PairConfig, Torus

__all__ = [
    "AveragingKernel",
    "LatticeFlow",
    "FlowError",
    "build_kernels",
    "build_flow",
    "p_flow_1d",
    "flow_energy",
    "energy_scale",
    "local_average",
    "omega",
    "omega_tilde",
    "V_term",
    "V_ell",
    "h_field",
    "telescoping_check",
    "concentration_lhs",
    "concentration_check",
]


class FlowError(RuntimeError):
    pass


@dataclass(frozen=True)
class AveragingKernel:
    """``p`` on ``Lambda_l`` and ``q = p * p`` on ``Lambda_{2l-1}``, as d-dim arrays."""

    ell: int
    d: int
    p: np.ndarray
    q: np.ndarray


def build_kernels(ell: int, d: int) -> AveragingKernel:
    if ell < 1:
        raise ValueError("block size must be at least 1")
    p1 = np.full(ell, 1.0 / ell)
    q1 = np.convolve(p1, p1)
    p, q = p1, q1
    for _ in range(d - 1):
        p = np.multiply.outer(p, p1)
        q = np.multiply.outer(q, q1)
    return AveragingKernel(ell, d, p, q)


@dataclass
class LatticeFlow:
    """Antisymmetric edge function on the box ``{0,...,2l-1}^d``.

    ``Phi[j][x]`` is ``Phi(x, x + e_j)``; edges leaving the box carry zero
    flow and ``Phi(x + e_j, x) = -Phi[j][x]``. Large flows are stored as sums
    of rank-1 tensors, ``terms[j]`` being a list of per-axis factor tuples,
    and only materialised densely on request.
    """

    ell: int
    d: int
    terms: list[list[tuple[np.ndarray, ...]]] | None = None
    dense: np.ndarray | None = None

    @property
    def side(self) -> int:
        return 2 * self.ell

    @property
    def Phi(self) -> np.ndarray:
        if self.dense is None:
            if self.side**self.d > 5e7:
                raise MemoryError(f"refusing to materialise a {self.side}^{self.d} flow")
            out = np.zeros((self.d,) + (self.side,) * self.d)
            for j in range(self.d):
                for fac in self.terms[j]:
                    out[j] += _outer(fac)
            self.dense = out
        return self.dense

    def __call__(self, x, y) -> float:
        x = np.asarray(x)
        y = np.asarray(y)
        diff = y - x
        if np.abs(diff).sum() != 1:
            raise ValueError("x and y must be nearest neighbours")
        j = int(np.flatnonzero(diff)[0])
        base, sign = (x, 1.0) if diff[j] == 1 else (y, -1.0)
        if np.any(base < 0) or np.any(base >= self.side):
            return 0.0
        if self.dense is None and self.terms is not None:
            return sign * float(sum(np.prod([f[i] for f, i in zip(fac, base)]) for fac in self.terms[j]))
        return sign * float(self.Phi[(j, *base)])

    def _defect_terms(self):
        """Rank-1 decomposition of ``div Phi - (delta_0 - q_l)``."""
        side = self.side
        kern1 = build_kernels(self.ell, 1).q
        q1 = np.zeros(side)
        q1[: len(kern1)] = kern1
        e0 = np.zeros(side)
        e0[0] = 1.0
        out = [(-e0,) + (e0,) * (self.d - 1), (q1,) * self.d]
        for j in range(self.d):
            for fac in self.terms[j]:
                f = fac[j]
                back = np.concatenate([[0.0], f[:-1]])
                out.append(tuple(f - back if i == j else fac[i] for i in range(self.d)))
        return out

    def divergence(self) -> np.ndarray:
        """Outflow ``sum_z Phi(x, z)`` at every box site (dense)."""
        Phi = self.Phi
        div = np.zeros(Phi.shape[1:])
        for j in range(self.d):
            f = Phi[j]
            div += f
            inflow = np.zeros_like(f)
            dst = [slice(None)] * self.d
            src = [slice(None)] * self.d
            dst[j] = slice(1, None)
            src[j] = slice(None, -1)
            inflow[tuple(dst)] = f[tuple(src)]
            div -= inflow
        return div

    def divergence_defect(self) -> float:
        """``max_x |sum_z Phi(x, z) - (delta_0(x) - q_l(x))|``."""
        if self.terms is None:
            kern = build_kernels(self.ell, self.d)
            target = np.zeros(self.dense.shape[1:])
            target[tuple(slice(0, s) for s in kern.q.shape)] -= kern.q
            target[(0,) * self.d] += 1.0
            return float(np.abs(self.divergence() - target).max())
        terms = self._defect_terms()
        if self.d == 1:
            return float(np.abs(sum(t[0] for t in terms)).max())
        # evaluate slab by slab along axis 0
        coef = np.stack([t[0] for t in terms], axis=1)
        rest = np.stack([_outer(t[1:]).ravel() for t in terms])
        worst = 0.0
        for lo in range(0, self.side, 32):
            worst = max(worst, float(np.abs(coef[lo : lo + 32] @ rest).max()))
        return worst

    def energy(self) -> float:
        """``sum_{x in Lambda_{2l-1}} sum_j Phi(x, x+e_j)^2``."""
        inner = slice(0, self.side - 1)
        if self.terms is None:
            box = (inner,) * self.d
            return float(sum(np.sum(self.dense[j][box] ** 2) for j in range(self.d)))
        total = 0.0
        for j in range(self.d):
            facs = self.terms[j]
            if not facs:
                continue
            gram = np.ones((len(facs), len(facs)))
            for i in range(self.d):
                mat = np.stack([f[i][inner] for f in facs])
                gram *= mat @ mat.T
            total += float(gram.sum())
        return total

    def edges(self):
        """Yield ``(x_index, direction, value)`` for every directed edge with ``x`` in the box.

        ``direction`` is ``+j`` for ``(x, x+e_j)`` and ``-j`` for ``(x, x-e_j)``,
        with ``j`` counted from 1; indices are row-major in the box.
        """
        Phi = self.Phi
        shape = Phi.shape[1:]
        for x in itertools.product(*(range(s) for s in shape)):
            xi = int(np.ravel_multi_index(x, shape))
            for j in range(self.d):
                yield xi, j + 1, float(Phi[(j, *x)])
                prev = list(x)
                prev[j] -= 1
                val = -float(Phi[(j, *prev)]) if prev[j] >= 0 else 0.0
                yield xi, -(j + 1), val


def _outer(factors) -> np.ndarray:
    out = np.asarray(factors[0], float)
    for f in factors[1:]:
        out = np.multiply.outer(out, f)
    return out


def p_flow_1d(ell: int) -> np.ndarray:
    """``Phi(x, x+1)`` for ``x = 0..l-1`` connecting ``delta_0`` to uniform on ``{1..l}``."""
    return (ell - np.arange(ell)) / ell


def _flow_1d(ell: int) -> np.ndarray:
    # flow delta_0 -> uniform on {0..l-1}, then average its translates by p
    side = 2 * ell
    base = np.zeros(side)
    base[: ell - 1] = (ell - 1 - np.arange(ell - 1)) / ell
    phi = base.copy()
    for z in range(ell):
        phi[z:] += base[: side - z] / ell
    return phi


def _flow_multiscale(ell: int, d: int) -> list[list[tuple[np.ndarray, ...]]]:
    """Dyadic chain ``delta_0 = q_1 -> q_2 -> q_4 -> ... -> q_l`` of product measures.

    Each link moves one coordinate at a time from the coarser to the finer
    one-dimensional marginal, so every term is a rank-1 tensor.
    """
    side = 2 * ell

    def marginal(s):
        m = np.zeros(side)
        k = build_kernels(s, 1).q
        m[: len(k)] = k
        return m

    scales = [1]
    while scales[-1] < ell:
        scales.append(min(2 * scales[-1], ell))
    terms = [[] for _ in range(d)]
    for s, s_next in zip(scales[:-1], scales[1:]):
        m, m_next = marginal(s), marginal(s_next)
        psi = np.cumsum(m - m_next)
        psi[np.abs(psi) < 1e-17] = 0.0
        for j in range(d):
            terms[j].append(tuple(m_next if i < j else psi if i == j else m for i in range(d)))
    return terms


def _flow_poisson(ell: int, d: int, tol: float = 1e-12) -> np.ndarray:
    """Minimum-energy flow: gradient of the no-flux Poisson potential on the box."""
    side = 2 * ell
    shape = (side,) * d
    n = side**d
    kern = build_kernels(ell, d)
    src = np.zeros(shape)
    src[(0,) * d] = 1.0
    src[tuple(slice(0, s) for s in kern.q.shape)] -= kern.q
    path = sparse.diags([np.ones(side - 1), np.ones(side - 1)], [-1, 1], shape=(side, side))
    lap1 = sparse.diags(np.asarray(path.sum(axis=1)).ravel()) - path
    eye = sparse.identity(side)
    L = sparse.csr_matrix((n, n))
    for j in range(d):
        term = sparse.csr_matrix(np.ones((1, 1)))
        for k in range(d):
            term = sparse.kron(term, lap1 if k == j else eye)
        L = L + term
    # pin the far corner to remove the constant mode
    L = sparse.lil_matrix(L)
    b = src.ravel().copy()
    L[n - 1, :] = 0
    L[n - 1, n - 1] = 1.0
    b[n - 1] = 0.0
    phi = spsolve(sparse.csr_matrix(L), b).reshape(shape)
    flows = np.zeros((d, *shape))
    for j in range(d):
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[j] = slice(None, -1)
        hi[j] = slice(1, None)
        flows[(j, *lo)] = phi[tuple(lo)] - phi[tuple(hi)]
    defect = LatticeFlow(ell, d, dense=flows).divergence_defect()
    if defect > tol:
        raise FlowError(f"Poisson solve left a divergence defect of {defect:.2e}")
    return flows


def build_flow(ell: int, d: int, method: str = "auto") -> LatticeFlow:
    """Flow on ``{0..2l-1}^d`` connecting ``delta_0`` and ``q_l``.

    d = 1 averages translates of the affine flow to the uniform block.
    d >= 2 uses the dyadic multiscale construction (``"multiscale"``) or,
    for small boxes, the minimum-energy Poisson flow (``"poisson"``).
    """
    if ell < 1:
        raise ValueError("block size must be at least 1")
    if d < 1:
        raise ValueError("dimension must be positive")
    if method == "auto":
        method = "closed" if d == 1 else "multiscale"
    if method == "closed":
        if d != 1:
            raise ValueError("the closed-form flow is one-dimensional")
        return LatticeFlow(ell, 1, terms=[[(_flow_1d(ell),)]])
    if method == "multiscale":
        return LatticeFlow(ell, d, terms=_flow_multiscale(ell, d))
    if method == "poisson":
        return LatticeFlow(ell, d, dense=_flow_poisson(ell, d))
    raise ValueError(f"unknown flow method {method!r}")


def flow_energy(flow: LatticeFlow) -> float:
    return flow.energy()


def energy_scale(ell: int, d: int) -> float:
    """Growth ``g_d(l)``: ``l`` in d=1, ``log l`` in d=2, 1 above."""
    if d == 1:
        return float(ell)
    if d == 2:
        return math.log(ell)
    return 1.0


def local_average(g, torus: Torus, ell: int, direction: Literal["left", "right"] = "left", x=None):
    """Block mean of ``g`` over ``x - Lambda_l`` (left) or ``x + Lambda_l`` (right).

    Returns the value at site ``x`` or, if ``x`` is None, the whole field.
    """
    if ell > torus.N:
        raise ValueError("block size exceeds the torus side")
    grid = np.asarray(g, float).reshape(torus.shape)
    sign = 1 if direction == "left" else -1
    acc = np.zeros_like(grid)
    for y in itertools.product(range(ell), repeat=torus.d):
        acc += np.roll(grid, shift=tuple(sign * c for c in y), axis=tuple(range(torus.d)))
    acc = acc.ravel() / ell**torus.d
    return acc if x is None else float(acc[x])


def _check_open(u):
    u = np.asarray(u, float)
    if np.any(u <= 0) or np.any(u >= 1):
        raise ValueError("densities must lie strictly inside (0, 1)")
    return u


def omega(sigma, u) -> np.ndarray:
    """``(sigma - u) / (u (1 - u))``."""
    u = _check_open(u)
    return (np.asarray(sigma, float) - u) / (u * (1 - u))


def omega_tilde(sigma1, u1, u2) -> np.ndarray:
    """``(u1 + u2 - 1) u1 u2 omega_1``."""
    u1 = _check_open(u1)
    u2 = _check_open(u2)
    return (u1 + u2 - 1) * u1 * u2 * omega(sigma1, u1)


def V_term(config: PairConfig, u1, u2, K: float) -> float:
    return K * float(np.dot(omega_tilde(config.sigma1, u1, u2), omega(config.sigma2, u2)))


def V_ell(config: PairConfig, u1, u2, K: float, ell: int) -> float:
    """``K sum_x (right average of omega~_1)(x) (left average of omega_2)(x)``.

    With this pairing of directions the sum equals
    ``K sum_y omega~_{1,y} (omega_2 * q_l)(y)``, the form the flow telescopes.
    """
    torus = config.torus
    a = local_average(omega_tilde(config.sigma1, u1, u2), torus, ell, "right")
    b = local_average(omega(config.sigma2, u2), torus, ell, "left")
    return K * float(np.dot(a, b))


def h_field(sigma1, u1, u2, flow: LatticeFlow, torus: Torus, j: int, x=None):
    """``h_x = sum_{y in Lambda_{2l-1}} omega~_{1, x+y+e_j} Phi(y, y+e_j)``.

    ``j`` is 0-based. Returns the value at ``x`` or the field over all sites.
    """
    wt = omega_tilde(sigma1, u1, u2).reshape(torus.shape)
    axes = tuple(range(torus.d))
    acc = np.zeros(torus.shape)
    side = flow.side
    for y in itertools.product(range(side - 1), repeat=torus.d):
        coef = flow.Phi[(j, *y)]
        if coef == 0.0:
            continue
        off = np.array(y)
        off[j] += 1
        acc += coef * np.roll(wt, shift=tuple(-off), axis=axes)
    acc = acc.ravel()
    return acc if x is None else float(acc[x])


def telescoping_check(config: PairConfig, u1, u2, K: float, ell: int, flow: LatticeFlow | None = None):
    """Both sides of ``V - V^l = K sum_j sum_x h_x^j (omega_{2,x+e_j} - omega_{2,x})``.

    Returns ``(lhs, rhs, |lhs - rhs|)``.
    """
    torus = config.torus
    if 2 * ell > torus.N:
        raise ValueError("the flow box must fit in the torus")
    if flow is None:
        flow = build_flow(ell, torus.d)
    lhs = V_term(config, u1, u2, K) - V_ell(config, u1, u2, K, ell)
    w2 = omega(config.sigma2, u2)
    fwd = torus.forward_table
    rhs = 0.0
    for j in range(torus.d):
        h = h_field(config.sigma1, u1, u2, flow, torus, j)
        rhs += float(np.dot(h, w2[fwd[:, j]] - w2))
    rhs *= K
    return lhs, rhs, abs(lhs - rhs)


def concentration_lhs(a, b, probs, gamma: float) -> float:
    """Exact ``log E exp(gamma (sum (X_i - E X_i))^2)`` for independent two-point
    variables ``X_i in {a_i, b_i}`` with ``P(X_i = b_i) = probs_i``."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    p = np.asarray(probs, float)
    n = len(a)
    if n > 22:
        raise ValueError("exact enumeration is limited to 22 variables")
    centred_a = a - (a + p * (b - a))
    centred_b = b - (a + p * (b - a))
    bits = (np.arange(2**n)[:, None] >> np.arange(n)[None, :]) & 1
    s = np.where(bits == 1, centred_b, centred_a).sum(axis=1)
    logw = np.where(bits == 1, np.log(p), np.log1p(-p)).sum(axis=1) if np.all((p > 0) & (p < 1)) else None
    if logw is None:
        w = np.where(bits == 1, p, 1 - p).prod(axis=1)
        return float(np.log(np.sum(w * np.exp(gamma * s**2))))
    z = logw + gamma * s**2
    zmax = z.max()
    return float(zmax + np.log(np.sum(np.exp(z - zmax))))


def concentration_check(a, b, probs=None, gamma: float = 0.0, samplers=None, n_samples: int = 200_000, rng=None, confidence: float = 0.99):
    """Compare ``log E exp(gamma (sum Xbar)^2)`` with ``2 gamma kappa``.

    Two-point variables with up to 20 terms are enumerated exactly. Otherwise
    ``samplers`` (callables ``rng, size -> samples`` with known means supplied
    as ``probs``) drive a Monte Carlo estimate; the left-hand side returned is
    the log of a one-sided normal upper confidence bound on the mean.
    """
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    kappa = float(np.sum((b - a) ** 2))
    if gamma < 0 or gamma > 1 / kappa * (1 + 1e-12):
        raise ValueError(f"gamma must lie in [0, 1/kappa] = [0, {1 / kappa:.4g}]")
    rhs = 2 * gamma * kappa
    if samplers is None and len(a) <= 20:
        return concentration_lhs(a, b, probs, gamma), rhs
    if rng is None:
        rng = np.random.default_rng(0)
    if samplers is None:
        p = np.asarray(probs, float)
        samplers = [lambda g, size, ai=ai, bi=bi, pi=pi: np.where(g.random(size) < pi, bi, ai) for ai, bi, pi in zip(a, b, p)]
        means = a + p * (b - a)
    else:
        means = np.asarray(probs, float)
    s = np.zeros(n_samples)
    for f, m in zip(samplers, means):
        s += f(rng, n_samples) - m
    vals = np.exp(gamma * s**2)
    # one-sided normal upper bound on the mean; the worst-case range
    # exp(gamma (sum(b - a))^2) makes a Hoeffding bound vacuous for large n
    z = float(stats.norm.ppf(confidence))
    half = z * float(vals.std(ddof=1)) / math.sqrt(n_samples)
    return float(np.log(vals.mean() + half)), rhs
