"""Discretized reaction-diffusion system on the torus and its a-priori bounds.

Solves ``du_i/dt = d_i N^2 (Delta u_i) - K u_1 u_2`` with an explicit
strong-stability-preserving scheme, and provides the exact spectral heat
kernel of ``N^2 Delta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .lattice import Torus, gradient, laplacian

__all__ = [
    "HydroParams",
    "HydroState",
    "HydroTrajectory",
    "StepSizeError",
    "HeatKernel",
    "rhs",
    "stable_dt",
    "integrate",
    "check_max_principle",
    "lower_bound",
    "check_lower_bound",
    "heat_kernel",
    "heat_evolve",
    "wrapped_heat_kernel_1d",
    "kernel_gradient_ratio",
    "gradient_bound_check",
]

BOUND_TOL = 1e-10


class StepSizeError(RuntimeError):
    """The stability restriction forces a time step below the configured floor."""


@dataclass(frozen=True)
class HydroParams:
    d1: float
    d2: float
    K: float
    N: int
    d: int = 1

    @property
    def torus(self) -> Torus:
        return Torus(self.d, self.N)


@dataclass
class HydroState:
    t: float
    u1: np.ndarray
    u2: np.ndarray


@dataclass
class HydroTrajectory:
    """States at the requested output times plus running time integrals.

    ``segregation[k]`` is ``int_0^{t_k} N^{-d} sum_x u1 u2 dt`` and
    ``grad_sq[i][k]`` is ``int_0^{t_k} N^{-d} sum_x |grad^N u_i|^2 dt``, both
    accumulated with the trapezoid rule over every internal step.
    """

    params: HydroParams
    times: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    dt: float
    n_steps: int = 0
    segregation: np.ndarray = field(default_factory=lambda: np.empty(0))
    grad_sq: tuple[np.ndarray, np.ndarray] = field(default_factory=lambda: (np.empty(0), np.empty(0)))
    w_mass: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __len__(self):
        return len(self.times)

    def __getitem__(self, k) -> HydroState:
        return HydroState(float(self.times[k]), self.u1[k], self.u2[k])

    @property
    def final(self) -> HydroState:
        return self[-1]


def rhs(u1: np.ndarray, u2: np.ndarray, params: HydroParams) -> tuple[np.ndarray, np.ndarray]:
    torus = params.torus
    n2 = params.N**2
    react = params.K * u1 * u2
    return (
        params.d1 * n2 * laplacian(u1, torus) - react,
        params.d2 * n2 * laplacian(u2, torus) - react,
    )


def stable_dt(params: HydroParams, theta: float = 0.9) -> float:
    """Largest step for which one Euler step is a convex combination of site values."""
    n2 = params.N**2
    return theta * min(1.0 / (2 * params.d * di * n2 + params.K) for di in (params.d1, params.d2))


def _euler(u1, u2, dt, params):
    f1, f2 = rhs(u1, u2, params)
    return u1 + dt * f1, u2 + dt * f2


def _ssprk3(u1, u2, dt, params):
    # Shu-Osher form: every stage is a convex combination of Euler steps
    a1, a2 = _euler(u1, u2, dt, params)
    b1, b2 = _euler(a1, a2, dt, params)
    b1 = 0.75 * u1 + 0.25 * b1
    b2 = 0.75 * u2 + 0.25 * b2
    c1, c2 = _euler(b1, b2, dt, params)
    return u1 / 3 + 2 / 3 * c1, u2 / 3 + 2 / 3 * c2


_SCHEMES = {"euler": _euler, "ssprk3": _ssprk3}


def integrate(
    u1_0,
    u2_0,
    T: float,
    params: HydroParams,
    output_times=None,
    theta: float = 0.9,
    dt_floor: float = 1e-12,
    scheme: str = "ssprk3",
) -> HydroTrajectory:
    """Advance from the initial densities to time ``T``.

    The step is ``theta / max_i(2 d d_i N^2 + K)``; output times are hit
    exactly by shortening the step that would overshoot them.
    """
    torus = params.torus
    u1 = np.array(u1_0, dtype=float)
    u2 = np.array(u2_0, dtype=float)
    for u in (u1, u2):
        if u.shape != (torus.size,):
            raise ValueError(f"density has shape {u.shape}, expected ({torus.size},)")
        if np.any(u < 0) or np.any(u > 1):
            raise ValueError("initial densities must lie in [0, 1]")
    if output_times is None:
        output_times = [0.0, T]
    outs = np.unique(np.clip(np.asarray(output_times, float), 0, T))
    dt = stable_dt(params, theta)
    if dt < dt_floor:
        raise StepSizeError(f"stable step {dt:.3e} is below the floor {dt_floor:.3e}")
    advance = _SCHEMES[scheme]
    g = 1.0 / torus.size

    def densities(a, b):
        seg = g * float(np.dot(a, b))
        gs = tuple(g * float(np.sum(gradient(v, torus) ** 2)) for v in (a, b))
        return seg, gs

    times, s1, s2, seg_out, g1_out, g2_out, mass_out = [], [], [], [], [], [], []
    t = 0.0
    seg_acc = g1_acc = g2_acc = 0.0
    cur_seg, (cur_g1, cur_g2) = densities(u1, u2)
    n_steps = 0
    for t_out in outs:
        while t < t_out:
            h = min(dt, t_out - t)
            if t_out - (t + h) < 1e-14 * max(1.0, t_out):
                h = t_out - t
            u1, u2 = advance(u1, u2, h, params)
            new_seg, (new_g1, new_g2) = densities(u1, u2)
            seg_acc += 0.5 * h * (cur_seg + new_seg)
            g1_acc += 0.5 * h * (cur_g1 + new_g1)
            g2_acc += 0.5 * h * (cur_g2 + new_g2)
            cur_seg, cur_g1, cur_g2 = new_seg, new_g1, new_g2
            t = t_out if h == t_out - t else t + h
            n_steps += 1
        times.append(t_out)
        s1.append(u1.copy())
        s2.append(u2.copy())
        seg_out.append(seg_acc)
        g1_out.append(g1_acc)
        g2_out.append(g2_acc)
        mass_out.append(float(np.sum(u1 - u2)))
    return HydroTrajectory(
        params=params,
        times=np.array(times),
        u1=np.array(s1),
        u2=np.array(s2),
        dt=dt,
        n_steps=n_steps,
        segregation=np.array(seg_out),
        grad_sq=(np.array(g1_out), np.array(g2_out)),
        w_mass=np.array(mass_out),
    )


def check_max_principle(traj: HydroTrajectory, c: float, tol: float = BOUND_TOL) -> tuple[bool, float]:
    """Whether every stored value lies in ``[-tol, c + tol]``; also the worst excursion."""
    vals = np.concatenate([traj.u1.ravel(), traj.u2.ravel()])
    worst = max(0.0, float(-vals.min()), float(vals.max() - c))
    return worst <= tol, worst


def lower_bound(t, u0: float, K: float):
    return u0 * np.exp(-K * np.asarray(t, float))


def check_lower_bound(traj: HydroTrajectory, u0: float, tol: float = BOUND_TOL) -> tuple[bool, float]:
    bound = lower_bound(traj.times, u0, traj.params.K)[:, None]
    deficit = float(max(np.max(bound - traj.u1), np.max(bound - traj.u2), 0.0))
    return deficit <= tol, deficit


@dataclass
class HeatKernel:
    """Translation-invariant kernel ``p(x, y) = values[x - y]`` on the torus."""

    torus: Torus
    t: float
    values: np.ndarray

    def __call__(self, x, y) -> float:
        z = self.torus.index(self.torus.coords(x) - self.torus.coords(y))
        return float(self.values[z])

    def matrix(self) -> np.ndarray:
        torus = self.torus
        idx = np.arange(torus.size)
        c = torus.coords(idx)
        diff = torus.index(c[:, None, :] - c[None, :, :])
        return self.values[diff]


def _eigenvalues(torus: Torus) -> np.ndarray:
    k = np.arange(torus.N)
    lam1 = 2 * (1 - np.cos(2 * np.pi * k / torus.N))
    grids = np.meshgrid(*([lam1] * torus.d), indexing="ij")
    return sum(grids)


def heat_kernel(t: float, torus: Torus, diffusivity: float = 1.0) -> HeatKernel:
    """Exact kernel of ``exp(diffusivity * t * N^2 Delta)`` by spectral sum."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    mult = np.exp(-diffusivity * t * torus.N**2 * _eigenvalues(torus))
    vals = np.fft.ifftn(mult).real.ravel()
    return HeatKernel(torus, t, vals)


def heat_evolve(u0, t: float, torus: Torus, diffusivity: float = 1.0) -> np.ndarray:
    """``sum_y u0(y) p(t, x, y)`` via FFT."""
    g = np.asarray(u0, float).reshape(torus.shape)
    mult = np.exp(-diffusivity * t * torus.N**2 * _eigenvalues(torus))
    return np.fft.ifftn(np.fft.fftn(g) * mult).real.ravel()


def wrapped_heat_kernel_1d(t: float, N: int, diffusivity: float = 1.0, n_wrap: int | None = None) -> np.ndarray:
    """``sum_k p_Z(N^2 t, 0, z + kN)`` with the lattice kernel ``e^{-2s} I_z(2s)``."""
    s = diffusivity * N**2 * t
    if n_wrap is None:
        n_wrap = 10 + int(math.ceil(4 * math.sqrt(2 * s + 1) / N))
    z = np.arange(N)
    out = np.zeros(N)
    for k in range(-n_wrap, n_wrap + 1):
        out += special.ive(np.abs(z + k * N), 2 * s)
    return out


def _product_kernel(t: float, torus: Torus, diffusivity: float) -> np.ndarray:
    # the torus kernel factorises over axes; Bessel terms keep full relative
    # precision in the tails where the spectral sum is pure round-off
    one = wrapped_heat_kernel_1d(t, torus.N, diffusivity)
    out = one
    for _ in range(torus.d - 1):
        out = np.multiply.outer(out, one)
    return np.asarray(out).ravel()


def kernel_gradient_ratio(t_grid, torus: Torus, c_probe: float, diffusivity: float = 1.0) -> float:
    """``sup |grad^N_x p(t,x,y)| sqrt(t) / p(c t, x, y)`` over the grid and all pairs.

    Kernels are evaluated as products of wrapped lattice Bessel kernels so the
    ratio stays meaningful far from the diagonal.
    """
    if not 0 < c_probe <= 1:
        raise ValueError("c_probe must lie in (0, 1]")
    best = 0.0
    for t in np.asarray(t_grid, float):
        if t <= 0:
            raise ValueError("t_grid must be positive")
        p = _product_kernel(t, torus, diffusivity)
        q = _product_kernel(c_probe * t, torus, diffusivity)
        # by translation invariance x - y ranges over all sites
        grad = np.linalg.norm(gradient(p, torus), axis=1)
        ratio = grad * math.sqrt(t) / q
        best = max(best, float(ratio.max()))
    return best


def gradient_bound_check(traj: HydroTrajectory, C0: float | None = None, K: float | None = None) -> float:
    """Smallest ``C`` with ``|grad^N u_i(t,x)| <= K (C0 + C sqrt(t))`` on the stored states."""
    torus = traj.params.torus
    K = traj.params.K if K is None else K
    if K <= 0:
        raise ValueError("the gradient bound needs K > 0")
    sup = np.array(
        [
            max(np.linalg.norm(gradient(traj.u1[k], torus), axis=1).max(), np.linalg.norm(gradient(traj.u2[k], torus), axis=1).max())
            for k in range(len(traj))
        ]
    )
    if C0 is None:
        C0 = float(sup[0] / K)
    C = 0.0
    for t, s in zip(traj.times, sup):
        if t > 0:
            C = max(C, (s / K - C0) / math.sqrt(t))
    return C
