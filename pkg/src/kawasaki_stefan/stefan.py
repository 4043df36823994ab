"""Limit equation ``dw/dt = Laplacian(D(w))`` with the two-slope flux ``D``.

Grid cell ``m`` of a uniform grid with ``M`` cells per axis is centred at
``m/M``. The scheme is explicit and conservative, ``w += dt M^2 Lap(D(w))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .hydro import StepSizeError
from .lattice import Torus, laplacian

__all__ = [
    "flux",
    "StefanTrajectory",
    "stefan_dt",
    "solve_limit",
    "heat_reference",
    "TestFunction",
    "builtin_test_functions",
    "weak_residual",
    "StreamingResidual",
    "Crossing",
    "interface_extract_1d",
]


def flux(s, d1: float, d2: float):
    """``d1 * s`` for ``s >= 0`` and ``d2 * s`` otherwise."""
    s = np.asarray(s, dtype=float)
    out = np.where(s >= 0, d1 * s, d2 * s)
    return out if out.ndim else float(out)


@dataclass
class StefanTrajectory:
    torus: Torus
    d1: float
    d2: float
    times: np.ndarray
    w: np.ndarray
    dt: float

    @property
    def M(self) -> int:
        return self.torus.N

    @property
    def final(self) -> np.ndarray:
        return self.w[-1]


def stefan_dt(M: int, d: int, d1: float, d2: float, theta: float = 0.9) -> float:
    return theta / (2 * d * max(d1, d2) * M**2)


def solve_limit(
    w0,
    T: float,
    d1: float,
    d2: float,
    M: int,
    d: int = 1,
    output_times=None,
    store_every: int | None = None,
    theta: float = 0.9,
    dt_floor: float = 1e-12,
    observers=(),
) -> StefanTrajectory:
    """Explicit conservative solve on ``M**d`` cells.

    States are stored at ``output_times`` (default ``[0, T]``), or after every
    ``store_every`` steps when that is given (the final time is always stored).
    Each observer is called as ``obs(t, w)`` at ``t = 0`` and after every step.
    """
    torus = Torus(d, M)
    w = np.array(w0, dtype=float)
    if w.shape != (torus.size,):
        raise ValueError(f"initial field has shape {w.shape}, expected ({torus.size},)")
    if np.any(np.abs(w) > 1 + 1e-12):
        raise ValueError("|w0| must not exceed 1")
    dt = stefan_dt(M, d, d1, d2, theta)
    if dt < dt_floor:
        raise StepSizeError(f"stable step {dt:.3e} is below the floor {dt_floor:.3e}")
    scale = M**2

    def step(w, h):
        return w + h * scale * laplacian(flux(w, d1, d2), torus)

    for obs in observers:
        obs(0.0, w)

    times, states = [0.0], [w.copy()]
    if store_every is not None:
        n = max(1, math.ceil(T / dt - 1e-9))
        h = T / n
        for k in range(1, n + 1):
            w = step(w, h)
            for obs in observers:
                obs(k * h, w)
            if k % store_every == 0 or k == n:
                times.append(k * h)
                states.append(w.copy())
        return StefanTrajectory(torus, d1, d2, np.array(times), np.array(states), h)

    outs = [0.0, T] if output_times is None else sorted(set(np.clip(output_times, 0, T)))
    t = 0.0
    for t_out in outs:
        if t_out == 0.0:
            continue
        while t < t_out:
            h = min(dt, t_out - t)
            w = step(w, h)
            t = t_out if h == t_out - t else t + h
            for obs in observers:
                obs(t, w)
        times.append(t_out)
        states.append(w.copy())
    return StefanTrajectory(torus, d1, d2, np.array(times), np.array(states), dt)


def heat_reference(w0_fn: Callable, T: float, D: float, M: int, d: int = 1, n_modes: int = 4096) -> np.ndarray:
    """Continuum heat solution on ``[0,1)^d`` at the cell centres, via a fine Fourier series."""
    torus = Torus(d, n_modes)
    pts = torus.points()
    g = np.asarray(w0_fn(pts), float).reshape(torus.shape)
    hat = np.fft.fftn(g)
    k = np.fft.fftfreq(n_modes, 1.0 / n_modes)
    ks = np.meshgrid(*([k] * d), indexing="ij")
    hat *= np.exp(-4 * np.pi**2 * D * T * sum(kk**2 for kk in ks))
    # evaluate the trigonometric interpolant at the coarse cell centres
    if n_modes % M == 0:
        fine = np.fft.ifftn(hat).real
        step = n_modes // M
        return fine[(slice(None, None, step),) * d].ravel()
    coarse = Torus(d, M).points()
    phase = np.exp(2j * np.pi * np.tensordot(coarse, np.stack([kk.ravel() for kk in ks]), axes=(1, 0)))
    return (phase @ hat.ravel()).real / torus.size


@dataclass(frozen=True)
class TestFunction:
    """``psi(t, r) = time(t) * space(r)`` with analytic derivatives."""

    name: str
    time: Callable
    dtime: Callable
    space: Callable
    lap_space: Callable

    __test__ = False  # not a pytest class

    def psi(self, t, r):
        return self.time(t) * self.space(r)


def builtin_test_functions(T: float, d: int = 1) -> list[TestFunction]:
    """Damped low-frequency trigonometric family vanishing at ``t = T``."""
    fns = []
    for power in (1, 2):
        tf = lambda t, p=power: ((T - t) / T) ** p  # noqa: E731
        dtf = lambda t, p=power: -p * ((T - t) / T) ** (p - 1) / T  # noqa: E731
        for k in (1, 2):
            for trig in ("cos", "sin"):
                f = np.cos if trig == "cos" else np.sin
                kvec = 2 * np.pi * k
                space = lambda r, f=f, kv=kvec: np.prod(f(kv * np.atleast_2d(r)), axis=1)  # noqa: E731
                lap = lambda r, f=f, kv=kvec: -d * kv**2 * np.prod(f(kv * np.atleast_2d(r)), axis=1)  # noqa: E731
                fns.append(TestFunction(f"{trig}{k}_p{power}", tf, dtf, space, lap))
    return fns


def weak_residual(traj: StefanTrajectory, psi: TestFunction) -> float:
    """``|int int (w psi_t + D(w) Lap psi) + int w0 psi(0)|``.

    Trapezoid rule over the stored times, midpoint rule over the cells.
    """
    pts = traj.torus.points()
    vol = 1.0 / traj.torus.size
    sp = psi.space(pts)
    lap = psi.lap_space(pts)
    integrand = np.array(
        [
            vol * (np.dot(w, sp) * psi.dtime(t) + np.dot(flux(w, traj.d1, traj.d2), lap) * psi.time(t))
            for t, w in zip(traj.times, traj.w)
        ]
    )
    lhs = np.trapezoid(integrand, traj.times) if hasattr(np, "trapezoid") else np.trapz(integrand, traj.times)
    rhs = -vol * np.dot(traj.w[0], sp) * psi.time(0.0)
    return float(abs(lhs - rhs))


class StreamingResidual:
    """Weak residual accumulated step by step, for runs too long to store.

    Pass as an observer to :func:`solve_limit`; the trapezoid rule is applied
    over every step, so the value agrees with :func:`weak_residual` on a
    trajectory stored at every step.
    """

    def __init__(self, psi: TestFunction, torus: Torus, d1: float, d2: float):
        self.psi = psi
        self.d1, self.d2 = d1, d2
        pts = torus.points()
        self._vol = 1.0 / torus.size
        self._sp = psi.space(pts)
        self._lap = psi.lap_space(pts)
        self._last = None
        self._integral = 0.0
        self._initial = None

    def _density(self, t, w) -> float:
        return self._vol * (
            np.dot(w, self._sp) * self.psi.dtime(t) + np.dot(flux(w, self.d1, self.d2), self._lap) * self.psi.time(t)
        )

    def __call__(self, t, w):
        f = self._density(t, w)
        if self._last is None:
            self._initial = -self._vol * np.dot(w, self._sp) * self.psi.time(0.0)
        else:
            t0, f0 = self._last
            self._integral += 0.5 * (t - t0) * (f0 + f)
        self._last = (t, f)

    @property
    def value(self) -> float:
        return float(abs(self._integral - self._initial))


@dataclass(frozen=True)
class Crossing:
    """Zero of the linear interpolant of ``w`` and the one-sided slopes ``dw/dr``."""

    r: float
    slope_pos: float
    slope_neg: float

    def flux_mismatch(self, d1: float, d2: float) -> float:
        """``|d1 s+ - d2 s-|``; zero when the normal fluxes of both phases balance."""
        return abs(d1 * self.slope_pos - d2 * self.slope_neg)


def interface_extract_1d(w) -> list[Crossing]:
    """Zero crossings of the periodic piecewise-linear interpolant.

    Slopes come from the one-cell differences just outside the crossing
    interval on each side.
    """
    w = np.asarray(w, float)
    M = len(w)
    out = []
    for i in range(M):
        a, b = w[i], w[(i + 1) % M]
        if a * b < 0:
            r = (i + a / (a - b)) / M
            left = M * (w[i] - w[(i - 1) % M])
            right = M * (w[(i + 2) % M] - w[(i + 1) % M])
            pos, neg = (left, right) if a > 0 else (right, left)
            out.append(Crossing(r % 1.0, pos, neg))
        elif a == 0 and w[(i - 1) % M] * b < 0:
            left = M * (a - w[(i - 1) % M])
            right = M * (b - a)
            pos, neg = (left, right) if w[(i - 1) % M] > 0 else (right, left)
            out.append(Crossing(i / M, pos, neg))
    return out
