"""Named initial data and test functions.

Initial profiles are built from a macroscopic signed field ``w0`` with
``|w0| <= 1 - floor``; the densities are ``u1 = w0^+ + floor`` and
``u2 = w0^- + floor`` so that ``u1 - u2 = w0`` exactly and both densities
stay bounded away from zero. Every callable takes an ``(n, d)`` array of
points in ``[0, 1)^d``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .lattice import Torus, gradient

__all__ = [
    "Profile",
    "Admissibility",
    "PROFILES",
    "TEST_FUNCTIONS",
    "get_profile",
    "get_test_function",
    "admissibility",
    "random_admissible",
]


def _x(pts) -> np.ndarray:
    return np.atleast_2d(np.asarray(pts, float))[:, 0]


def _bump(r, centre: float, radius: float) -> np.ndarray:
    """``cos^2`` bump of height 1 supported on ``|r - centre| < radius`` (periodic)."""
    z = (r - centre + 0.5) % 1.0 - 0.5
    return np.where(np.abs(z) < radius, np.cos(0.5 * np.pi * z / radius) ** 2, 0.0)


@dataclass(frozen=True)
class Profile:
    """Initial datum given through its signed field ``w0``."""

    name: str
    w0: Callable
    floor: float = 0.02
    params: dict = field(default_factory=dict)

    def densities(self, torus: Torus) -> tuple[np.ndarray, np.ndarray]:
        w = np.asarray(self.w0(torus.points()), float)
        return np.maximum(w, 0) + self.floor, np.maximum(-w, 0) + self.floor

    def signed(self, torus: Torus) -> np.ndarray:
        u1, u2 = self.densities(torus)
        return u1 - u2


def _sine(amplitude=0.8, k=1):
    return lambda pts: amplitude * np.sin(2 * np.pi * k * _x(pts))


def _step(amplitude=0.8, width=None):
    """``+amplitude`` on ``[1/4, 3/4)``, ``-amplitude`` elsewhere, ramps of the given width.

    The default width is evaluated lazily as one lattice cell of whatever grid
    the profile is sampled on.
    """

    def w(pts):
        pts = np.atleast_2d(np.asarray(pts, float))
        r = pts[:, 0]
        h = width
        if h is None:
            side = round(len(r) ** (1.0 / pts.shape[1])) if len(r) else 1
            h = 1.0 / side
        # signed distance to the nearest edge of the plateau, scaled to the ramp
        dist = np.minimum(np.abs(r - 0.25), np.abs(r - 0.75))
        inside = (r >= 0.25) & (r < 0.75)
        ramp = np.clip(dist / h, 0.0, 1.0)
        return amplitude * np.where(inside, ramp, -ramp)

    return w


def _two_bump(amplitude=0.8, radius=0.2):
    return lambda pts: amplitude * (_bump(_x(pts), 0.25, radius) - _bump(_x(pts), 0.75, radius))


def _positive_bump(amplitude=0.5, base=0.2, radius=0.25):
    return lambda pts: base + amplitude * _bump(_x(pts), 0.5, radius)


def _mixed(pts):
    # no reflection symmetry, so every low mode of w0 is excited
    r = _x(pts)
    return 0.1 + 0.45 * np.sin(2 * np.pi * r) + 0.15 * np.cos(2 * np.pi * r) + 0.25 * np.cos(4 * np.pi * r) + 0.1 * np.sin(4 * np.pi * r)


PROFILES: dict[str, Profile] = {
    "sine": Profile("sine", _sine(), params={"amplitude": 0.8, "k": 1}),
    "step": Profile("step", _step(), params={"amplitude": 0.8, "width": "1/N"}),
    "step-wide": Profile("step-wide", _step(width=0.05), params={"amplitude": 0.8, "width": 0.05}),
    "two-bump": Profile("two-bump", _two_bump(), params={"amplitude": 0.8, "radius": 0.2}),
    "positive-bump": Profile("positive-bump", _positive_bump(), floor=0.0, params={"base": 0.2, "amplitude": 0.5}),
    "mixed": Profile("mixed", _mixed),
    "constant": Profile("constant", lambda pts: np.full(len(np.atleast_2d(pts)), 0.3), floor=0.2),
}


def _const(c):
    return lambda pts: np.full(len(np.atleast_2d(pts)), float(c))


TEST_FUNCTIONS: dict[str, Callable] = {
    "one": _const(1.0),
    "cos1": lambda pts: np.cos(2 * np.pi * _x(pts)),
    "sin1": lambda pts: np.sin(2 * np.pi * _x(pts)),
    "cos2": lambda pts: np.cos(4 * np.pi * _x(pts)),
    "sin2": lambda pts: np.sin(4 * np.pi * _x(pts)),
    "bump": lambda pts: np.prod(_bump(np.atleast_2d(np.asarray(pts, float)), 0.5, 0.25), axis=1),
}


def get_profile(name: str) -> Profile:
    try:
        return PROFILES[name]
    except KeyError:
        raise KeyError(f"unknown profile {name!r}; available: {', '.join(sorted(PROFILES))}") from None


def get_test_function(name: str) -> Callable:
    try:
        return TEST_FUNCTIONS[name]
    except KeyError:
        raise KeyError(f"unknown test function {name!r}; available: {', '.join(sorted(TEST_FUNCTIONS))}") from None


@dataclass(frozen=True)
class Admissibility:
    """Constants with ``e^{-c1 K} <= u_i <= c2`` and ``|grad^N u_i| <= C0 K``."""

    C0: float
    c1: float
    c2: float

    def as_dict(self) -> dict:
        return {"C0": self.C0, "c1": self.c1, "c2": self.c2}


def admissibility(u1, u2, torus: Torus, K: float) -> Admissibility:
    """Smallest constants for which the sampled densities are admissible."""
    if K <= 0:
        raise ValueError("K must be positive")
    lo = min(float(np.min(u1)), float(np.min(u2)))
    hi = max(float(np.max(u1)), float(np.max(u2)))
    if lo <= 0:
        raise ValueError("densities must be bounded away from zero")
    grad = max(float(np.abs(gradient(u, torus)).max()) for u in (u1, u2))
    return Admissibility(grad / K, -math.log(lo) / K, hi)


def random_admissible(torus: Torus, rng, lo: float = 0.05, hi: float = 0.9, modes: int = 3):
    """Smooth random densities with values in ``[lo, hi]``.

    A few random Fourier modes along each axis, affinely mapped into the
    interval, one independent draw per species.
    """
    pts = torus.points()
    out = []
    for _ in range(2):
        g = np.zeros(torus.size)
        for j in range(torus.d):
            for k in range(1, modes + 1):
                a, b = rng.normal(size=2) / k
                g += a * np.cos(2 * np.pi * k * pts[:, j]) + b * np.sin(2 * np.pi * k * pts[:, j])
        span = g.max() - g.min()
        g = (g - g.min()) / span if span > 0 else np.zeros_like(g)
        out.append(lo + (hi - lo) * g)
    return out[0], out[1]
