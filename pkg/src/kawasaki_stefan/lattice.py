"""Periodic lattice geometry, occupation/density fields and discrete operators.

Sites of the torus ``(Z/NZ)^d`` are addressed by their row-major linear index
over ``{0, ..., N-1}^d``. Fields are flat numpy arrays of length ``N**d``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

__all__ = [
    "Torus",
    "PairConfig",
    "neighbors",
    "laplacian",
    "discrete_laplacian",
    "gradient",
    "discrete_gradient",
    "write_snapshot",
    "read_snapshot",
]


@dataclass(frozen=True)
class Torus:
    """The discrete torus of side ``N`` in dimension ``d``."""

    d: int
    N: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"dimension must be positive, got {self.d}")
        if self.N < 2:
            raise ValueError(f"side length must be at least 2, got {self.N}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.d

    @property
    def size(self) -> int:
        return self.N**self.d

    def coords(self, x) -> np.ndarray:
        """Canonical coordinates of linear index ``x`` (array of length d)."""
        return np.array(np.unravel_index(x, self.shape)).T

    def index(self, coords) -> int | np.ndarray:
        c = np.mod(np.asarray(coords), self.N)
        return np.ravel_multi_index(tuple(np.moveaxis(c, -1, 0)), self.shape)

    def shift(self, x, j: int, step: int = 1):
        """Linear index of ``x + step * e_j`` (0-based direction ``j``)."""
        c = self.coords(x)
        c[..., j] = (c[..., j] + step) % self.N
        return self.index(c)

    @cached_property
    def neighbor_table(self) -> np.ndarray:
        """``(N**d, 2d)`` table; columns ordered ``x-e_1, x+e_1, ..., x-e_d, x+e_d``."""
        idx = np.arange(self.size).reshape(self.shape)
        cols = []
        for j in range(self.d):
            cols.append(np.roll(idx, 1, axis=j).ravel())
            cols.append(np.roll(idx, -1, axis=j).ravel())
        table = np.stack(cols, axis=1)
        table.setflags(write=False)
        return table

    @cached_property
    def forward_table(self) -> np.ndarray:
        """``(N**d, d)`` table of ``x + e_j``; bond ``(x, j)`` joins x to this site."""
        return self.neighbor_table[:, 1::2]

    def points(self) -> np.ndarray:
        """Macroscopic positions ``x/N`` in ``[0,1)^d``, shape ``(N**d, d)``."""
        return self.coords(np.arange(self.size)) / self.N


def neighbors(torus: Torus, x: int) -> list[int]:
    """The 2d neighbours of site ``x``, one per signed direction.

    For ``N = 2`` both neighbours along an axis are the same site and it is
    listed twice.
    """
    return [int(y) for y in torus.neighbor_table[x]]


def _grid(u: np.ndarray, torus: Torus) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (torus.size,):
        raise ValueError(f"field has shape {u.shape}, expected ({torus.size},)")
    return u.reshape(torus.shape)


def laplacian(u: np.ndarray, torus: Torus) -> np.ndarray:
    """Unscaled discrete Laplacian ``sum_{|y-x|=1} (u(y) - u(x))`` at every site."""
    g = _grid(u, torus)
    out = np.zeros_like(g)
    for j in range(torus.d):
        # differences first, so constants are harmonic in floating point too
        out += (np.roll(g, 1, axis=j) - g) + (np.roll(g, -1, axis=j) - g)
    return out.ravel()


def discrete_laplacian(u: np.ndarray, torus: Torus, x: int) -> float:
    u = np.asarray(u, dtype=float)
    return float(sum(u[y] - u[x] for y in torus.neighbor_table[x]))


def gradient(u: np.ndarray, torus: Torus, scale: float | None = None) -> np.ndarray:
    """Forward differences ``scale * (u(x+e_j) - u(x))``, shape ``(N**d, d)``.

    ``scale`` defaults to ``N``, giving the macroscopically scaled gradient.
    """
    if scale is None:
        scale = torus.N
    g = _grid(u, torus)
    comps = [(np.roll(g, -1, axis=j) - g).ravel() for j in range(torus.d)]
    return scale * np.stack(comps, axis=1)


def discrete_gradient(u: np.ndarray, torus: Torus, x: int, scale: float | None = None) -> np.ndarray:
    if scale is None:
        scale = torus.N
    u = np.asarray(u, dtype=float)
    return scale * (u[torus.forward_table[x]] - u[x])


@dataclass
class PairConfig:
    """Two binary occupation fields on a torus, one byte per site."""

    torus: Torus
    sigma1: np.ndarray = field(repr=False)
    sigma2: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name in ("sigma1", "sigma2"):
            s = np.asarray(getattr(self, name))
            if s.shape != (self.torus.size,):
                raise ValueError(f"{name} has shape {s.shape}, expected ({self.torus.size},)")
            if not np.all((s == 0) | (s == 1)):
                raise ValueError(f"{name} must be 0/1 valued")
            setattr(self, name, s.astype(np.uint8))

    @classmethod
    def empty(cls, torus: Torus) -> "PairConfig":
        z = np.zeros(torus.size, dtype=np.uint8)
        return cls(torus, z, z.copy())

    @property
    def counts(self) -> tuple[int, int]:
        return int(self.sigma1.sum()), int(self.sigma2.sum())

    def copy(self) -> "PairConfig":
        return PairConfig(self.torus, self.sigma1.copy(), self.sigma2.copy())

    def __eq__(self, other):
        if not isinstance(other, PairConfig):
            return NotImplemented
        return (
            self.torus == other.torus
            and np.array_equal(self.sigma1, other.sigma1)
            and np.array_equal(self.sigma2, other.sigma2)
        )


def write_snapshot(path, values: np.ndarray, torus: Torus, species) -> None:
    """Write a field as ``d,N,species`` header followed by ``index,value`` lines."""
    values = np.asarray(values)
    lines = [f"{torus.d},{torus.N},{species}"]
    lines += [f"{i},{v!r}" for i, v in enumerate(values.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_snapshot(path) -> tuple[np.ndarray, Torus, str]:
    rows = Path(path).read_text().splitlines()
    d, N, species = rows[0].split(",")
    torus = Torus(int(d), int(N))
    values = np.empty(torus.size)
    seen = np.zeros(torus.size, dtype=bool)
    for row in rows[1:]:
        if not row.strip():
            continue
        i, v = row.split(",")
        values[int(i)] = float(v)
        seen[int(i)] = True
    if not seen.all():
        raise ValueError(f"{path}: snapshot is missing {int((~seen).sum())} sites")
    return values, torus, species
