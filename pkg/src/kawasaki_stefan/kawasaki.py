"""Exact event-driven simulation of two-species Kawasaki exchange with annihilation.

Species ``i`` particles swap across a nearest-neighbour bond at rate
``N**2 * d_i`` (only bonds with different occupancy are enabled, swaps across
equal occupancy are no-ops), and a site holding one particle of each species
is emptied at rate ``K``. Time is macroscopic: the ``N**2`` sits in the rates.

The per-event cost is O(d): enabled bonds and doubly occupied sites are kept
in swap-remove index sets that are patched locally after each event.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np

from .lattice import PairConfig, Torus

log = logging.getLogger(__name__)

__all__ = [
    "SimParams",
    "EventLog",
    "AbsorbingState",
    "KawasakiSimulator",
    "sample_bernoulli_pair",
    "total_event_rate",
    "count_rates",
    "step",
    "simulate",
    "empirical_pairing",
    "replica_rng",
    "EXCHANGE1",
    "EXCHANGE2",
    "KILL",
]

EXCHANGE1, EXCHANGE2, KILL = 0, 1, 2
KIND_NAMES = {EXCHANGE1: "exchange1", EXCHANGE2: "exchange2", KILL: "kill"}

# kernel exit codes
_DONE, _NEED_RANDOMS, _MAX_EVENTS, _ABSORBED, _LOG_FULL = 0, 1, 2, 3, 4

_CHUNK = 1 << 16


class AbsorbingState(RuntimeError):
    """Raised by :func:`step` when no transition is enabled."""


@dataclass(frozen=True)
class SimParams:
    d1: float
    d2: float
    K: float
    N: int
    d: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.d1 <= 0 or self.d2 <= 0:
            raise ValueError("jump rates d1, d2 must be positive")
        if self.K < 0:
            raise ValueError("killing rate K must be nonnegative")

    @property
    def torus(self) -> Torus:
        return Torus(self.d, self.N)


@dataclass
class EventLog:
    """Events in order of occurrence.

    ``location`` is the bond index ``x*d + j`` (bond from x to x+e_j) for
    exchanges and the site index for kills.
    """

    time: np.ndarray = field(default_factory=lambda: np.empty(0))
    kind: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int8))
    location: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __len__(self):
        return len(self.time)

    def extend(self, time, kind, location):
        self.time = np.concatenate([self.time, time])
        self.kind = np.concatenate([self.kind, kind.astype(np.int8)])
        self.location = np.concatenate([self.location, location.astype(np.int64)])

    def tobytes(self) -> bytes:
        return self.time.tobytes() + self.kind.tobytes() + self.location.tobytes()


def replica_rng(seed: int, replica: int = 0) -> np.random.Generator:
    """Independent PCG64 stream for ``(seed, replica)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, replica])))


def sample_bernoulli_pair(u1, u2, torus: Torus, rng) -> PairConfig:
    """Independent occupations with ``P(sigma_{i,x} = 1) = u_i(x)``."""
    if not isinstance(rng, np.random.Generator):
        rng = replica_rng(int(rng))
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    for u in (u1, u2):
        if u.shape != (torus.size,):
            raise ValueError(f"density has shape {u.shape}, expected ({torus.size},)")
        if np.any(u < 0) or np.any(u > 1) or not np.all(np.isfinite(u)):
            raise ValueError("densities must lie in [0, 1]")
    s1 = rng.random(torus.size) < u1
    s2 = rng.random(torus.size) < u2
    return PairConfig(torus, s1, s2)


def count_rates(config: PairConfig) -> tuple[int, int, int]:
    """From-scratch counts ``(B1, B2, M)`` of discrepant bonds and double sites."""
    fwd = config.torus.forward_table
    s1 = config.sigma1.astype(np.int8)
    s2 = config.sigma2.astype(np.int8)
    b1 = int(np.count_nonzero(s1[:, None] != s1[fwd]))
    b2 = int(np.count_nonzero(s2[:, None] != s2[fwd]))
    m = int(np.count_nonzero(s1 & s2))
    return b1, b2, m


def total_event_rate(config: PairConfig, params: SimParams) -> float:
    b1, b2, m = count_rates(config)
    n2 = params.N**2
    return n2 * params.d1 * b1 + n2 * params.d2 * b2 + params.K * m


@numba.njit(cache=True)
def _set_add(lst, pos, n, item):
    if pos[item] < 0:
        lst[n] = item
        pos[item] = n
        n += 1
    return n


@numba.njit(cache=True)
def _set_remove(lst, pos, n, item):
    p = pos[item]
    if p >= 0:
        n -= 1
        last = lst[n]
        lst[p] = last
        pos[last] = p
        pos[item] = -1
    return n


@numba.njit(cache=True)
def _refresh_bond(s, b, bond_a, bond_b, lst, pos, n):
    if s[bond_a[b]] != s[bond_b[b]]:
        return _set_add(lst, pos, n, b)
    return _set_remove(lst, pos, n, b)


@numba.njit(cache=True)
def _refresh_site_bonds(s, x, site_bonds, bond_a, bond_b, lst, pos, n):
    for k in range(site_bonds.shape[1]):
        n = _refresh_bond(s, site_bonds[x, k], bond_a, bond_b, lst, pos, n)
    return n


@numba.njit(cache=True)
def _advance(
    s1, s2, bond_a, bond_b, site_bonds,
    dl1, dp1, dl2, dp2, ml, mp, counts,
    r1, r2, K, t, t_stop, max_events,
    uniforms, u_ptr,
    log_time, log_kind, log_loc, log_n, logging_on,
):  # fmt: skip
    n1 = counts[0]
    n2 = counts[1]
    nm = counts[2]
    n_events = 0
    status = _DONE
    n_uni = uniforms.shape[0]
    while True:
        if n_events >= max_events:
            status = _MAX_EVENTS
            break
        a1 = r1 * n1
        a2 = r2 * n2
        ak = K * nm
        total = a1 + a2 + ak
        if total <= 0.0:
            status = _ABSORBED
            break
        if u_ptr + 2 > n_uni:
            status = _NEED_RANDOMS
            break
        if logging_on and log_n >= log_time.shape[0]:
            status = _LOG_FULL
            break
        tau = -np.log(1.0 - uniforms[u_ptr]) / total
        if t + tau >= t_stop:
            # memoryless: the overshooting clock is discarded
            u_ptr += 1
            t = t_stop
            status = _DONE
            break
        pick = uniforms[u_ptr + 1] * total
        u_ptr += 2
        t += tau
        if pick < a1 or (n2 == 0 and nm == 0):
            k = min(int(pick / r1), n1 - 1)
            b = dl1[k]
            x = bond_a[b]
            y = bond_b[b]
            tmp = s1[x]
            s1[x] = s1[y]
            s1[y] = tmp
            n1 = _refresh_site_bonds(s1, x, site_bonds, bond_a, bond_b, dl1, dp1, n1)
            n1 = _refresh_site_bonds(s1, y, site_bonds, bond_a, bond_b, dl1, dp1, n1)
            kind = 0
            loc = b
        elif pick < a1 + a2 or nm == 0:
            k = min(int((pick - a1) / r2), n2 - 1)
            b = dl2[k]
            x = bond_a[b]
            y = bond_b[b]
            tmp = s2[x]
            s2[x] = s2[y]
            s2[y] = tmp
            n2 = _refresh_site_bonds(s2, x, site_bonds, bond_a, bond_b, dl2, dp2, n2)
            n2 = _refresh_site_bonds(s2, y, site_bonds, bond_a, bond_b, dl2, dp2, n2)
            kind = 1
            loc = b
        else:
            k = min(int((pick - a1 - a2) / K), nm - 1)
            x = ml[k]
            y = x
            s1[x] = 0
            s2[x] = 0
            nm = _set_remove(ml, mp, nm, x)
            n1 = _refresh_site_bonds(s1, x, site_bonds, bond_a, bond_b, dl1, dp1, n1)
            n2 = _refresh_site_bonds(s2, x, site_bonds, bond_a, bond_b, dl2, dp2, n2)
            kind = 2
            loc = x
        if kind != 2:
            for z in (x, y):
                if s1[z] == 1 and s2[z] == 1:
                    nm = _set_add(ml, mp, nm, z)
                else:
                    nm = _set_remove(ml, mp, nm, z)
        if logging_on:
            log_time[log_n] = t
            log_kind[log_n] = kind
            log_loc[log_n] = loc
            log_n += 1
        n_events += 1
    counts[0] = n1
    counts[1] = n2
    counts[2] = nm
    return t, n_events, u_ptr, log_n, status


class KawasakiSimulator:
    """Mutable simulation state with incrementally maintained event sets."""

    def __init__(self, config: PairConfig, params: SimParams, rng: np.random.Generator | int | None = None):
        if config.torus != params.torus:
            raise ValueError(f"config lives on {config.torus}, params describe {params.torus}")
        if rng is None:
            rng = replica_rng(params.seed)
        elif not isinstance(rng, np.random.Generator):
            rng = replica_rng(int(rng))
        self.params = params
        self.torus = config.torus
        self.rng = rng
        self.t = 0.0
        self.n_events = 0
        self.s1 = config.sigma1.copy()
        self.s2 = config.sigma2.copy()

        torus = self.torus
        d = torus.d
        nbonds = torus.size * d
        self.bond_a = np.repeat(np.arange(torus.size, dtype=np.int64), d)
        self.bond_b = torus.forward_table.astype(np.int64).ravel()
        back = torus.neighbor_table[:, 0::2].astype(np.int64)
        # bonds touching x: (x, j) and (x - e_j, j)
        site = np.arange(torus.size, dtype=np.int64)[:, None]
        jj = np.arange(d, dtype=np.int64)[None, :]
        self.site_bonds = np.concatenate([site * d + jj, back * d + jj], axis=1)

        self._dl = [np.empty(nbonds, np.int64), np.empty(nbonds, np.int64)]
        self._dp = [np.full(nbonds, -1, np.int64), np.full(nbonds, -1, np.int64)]
        self._ml = np.empty(torus.size, np.int64)
        self._mp = np.full(torus.size, -1, np.int64)
        self._counts = np.zeros(3, np.int64)
        for i, s in enumerate((self.s1, self.s2)):
            disc = np.flatnonzero(s[self.bond_a] != s[self.bond_b])
            self._dl[i][: len(disc)] = disc
            self._dp[i][disc] = np.arange(len(disc))
            self._counts[i] = len(disc)
        dbl = np.flatnonzero(self.s1 & self.s2)
        self._ml[: len(dbl)] = dbl
        self._mp[dbl] = np.arange(len(dbl))
        self._counts[2] = len(dbl)

        self._uniforms = np.empty(0)
        self._u_ptr = 0

    @property
    def config(self) -> PairConfig:
        return PairConfig(self.torus, self.s1.copy(), self.s2.copy())

    @property
    def counts(self) -> tuple[int, int]:
        return int(self.s1.sum()), int(self.s2.sum())

    @property
    def rate_counts(self) -> tuple[int, int, int]:
        """Incrementally maintained ``(B1, B2, M)``."""
        return tuple(int(c) for c in self._counts)

    @property
    def total_rate(self) -> float:
        p = self.params
        b1, b2, m = self.rate_counts
        return p.N**2 * (p.d1 * b1 + p.d2 * b2) + p.K * m

    def check_bookkeeping(self) -> bool:
        return self.rate_counts == count_rates(PairConfig(self.torus, self.s1, self.s2))

    def _refill(self):
        rest = self._uniforms[self._u_ptr :]
        self._uniforms = np.concatenate([rest, self.rng.random(_CHUNK)])
        self._u_ptr = 0

    def advance(self, t_stop: float, max_events: int = np.iinfo(np.int64).max, event_log: EventLog | None = None):
        """Run until time ``t_stop`` (or ``max_events``); return the exit status."""
        p = self.params
        r1 = float(p.N**2 * p.d1)
        r2 = float(p.N**2 * p.d2)
        cap = _CHUNK if event_log is not None else 0
        while True:
            lt = np.empty(cap)
            lk = np.empty(cap, np.int8)
            ll = np.empty(cap, np.int64)
            t, n_ev, self._u_ptr, n_log, status = _advance(
                self.s1, self.s2, self.bond_a, self.bond_b, self.site_bonds,
                self._dl[0], self._dp[0], self._dl[1], self._dp[1], self._ml, self._mp,
                self._counts, r1, r2, float(p.K), self.t, float(t_stop), max_events,
                self._uniforms, self._u_ptr, lt, lk, ll, 0, event_log is not None,
            )  # fmt: skip
            self.t = t
            self.n_events += n_ev
            max_events -= n_ev
            if event_log is not None and n_log:
                event_log.extend(lt[:n_log], lk[:n_log], ll[:n_log])
            if status == _NEED_RANDOMS:
                self._refill()
            elif status == _LOG_FULL:
                continue
            else:
                if status == _ABSORBED:
                    self.t = max(self.t, float(t_stop))
                return status

    def step(self):
        """Perform one event; return ``(elapsed, kind, location)``."""
        if self.total_rate <= 0:
            raise AbsorbingState("no transition is enabled")
        t0 = self.t
        elog = EventLog()
        self.advance(np.inf, max_events=1, event_log=elog)
        return self.t - t0, int(elog.kind[0]), int(elog.location[0])


def step(config: PairConfig, params: SimParams, rng):
    """One transition from ``config``; returns ``(new_config, elapsed, (kind, location))``."""
    sim = KawasakiSimulator(config, params, rng)
    elapsed, kind, loc = sim.step()
    return sim.config, elapsed, (kind, loc)


def empirical_pairing(config: PairConfig, phi: Callable, species: int) -> float:
    """``N^{-d} sum_x sigma_{i,x} phi(x/N)``."""
    s = config.sigma1 if species == 1 else config.sigma2
    vals = np.asarray(phi(config.torus.points()), dtype=float)
    return float(np.dot(s, np.broadcast_to(vals, s.shape)) / config.torus.size)


@dataclass
class SimulationResult:
    config: PairConfig
    log: EventLog | None
    observations: list[tuple[float, int, str, float]]
    n_events: int
    absorbed: bool


def simulate(
    config0: PairConfig,
    T: float,
    params: SimParams,
    rng=None,
    observe_times: Sequence[float] = (),
    phis: dict[str, Callable] | None = None,
    record_events: bool = False,
) -> SimulationResult:
    """Run to macroscopic time ``T``, pairing the empirical measures with each
    test function at every observation time.

    ``observations`` holds ``(time, species, phi_name, value)`` tuples.
    """
    if T < 0:
        raise ValueError("T must be nonnegative")
    sim = KawasakiSimulator(config0, params, rng)
    phis = phis or {}
    torus = config0.torus
    phi_vals = {name: np.broadcast_to(np.asarray(f(torus.points()), float), (torus.size,)) for name, f in phis.items()}
    elog = EventLog() if record_events else None
    obs = []
    absorbed = False
    for t_obs in sorted(t for t in observe_times if t <= T):
        status = sim.advance(t_obs, event_log=elog)
        absorbed |= status == _ABSORBED
        for name, v in phi_vals.items():
            obs.append((float(t_obs), 1, name, float(np.dot(sim.s1, v) / torus.size)))
            obs.append((float(t_obs), 2, name, float(np.dot(sim.s2, v) / torus.size)))
    if T > 0:
        absorbed |= sim.advance(T, event_log=elog) == _ABSORBED
    log.debug("simulated %d events to T=%g", sim.n_events, T)
    return SimulationResult(sim.config, elog, obs, sim.n_events, absorbed)
