"""Convergence experiments across the three levels of description.

A run is described by a strict INI file (see :class:`ExperimentConfig`).
The microscopic study compares Kawasaki replicas with the discretized
hydro solution; the macroscopic study compares the embedded hydro field
``u1 - u2`` with the limit equation on a fine grid. Every hydro run is also
checked against the a-priori integral bounds.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import hydro, kawasaki, stefan
from .lattice import Torus, write_snapshot
from .oracle import clopper_pearson
from .profiles import get_profile, get_test_function

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "K_of_N",
    "embed_step",
    "l2_distance_embedded",
    "segregation_integral",
    "gradient_l2_integral",
    "ReportRow",
    "Report",
    "converge_microscopic",
    "converge_macroscopic",
    "run",
]

LEVELS = ("sim", "hydro", "stefan", "verify", "converge")
SCHEDULES = ("fixed", "delta_sqrt_log")


class ConfigError(ValueError):
    """Malformed or unknown configuration entry."""


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(v) for v in s.split(",") if v.strip())


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.split(",") if v.strip())


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


# section -> key -> (field name, parser)
_SCHEMA = {
    "experiment": {"level": ("level", str), "seed": ("seed", int), "parallelism": ("parallelism", int)},
    "model": {
        "d": ("d", int),
        "d1": ("d1", float),
        "d2": ("d2", float),
        "T": ("T", float),
        "profile": ("profile", str),
    },
    "schedule": {"kind": ("schedule", str), "K": ("K", float), "delta": ("delta", _floats)},
    "micro": {
        "N": ("micro_N", _ints),
        "replicas": ("replicas", int),
        "observe_times": ("observe_times", _floats),
        "phi": ("phi", str),
        "epsilon": ("epsilon", float),
        "confidence": ("confidence", float),
    },
    "macro": {
        "N": ("macro_N", _ints),
        "M": ("M", int),
        "n_times": ("n_times", int),
        "tolerance": ("macro_tolerance", float),
    },
    "assert": {
        "segregation": ("assert_segregation", _bool),
        "gradient": ("assert_gradient", _bool),
        "micro_trend": ("assert_micro_trend", _bool),
        "macro_trend": ("assert_macro_trend", _bool),
        "bound_tol": ("bound_tol", float),
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    level: str = "converge"
    seed: int = 0
    parallelism: int = 1
    d: int = 1
    d1: float = 1.0
    d2: float = 1.0
    T: float = 0.1
    profile: str = "sine"
    schedule: str = "delta_sqrt_log"
    K: float = 1.0
    delta: tuple[float, ...] = (1.0,)
    micro_N: tuple[int, ...] = ()
    replicas: int = 0
    observe_times: tuple[float, ...] = ()
    phi: str = "cos1"
    epsilon: float = 0.05
    confidence: float = 0.95
    macro_N: tuple[int, ...] = ()
    M: int = 1024
    n_times: int = 21
    macro_tolerance: float = 0.1
    assert_segregation: bool = True
    assert_gradient: bool = True
    assert_micro_trend: bool = True
    assert_macro_trend: bool = True
    bound_tol: float = 1e-6

    def __post_init__(self):
        problems = []
        if self.level not in LEVELS:
            problems.append(f"level must be one of {LEVELS}")
        if self.schedule not in SCHEDULES:
            problems.append(f"schedule kind must be one of {SCHEDULES}")
        if self.d < 1 or self.d1 <= 0 or self.d2 <= 0 or self.T < 0:
            problems.append("need d >= 1, d1 > 0, d2 > 0, T >= 0")
        if self.parallelism < 1:
            problems.append("parallelism must be >= 1")
        if not 0 < self.confidence < 1:
            problems.append("confidence must lie in (0, 1)")
        if any(t < 0 or t > self.T for t in self.observe_times):
            problems.append("observe_times must lie in [0, T]")
        if self.micro_N and (self.replicas < 1 or not self.observe_times):
            problems.append("a micro sweep needs replicas >= 1 and observe_times")
        if self.schedule == "delta_sqrt_log" and not self.delta:
            problems.append("delta_sqrt_log needs at least one delta")
        for name, getter in (("profile", get_profile), ("phi", get_test_function)):
            try:
                getter(getattr(self, name))
            except KeyError as exc:
                problems.append(str(exc.args[0]))
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def deltas(self) -> tuple[float | None, ...]:
        return self.delta if self.schedule == "delta_sqrt_log" else (None,)

    def K_for(self, N: int, delta: float | None) -> float:
        return self.K if delta is None else K_of_N(N, delta)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for section, keys in _SCHEMA.items():
            cp[section] = {key: _fmt(getattr(self, fname)) for key, (fname, _) in keys.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def parse_config(text: str) -> ExperimentConfig:
    """Parse the INI text; unknown sections or keys and bad values raise :class:`ConfigError`."""
    cp = configparser.ConfigParser(interpolation=None, strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    kwargs = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp[section].items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            fname, conv = _SCHEMA[section][key]
            try:
                kwargs[fname] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def K_of_N(N: int, delta: float) -> float:
    """``max(1, delta sqrt(log N))``."""
    return max(1.0, delta * math.sqrt(math.log(N)))


def embed_step(u, torus: Torus):
    """Piecewise-constant extension: ``r`` maps to the site whose centred box contains it.

    Boxes are ``[x/N - 1/(2N), x/N + 1/(2N))`` per axis, so evaluation at
    ``x/N`` returns ``u(x)``.
    """
    u = np.asarray(u, float)
    N = torus.N

    def f(r):
        r = np.atleast_2d(np.asarray(r, float))
        idx = np.floor(r * N + 0.5).astype(np.int64) % N
        return u[torus.index(idx)]

    return f


def _centred_cell(r, n):
    return np.floor(r * n + 0.5).astype(np.int64) % n


def l2_distance_embedded(a, Na: int, b, Nb: int, d: int = 1) -> float:
    """Exact ``L^2(T^d)`` distance between two centred-box step functions.

    All box edges sit on the grid of spacing ``1/(2L)``, ``L = lcm(Na, Nb)``,
    so sampling at the midpoints of that grid integrates exactly.
    """
    L = math.lcm(Na, Nb)
    r = (np.arange(2 * L) + 0.5) / (2 * L)
    ia, ib = _centred_cell(r, Na), _centred_cell(r, Nb)
    a = np.asarray(a, float).reshape((Na,) * d)
    b = np.asarray(b, float).reshape((Nb,) * d)
    diff = a[np.ix_(*([ia] * d))] - b[np.ix_(*([ib] * d))]
    return float(np.sqrt(np.mean(diff**2)))


def segregation_integral(traj: hydro.HydroTrajectory) -> float:
    """``int_0^T N^{-d} sum_x u1 u2 dt`` (trapezoid over every internal step)."""
    return float(traj.segregation[-1])


def gradient_l2_integral(traj: hydro.HydroTrajectory, species: int) -> float:
    """``int_0^T N^{-d} sum_x |grad^N u_i|^2 dt``."""
    return float(traj.grad_sq[species - 1][-1])


@dataclass(frozen=True)
class ReportRow:
    quantity: str
    delta: float | None = None
    N: int | None = None
    K: float | None = None
    replica: int | None = None
    time: float | None = None
    species: int | None = None
    value: float = float("nan")
    lower: float | None = None
    upper: float | None = None
    bound: float | None = None
    passed: bool | None = None
    asserted: bool = False

    COLUMNS = ("quantity", "delta", "N", "K", "replica", "time", "species", "value", "lower", "upper", "bound", "pass", "asserted")

    def cells(self) -> list[str]:
        def c(v):
            if v is None:
                return ""
            if isinstance(v, (bool, np.bool_)):
                return _fmt(bool(v))
            return _fmt(float(v) if isinstance(v, (float, np.floating)) else v)

        vals = [getattr(self, f.name) for f in dataclasses.fields(self)]
        return [c(v) for v in vals]


@dataclass
class Report:
    rows: list[ReportRow] = field(default_factory=list)

    @property
    def failures(self) -> list[ReportRow]:
        return [r for r in self.rows if r.asserted and r.passed is False]

    @property
    def ok(self) -> bool:
        return not self.failures

    def extend(self, rows):
        self.rows.extend(rows)

    def select(self, quantity: str) -> list[ReportRow]:
        return [r for r in self.rows if r.quantity == quantity]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(ReportRow.COLUMNS)
            for r in self.rows:
                w.writerow(r.cells())


def _bound_rows(cfg: ExperimentConfig, traj, delta, N, K) -> list[ReportRow]:
    seg = segregation_integral(traj)
    rows = [
        ReportRow("segregation", delta, N, K, value=seg, bound=1.0 / K, passed=seg <= 1.0 / K + cfg.bound_tol, asserted=cfg.assert_segregation)
    ]
    for i, di in ((1, cfg.d1), (2, cfg.d2)):
        g = gradient_l2_integral(traj, i)
        b = 1.0 / (2 * di)
        rows.append(ReportRow("gradient_l2", delta, N, K, species=i, value=g, bound=b, passed=g <= b + cfg.bound_tol, asserted=cfg.assert_gradient))
    return rows


def _replica_task(args):
    u1, u2, d, N, d1, d2, K, T, seed_key, times, phi_name = args
    params = kawasaki.SimParams(d1, d2, K, N, d=d, seed=seed_key[0])
    rng = np.random.default_rng(list(seed_key))
    config0 = kawasaki.sample_bernoulli_pair(u1, u2, params.torus, rng)
    res = kawasaki.simulate(config0, T, params, rng, observe_times=times, phis={phi_name: get_test_function(phi_name)})
    return [(t, sp, v) for t, sp, _, v in res.observations]


def _map(fn, tasks, parallelism: int):
    if parallelism <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=parallelism) as ex:
        return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * parallelism))))


def converge_microscopic(cfg: ExperimentConfig, snapshot_dir=None) -> Report:
    """Pairing gaps between Kawasaki replicas and the hydro solution.

    For each ``(delta, N)`` the exceedance frequency ``P(gap > epsilon)`` is
    reported with exact binomial (Clopper-Pearson) limits. The trend check
    passes between consecutive sizes when the later lower limit does not
    exceed the earlier upper limit.
    """
    report = Report()
    phi = get_test_function(cfg.phi)
    times = tuple(sorted(cfg.observe_times))
    alpha = 1 - cfg.confidence
    for di, delta in enumerate(cfg.deltas):
        exceed = {}
        for N in sorted(cfg.micro_N):
            K = cfg.K_for(N, delta)
            torus = Torus(cfg.d, N)
            u1, u2 = get_profile(cfg.profile).densities(torus)
            params = hydro.HydroParams(cfg.d1, cfg.d2, K, N, cfg.d)
            traj = hydro.integrate(u1, u2, cfg.T, params, output_times=(0.0, *times, cfg.T))
            report.extend(_bound_rows(cfg, traj, delta, N, K))
            phv = phi(torus.points())
            target = {}
            for k, t in enumerate(traj.times):
                for sp, u in ((1, traj.u1[k]), (2, traj.u2[k])):
                    target[(float(t), sp)] = float(np.dot(u, phv)) / torus.size
                if snapshot_dir is not None and float(t) in times:
                    for sp, u in ((1, traj.u1[k]), (2, traj.u2[k])):
                        write_snapshot(Path(snapshot_dir) / f"micro_delta{di}_N{N}_t{k}_u{sp}.csv", u, torus, sp)
            tasks = [(u1, u2, cfg.d, N, cfg.d1, cfg.d2, K, cfg.T, (cfg.seed, N, di, r), times, cfg.phi) for r in range(cfg.replicas)]
            results = _map(_replica_task, tasks, cfg.parallelism)
            counts = {}
            for r, obs in enumerate(results):
                for t, sp, v in sorted(obs):
                    gap = abs(v - target[(float(t), sp)])
                    report.rows.append(ReportRow("gap", delta, N, K, r, t, sp, gap, bound=cfg.epsilon, passed=gap <= cfg.epsilon))
                    hits, n = counts.get((t, sp), (0, 0))
                    counts[(t, sp)] = (hits + (gap > cfg.epsilon), n + 1)
            for (t, sp), (hits, n) in sorted(counts.items()):
                lo, hi = clopper_pearson(hits, n, alpha)
                exceed[(N, t, sp)] = (hits / n, lo, hi)
                report.rows.append(ReportRow("p_exceed", delta, N, K, None, t, sp, hits / n, lo, hi, cfg.epsilon))
        Ns = sorted(cfg.micro_N)
        for t in times:
            for sp in (1, 2):
                for Na, Nb in zip(Ns, Ns[1:]):
                    _, _, hi_a = exceed[(Na, t, sp)]
                    p_b, lo_b, _ = exceed[(Nb, t, sp)]
                    report.rows.append(
                        ReportRow("micro_trend", delta, Nb, cfg.K_for(Nb, delta), None, t, sp, lo_b - hi_a, bound=0.0, passed=lo_b <= hi_a, asserted=cfg.assert_micro_trend)
                    )
    return report


def stefan_reference(cfg: ExperimentConfig, times) -> stefan.StefanTrajectory:
    torus = Torus(cfg.d, cfg.M)
    w0 = get_profile(cfg.profile).signed(torus)
    return stefan.solve_limit(w0, cfg.T, cfg.d1, cfg.d2, cfg.M, d=cfg.d, output_times=times)


def converge_macroscopic(cfg: ExperimentConfig, snapshot_dir=None, reference: stefan.StefanTrajectory | None = None) -> Report:
    """``L^2([0,T] x T^d)`` distance between embedded hydro ``u1 - u2`` and the limit solution.

    Both fields are stored on a common uniform time grid; time is integrated
    by the trapezoid rule and space exactly.
    """
    report = Report()
    times = np.linspace(0.0, cfg.T, cfg.n_times)
    ref = reference if reference is not None else stefan_reference(cfg, times)
    if snapshot_dir is not None:
        write_snapshot(Path(snapshot_dir) / "macro_reference_final.csv", ref.final, ref.torus, "w")
    prof = get_profile(cfg.profile)
    for di, delta in enumerate(cfg.deltas):
        dist = {}
        for N in sorted(cfg.macro_N):
            K = cfg.K_for(N, delta)
            torus = Torus(cfg.d, N)
            u1, u2 = prof.densities(torus)
            traj = hydro.integrate(u1, u2, cfg.T, hydro.HydroParams(cfg.d1, cfg.d2, K, N, cfg.d), output_times=times)
            report.extend(_bound_rows(cfg, traj, delta, N, K))
            w = traj.u1 - traj.u2
            sq = np.array([l2_distance_embedded(w[k], N, ref.w[k], cfg.M, cfg.d) ** 2 for k in range(len(times))])
            integ = np.trapezoid(sq, times) if hasattr(np, "trapezoid") else np.trapz(sq, times)
            dist[N] = math.sqrt(integ)
            report.rows.append(ReportRow("l2_distance", delta, N, K, value=dist[N]))
            report.rows.append(ReportRow("w_mass", delta, N, K, time=cfg.T, value=float(w[-1].mean()), lower=float(w[0].mean())))
            if snapshot_dir is not None:
                write_snapshot(Path(snapshot_dir) / f"macro_delta{di}_N{N}_final_w.csv", w[-1], torus, "w")
        Ns = sorted(cfg.macro_N)
        for Na, Nb in zip(Ns, Ns[1:]):
            limit = (1 + cfg.macro_tolerance) * dist[Na]
            report.rows.append(
                ReportRow("macro_trend", delta, Nb, cfg.K_for(Nb, delta), value=dist[Nb], bound=limit, passed=dist[Nb] <= limit, asserted=cfg.assert_macro_trend)
            )
    return report


def run(cfg: ExperimentConfig, out_dir) -> Report:
    """Run both sweeps, write ``report.csv``, ``config.resolved`` and snapshots."""
    out = Path(out_dir)
    snaps = out / "snapshots"
    snaps.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(cfg.to_ini())
    report = Report()
    if cfg.micro_N:
        report.extend(converge_microscopic(cfg, snaps).rows)
    if cfg.macro_N:
        report.extend(converge_macroscopic(cfg, snaps).rows)
    report.write_csv(out / "report.csv")
    return report


def default_parallelism() -> int:
    return max(1, (os.cpu_count() or 1))
