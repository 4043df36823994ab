"""Command-line entry point: ``kawasaki-stefan <command> ...``.

Commands: simulate, hydro, stefan, flow, verify, converge.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import flows, harness, hydro, kawasaki, stefan, suites
from .lattice import Torus, write_snapshot
from .profiles import PROFILES, TEST_FUNCTIONS, get_profile, get_test_function


def _floats(s: str) -> list[float]:
    return [float(v) for v in s.split(",") if v.strip()]


def _model_args(p, grid="N"):
    p.add_argument("--d", type=int, default=1)
    p.add_argument(f"--{grid}", type=int, required=True)
    p.add_argument("--d1", type=float, default=1.0)
    p.add_argument("--d2", type=float, default=1.0)


def cmd_simulate(a) -> int:
    params = kawasaki.SimParams(a.d1, a.d2, a.K, a.N, d=a.d, seed=a.seed)
    torus = params.torus
    u1, u2 = get_profile(a.profile).densities(torus)
    phi = get_test_function(a.phi)
    times = sorted(_floats(a.observe_times)) if a.observe_times else [a.T]
    rows = []
    for r in range(a.replicas):
        rng = kawasaki.replica_rng(a.seed, r)
        config0 = kawasaki.sample_bernoulli_pair(u1, u2, torus, rng)
        res = kawasaki.simulate(config0, a.T, params, rng, observe_times=times, phis={a.phi: phi})
        rows.extend((t, sp, v, r) for t, sp, _, v in res.observations)
    with open(a.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "species", "pairing_value", "replica"])
        for t, sp, v, r in rows:
            w.writerow([repr(float(t)), sp, repr(float(v)), r])
    return 0


def cmd_hydro(a) -> int:
    params = hydro.HydroParams(a.d1, a.d2, a.K, a.N, a.d)
    torus = params.torus
    u1, u2 = get_profile(a.profile).densities(torus)
    times = np.linspace(0.0, a.T, a.n_out)
    traj = hydro.integrate(u1, u2, a.T, params, output_times=times, scheme=a.scheme)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "index.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["file", "time", "species"])
        for k, t in enumerate(traj.times):
            for sp, u in ((1, traj.u1[k]), (2, traj.u2[k])):
                name = f"u{sp}_t{k:04d}.csv"
                write_snapshot(out / name, u, torus, sp)
                w.writerow([name, repr(float(t)), sp])
    ok_max, worst = hydro.check_max_principle(traj, max(u1.max(), u2.max()))
    print(f"steps={traj.n_steps} dt={traj.dt:.3e} max_principle={'ok' if ok_max else 'violated'} worst={worst:.2e}")
    print(f"segregation={traj.segregation[-1]:.6e} (<= {1 / a.K:.6e})" if a.K > 0 else f"segregation={traj.segregation[-1]:.6e}")
    for i, di in ((1, a.d1), (2, a.d2)):
        print(f"gradient_l2[{i}]={traj.grad_sq[i - 1][-1]:.6e} (<= {1 / (2 * di):.6e})")
    return 0


def cmd_stefan(a) -> int:
    torus = Torus(a.d, a.M)
    w0 = get_profile(a.profile).signed(torus)
    psis = stefan.builtin_test_functions(a.T, a.d)
    obs = [stefan.StreamingResidual(p, torus, a.d1, a.d2) for p in psis]
    traj = stefan.solve_limit(w0, a.T, a.d1, a.d2, a.M, d=a.d, observers=obs)
    with open(a.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["psi_id", "M", "dt", "residual"])
        for p, o in zip(psis, obs):
            w.writerow([p.name, a.M, repr(traj.dt), repr(o.value)])
    if a.snapshot:
        write_snapshot(a.snapshot, traj.final, torus, "w")
    return 0


def cmd_flow(a) -> int:
    flow = flows.build_flow(a.ell, a.d, a.method)
    w = csv.writer(sys.stdout, lineterminator="\n")
    if a.report == "energy":
        e = flow.energy()
        g = flows.energy_scale(a.ell, a.d)
        w.writerow(["d", "ell", "energy", "g_d", "ratio"])
        w.writerow([a.d, a.ell, repr(e), repr(g), repr(e / g)])
    else:
        w.writerow(["d", "ell", "divergence_defect"])
        w.writerow([a.d, a.ell, repr(flow.divergence_defect())])
    if a.dump:
        with open(a.dump, "w", newline="") as fh:
            dw = csv.writer(fh, lineterminator="\n")
            for xi, j, v in flow.edges():
                dw.writerow([xi, j, repr(v)])
    return 0


def cmd_verify(a) -> int:
    rows = suites.run_suite(a.suite, a.N, a.K, a.seed)
    fh = open(a.report, "w", newline="") if a.report else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["suite", "instance_id", "defect_or_margin", "bound", "pass"])
        for r in rows:
            w.writerow([r.suite, r.instance_id, repr(float(r.value)), repr(float(r.bound)), "true" if r.passed else "false"])
    finally:
        if fh is not sys.stdout:
            fh.close()
    failed = sum(not r.passed for r in rows)
    print(f"{a.suite}: {len(rows) - failed}/{len(rows)} passed", file=sys.stderr)
    return 1 if failed else 0


def cmd_converge(a) -> int:
    try:
        cfg = harness.load_config(a.config)
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    report = harness.run(cfg, a.out)
    for r in report.failures:
        print(f"FAILED {r.quantity} delta={r.delta} N={r.N} t={r.time} species={r.species} value={r.value:.6g} bound={r.bound:.6g}", file=sys.stderr)
    return 0 if report.ok else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kawasaki-stefan", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Kawasaki replicas with empirical pairings")
    _model_args(p)
    p.add_argument("--K", type=float, required=True)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replicas", type=int, default=1)
    p.add_argument("--observe-times", default="")
    p.add_argument("--phi", default="one", choices=sorted(TEST_FUNCTIONS))
    p.add_argument("--profile", default="sine", choices=sorted(PROFILES))
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("hydro", help="discretized reaction-diffusion system")
    _model_args(p)
    p.add_argument("--K", type=float, required=True)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--profile", default="sine", choices=sorted(PROFILES))
    p.add_argument("--n-out", type=int, default=11)
    p.add_argument("--scheme", default="ssprk3", choices=["ssprk3", "euler"])
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_hydro)

    p = sub.add_parser("stefan", help="limit equation and weak residuals")
    _model_args(p, grid="M")
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--profile", default="sine", choices=sorted(PROFILES))
    p.add_argument("--snapshot", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_stefan)

    p = sub.add_parser("flow", help="flow between delta_0 and the block kernel")
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--ell", type=int, required=True)
    p.add_argument("--report", choices=["energy", "divergence"], default="energy")
    p.add_argument("--method", default="auto", choices=["auto", "closed", "multiscale", "poisson"])
    p.add_argument("--dump", default=None, help="write x_index,direction,value per directed edge")
    p.set_defaults(fn=cmd_flow)

    p = sub.add_parser("verify", help="exact identity and inequality suites")
    p.add_argument("--suite", required=True, choices=sorted(suites.SUITES))
    p.add_argument("--N", type=int, default=4)
    p.add_argument("--K", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", default=None)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("converge", help="run a convergence experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_converge)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, KeyError, MemoryError, hydro.StepSizeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
