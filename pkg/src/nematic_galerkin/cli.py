"""Command line entry point: ``nematic-sim <command> --config FILE [--seed N] [--out DIR]``.

The output directory is taken from ``--out``, else from the environment
variable ``NEMATIC_GALERKIN_OUT``, else from ``output.dir`` in the config.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, SimConfig, load_config
from .galerkin_sim import GalerkinSystem, SolverError
from .io import read_snapshot, write_energy_log, write_snapshot
from .linearized import LinearizedProblem
from .presets import initial_data
from .spectral_basis import SpectralSpace
from .tensor_core import cancellation_residual
from .verification import (
    CheckReport,
    basis_tensor_field,
    basis_velocity_field,
    energy_inequality_check,
    gradient_check_bulk,
    phase_space_check,
    tau1_weak_identity,
    weak_residual_q,
    weak_residual_u,
)

log = logging.getLogger("nematic_galerkin")

OUT_ENV = "NEMATIC_GALERKIN_OUT"


def build(cfg: SimConfig):
    space = SpectralSpace.build(cfg.geometry, cfg.n_q, cfg.n_u, cells=cfg.cells, padding=cfg.padding,
                                q_dirichlet=cfg.q_dirichlet or None)
    system = GalerkinSystem(space, cfg.params)
    if cfg.initial.snapshot:
        state, header = read_snapshot(cfg.initial.snapshot)
        if len(state.d) != space.n_u or len(state.h) != space.n_q:
            raise ConfigError(
                f"initial.snapshot: has {len(state.d)}/{len(state.h)} coefficients, config needs {space.n_u}/{space.n_q}"
            )
    else:
        u0, Q0 = initial_data(space, cfg.initial.preset, cfg.initial.amp_u, cfg.initial.amp_q, seed=cfg.seed)
        state = system.init_state(u0, Q0)
    return space, system, state


def _run(system, state, cfg: SimConfig, t_end=None):
    it = cfg.integrator
    return system.run(state, cfg.t_end if t_end is None else t_end, it.kind, dt=it.dt, tol=it.tol)


def cmd_simulate(cfg: SimConfig, out: Path) -> int:
    space, system, state = build(cfg)
    traj, reports = _run(system, state, cfg)
    write_energy_log(reports, out / "energy.csv")
    if cfg.snapshot_stride:
        for k in range(0, len(traj), cfg.snapshot_stride):
            write_snapshot(out / f"snapshot_{k:06d}.bin", traj.state(k), space, cfg.params)
    write_snapshot(out / "final.bin", traj.state(len(traj) - 1), space, cfg.params)
    res = np.abs(np.array([r.identity_residual for r in reports])).sum()
    print(f"simulate: {len(traj) - 1} steps to t={traj.times[-1]:g}, E={reports[-1].total:.12g}, "
          f"sum|identity residual|={res:.3e}")
    return 0


def verification_reports(cfg: SimConfig) -> list[CheckReport]:
    space, system, state = build(cfg)
    p = cfg.params
    rng = np.random.default_rng(cfg.seed)
    d = cfg.d
    reports = []

    Q1 = rng.standard_normal((200, d, d))
    Q2 = rng.standard_normal((200, d, d))
    Q1, Q2 = Q1 + np.swapaxes(Q1, 1, 2), Q2 + np.swapaxes(Q2, 1, 2)
    Q1 -= np.trace(Q1, axis1=1, axis2=2)[:, None, None] * np.eye(d) / d
    Q2 -= np.trace(Q2, axis1=1, axis2=2)[:, None, None] * np.eye(d) / d
    G = rng.standard_normal((200, d, d))
    G -= np.trace(G, axis1=1, axis2=2)[:, None, None] * np.eye(d) / d
    scale = (1 + np.abs(Q1).max()) * (1 + np.abs(Q2).max()) * (1 + np.abs(G).max())
    res = np.max(np.abs(cancellation_residual(Q1, Q2, G, p)))
    reports.append(CheckReport("cancellation", float(res), 1e-12 * scale))

    reports.append(gradient_check_bulk(rng.standard_normal((100, d, d)) * 0.5 + 0.0, params=p))

    tol = 1e-10
    traj, ereps = system.run(state, cfg.t_end, "rk45", tol=tol)
    E0 = ereps[0].total
    cum = abs(ereps[-1].total - E0 + traj.dissipation[-1])
    reports.append(CheckReport("energy_identity", cum, 1e-8 * (1 + abs(E0)), context={"steps": len(traj) - 1}))
    reports.append(energy_inequality_check(ereps, traj.dissipation, traj.dissipation_full))
    if cfg.t_end > 0:
        for k in range(min(3, space.n_u)):
            r = weak_residual_u(system, traj, k, tolerance=10 * tol)
            r.name = f"weak_residual_u[{k}]"
            reports.append(r)
        for k in range(min(3, space.n_q)):
            r = weak_residual_q(system, traj, k, tolerance=10 * tol)
            r.name = f"weak_residual_q[{k}]"
            reports.append(r)

    if cfg.geometry.mode == "torus":
        qf = basis_tensor_field(space, state.h)
        vf = basis_velocity_field(space, state.d)
        reports.append(tau1_weak_identity(cfg.geometry, lambda x: qf(x)[0], lambda x: vf(x)[0], p,
                                          N=space.grid.shape[0]))
    else:
        reports.append(phase_space_check(space, p, basis_velocity_field(space, state.d),
                                         basis_tensor_field(space, state.h), cfg.q_dirichlet, cfg.q_neumann))
    return reports


def cmd_verify(cfg: SimConfig, out: Path) -> int:
    reports = verification_reports(cfg)
    lines = [r.line() for r in reports]
    (out / "verify.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for line in lines:
        print(line)
    return 0 if all(r.passed for r in reports) else 1


def cmd_eigen(cfg: SimConfig, out: Path) -> int:
    space = SpectralSpace.build(cfg.geometry, cfg.n_q, cfg.n_u, cells=cfg.cells, padding=cfg.padding)
    rows = ["operator,index,eigenvalue,wavevector,trig,direction"]
    lap = space.laplace
    for i, (m, a) in enumerate(zip(lap.scalar_modes, lap.directions)):
        trig = m.trig if isinstance(m.trig, str) else "/".join(m.trig)
        k = " ".join(repr(float(x)) for x in m.wavevector)
        rows.append(f"laplace,{i},{float(lap.eigenvalues[i])!r},{k},{trig},{int(a)}")
    sto = space.stokes
    for i, w in enumerate(sto.eigenvalues):
        if sto.analytic:
            s, pol = sto.modes[i]
            k = " ".join(repr(float(x)) for x in s.wavevector)
            rows.append(f"stokes,{i},{float(w)!r},{k},{s.trig},{' '.join(repr(float(x)) for x in pol)}")
        else:
            rows.append(f"stokes,{i},{float(w)!r},,mac,")
    (out / "eigen.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    print(f"eigen: {lap.n} tensor modes (max eigenvalue {lap.eigenvalues[-1]:g}), "
          f"{sto.n} velocity modes (max eigenvalue {sto.eigenvalues[-1]:g})")
    return 0


def cmd_linearize(cfg: SimConfig, out: Path) -> int:
    space, system, state = build(cfg)
    lp = LinearizedProblem(system, state.h, state.d)
    spec = cfg.linearize
    x, dists = lp.picard_solve(spec.T, spec.n_steps, spec.tol, spec.max_iter)
    direct, _ = system.run(state, spec.T, "implicit_midpoint", dt=spec.T / spec.n_steps, tol=1e-13)
    diff = np.sqrt(np.max(np.sum((x.d - direct.d) ** 2, axis=1) + np.sum((x.h - direct.h) ** 2, axis=1)))
    with open(out / "picard.csv", "w", encoding="utf-8") as fh:
        fh.write("iteration,distance\n")
        for k, dist in enumerate(dists, 1):
            fh.write(f"{k},{dist!r}\n")
    final = type(state)(float(x.times[-1]), x.d[-1], x.h[-1])
    write_snapshot(out / "linearize_final.bin", final, space, cfg.params)
    print(f"linearize: {len(dists)} Picard iterations on T={spec.T:g}, "
          f"max L2 difference to direct run {diff:.3e}")
    return 0


def cmd_contraction(cfg: SimConfig, out: Path) -> int:
    _, system, state = build(cfg)
    lp = LinearizedProblem(system, state.h, state.d)
    spec = cfg.contraction
    rows = ["T,ratio"]
    for T in spec.T:
        ratio = lp.contraction_ratio(T, spec.R, spec.n_pairs, seed=cfg.seed, n_steps=spec.n_steps)
        rows.append(f"{T!r},{ratio!r}")
        print(f"contraction: T={T:g} ratio={ratio:.6g}")
    (out / "contraction.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "eigen": cmd_eigen,
    "linearize": cmd_linearize,
    "contraction": cmd_contraction,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="nematic-sim", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="TOML configuration file")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"config: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.seed = args.seed
    out = Path(args.out or os.environ.get(OUT_ENV) or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"{args.command}: solver: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
