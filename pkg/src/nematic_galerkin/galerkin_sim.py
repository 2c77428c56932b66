"""Galerkin ODE system for the coefficients (d_k, h_l), energy accounting and
time integration.

The state is ``u = sum d_k v_k`` and ``Q = Q~ + sum h_l e_l``. Every integral
is a discrete quadrature on the space's grid; since both bases are
orthonormal in that inner product, the energy balance

    dE/dt + int nu(Q)|Du|^2 + Gamma int |pi_n H|^2 = 0

holds for the assembled ODE up to rounding, independently of aliasing.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import solve_ivp

from .spectral_basis import SpectralSpace
from .tensor_core import (
    InvalidInputError,
    ModelParams,
    bulk_energy,
    bulk_force,
    ddot,
    s0_project,
    s_full,
    sigma_op,
    tau2_op,
)

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    def __init__(self, msg, iterations=None, residual=None):
        super().__init__(f"{msg} (iterations={iterations}, residual={residual:.3e})" if residual is not None else msg)
        self.iterations = iterations
        self.residual = residual


@dataclass
class SimState:
    t: float
    d: np.ndarray
    h: np.ndarray

    def copy(self) -> "SimState":
        return SimState(self.t, self.d.copy(), self.h.copy())


@dataclass
class EnergyReport:
    t: float
    kinetic: float
    elastic: float
    bulk: float
    total: float
    diss_visc: float
    diss_H: float
    identity_residual: float = 0.0
    diss_H_full: float = float("nan")

    FIELDS = ("t", "kinetic", "elastic", "bulk", "total", "diss_visc", "diss_H", "identity_residual")

    def row(self) -> tuple:
        return tuple(getattr(self, f) for f in self.FIELDS)


@dataclass
class Trajectory:
    """Coefficient time series.

    ``dissipation`` and ``dissipation_full`` hold the running integrals of
    ``nu|Du|^2 + Gamma|pi_n H|^2`` and ``nu|Du|^2 + Gamma|H|^2``, integrated
    by the same scheme as the state. ``dense`` is an optional callable
    ``t -> (d, h)``.
    """

    times: np.ndarray
    d: np.ndarray
    h: np.ndarray
    dissipation: np.ndarray
    dissipation_full: np.ndarray
    integrator: str = "implicit_midpoint"
    tol: float = 0.0
    dense: object = None
    stats: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    def state(self, k: int) -> SimState:
        return SimState(float(self.times[k]), self.d[k], self.h[k])

    def at(self, t):
        """Coefficients at arbitrary ``t`` (dense output or linear interpolation)."""
        if self.dense is not None:
            return self.dense(t)
        d = np.array([np.interp(t, self.times, col) for col in self.d.T]).T
        h = np.array([np.interp(t, self.times, col) for col in self.h.T]).T
        return d, h


class GalerkinSystem:
    """Assembled right-hand side and energy of the truncated Beris-Edwards model."""

    def __init__(self, space: SpectralSpace, params: ModelParams, skew_advection: bool | None = None):
        self.space = space
        self.params = params
        # exact quadrature on the torus makes the convective form energy-neutral;
        # the MAC-based rectangle modes need the skew-symmetric form
        self.skew_advection = space.geometry.mode == "rectangle" if skew_advection is None else skew_advection
        self.n_u = space.n_u
        self.n_q = space.n_q

    # -- state helpers
    def split(self, y: np.ndarray):
        return y[: self.n_u], y[self.n_u : self.n_u + self.n_q]

    def zero_state(self, t: float = 0.0) -> SimState:
        return SimState(t, np.zeros(self.n_u), np.zeros(self.n_q))

    def init_state(self, u0: np.ndarray | None, Q0: np.ndarray | None, t: float = 0.0, tol: float = 1e-10) -> SimState:
        """Project grid data: ``d = P_n u0`` and ``h = pi_n (Q0 - Q~)``."""
        sp = self.space
        d = np.zeros(self.n_u) if u0 is None else sp.project_velocity(u0)
        if Q0 is None:
            h = np.zeros(self.n_q)
        else:
            Q0 = np.asarray(Q0, dtype=float)
            dev = np.max(np.abs(Q0 - s0_project(Q0)), initial=0.0)
            if dev > tol * max(1.0, np.max(np.abs(Q0))):
                raise InvalidInputError(f"initial Q is not symmetric trace-free (deviation {dev:.2e})")
            h = sp.project_tensor(Q0 - sp.qt)
        return SimState(t, d, h)

    # -- pointwise fields
    def molecular_field(self, h: np.ndarray, Q: np.ndarray | None = None):
        """Grid values of ``H = lam Delta Q + L(Q)`` and the coefficients of ``pi_n H``."""
        sp, p = self.space, self.params
        if Q is None:
            Q = sp.synth_q(h)
        lapQ_coeff = -sp.lam_q * h
        L = bulk_force(Q, p)
        piH = p.lam * lapQ_coeff + sp.project_tensor(L)
        H_grid = p.lam * sp.synth_q(lapQ_coeff, tilde=False) + L
        return H_grid, piH

    def _evaluate(self, d, h, full: bool = False):
        sp, p = self.space, self.params
        dim = sp.d
        u = sp.synth_u(d)
        G = sp.grad_u(d)
        Q = sp.synth_q(h)
        gQ = sp.grad_q(h)
        L = bulk_force(Q, p)
        piH = -p.lam * sp.lam_q * h + sp.project_tensor(L)
        piHg = sp.synth_q(piH, tilde=False)
        Du = 0.5 * (G + np.swapaxes(G, -1, -2))
        nu = p.nu(Q)

        adv = np.einsum("pi,pij->pj", u, G)
        f_adv = sp.project_velocity(adv)
        if self.skew_advection:
            f_adv = 0.5 * (f_adv - sp.pair_grad_u(np.einsum("pi,pj->pij", u, u)))
        f_visc = sp.pair_grad_u(nu[:, None, None] * Du)
        f_tau1 = sp.project_velocity(np.einsum("pab,pjab->pj", piHg, gQ))
        coupling = sigma_op(Q, piHg) + p.xi * tau2_op(Q, piHg) - (2.0 * p.xi / dim) * piHg
        f_coup = sp.pair_grad_u(coupling)
        d_dot = -(f_adv + f_visc + f_tau1 + f_coup)

        advQ = np.einsum("pi,piab->pab", u, gQ)
        h_dot = -sp.project_tensor(advQ) + sp.project_tensor(s_full(G, Q, p)) + p.gamma * piH

        w = sp.grid.weights
        diss_visc = float(w @ (nu * ddot(Du, Du)))
        diss_H = p.gamma * float(piH @ piH)
        out = {"d_dot": d_dot, "h_dot": h_dot, "diss_visc": diss_visc, "diss_H": diss_H, "piH": piH}
        if full:
            Hg = p.lam * sp.synth_q(-sp.lam_q * h, tilde=False) + L
            out["diss_H_full"] = p.gamma * float(w @ ddot(Hg, Hg))
            out["Q"], out["u"], out["G"], out["gradQ"], out["H"] = Q, u, G, gQ, Hg
        return out

    def assemble_rhs(self, state_or_d, h=None):
        """``(d_dot, h_dot)`` of the Galerkin system."""
        d, h = (state_or_d.d, state_or_d.h) if h is None else (state_or_d, h)
        ev = self._evaluate(d, h)
        return ev["d_dot"], ev["h_dot"]

    def rhs_aug(self, t, y):
        """Right-hand side of the state augmented by both dissipation integrals."""
        d, h = self.split(y)
        ev = self._evaluate(d, h, full=True)
        return np.concatenate(
            [ev["d_dot"], ev["h_dot"], [ev["diss_visc"] + ev["diss_H"], ev["diss_visc"] + ev["diss_H_full"]]]
        )

    # -- energies
    def total_energy(self, state_or_d, h=None) -> tuple[float, float, float, float]:
        """``(kinetic, elastic, bulk, total)``."""
        d, h = (state_or_d.d, state_or_d.h) if h is None else (state_or_d, h)
        sp, p = self.space, self.params
        kinetic = 0.5 * float(d @ d)
        elastic = 0.5 * p.lam * (sp.tilde_energy + float(sp.lam_q @ (h * h)))
        bulk = float(sp.grid.weights @ bulk_energy(sp.synth_q(h), p))
        return kinetic, elastic, bulk, kinetic + elastic + bulk

    def energy_report(self, t, d, h, identity_residual=0.0) -> EnergyReport:
        kin, ela, blk, tot = self.total_energy(d, h)
        ev = self._evaluate(d, h, full=True)
        return EnergyReport(
            float(t), kin, ela, blk, tot, ev["diss_visc"], ev["diss_H"], float(identity_residual), ev["diss_H_full"]
        )

    # -- time stepping
    def _precond_diag(self, dt):
        nu0 = self.params.viscosity.nu0
        diag = np.concatenate(
            [nu0 * self.space.lam_u, self.params.gamma * self.params.lam * self.space.lam_q, [0.0, 0.0]]
        )
        return 1.0 + 0.5 * dt * diag

    def midpoint_step(self, t, y, dt, tol=1e-11, max_iter=50):
        """One implicit-midpoint step of the augmented system.

        The stage equation is solved by a fixed-point iteration preconditioned
        with the diagonal stiff part; Newton with a finite-difference Jacobian
        is the fallback.
        """
        scale = max(1.0, float(np.max(np.abs(y))))
        pre = self._precond_diag(dt)

        def resid(z):
            return z - y - dt * self.rhs_aug(t + 0.5 * dt, 0.5 * (y + z))

        z = y + dt * self.rhs_aug(t, y)
        r = resid(z)
        err = float(np.max(np.abs(r)))
        it = 0
        prev = np.inf
        while err > tol * scale and it < max_iter:
            z = z - r / pre
            r = resid(z)
            prev, err = err, float(np.max(np.abs(r)))
            it += 1
            if err > 0.9 * prev:
                break
        if err > tol * scale:
            z, it2, err = self._newton(resid, z, tol * scale, max_iter, dt)
            it += it2
        if err > tol * scale:
            raise SolverError("implicit midpoint stage did not converge", it, err)
        return z, it

    def _newton(self, resid, z, tol, max_iter, dt):
        r = resid(z)
        err = float(np.max(np.abs(r)))
        it = 0
        while err > tol and it < max_iter:
            n = len(z)
            J = np.empty((n, n))
            eps = 1e-7 * max(1.0, float(np.max(np.abs(z))))
            for j in range(n):
                zp = z.copy()
                zp[j] += eps
                J[:, j] = (resid(zp) - r) / eps
            z = z - np.linalg.solve(J, r)
            r = resid(z)
            err = float(np.max(np.abs(r)))
            it += 1
        return z, it, err

    def step(self, state: SimState, dt: float, integrator: str = "implicit_midpoint", tol: float = 1e-11) -> SimState:
        if not dt > 0:
            raise ValueError("dt must be > 0")
        y = np.concatenate([state.d, state.h, [0.0, 0.0]])
        if integrator == "implicit_midpoint":
            z, _ = self.midpoint_step(state.t, y, dt, tol=tol)
        elif integrator == "rk45":
            sol = solve_ivp(self.rhs_aug, (state.t, state.t + dt), y, method="RK45", rtol=tol, atol=tol)
            if not sol.success:
                raise SolverError(sol.message)
            z = sol.y[:, -1]
        else:
            raise ValueError(f"unknown integrator {integrator!r}")
        d, h = self.split(z)
        return SimState(state.t + dt, d.copy(), h.copy())

    def run(
        self,
        state: SimState,
        t_end: float,
        integrator: str = "implicit_midpoint",
        dt: float = 0.01,
        tol: float | None = None,
        stride: int = 1,
    ) -> tuple[Trajectory, list[EnergyReport]]:
        """Integrate from ``state`` to ``t_end``.

        Implicit midpoint uses fixed steps ``dt`` (the last step is shortened
        to hit ``t_end``) and records every ``stride``-th step. RK45 records
        every accepted internal step and keeps a dense interpolant.
        """
        t0 = state.t
        y0 = np.concatenate([state.d, state.h, [0.0, 0.0]])
        if t_end <= t0:
            traj = Trajectory(np.array([t0]), state.d[None].copy(), state.h[None].copy(), np.zeros(1), np.zeros(1))
            return traj, self._reports(traj)
        if integrator == "rk45":
            tol = 1e-10 if tol is None else tol
            sol = solve_ivp(self.rhs_aug, (t0, t_end), y0, method="RK45", rtol=tol, atol=tol, dense_output=True)
            if not sol.success:
                raise SolverError(sol.message)
            ys = sol.y.T
            n_u, n_q = self.n_u, self.n_q

            def dense(t, _s=sol.sol):
                y = _s(t)
                return y[:n_u].T, y[n_u : n_u + n_q].T

            traj = Trajectory(
                sol.t.copy(), ys[:, :n_u].copy(), ys[:, n_u : n_u + n_q].copy(), ys[:, -2].copy(), ys[:, -1].copy(),
                "rk45", tol, dense, {"nfev": sol.nfev},
            )
        elif integrator == "implicit_midpoint":
            tol = 1e-11 if tol is None else tol
            n_steps = int(np.ceil((t_end - t0) / dt - 1e-12))
            times, ys = [t0], [y0]
            y, t, iters = y0, t0, 0
            for k in range(n_steps):
                h = min(dt, t_end - t)
                y, it = self.midpoint_step(t, y, h, tol=tol)
                t = t0 + (k + 1) * dt if k + 1 < n_steps else t_end
                iters += it
                if (k + 1) % stride == 0 or k + 1 == n_steps:
                    times.append(t)
                    ys.append(y)
            ys = np.array(ys)
            n_u, n_q = self.n_u, self.n_q
            traj = Trajectory(
                np.array(times), ys[:, :n_u].copy(), ys[:, n_u : n_u + n_q].copy(), ys[:, -2].copy(),
                ys[:, -1].copy(), "implicit_midpoint", tol, None, {"iterations": iters, "dt": dt},
            )
        else:
            raise ValueError(f"unknown integrator {integrator!r}")
        return traj, self._reports(traj)

    def _reports(self, traj: Trajectory) -> list[EnergyReport]:
        reps = []
        for k in range(len(traj)):
            reps.append(self.energy_report(traj.times[k], traj.d[k], traj.h[k]))
        res = energy_identity_residual(traj, reps)
        for k in range(1, len(reps)):
            reps[k] = replace(reps[k], identity_residual=float(res[k - 1]))
        return reps


def energy_identity_residual(traj: Trajectory, reports: list[EnergyReport]) -> np.ndarray:
    """Per-interval residual ``E(t_{k+1}) - E(t_k) + int (nu|Du|^2 + Gamma|pi_n H|^2)``."""
    E = np.array([r.total for r in reports])
    return np.diff(E) + np.diff(traj.dissipation)
