"""Linearisation of the Galerkin system about fixed initial data and the
fixed-point (Picard) construction of short-time solutions.

With ``x0 = (u0, Q0)`` frozen, the Galerkin right-hand side splits as

    rhs(x) = S x + N(x)

where ``S`` (``apply_principal``) keeps viscosity and elastic coupling with
coefficients frozen at ``Q0`` and ``N`` (``apply_N``) collects the rest.
Writing ``x = x_hat + x0`` with ``x_hat(0) = 0`` gives
``x_hat' - S x_hat = N0(x_hat) := N(x_hat + x0) + S x0``, which is solved by
iterating ``x_hat <- L^{-1} N0(x_hat)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .galerkin_sim import GalerkinSystem, SolverError
from .tensor_core import bulk_force, s_full, sigma_op, tau2_op

log = logging.getLogger(__name__)


class LinearSolveError(SolverError):
    pass


class ContractionError(SolverError):
    """Picard iteration stopped contracting; a shorter horizon usually helps."""


@dataclass
class StatePair:
    """Coefficient trajectory on the uniform time grid ``times`` (nodes)."""

    times: np.ndarray
    d: np.ndarray
    h: np.ndarray

    @property
    def T(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def is_homogeneous(self, tol=0.0) -> bool:
        return bool(np.all(np.abs(self.d[0]) <= tol) and np.all(np.abs(self.h[0]) <= tol))

    def midpoints(self):
        return 0.5 * (self.d[1:] + self.d[:-1]), 0.5 * (self.h[1:] + self.h[:-1])

    def __sub__(self, other: "StatePair") -> "StatePair":
        return StatePair(self.times, self.d - other.d, self.h - other.h)

    def __add__(self, other: "StatePair") -> "StatePair":
        return StatePair(self.times, self.d + other.d, self.h + other.h)

    def scaled(self, s: float) -> "StatePair":
        return StatePair(self.times, s * self.d, s * self.h)


@dataclass
class RhsPair:
    """Forcing ``(f, g)`` as coefficients against the velocity and tensor modes.

    Values are either at the nodes of ``times`` (``n_steps + 1`` rows) or at
    the interval midpoints (``n_steps`` rows).
    """

    times: np.ndarray
    f: np.ndarray
    g: np.ndarray

    def at_midpoints(self):
        nt = len(self.times) - 1
        if len(self.f) == nt + 1:
            return 0.5 * (self.f[1:] + self.f[:-1]), 0.5 * (self.g[1:] + self.g[:-1])
        if len(self.f) == nt:
            return self.f, self.g
        raise ValueError(f"rhs has {len(self.f)} samples for {nt} time steps")

    def compatible(self, space, tol=1e-12) -> bool:
        """``g(0)`` is finite and has zero trace on the Dirichlet faces.

        Every tensor mode vanishes on the Dirichlet faces, so only node-valued
        data can fail this (through non-finite entries).
        """
        if not (np.all(np.isfinite(self.f)) and np.all(np.isfinite(self.g))):
            return False
        pts = dirichlet_points(space.geometry)
        if len(pts) == 0:
            return True
        vals, _ = space.laplace.evaluate(pts)
        trace = np.tensordot(self.g[0], vals, axes=1)
        return bool(np.max(np.abs(trace), initial=0.0) <= tol * max(1.0, float(np.max(np.abs(self.g[0])))))


def dirichlet_points(geom, n=33) -> np.ndarray:
    """Sample points on the Dirichlet faces of a rectangle."""
    if geom.mode != "rectangle":
        return np.zeros((0, geom.d))
    Lx, Ly = geom.lengths
    s = np.linspace(0.0, 1.0, n)
    out = []
    for face in sorted(geom.dirichlet_faces):
        if face[0] == "x":
            x = 0.0 if face == "x0" else Lx
            out.append(np.stack([np.full(n, x), s * Ly], axis=1))
        else:
            y = 0.0 if face == "y0" else Ly
            out.append(np.stack([s * Lx, np.full(n, y)], axis=1))
    return np.concatenate(out)


def time_grid(T: float, n_steps: int) -> np.ndarray:
    return np.linspace(0.0, T, n_steps + 1)


class LinearizedProblem:
    """Operators frozen at the initial data ``(d0, h0)`` of a Galerkin system."""

    def __init__(self, system: GalerkinSystem, h0=None, d0=None):
        self.system = system
        self.space = system.space
        self.params = system.params
        self.h0 = np.zeros(system.n_q) if h0 is None else np.asarray(h0, dtype=float)
        self.d0 = np.zeros(system.n_u) if d0 is None else np.asarray(d0, dtype=float)
        self.Q0 = self.space.synth_q(self.h0)
        self.nu0 = self.params.nu(self.Q0)
        self._A = None

    @property
    def n(self) -> int:
        return self.system.n_u + self.system.n_q

    def _coupling(self, Q, H):
        p = self.params
        return sigma_op(Q, H) + p.xi * tau2_op(Q, H) - (2.0 * p.xi / self.space.d) * H

    def apply_principal(self, d, h):
        """Principal part at ``Q0``: viscous and elastic-coupling terms for
        ``u``, diffusion and co-rotation for ``Q``."""
        sp, p = self.space, self.params
        d, h = np.asarray(d, dtype=float), np.asarray(h, dtype=float)
        if d.shape != (sp.n_u,) or h.shape != (sp.n_q,):
            raise ValueError(f"dimension mismatch: got {d.shape}, {h.shape}")
        lap = -sp.lam_q * h
        lap_g = p.lam * sp.synth_q(lap, tilde=False)
        G = sp.grad_u(d)
        Du = 0.5 * (G + np.swapaxes(G, -1, -2))
        u_rhs = -sp.pair_grad_u(self.nu0[:, None, None] * Du) - sp.pair_grad_u(self._coupling(self.Q0, lap_g))
        q_rhs = p.gamma * p.lam * lap + sp.project_tensor(s_full(G, self.Q0, p))
        return u_rhs, q_rhs

    @property
    def A(self) -> np.ndarray:
        """Matrix of :meth:`apply_principal` on the stacked coefficients ``[d, h]``."""
        if self._A is None:
            n_u, n = self.system.n_u, self.n
            A = np.empty((n, n))
            for j in range(n):
                e = np.zeros(n)
                e[j] = 1.0
                ur, qr = self.apply_principal(e[:n_u], e[n_u:])
                A[:n_u, j], A[n_u:, j] = ur, qr
            self._A = A
        return self._A

    def apply_N(self, d, h):
        """Remainder ``rhs(x) - S x`` assembled term by term for a full state
        (``h`` relative to the lift, as everywhere)."""
        sp, p, sysm = self.space, self.params, self.system
        u = sp.synth_u(d)
        G = sp.grad_u(d)
        Du = 0.5 * (G + np.swapaxes(G, -1, -2))
        Q = sp.synth_q(h)
        gQ = sp.grad_q(h)
        piL = sp.project_tensor(bulk_force(Q, p))
        piL_g = sp.synth_q(piL, tilde=False)
        lap_g = p.lam * sp.synth_q(-sp.lam_q * h, tilde=False)
        piH_g = lap_g + piL_g

        f_adv = sp.project_velocity(np.einsum("pi,pij->pj", u, G))
        if sysm.skew_advection:
            f_adv = 0.5 * (f_adv - sp.pair_grad_u(np.einsum("pi,pj->pij", u, u)))
        f_visc = sp.pair_grad_u((p.nu(Q) - self.nu0)[:, None, None] * Du)
        f_tau1 = sp.project_velocity(np.einsum("pab,pjab->pj", piH_g, gQ))
        dc = sigma_op(Q, piH_g) - sigma_op(self.Q0, lap_g)
        dc = dc + p.xi * (tau2_op(Q, piH_g) - tau2_op(self.Q0, lap_g))
        dc = dc - (2.0 * p.xi / sp.d) * piL_g
        u_rhs = -(f_adv + f_visc + f_tau1 + sp.pair_grad_u(dc))

        adv_q = sp.project_tensor(np.einsum("pi,piab->pab", u, gQ))
        dS = sp.project_tensor(s_full(G, Q, p) - s_full(G, self.Q0, p))
        q_rhs = -adv_q + dS + p.gamma * piL
        return u_rhs, q_rhs

    def apply_N0(self, x_hat):
        """``N(x_hat + x0) + S x0`` for a single time ``(d, h)`` or a whole
        :class:`StatePair` (evaluated at its interval midpoints)."""
        if isinstance(x_hat, StatePair):
            dm, hm = x_hat.midpoints()
            f = np.empty_like(dm)
            g = np.empty_like(hm)
            for k in range(len(dm)):
                f[k], g[k] = self.apply_N0((dm[k], hm[k]))
            return RhsPair(x_hat.times, f, g)
        d, h = x_hat
        nu_, nq_ = self.apply_N(d + self.d0, h + self.h0)
        su, sq = self.apply_principal(self.d0, self.h0)
        return nu_ + su, nq_ + sq

    def solve_linear(self, rhs: RhsPair) -> StatePair:
        """Solve ``x' = S x + rhs`` from zero data by the implicit midpoint rule."""
        times = np.asarray(rhs.times, dtype=float)
        dt = np.diff(times)
        if not np.allclose(dt, dt[0], rtol=1e-12, atol=0.0):
            raise ValueError("solve_linear needs a uniform time grid")
        dt = float(dt[0])
        f, g = rhs.at_midpoints()
        r = np.concatenate([f, g], axis=1)
        A = self.A
        n = self.n
        I = np.eye(n)
        Mm = I - 0.5 * dt * A
        Mp = I + 0.5 * dt * A
        try:
            lu = sla.lu_factor(Mm, check_finite=True)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise LinearSolveError(f"midpoint system could not be factorised: {exc}") from exc
        if not np.all(np.isfinite(lu[0])) or np.min(np.abs(np.diag(lu[0]))) == 0.0:
            raise LinearSolveError(f"singular midpoint system (cond={np.linalg.cond(Mm):.3e})")
        x = np.zeros((len(times), n))
        for k in range(len(times) - 1):
            x[k + 1] = sla.lu_solve(lu, Mp @ x[k] + dt * r[k])
        n_u = self.system.n_u
        return StatePair(times, x[:, :n_u], x[:, n_u:])

    def phi(self, x_hat: StatePair) -> StatePair:
        """One Picard map ``L^{-1} N0(x_hat)``."""
        return self.solve_linear(self.apply_N0(x_hat))

    def full(self, x_hat: StatePair) -> StatePair:
        """Shift a homogeneous trajectory back by the initial data."""
        return StatePair(x_hat.times, x_hat.d + self.d0, x_hat.h + self.h0)

    # -- norms
    def x_norm(self, x: StatePair) -> float:
        """Discrete stand-in for the maximal-regularity norm.

        ``sup_t (|u|_H1 + |Q|_H2)`` plus the time-L2 norm of the
        finite-difference time derivative measured in the same spatial norms.
        """
        wu = np.sqrt(1.0 + self.space.lam_u)
        wq = 1.0 + self.space.lam_q
        sup = np.max(np.linalg.norm(x.d * wu, axis=1) + np.linalg.norm(x.h * wq, axis=1))
        dt = np.diff(x.times)
        dd = np.diff(x.d, axis=0) / dt[:, None]
        dh = np.diff(x.h, axis=0) / dt[:, None]
        l2 = np.sqrt(np.sum(dt * (np.sum((dd * wu) ** 2, axis=1) + np.sum((dh * wq) ** 2, axis=1))))
        return float(sup + l2)

    def picard_solve(self, T: float, n_steps: int = 32, tol: float = 1e-10, max_iter: int = 60):
        """Fixed-point iteration on ``[0, T]``.

        Returns the full trajectory (initial data added back) and the
        sequence of iterate distances in :meth:`x_norm`.
        """
        times = time_grid(T, n_steps)
        x = StatePair(times, np.zeros((n_steps + 1, self.system.n_u)), np.zeros((n_steps + 1, self.system.n_q)))
        dists: list[float] = []
        growing = 0
        for it in range(max_iter):
            x_new = self.phi(x)
            dist = self.x_norm(x_new - x)
            dists.append(dist)
            x = x_new
            log.debug("picard iteration %d: distance %.3e", it + 1, dist)
            if dist <= tol:
                return self.full(x), dists
            if len(dists) > 1 and dists[-2] > 0 and dist / dists[-2] >= 1.0:
                growing += 1
                if growing >= 3:
                    raise ContractionError(f"Picard iteration is not contracting on T={T:g}; reduce T", it + 1, dist)
            else:
                growing = 0
        raise ContractionError(f"Picard iteration did not reach tol={tol:g}", max_iter, dists[-1])

    def random_trajectory(self, times, rng, radius: float, n_time: int = 3) -> StatePair:
        """Random homogeneous trajectory ``sum_j c_j (t/T)^j`` of X-norm ``radius``."""
        s = (times - times[0]) / (times[-1] - times[0])
        n_u, n_q = self.system.n_u, self.system.n_q
        cd = rng.standard_normal((n_time, n_u)) / (1.0 + self.space.lam_u)
        ch = rng.standard_normal((n_time, n_q)) / (1.0 + self.space.lam_q) ** 2
        powers = np.stack([s ** (j + 1) for j in range(n_time)], axis=1)
        x = StatePair(times, powers @ cd, powers @ ch)
        return x.scaled(radius / self.x_norm(x))

    def contraction_ratio(self, T: float, R: float = 1.0, n_pairs: int = 8, seed: int = 0, n_steps: int = 32,
                          linear_only: bool = False) -> float:
        """Largest observed ``|Phi(x1) - Phi(x2)| / |x1 - x2|`` over random pairs in
        the ball of radius ``R``.

        ``linear_only`` replaces ``N0`` by the fixed forcing ``N0(0)``.
        """
        rng = np.random.default_rng(seed)
        times = time_grid(T, n_steps)
        if linear_only:
            fixed = self.solve_linear(self.apply_N0(StatePair(times, np.zeros((n_steps + 1, self.system.n_u)),
                                                              np.zeros((n_steps + 1, self.system.n_q)))))
        best = 0.0
        for _ in range(n_pairs):
            x1 = self.random_trajectory(times, rng, R * rng.uniform(0.5, 1.0))
            x2 = self.random_trajectory(times, rng, R * rng.uniform(0.5, 1.0))
            den = self.x_norm(x1 - x2)
            if den < 1e-14:
                continue
            if linear_only:
                num = self.x_norm(fixed - fixed)
            else:
                num = self.x_norm(self.phi(x1) - self.phi(x2))
            best = max(best, num / den)
        return best

    # -- coercivity structure
    def coercivity_terms(self, d, h) -> dict:
        """Pair the principal part with ``(v, P)`` using the ``(I - Delta)``
        weighting in the tensor slot.

        ``pairing`` is computed from :meth:`apply_principal`; ``reduced`` is
        the closed expression left once the coupling terms cancel; ``cross``
        is the coupling sum on its own.
        """
        sp, p = self.space, self.params
        u_rhs, q_rhs = self.apply_principal(d, h)
        lap = -sp.lam_q * h
        pairing = -float(u_rhs @ d) - p.lam * float(q_rhs @ (h - lap))

        G = sp.grad_u(d)
        Du = 0.5 * (G + np.swapaxes(G, -1, -2))
        w = sp.grid.weights
        visc = float(w @ (self.nu0 * np.einsum("pij,pij->p", Du, Du)))
        S = s_full(G, self.Q0, p)
        P_g = sp.synth_q(h, tilde=False)
        lap_g = sp.synth_q(lap, tilde=False)
        reduced = (
            visc
            + p.gamma * p.lam**2 * float(w @ np.einsum("pij,pij->p", lap_g, lap_g))
            - p.lam * float(w @ np.einsum("pij,pij->p", p.gamma * p.lam * lap_g + S, P_g))
        )
        cross = float(w @ np.einsum("pij,pij->p", self._coupling(self.Q0, p.lam * lap_g), G)) + p.lam * float(
            w @ np.einsum("pij,pij->p", S, lap_g)
        )
        scale = visc + p.gamma * p.lam**2 * float(lap @ lap) + abs(pairing) + 1.0
        return {"pairing": pairing, "reduced": reduced, "cross": cross, "scale": scale}
