"""Independent checks of Galerkin trajectories against the weak formulation,
the energy inequality and a few pointwise identities.

These routines deliberately re-assemble their integrals from the sampled
fields rather than calling into :class:`GalerkinSystem`, so that a mistake
in the simulator shows up as a residual here.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .galerkin_sim import EnergyReport, GalerkinSystem, Trajectory
from .spectral_basis import FACES_2D, Geometry, SpectralSpace, UnsupportedGeometryError, _as_face_series
from .tensor_core import (
    ModelParams,
    bulk_energy,
    bulk_force,
    s0_basis,
    s_full,
    sigma_op,
    tau2_op,
    tau_elastic,
)


@dataclass
class CheckReport:
    name: str
    residual: float
    tolerance: float
    passed: bool = field(init=False)
    context: dict = field(default_factory=dict)

    def __post_init__(self):
        self.passed = bool(self.residual <= self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name} residual={self.residual:.3e} tol={self.tolerance:.3e}"


# ---------------------------------------------------------------------------
# weak formulation


@dataclass
class TimeCutoff:
    """Smooth scalar ``phi`` on ``[0, T]`` with ``phi(T) = 0``."""

    T: float
    kind: str = "cos"

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "cos":
            return np.cos(0.5 * np.pi * t / self.T)
        return 1.0 - t / self.T

    def deriv(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "cos":
            return -0.5 * np.pi / self.T * np.sin(0.5 * np.pi * t / self.T)
        return np.full_like(t, -1.0 / self.T)


def _test_coeffs(test, n: int, space: SpectralSpace, kind: str, tol=1e-10) -> np.ndarray:
    """Coefficient vector of a spatial test function given as a mode index,
    a coefficient vector or grid samples."""
    if np.isscalar(test):
        c = np.zeros(n)
        c[int(test)] = 1.0
        return c
    test = np.asarray(test, dtype=float)
    if test.shape == (n,):
        return test
    if kind == "u":
        c = space.project_velocity(test)
        back = space.synth_u(c)
    else:
        c = space.project_tensor(test)
        back = space.synth_q(c, tilde=False)
    if np.max(np.abs(back - test)) > tol * max(1.0, float(np.max(np.abs(test)))):
        raise ValueError("test function outside span")
    return c


def _time_nodes(traj: Trajectory, per_step: int = 6):
    """Composite Gauss-Legendre nodes over the trajectory's own steps."""
    x, w = np.polynomial.legendre.leggauss(per_step)
    a, b = traj.times[:-1], traj.times[1:]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    t = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wt = (half[:, None] * w[None, :]).ravel()
    return t, wt


def _coeffs_at(traj: Trajectory, t):
    d, h = traj.at(t)
    return np.atleast_2d(d), np.atleast_2d(h)


def weak_residual_u(system: GalerkinSystem, traj: Trajectory, test=0, cutoff: TimeCutoff | None = None,
                    projected: bool = True, tolerance: float = 1e-9, per_step: int = 6) -> CheckReport:
    """Velocity weak form tested with ``phi(t) v(x)``.

    ``projected=True`` uses ``pi_n H`` in the elastic terms, the form a
    Galerkin solution satisfies exactly; ``projected=False`` uses ``H``
    together with the elastic stress ``tau_1`` instead of ``H : grad Q``.
    """
    sp, p = system.space, system.params
    T = float(traj.times[-1] - traj.times[0])
    cutoff = cutoff or TimeCutoff(T)
    c = _test_coeffs(test, sp.n_u, sp, "u")
    v = sp.synth_u(c)
    gv = sp.grad_u(c)
    Dv = 0.5 * (gv + np.swapaxes(gv, -1, -2))
    w = sp.grid.weights
    t, wt = _time_nodes(traj, per_step)
    s = t - traj.times[0]
    D, Hc = _coeffs_at(traj, t)
    dim = sp.d

    lhs = 0.0
    for k in range(len(t)):
        u = sp.synth_u(D[k])
        G = sp.grad_u(D[k])
        Du = 0.5 * (G + np.swapaxes(G, -1, -2))
        Q = sp.synth_q(Hc[k])
        gQ = sp.grad_q(Hc[k])
        lapQ = sp.synth_q(-sp.lam_q * Hc[k], tilde=False)
        L = bulk_force(Q, p)
        if projected:
            H = p.lam * lapQ + sp.synth_q(sp.project_tensor(L), tilde=False)
            elastic = w @ np.einsum("pab,pjab,pj->p", H, gQ, v)
        else:
            H = p.lam * lapQ + L
            elastic = w @ np.einsum("pij,pij->p", tau_elastic(gQ, p), gv)
        adv_u = np.einsum("pi,pij->pj", u, G)
        if system.skew_advection:
            adv = 0.5 * (w @ np.einsum("pj,pj->p", adv_u, v) - w @ np.einsum("pi,pij,pj->p", u, gv, u))
        else:
            adv = w @ np.einsum("pj,pj->p", adv_u, v)
        coupling = sigma_op(Q, H) + p.xi * tau2_op(Q, H) - (2.0 * p.xi / dim) * H
        integrand = (
            -cutoff.deriv(s[k]) * (w @ np.einsum("pj,pj->p", u, v))
            + cutoff(s[k]) * (adv + w @ (p.nu(Q) * np.einsum("pij,pij->p", Du, Dv)) + elastic
                              + w @ np.einsum("pij,pij->p", coupling, gv))
        )
        lhs += wt[k] * integrand
    u0 = sp.synth_u(traj.d[0])
    rhs = cutoff(0.0) * (w @ np.einsum("pj,pj->p", u0, v))
    return CheckReport("weak_residual_u", abs(lhs - rhs), tolerance,
                       context={"lhs": float(lhs), "rhs": float(rhs), "projected": projected})


def weak_residual_q(system: GalerkinSystem, traj: Trajectory, test=0, cutoff: TimeCutoff | None = None,
                    tolerance: float = 1e-9, per_step: int = 6) -> CheckReport:
    """Tensor weak form tested with ``phi(t) Psi(x)``; ``H`` and ``pi_n H``
    agree against test functions in the span."""
    sp, p = system.space, system.params
    T = float(traj.times[-1] - traj.times[0])
    cutoff = cutoff or TimeCutoff(T)
    c = _test_coeffs(test, sp.n_q, sp, "q")
    psi = sp.synth_q(c, tilde=False)
    w = sp.grid.weights
    t, wt = _time_nodes(traj, per_step)
    s = t - traj.times[0]
    D, Hc = _coeffs_at(traj, t)

    lhs = 0.0
    for k in range(len(t)):
        u = sp.synth_u(D[k])
        G = sp.grad_u(D[k])
        Q = sp.synth_q(Hc[k])
        gQ = sp.grad_q(Hc[k])
        H = p.lam * sp.synth_q(-sp.lam_q * Hc[k], tilde=False) + bulk_force(Q, p)
        adv = np.einsum("pi,piab->pab", u, gQ)
        integrand = -cutoff.deriv(s[k]) * (w @ np.einsum("pab,pab->p", Q, psi)) + cutoff(s[k]) * (
            w @ np.einsum("pab,pab->p", adv - s_full(G, Q, p) - p.gamma * H, psi)
        )
        lhs += wt[k] * integrand
    Q0 = sp.synth_q(traj.h[0])
    rhs = cutoff(0.0) * (w @ np.einsum("pab,pab->p", Q0, psi))
    return CheckReport("weak_residual_q", abs(lhs - rhs), tolerance, context={"lhs": float(lhs), "rhs": float(rhs)})


def jitter_trajectory(traj: Trajectory, size: float = 1e-3, seed: int = 0) -> Trajectory:
    """Copy of ``traj`` with a smooth, time-dependent perturbation of the
    coefficients of amplitude ``size``; used to confirm the weak residuals
    can detect a non-solution."""
    rng = np.random.default_rng(seed)
    t0, T = traj.times[0], traj.times[-1] - traj.times[0]
    sd = rng.choice([-1.0, 1.0], traj.d.shape[1])
    sh = rng.choice([-1.0, 1.0], traj.h.shape[1])

    def bump(t):
        return size * (1.0 + np.sin(4.0 * np.pi * (np.asarray(t) - t0) / T))

    def dense(t):
        d, h = traj.at(t)
        b = bump(t)
        return d + np.multiply.outer(b, sd), h + np.multiply.outer(b, sh)

    bt = bump(traj.times)[:, None]
    return replace(traj, d=traj.d + bt * sd, h=traj.h + bt * sh, dense=dense)


# ---------------------------------------------------------------------------
# energy


def energy_inequality_check(reports: list[EnergyReport], dissipation=None, dissipation_full=None,
                            slack: float | None = None) -> CheckReport:
    """``E(t) + int_0^t (nu|Du|^2 + Gamma|pi_n H|^2) <= E(0) + slack`` for every
    reported ``t``, together with nonnegativity of the dissipation rates.

    Cumulative dissipation integrals from the integrator are used when given,
    otherwise the trapezoidal rule on the reported rates. The same bound
    with unprojected ``H`` and the gap between the two are reported in the
    context.
    """
    t = np.array([r.t for r in reports])
    E = np.array([r.total for r in reports])
    rate = np.array([r.diss_visc + r.diss_H for r in reports])
    rate_full = np.array([r.diss_visc + r.diss_H_full for r in reports])
    if dissipation is None:
        dissipation = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(t) * (rate[1:] + rate[:-1]))])
    if dissipation_full is None:
        dissipation_full = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(t) * (rate_full[1:] + rate_full[:-1]))])
    dissipation = np.asarray(dissipation) - dissipation[0]
    dissipation_full = np.asarray(dissipation_full) - dissipation_full[0]
    if slack is None:
        slack = 1e-8 * (1.0 + abs(E[0]))
    excess = float(np.max(E + dissipation - E[0]))
    negative = float(max(0.0, -min(min(r.diss_visc, r.diss_H) for r in reports)))
    residual = max(0.0, excess) + negative
    excess_full = float(np.max(E + dissipation_full - E[0]))
    gap = float(dissipation_full[-1] - dissipation[-1])
    return CheckReport(
        "energy_inequality",
        residual,
        slack,
        context={"excess": excess, "negative_rate": negative, "excess_unprojected": excess_full, "projection_gap": gap},
    )


# ---------------------------------------------------------------------------
# elastic stress identity on the torus


def _spectral_grad(f: np.ndarray, lengths) -> np.ndarray:
    """Spectral gradient of periodic samples ``f`` of shape ``(M1, M2[, M3], ...)``;
    the derivative index is inserted after the spatial axes."""
    d = len(lengths)
    shape = f.shape[:d]
    ks = np.meshgrid(*[np.fft.fftfreq(m, d=L / m) * 2 * np.pi for m, L in zip(shape, lengths)], indexing="ij")
    fh = np.fft.fftn(f, axes=tuple(range(d)))
    out = []
    for k, m in zip(ks, shape):
        k = k.copy()
        # the Nyquist mode carries no odd derivative
        k[np.isclose(np.abs(k), np.pi * m / lengths[len(out)])] = 0.0
        kk = k.reshape(k.shape + (1,) * (f.ndim - d))
        out.append(np.fft.ifftn(1j * kk * fh, axes=tuple(range(d))).real)
    return np.stack(out, axis=d)


def _tau1_sides(geom: Geometry, q_fn, v_fn, N: int, params: ModelParams):
    d = geom.d
    axes = [np.arange(N) * L / N for L in geom.lengths]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    shape = (N,) * d
    Q = np.asarray(q_fn(pts)).reshape(shape + (d, d))
    v = np.asarray(v_fn(pts)).reshape(shape + (d,))
    gQ = _spectral_grad(Q, geom.lengths)  # (..., k, a, b)
    gv = _spectral_grad(v, geom.lengths)  # (..., i, j) = d_i v_j
    lapQ = sum(_spectral_grad(gQ[(slice(None),) * d + (i,)], geom.lengths)[(slice(None),) * d + (i,)] for i in range(d))
    H = params.lam * lapQ + bulk_force(Q, params)
    cell = np.prod(geom.lengths) / N**d
    lhs = cell * np.sum(np.einsum("...ij,...ij->...", tau_elastic(gQ, params), gv))
    rhs = cell * np.sum(np.einsum("...ab,...jab,...j->...", H, gQ, v))
    return float(lhs), float(rhs)


def tau1_weak_identity(geom: Geometry, q_fn, v_fn, params: ModelParams | None = None, N: int = 32,
                       tolerance: float = 1e-10) -> CheckReport:
    """Compare ``int tau_1(Q) : grad v`` with ``int (H : grad Q) . v`` using
    FFT differentiation at ``N`` and ``2N`` points per axis.

    ``q_fn`` and ``v_fn`` map points ``(P, d)`` to samples; ``v`` must be
    divergence-free. The residual is the one at ``2N``.
    """
    if geom.mode != "torus":
        raise UnsupportedGeometryError("the elastic stress identity is checked on the torus only")
    params = params or ModelParams()
    l1, r1 = _tau1_sides(geom, q_fn, v_fn, N, params)
    l2, r2 = _tau1_sides(geom, q_fn, v_fn, 2 * N, params)
    res1, res2 = abs(l1 - r1), abs(l2 - r2)
    ratio = res1 / res2 if res2 > 0 else np.inf
    return CheckReport(
        "tau1_identity",
        res2,
        tolerance,
        context={"N": N, "residual_N": res1, "residual_2N": res2, "ratio": ratio, "lhs": l2, "rhs": r2},
    )


# ---------------------------------------------------------------------------
# phase space


def face_points(geom: Geometry, face: str, n: int = 65):
    """Points on ``face`` (endpoints excluded), their tangential coordinate and
    the outward normal axis/sign."""
    Lx, Ly = geom.lengths
    axis = 0 if face[0] == "x" else 1
    Lt = geom.lengths[1 - axis]
    s = (np.arange(n) + 0.5) * Lt / n
    c = 0.0 if face[1] == "0" else geom.lengths[axis]
    pts = np.empty((n, 2))
    pts[:, axis] = c
    pts[:, 1 - axis] = s
    sign = -1.0 if face[1] == "0" else 1.0
    return pts, s, axis, sign


def face_values(geom: Geometry, data, face: str, s: np.ndarray) -> np.ndarray:
    """Boundary data ``sum_m C_m cos(m pi s / L_t)`` evaluated on a face."""
    Lt = geom.lengths[1 if face[0] == "x" else 0]
    series = _as_face_series(data) if data is not None else {}
    out = np.zeros((len(s), 2, 2))
    for m, C in series.items():
        out += np.cos(m * np.pi * s / Lt)[:, None, None] * C
    return out


def basis_tensor_field(space: SpectralSpace, h, lift=None):
    """Closed-form evaluator ``points -> (Q, grad Q, Lap Q)`` of ``lift + sum h_l e_l``."""
    lift = space.tilde if lift is None else lift
    h = np.asarray(h, dtype=float)

    def fn(points):
        vals, grads = space.laplace.evaluate(points)
        Q = np.tensordot(h, vals, axes=1)
        gQ = np.tensordot(h, grads, axes=1)
        lap = np.tensordot(-space.lam_q * h, vals, axes=1)
        if not lift.is_zero:
            tv, tg, tl = lift.evaluate(points, order=2)
            Q, gQ, lap = Q + tv, gQ + tg, lap + tl
        return Q, gQ, lap

    return fn


def basis_velocity_field(space: SpectralSpace, c):
    """Evaluator ``points -> (u, grad u)``; the sampled rectangle modes are
    read off at the nearest cell centre."""
    c = np.asarray(c, dtype=float)
    if space.stokes.analytic:
        def fn(points):
            vals, grads = space.stokes.evaluate(points)
            return np.tensordot(c, vals, axes=1), np.tensordot(c, grads, axes=1)
        return fn
    u_grid, g_grid = space.synth_u(c), space.grad_u(c)
    Nx, Ny = space.grid.shape
    Lx, Ly = space.geometry.lengths

    def fn(points):
        i = np.clip((points[:, 0] / Lx * Nx).astype(int), 0, Nx - 1)
        j = np.clip((points[:, 1] / Ly * Ny).astype(int), 0, Ny - 1)
        k = i * Ny + j
        return u_grid[k], g_grid[k]

    return fn


def phase_space_check(space: SpectralSpace, params: ModelParams, u0=None, q0=None, q_dirichlet=None,
                      q_neumann=None, tolerance: float = 1e-10, n_boundary: int = 65) -> CheckReport:
    """Compatibility of initial data with the boundary conditions.

    Checks (a) ``Q0 = Q_D`` on the Dirichlet faces, (b) ``d_n Q0 = Q_N`` on
    the Neumann faces and (c) the strong tensor right-hand side
    ``-u.grad Q + S(grad u, Q) + Gamma (lam Lap Q + L(Q))`` vanishes on the
    Dirichlet faces. ``u0`` and ``q0`` are evaluators as returned by
    :func:`basis_velocity_field` and :func:`basis_tensor_field` (or any
    callables with the same signature); ``None`` means zero velocity and the
    space's lift respectively. ``q_neumann`` maps faces to constant
    matrices; missing faces mean homogeneous data.
    """
    geom = space.geometry
    if geom.mode != "rectangle":
        raise UnsupportedGeometryError("phase-space check needs a rectangle")
    if q0 is None:
        q0 = basis_tensor_field(space, np.zeros(space.n_q))
    q_neumann = dict(q_neumann or {})
    trace_err = normal_err = rhs_err = 0.0
    per_face = {}
    for face in FACES_2D:
        pts, s, axis, sign = face_points(geom, face, n_boundary)
        Q, gQ, lap = q0(pts)
        if face in geom.dirichlet_faces:
            target = face_values(geom, (q_dirichlet or {}).get(face), face, s)
            a = float(np.max(np.abs(Q - target)))
            # no-slip: u vanishes on every wall, only its gradient enters
            u = np.zeros((len(pts), 2))
            G = np.zeros((len(pts), 2, 2)) if u0 is None else u0(pts)[1]
            r = -np.einsum("pi,piab->pab", u, gQ) + s_full(G, Q, params) + params.gamma * (
                params.lam * lap + bulk_force(Q, params)
            )
            c = float(np.max(np.abs(r)))
            trace_err, rhs_err = max(trace_err, a), max(rhs_err, c)
            per_face[face] = {"trace": a, "rhs_trace": c}
        else:
            target = np.asarray(q_neumann.get(face, np.zeros((2, 2))), dtype=float)
            b = float(np.max(np.abs(sign * gQ[:, axis] - target)))
            normal_err = max(normal_err, b)
            per_face[face] = {"normal_derivative": b}
    residual = max(trace_err, normal_err, rhs_err)
    return CheckReport(
        "phase_space",
        residual,
        tolerance,
        context={"dirichlet_trace": trace_err, "neumann_trace": normal_err, "rhs_trace": rhs_err, "faces": per_face},
    )


# ---------------------------------------------------------------------------
# pointwise checks and norms


def gradient_check_bulk(samples, step: float = 1e-5, params: ModelParams | None = None,
                        tolerance: float = 1e-6) -> CheckReport:
    """Central differences of the bulk density along an orthonormal S0 basis
    against ``-L(Q)``; reports the worst relative error."""
    if not 1e-7 <= step <= 1e-3:
        raise ValueError("step must lie in [1e-7, 1e-3]")
    params = params or ModelParams()
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 2:
        samples = samples[None]
    E = s0_basis(samples.shape[-1])
    worst = 0.0
    for Q in samples:
        fd = np.array([(bulk_energy(Q + step * B, params) - bulk_energy(Q - step * B, params)) / (2 * step) for B in E])
        exact = -np.einsum("ij,kij->k", bulk_force(Q, params), E)
        scale = np.linalg.norm(exact)
        err = np.linalg.norm(fd - exact)
        if scale == 0.0:
            rel = 0.0 if err <= 1e-14 else np.inf
        else:
            rel = err / scale
        worst = max(worst, float(rel))
    return CheckReport("bulk_gradient", worst, tolerance, context={"samples": len(samples), "step": step})


def discrete_norms(space: SpectralSpace, coeffs, which: str = "L2", kind: str = "q") -> float:
    """Norms of a field in the span: Parseval with weights ``1``, ``1+lam``,
    ``(1+lam)^2`` for L2/H1/H2, grid maximum of the Frobenius/Euclidean
    magnitude for Linf."""
    c = np.asarray(coeffs, dtype=float)
    lam = space.lam_q if kind == "q" else space.lam_u
    if which == "L2":
        return float(np.sqrt(c @ c))
    if which == "H1":
        return float(np.sqrt(np.sum((1.0 + lam) * c * c)))
    if which == "H2":
        return float(np.sqrt(np.sum((1.0 + lam) ** 2 * c * c)))
    if which == "Linf":
        f = space.synth_q(c, tilde=False) if kind == "q" else space.synth_u(c)
        f = f.reshape(len(f), -1)
        return float(np.max(np.linalg.norm(f, axis=1), initial=0.0))
    raise ValueError(f"unknown norm {which!r}")
