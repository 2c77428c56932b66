import numpy as np
import pytest

from nematic_galerkin import GalerkinSystem, Geometry, ModelParams, SpectralSpace
from nematic_galerkin.galerkin_sim import EnergyReport
from nematic_galerkin.presets import initial_data
from nematic_galerkin.spectral_basis import UnsupportedGeometryError
from nematic_galerkin.tensor_core import bulk_force, s0_basis
from nematic_galerkin.verification import (
    CheckReport,
    TimeCutoff,
    basis_tensor_field,
    basis_velocity_field,
    discrete_norms,
    energy_inequality_check,
    gradient_check_bulk,
    jitter_trajectory,
    phase_space_check,
    tau1_weak_identity,
    weak_residual_q,
    weak_residual_u,
)

E = s0_basis(2)


@pytest.fixture(scope="module")
def space():
    return SpectralSpace.build(Geometry.torus(2), 24, 12)


@pytest.fixture(scope="module")
def system(space):
    return GalerkinSystem(space, ModelParams(xi=0.3))


def generic_run(system, tol, t_end=0.5):
    u0, Q0 = initial_data(system.space, "random", seed=2)
    return system.run(system.init_state(u0, Q0), t_end, "rk45", tol=tol)


@pytest.fixture(scope="module")
def run_1e10(system):
    return generic_run(system, 1e-10)


def test_check_report_flag():
    assert CheckReport("x", 1.0, 1.0).passed
    r = CheckReport("x", 2.0, 1.0)
    assert not r.passed and r.line().startswith("FAIL x")


def test_time_cutoff():
    c = TimeCutoff(2.0)
    assert c(0.0) == 1.0 and abs(c(2.0)) < 1e-16
    t = np.linspace(0.1, 1.9, 7)
    fd = (c(t + 1e-6) - c(t - 1e-6)) / 2e-6
    assert np.allclose(c.deriv(t), fd, atol=1e-8)
    lin = TimeCutoff(2.0, kind="linear")
    assert lin(2.0) == 0.0 and np.all(lin.deriv(t) == -0.5)


# -- weak residuals


def test_weak_residuals_equilibrium(system):
    traj, _ = system.run(system.zero_state(), 0.5, dt=0.1)
    for k in range(3):
        assert weak_residual_u(system, traj, k, tolerance=1e-10).passed
        assert weak_residual_q(system, traj, k, tolerance=1e-10).passed


@pytest.mark.parametrize("k", range(5))
def test_weak_residuals_of_galerkin_solution(system, run_1e10, k):
    traj, _ = run_1e10
    assert weak_residual_u(system, traj, k, tolerance=1e-9).passed
    assert weak_residual_q(system, traj, k, tolerance=1e-9).passed


def test_weak_residuals_detect_jitter(system, run_1e10):
    traj, _ = run_1e10
    bad = jitter_trajectory(traj, 1e-3, seed=1)
    ru = max(weak_residual_u(system, bad, k).residual for k in range(3))
    rq = max(weak_residual_q(system, bad, k).residual for k in range(3))
    assert ru >= 1e-5 and rq >= 1e-5


def test_weak_residual_scales_with_tolerance(system):
    res = []
    for tol in (1e-6, 1e-8):
        traj, _ = generic_run(system, tol)
        res.append(max(weak_residual_q(system, traj, k).residual for k in range(4)))
    # two decades of tolerance buy at least one decade of residual
    assert res[0] / res[1] >= 10


def test_weak_residual_grid_test_function(system, space, run_1e10):
    traj, _ = run_1e10
    c = np.zeros(space.n_q)
    c[3], c[5] = 0.6, -0.8
    a = weak_residual_q(system, traj, space.synth_q(c, tilde=False))
    b = weak_residual_q(system, traj, c)
    assert a.residual == pytest.approx(b.residual, abs=1e-13)
    x = space.grid.points
    outside = np.cos(5 * x[:, 0])[:, None, None] * E[0]
    with pytest.raises(ValueError, match="outside span"):
        weak_residual_q(system, traj, outside)


def test_unprojected_form_differs_only_by_projection(system, run_1e10):
    traj, _ = run_1e10
    r = weak_residual_u(system, traj, 2, projected=False)
    # H - pi_n H is orthogonal to the span but not to H:grad Q
    assert r.residual > 1e-9
    assert r.context["projected"] is False


# -- energy inequality


def test_energy_inequality_equilibrium(system):
    traj, reps = system.run(system.zero_state(), 0.3, dt=0.1)
    r = energy_inequality_check(reps, traj.dissipation, traj.dissipation_full)
    assert r.passed and r.residual == 0.0 and r.context["excess"] == 0.0


def test_energy_inequality_generic(run_1e10):
    traj, reps = run_1e10
    r = energy_inequality_check(reps, traj.dissipation, traj.dissipation_full)
    assert r.passed
    assert r.context["projection_gap"] >= 0
    # with unprojected H the bound is off by exactly the projection gap
    assert r.context["excess_unprojected"] >= r.context["excess"]
    assert r.context["excess_unprojected"] == pytest.approx(r.context["projection_gap"], abs=1e-8)


def test_energy_inequality_self_tests(run_1e10):
    traj, reps = run_1e10
    flipped = [EnergyReport(r.t, r.kinetic, r.elastic, r.bulk, r.total, -r.diss_visc, -r.diss_H) for r in reps]
    assert not energy_inequality_check(flipped).passed
    growing = [EnergyReport(r.t, r.kinetic, r.elastic, r.bulk, r.total + r.t, r.diss_visc, r.diss_H) for r in reps]
    assert not energy_inequality_check(growing, traj.dissipation).passed


# -- elastic stress identity


def q_generic(x):
    X, Y = x[:, 0], x[:, 1]
    return (0.4 * np.exp(0.8 * np.sin(X + 0.3) + 0.6 * np.cos(2 * Y - X)))[:, None, None] * E[0] + (
        0.3 * np.sin(X + 2 * Y + 0.7)
    )[:, None, None] * E[1]


def v_generic(x):
    X, Y = x[:, 0], x[:, 1]
    # curl of cos(x + 2y) + sin(2x - y)
    px = -np.sin(X + 2 * Y) + 2 * np.cos(2 * X - Y)
    py = -2 * np.sin(X + 2 * Y) - np.cos(2 * X - Y)
    return np.stack([py, -px], axis=1)


def test_tau1_trivial_cases():
    g = Geometry.torus(2)
    const = lambda x: np.tile(0.3 * E[0], (len(x), 1, 1))
    r = tau1_weak_identity(g, const, v_generic, N=16)
    assert r.context["lhs"] == 0.0 and r.context["rhs"] == pytest.approx(0.0, abs=1e-14)
    r = tau1_weak_identity(g, q_generic, lambda x: np.zeros((len(x), 2)), N=16)
    assert r.context["lhs"] == 0.0 and r.context["rhs"] == 0.0


def test_tau1_resolved_and_refinement():
    g = Geometry.torus(2)
    r = tau1_weak_identity(g, q_generic, v_generic, ModelParams(lam=1.0), N=32)
    assert r.passed and abs(r.context["lhs"]) > 1.0
    under = tau1_weak_identity(g, q_generic, v_generic, N=12)
    assert under.context["residual_N"] > 1e-6
    assert under.context["ratio"] >= 4


def test_tau1_single_modes():
    g = Geometry.torus(2)
    q = lambda x: np.cos(x[:, 0] + x[:, 1])[:, None, None] * E[0] + np.sin(2 * x[:, 1])[:, None, None] * E[1]
    v = lambda x: np.stack([np.sin(x[:, 1]), np.cos(x[:, 0])], axis=1)
    assert tau1_weak_identity(g, q, v, N=16).passed


def test_tau1_rejects_rectangle():
    with pytest.raises(UnsupportedGeometryError):
        tau1_weak_identity(Geometry.rectangle(), q_generic, v_generic)


# -- phase space


@pytest.fixture(scope="module")
def rect():
    return SpectralSpace.build(Geometry.rectangle(), 24, 6, cells=24)


def test_phase_space_membership(rect):
    rng = np.random.default_rng(0)
    p = ModelParams(xi=0.0)
    u0 = basis_velocity_field(rect, rng.standard_normal(rect.n_u))
    q0 = basis_tensor_field(rect, rng.standard_normal(rect.n_q) / (1 + rect.lam_q))
    r = phase_space_check(rect, p, u0, q0)
    assert r.passed, r.context


def test_phase_space_trace_mismatch(rect):
    p = ModelParams(xi=0.0)
    base = basis_tensor_field(rect, np.zeros(rect.n_q))
    C = 0.25 * E[0]

    def shifted(points):
        Q, gQ, lap = base(points)
        return Q + C, gQ, lap

    r = phase_space_check(rect, p, None, shifted)
    assert not r.passed
    assert r.context["dirichlet_trace"] == pytest.approx(np.max(np.abs(C)), abs=1e-14)


def test_phase_space_detects_bulk_trace():
    C = 0.5 * E[0]
    sp = SpectralSpace.build(Geometry.rectangle(), 12, 4, cells=16, q_dirichlet={"x0": C, "x1": C})
    p = ModelParams()
    r = phase_space_check(sp, p, None, None, q_dirichlet={"x0": C, "x1": C})
    assert r.context["dirichlet_trace"] <= 1e-14
    assert r.context["neumann_trace"] <= 1e-14
    # u0 = 0 and a constant lift: only Gamma L(C) remains on the walls
    assert r.context["rhs_trace"] == pytest.approx(np.max(np.abs(bulk_force(C, p))), rel=1e-12)
    assert not r.passed


def test_phase_space_detects_laplacian_trace(rect):
    def q0(points):
        x = points[:, 0]
        Q = (x * (np.pi - x))[:, None, None] * E[1]
        gQ = np.zeros((len(points), 2, 2, 2))
        gQ[:, 0] = (np.pi - 2 * x)[:, None, None] * E[1]
        lap = np.tile(-2.0 * E[1], (len(points), 1, 1))
        return Q, gQ, lap

    r = phase_space_check(rect, ModelParams(xi=0.0), None, q0)
    assert r.context["dirichlet_trace"] <= 1e-14 and r.context["neumann_trace"] <= 1e-14
    assert r.context["rhs_trace"] == pytest.approx(2.0 * np.max(np.abs(E[1])), rel=1e-12)
    assert not r.passed


def test_phase_space_rejects_torus(space):
    with pytest.raises(UnsupportedGeometryError):
        phase_space_check(space, ModelParams())


# -- bulk gradient and norms


def test_gradient_check_examples():
    assert gradient_check_bulk(np.zeros((2, 2))).residual == 0.0
    rng = np.random.default_rng(0)
    for d in (2, 3):
        assert gradient_check_bulk(rng.uniform(-1, 1, (100, d, d)) + 0.0, step=1e-5).passed
    quad = ModelParams(b=0.0, c=1e-300)
    Q = rng.uniform(-1, 1, (20, 3, 3))
    Q = 0.5 * (Q + np.swapaxes(Q, 1, 2))
    Q -= np.trace(Q, axis1=1, axis2=2)[:, None, None] * np.eye(3) / 3
    # central differences are exact for a quadratic density; only rounding
    # of order eps/step remains
    assert gradient_check_bulk(Q, step=1e-3, params=quad).residual <= 1e-12
    with pytest.raises(ValueError):
        gradient_check_bulk(Q, step=1e-2)


def test_gradient_check_detects_wrong_force(monkeypatch):
    import nematic_galerkin.verification as ver

    original = ver.bulk_force
    monkeypatch.setattr(ver, "bulk_force", lambda Q, p: 1.01 * original(Q, p))
    rng = np.random.default_rng(1)
    assert not gradient_check_bulk(rng.uniform(-1, 1, (10, 2, 2))).passed


def test_discrete_norms_examples(space):
    e = np.zeros(space.n_q)
    k = int(np.argmax(space.lam_q == 1.0))
    e[k] = 1.0
    assert discrete_norms(space, e, "L2") == pytest.approx(1.0)
    assert discrete_norms(space, e, "H1") ** 2 == pytest.approx(2.0)
    assert discrete_norms(space, e, "H2") ** 2 == pytest.approx(4.0)
    z = np.zeros(space.n_q)
    assert all(discrete_norms(space, z, w) == 0.0 for w in ("L2", "H1", "H2", "Linf"))
    assert discrete_norms(space, np.eye(space.n_u)[0], "L2", kind="u") == 1.0
    with pytest.raises(ValueError):
        discrete_norms(space, z, "H3")
