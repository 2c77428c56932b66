"""Eigenbases, quadrature grids and projections.

Two geometries are supported:

* ``torus``: the periodic box ``prod [0, L_a)``, d = 2 or 3. Both the
  S0-valued Laplace basis and the Stokes basis are real Fourier modes.
* ``rectangle``: ``[0, Lx] x [0, Ly]`` (d = 2) where whole faces are
  either Dirichlet or homogeneous Neumann for Q, and the velocity is
  no-slip. Laplace modes are separable sine/cosine products; Stokes modes
  come from a staggered (MAC) discretisation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Mapping

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .tensor_core import InvalidInputError, s0_basis, s0_project

MODE_BUDGET = 4096
FACES_2D = ("x0", "x1", "y0", "y1")


class UnsupportedGeometryError(ValueError):
    pass


class GridMismatchError(ValueError):
    pass


def _key(value: float) -> float:
    # ties between analytically equal eigenvalues must not be decided by rounding
    return float(f"{value:.11e}")


@dataclass(frozen=True)
class Geometry:
    mode: str
    lengths: tuple[float, ...]
    dirichlet_faces: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "lengths", tuple(float(x) for x in self.lengths))
        object.__setattr__(self, "dirichlet_faces", frozenset(self.dirichlet_faces))
        if self.mode not in ("torus", "rectangle"):
            raise UnsupportedGeometryError(f"unknown geometry mode {self.mode!r}")
        if self.d not in (2, 3):
            raise UnsupportedGeometryError(f"unsupported dimension d={self.d}")
        if any(not (x > 0 and math.isfinite(x)) for x in self.lengths):
            raise UnsupportedGeometryError("lengths must be positive")
        if self.mode == "torus" and self.dirichlet_faces:
            raise UnsupportedGeometryError("a torus has no boundary faces")
        if self.mode == "rectangle":
            if self.d != 2:
                raise UnsupportedGeometryError("unsupported geometry: rectangle mode requires d=2")
            unknown = self.dirichlet_faces - set(FACES_2D)
            if unknown:
                raise UnsupportedGeometryError(f"unknown faces {sorted(unknown)}")

    @classmethod
    def torus(cls, d: int = 2, length: float = 2 * np.pi) -> "Geometry":
        return cls("torus", (length,) * d)

    @classmethod
    def rectangle(cls, lengths=(np.pi, np.pi), dirichlet_faces=("x0", "x1")) -> "Geometry":
        return cls("rectangle", tuple(lengths), frozenset(dirichlet_faces))

    @property
    def d(self) -> int:
        return len(self.lengths)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def neumann_faces(self) -> frozenset:
        if self.mode == "torus":
            return frozenset()
        return frozenset(FACES_2D) - self.dirichlet_faces

    def axis_kind(self, axis: int) -> str:
        """Boundary type pair (low face, high face) along ``axis``: 'DD', 'DN', 'ND' or 'NN'."""
        name = "xy"[axis]
        lo = "D" if f"{name}0" in self.dirichlet_faces else "N"
        hi = "D" if f"{name}1" in self.dirichlet_faces else "N"
        return lo + hi

    def metadata(self) -> dict:
        return {
            "mode": self.mode,
            "lengths": list(self.lengths),
            "dirichlet_faces": sorted(self.dirichlet_faces),
        }


# ---------------------------------------------------------------------------
# 1D building blocks for separable rectangle modes


def _axis_mode(kind: str, m: int, L: float) -> tuple[str, float, float] | None:
    """(trig, frequency, amplitude) of the m-th 1D eigenfunction, or None."""
    if kind == "NN":
        return ("cos", m * np.pi / L, np.sqrt((1.0 if m == 0 else 2.0) / L))
    if kind == "DD":
        if m == 0:
            return None
        return ("sin", m * np.pi / L, np.sqrt(2.0 / L))
    if kind == "DN":
        return ("sin", (m + 0.5) * np.pi / L, np.sqrt(2.0 / L))
    if kind == "ND":
        return ("cos", (m + 0.5) * np.pi / L, np.sqrt(2.0 / L))
    raise ValueError(kind)


def _trig(trig: str, mu: float, x: np.ndarray, deriv: int) -> np.ndarray:
    # derivatives of cos/sin(mu x) cycle through cos, -sin, -cos, sin
    shift = {"cos": 0, "sin": 3}[trig] + deriv
    base = np.cos(mu * x) if shift % 2 == 0 else np.sin(mu * x)
    sign = (1, -1, -1, 1)[shift % 4]
    return sign * mu**deriv * base


@dataclass(frozen=True)
class ScalarMode:
    """Closed-form scalar eigenfunction.

    For the torus ``trig`` is one of 'const', 'cos', 'sin' applied to
    ``kappa . x``; for rectangles it is a per-axis tuple of 'cos'/'sin'.
    """

    wavevector: tuple[int, ...]
    trig: object
    freqs: tuple[float, ...]
    amplitude: float

    @property
    def eigenvalue(self) -> float:
        return float(sum(f * f for f in self.freqs))

    def evaluate(self, points: np.ndarray, order: int = 1):
        """Values (P,), gradients (P, d) and, if ``order == 2``, Laplacians (P,)."""
        points = np.atleast_2d(points)
        kap = np.asarray(self.freqs)
        A = self.amplitude
        if isinstance(self.trig, str):
            if self.trig == "const":
                val = np.full(len(points), A)
                grad = np.zeros_like(points)
            else:
                phase = points @ kap
                if self.trig == "cos":
                    val, dval = A * np.cos(phase), -A * np.sin(phase)
                else:
                    val, dval = A * np.sin(phase), A * np.cos(phase)
                grad = dval[:, None] * kap[None, :]
            lap = -(kap @ kap) * val
        else:
            f = [_trig(t, mu, points[:, a], 0) for a, (t, mu) in enumerate(zip(self.trig, kap))]
            df = [_trig(t, mu, points[:, a], 1) for a, (t, mu) in enumerate(zip(self.trig, kap))]
            d2f = [_trig(t, mu, points[:, a], 2) for a, (t, mu) in enumerate(zip(self.trig, kap))]
            val = A * np.prod(f, axis=0)
            grad = np.stack(
                [A * df[a] * np.prod([f[b] for b in range(len(f)) if b != a], axis=0) for a in range(len(f))],
                axis=1,
            )
            lap = sum(
                A * d2f[a] * np.prod([f[b] for b in range(len(f)) if b != a], axis=0) for a in range(len(f))
            )
        if order == 2:
            return val, grad, lap
        return val, grad


def _torus_wavevectors(d: int, K: int):
    for k in product(range(-K, K + 1), repeat=d):
        nz = [c for c in k if c != 0]
        if nz and nz[0] > 0:
            yield k


def _torus_scalar_modes(geom: Geometry, K: int) -> list[ScalarMode]:
    vol = geom.volume
    unit = [2 * np.pi / L for L in geom.lengths]
    modes = [ScalarMode((0,) * geom.d, "const", (0.0,) * geom.d, 1.0 / np.sqrt(vol))]
    for k in _torus_wavevectors(geom.d, K):
        kap = tuple(u * c for u, c in zip(unit, k))
        for t in ("cos", "sin"):
            modes.append(ScalarMode(k, t, kap, np.sqrt(2.0 / vol)))
    return modes


def _rectangle_scalar_modes(geom: Geometry, K: int) -> list[ScalarMode]:
    per_axis = []
    for a, L in enumerate(geom.lengths):
        kind = geom.axis_kind(a)
        per_axis.append([(m, _axis_mode(kind, m, L)) for m in range(K + 1) if _axis_mode(kind, m, L)])
    modes = []
    for combo in product(*per_axis):
        ms = tuple(m for m, _ in combo)
        trig = tuple(t for _, (t, _, _) in combo)
        freqs = tuple(mu for _, (_, mu, _) in combo)
        amp = float(np.prod([A for _, (_, _, A) in combo]))
        modes.append(ScalarMode(ms, trig, freqs, amp))
    return modes


_TRIG_ORDER = {"const": 0, "cos": 1, "sin": 2}


def _trig_key(trig) -> tuple:
    if isinstance(trig, str):
        return (_TRIG_ORDER[trig],)
    return tuple(_TRIG_ORDER[t] for t in trig)


def _lowest(candidates: list, n: int, K: int, unit_min: float, what: str) -> list:
    """First ``n`` entries of sorted candidates, verifying the cutoff K was large enough."""
    if n > len(candidates):
        return None
    chosen = candidates[:n]
    # every mode outside the enumerated box has eigenvalue >= ((K+1) * unit_min)^2
    if chosen[-1][0][0] >= _key(((K + 1) * unit_min) ** 2):
        return None
    return chosen


@dataclass
class LaplaceBasis:
    """S0-valued eigenbasis of ``-Delta`` with mixed Dirichlet/Neumann conditions."""

    geometry: Geometry
    scalar_modes: list
    directions: np.ndarray  # (n,) index into s0 basis
    eigenvalues: np.ndarray
    kind: str = "laplace_s0"

    @property
    def n(self) -> int:
        return len(self.eigenvalues)

    @property
    def s0(self) -> np.ndarray:
        return s0_basis(self.geometry.d)

    def unique_scalars(self):
        """Distinct scalar modes and, per tensor mode, the index into them."""
        uniq, index, lookup = [], [], {}
        for m in self.scalar_modes:
            key = (m.wavevector, m.trig)
            if key not in lookup:
                lookup[key] = len(uniq)
                uniq.append(m)
            index.append(lookup[key])
        return uniq, np.asarray(index)

    def evaluate(self, points: np.ndarray):
        """Mode values (n, P, d, d) and gradients (n, P, d, d, d) at ``points``."""
        E = self.s0
        vals, grads = [], []
        for m, a in zip(self.scalar_modes, self.directions):
            v, g = m.evaluate(points)
            vals.append(v[:, None, None] * E[a])
            grads.append(g[:, :, None, None] * E[a])
        return np.array(vals), np.array(grads)

    def metadata(self) -> dict:
        return {
            "kind": self.kind,
            "n": self.n,
            "modes": [
                [list(m.wavevector), m.trig if isinstance(m.trig, str) else list(m.trig), int(a)]
                for m, a in zip(self.scalar_modes, self.directions)
            ],
        }


def laplace_eigenpairs(geom: Geometry, n: int) -> LaplaceBasis:
    """First ``n`` S0-valued Laplace eigenpairs, ordered by eigenvalue.

    Ties are broken by wavevector, then trig type, then S0 direction.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > MODE_BUDGET:
        raise ValueError(f"n={n} exceeds the mode budget {MODE_BUDGET}")
    m = s0_basis(geom.d).shape[0]
    unit_min = min(np.pi / L for L in geom.lengths) if geom.mode == "rectangle" else min(
        2 * np.pi / L for L in geom.lengths
    )
    K = max(2, int(np.ceil((n / m) ** (1.0 / geom.d))) + 1)
    while True:
        scalars = _torus_scalar_modes(geom, K) if geom.mode == "torus" else _rectangle_scalar_modes(geom, K)
        cands = sorted(
            ((_key(s.eigenvalue), s.wavevector, _trig_key(s.trig), a), s)
            for s in scalars
            for a in range(m)
        )
        chosen = _lowest(cands, n, K, unit_min, "laplace")
        if chosen is not None:
            break
        K *= 2
    modes = [s for _, s in chosen]
    dirs = np.array([key[3] for key, _ in chosen])
    eig = np.array([s.eigenvalue for s in modes])
    return LaplaceBasis(geom, modes, dirs, eig)


@dataclass
class StokesBasis:
    """Divergence-free orthonormal eigenbasis of the Stokes operator.

    Torus bases are analytic (``modes`` holds ``(ScalarMode, polarisation)``).
    Rectangle bases are numeric and live on a fixed cell-centred grid
    (``native_grid``) with precomputed samples.
    """

    geometry: Geometry
    eigenvalues: np.ndarray
    modes: list = field(default_factory=list)
    native_grid: "Grid | None" = None
    samples: tuple | None = None  # (values (n,P,d), gradients (n,P,d,d))
    mac: dict | None = None
    kind: str = "stokes"

    @property
    def n(self) -> int:
        return len(self.eigenvalues)

    @property
    def analytic(self) -> bool:
        return self.samples is None

    def evaluate(self, points: np.ndarray):
        """Values (n, P, d) and gradients (n, P, d, d) with ``G[..., i, j] = d_i v_j``."""
        if not self.analytic:
            raise GridMismatchError("numeric Stokes modes can only be sampled on their native grid")
        vals, grads = [], []
        for s, p in self.modes:
            v, g = s.evaluate(points)
            vals.append(v[:, None] * p[None, :])
            grads.append(g[:, :, None] * p[None, None, :])
        return np.array(vals), np.array(grads)

    def metadata(self) -> dict:
        meta = {"kind": self.kind, "n": self.n}
        if self.analytic:
            meta["modes"] = [[list(s.wavevector), s.trig, [float(x) for x in p]] for s, p in self.modes]
        else:
            meta["mac_cells"] = list(self.mac["cells"])
        return meta


def _polarisations(kap: np.ndarray) -> list[np.ndarray]:
    d = len(kap)
    khat = kap / np.linalg.norm(kap)
    if d == 2:
        return [np.array([-khat[1], khat[0]])]
    ref = np.array([0.0, 0.0, 1.0]) if abs(khat[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    p1 = np.cross(khat, ref)
    p1 /= np.linalg.norm(p1)
    p2 = np.cross(khat, p1)
    return [p1, p2]


def stokes_eigenpairs(geom: Geometry, n: int, cells: int | tuple = 64) -> StokesBasis:
    """First ``n`` Stokes eigenpairs.

    On the torus the spectrum starts with ``d`` constant (mean-flow) modes
    with eigenvalue 0. Rectangle modes are computed on a MAC grid with
    ``cells`` cells per axis.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > MODE_BUDGET:
        raise ValueError(f"n={n} exceeds the mode budget {MODE_BUDGET}")
    if geom.mode == "rectangle":
        return _mac_stokes_basis(geom, n, cells)
    d = geom.d
    vol = geom.volume
    unit = [2 * np.pi / L for L in geom.lengths]
    K = max(2, int(np.ceil((n / max(1, d - 1) / 2) ** (1.0 / d))) + 1)
    while True:
        cands = []
        for i in range(d):
            e = np.zeros(d)
            e[i] = 1.0
            zero = ScalarMode((0,) * d, "const", (0.0,) * d, 1.0 / np.sqrt(vol))
            cands.append(((0.0, (0,) * d, (0,), i), (zero, e)))
        for k in _torus_wavevectors(d, K):
            kap = np.array([u * c for u, c in zip(unit, k)])
            for t in ("cos", "sin"):
                s = ScalarMode(k, t, tuple(kap), np.sqrt(2.0 / vol))
                for j, p in enumerate(_polarisations(kap)):
                    cands.append(((_key(s.eigenvalue), k, _trig_key(t), j), (s, p)))
        cands.sort(key=lambda c: c[0])
        chosen = _lowest(cands, n, K, min(unit), "stokes")
        if chosen is not None:
            break
        K *= 2
    modes = [m for _, m in chosen]
    return StokesBasis(geom, np.array([s.eigenvalue for s, _ in modes]), modes)


# ---------------------------------------------------------------------------
# MAC discretisation of the no-slip Stokes eigenproblem on a rectangle


def _mac_operators(Lx, Ly, Nx, Ny):
    hx, hy = Lx / Nx, Ly / Ny
    npsi = (Nx - 1) * (Ny - 1)

    def pid(i, j):  # interior node index or -1 on the boundary
        if 1 <= i <= Nx - 1 and 1 <= j <= Ny - 1:
            return (i - 1) * (Ny - 1) + (j - 1)
        return -1

    # u on vertical faces (i, j+1/2), i = 1..Nx-1 ; v on horizontal faces (i+1/2, j), j = 1..Ny-1
    def uid(i, j):
        return (i - 1) * Ny + j

    def vid(i, j):
        return i * (Ny - 1) + (j - 1)

    nu, nv = (Nx - 1) * Ny, Nx * (Ny - 1)
    rows, cols, vals = [], [], []
    for i in range(1, Nx):
        for j in range(Ny):
            r = uid(i, j)
            for jj, s in ((j + 1, 1.0), (j, -1.0)):
                c = pid(i, jj)
                if c >= 0:
                    rows.append(r), cols.append(c), vals.append(s / hy)
    Cu = sp.csr_matrix((vals, (rows, cols)), shape=(nu, npsi))
    rows, cols, vals = [], [], []
    for i in range(Nx):
        for j in range(1, Ny):
            r = vid(i, j)
            for ii, s in ((i + 1, -1.0), (i, 1.0)):
                c = pid(ii, j)
                if c >= 0:
                    rows.append(r), cols.append(c), vals.append(s / hx)
    Cv = sp.csr_matrix((vals, (rows, cols)), shape=(nv, npsi))

    def neg_laplacian(n_norm, n_tan, h_norm, h_tan, idx):
        # unknowns indexed (a, b): a along the normal direction (Dirichlet nodes at the ends),
        # b along the tangential direction (no-slip wall half a cell away, ghost reflection)
        rows, cols, vals = [], [], []
        for a in range(n_norm):
            for b in range(n_tan):
                r = idx(a, b)
                diag = 2.0 / h_norm**2 + 2.0 / h_tan**2
                for aa in (a - 1, a + 1):
                    if 0 <= aa < n_norm:
                        rows.append(r), cols.append(idx(aa, b)), vals.append(-1.0 / h_norm**2)
                for bb in (b - 1, b + 1):
                    if 0 <= bb < n_tan:
                        rows.append(r), cols.append(idx(a, bb)), vals.append(-1.0 / h_tan**2)
                    else:
                        diag += 1.0 / h_tan**2
                rows.append(r), cols.append(r), vals.append(diag)
        return sp.csr_matrix((vals, (rows, cols)), shape=(n_norm * n_tan,) * 2)

    Ku = neg_laplacian(Nx - 1, Ny, hx, hy, lambda a, b: a * Ny + b)
    # v unknowns are stored (i, j-1) with i tangential (x) and j normal (y)
    Kv_raw = neg_laplacian(Ny - 1, Nx, hy, hx, lambda a, b: a * Nx + b)
    perm = np.array([a * Nx + b for b in range(Nx) for a in range(Ny - 1)])
    Kv = Kv_raw[perm][:, perm]
    return Cu, Cv, Ku, Kv, (hx, hy)


def mac_stokes_eigenvalues(lengths, cells, n):
    """Lowest ``n`` eigenvalues and streamfunctions of the MAC Stokes problem."""
    Lx, Ly = lengths
    Nx, Ny = (cells, cells) if np.isscalar(cells) else cells
    Cu, Cv, Ku, Kv, (hx, hy) = _mac_operators(Lx, Ly, Nx, Ny)
    A = (Cu.T @ Ku @ Cu + Cv.T @ Kv @ Cv).tocsc()
    B = (Cu.T @ Cu + Cv.T @ Cv).tocsc()
    k = min(n, A.shape[0] - 2)
    if k < n:
        raise ValueError(f"MAC grid {cells} too coarse for {n} Stokes modes")
    v0 = np.ones(A.shape[0])
    w, psi = spla.eigsh(A, k=n, M=B, sigma=0.0, which="LM", v0=v0)
    order = np.argsort(w, kind="stable")
    w, psi = w[order], psi[:, order]
    # eigsh returns B-orthonormal vectors; rescale to unit L2 velocity norm
    psi = psi / np.sqrt(hx * hy)
    for j in range(psi.shape[1]):
        # deterministic sign: largest-magnitude entry positive
        idx = np.argmax(np.abs(psi[:, j]))
        if psi[idx, j] < 0:
            psi[:, j] = -psi[:, j]
    resid = np.linalg.norm(A @ psi - (B @ psi) * w, axis=0) / np.maximum(1.0, w * np.linalg.norm(B @ psi, axis=0))
    return w, psi, (Cu, Cv, hx, hy), resid


def _mac_stokes_basis(geom: Geometry, n: int, cells) -> StokesBasis:
    if isinstance(cells, int):
        cells = (cells, cells)
    Nx, Ny = cells
    if min(Nx, Ny) < 8:
        raise ValueError("MAC grid needs at least 8 cells per axis")
    w, psi, (Cu, Cv, hx, hy), resid = mac_stokes_eigenvalues(geom.lengths, cells, n)
    uf = (Cu @ psi).T.reshape(n, Nx - 1, Ny)
    vf = (Cv @ psi).T.reshape(n, Nx, Ny - 1)
    # pad with the (zero) boundary normal velocities
    uf = np.concatenate([np.zeros((n, 1, Ny)), uf, np.zeros((n, 1, Ny))], axis=1)  # (n, Nx+1, Ny)
    vf = np.concatenate([np.zeros((n, Nx, 1)), vf, np.zeros((n, Nx, 1))], axis=2)  # (n, Nx, Ny+1)
    uc = 0.5 * (uf[:, 1:, :] + uf[:, :-1, :])
    vc = 0.5 * (vf[:, :, 1:] + vf[:, :, :-1])
    dudx = (uf[:, 1:, :] - uf[:, :-1, :]) / hx
    dvdy = (vf[:, :, 1:] - vf[:, :, :-1]) / hy
    # tangential derivatives with odd reflection across the no-slip walls
    upad = np.concatenate([-uc[:, :, :1], uc, -uc[:, :, -1:]], axis=2)
    dudy = (upad[:, :, 2:] - upad[:, :, :-2]) / (2 * hy)
    vpad = np.concatenate([-vc[:, :1, :], vc, -vc[:, -1:, :]], axis=1)
    dvdx = (vpad[:, 2:, :] - vpad[:, :-2, :]) / (2 * hx)
    P = Nx * Ny
    vals = np.stack([uc.reshape(n, P), vc.reshape(n, P)], axis=-1)
    grads = np.empty((n, P, 2, 2))
    grads[:, :, 0, 0] = dudx.reshape(n, P)
    grads[:, :, 0, 1] = dvdx.reshape(n, P)
    grads[:, :, 1, 0] = dudy.reshape(n, P)
    grads[:, :, 1, 1] = dvdy.reshape(n, P)
    grid = Grid.midpoint(geom, cells)
    # Loewdin re-orthonormalisation in the cell-centred quadrature
    gram = np.einsum("mpk,npk,p->mn", vals, vals, grid.weights)
    evals, evecs = np.linalg.eigh(gram)
    S = evecs @ np.diag(evals**-0.5) @ evecs.T
    vals = np.einsum("mn,npk->mpk", S, vals)
    grads = np.einsum("mn,npij->mpij", S, grads)
    mac = {"cells": (Nx, Ny), "residuals": resid, "gram_before": gram}
    return StokesBasis(geom, w, [], grid, (vals, grads), mac)


def stokes_eigenvalue_convergence(geom: Geometry, n: int, cells: int = 32):
    """MAC eigenvalues at ``cells`` and ``2*cells`` with Richardson extrapolation.

    Returns ``(coarse, fine, extrapolated, observed_order)``; the order is
    estimated from a third resolution ``4*cells``.
    """
    w = [mac_stokes_eigenvalues(geom.lengths, (c, c), n)[0] for c in (cells, 2 * cells, 4 * cells)]
    with np.errstate(divide="ignore", invalid="ignore"):
        order = np.log2(np.abs(w[0] - w[1]) / np.abs(w[1] - w[2]))
    extrap = (4 * w[2] - w[1]) / 3.0
    return w[1], w[2], extrap, order


# ---------------------------------------------------------------------------
# Quadrature


@dataclass
class Grid:
    points: np.ndarray  # (P, d)
    weights: np.ndarray  # (P,)
    shape: tuple
    kind: str

    @classmethod
    def uniform(cls, geom: Geometry, M) -> "Grid":
        if isinstance(M, int):
            M = (M,) * geom.d
        axes = [np.arange(m) * (L / m) for m, L in zip(M, geom.lengths)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, geom.d)
        w = np.full(len(pts), geom.volume / np.prod(M))
        return cls(pts, w, tuple(M), "uniform")

    @classmethod
    def midpoint(cls, geom: Geometry, N) -> "Grid":
        if isinstance(N, int):
            N = (N,) * geom.d
        axes = [(np.arange(m) + 0.5) * (L / m) for m, L in zip(N, geom.lengths)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, geom.d)
        w = np.full(len(pts), geom.volume / np.prod(N))
        return cls(pts, w, tuple(N), "midpoint")

    @property
    def size(self) -> int:
        return len(self.weights)

    def integrate(self, f: np.ndarray) -> float:
        f = np.asarray(f)
        return float(np.tensordot(self.weights, f.reshape(len(self.weights), -1).sum(axis=1), 1))


def max_wavenumber(basis) -> int:
    if isinstance(basis, LaplaceBasis):
        return max(max(abs(c) for c in m.wavevector) for m in basis.scalar_modes)
    return max(max(abs(c) for c in s.wavevector) for s, _ in basis.modes)


def torus_grid(geom: Geometry, K: int, padding: float = 2.0) -> Grid:
    """Uniform grid exact for trigonometric products of degree ``2 * padding * K``.

    The trapezoidal rule on M points integrates every Fourier mode with
    ``|k| < M`` exactly; ``M = padding * (2K + 1)`` covers quartic products
    at the default padding.
    """
    M = int(np.ceil(padding * (2 * K + 1)))
    M += M % 2
    return Grid.uniform(geom, M)


# ---------------------------------------------------------------------------
# Harmonic extension of Dirichlet data


@dataclass(frozen=True)
class _Profile:
    """1D factor: 'const', 'lin' (c0 + c1 s), 'cos', 'sinh' or 'cosh' of mu*(sign*s + shift)."""

    kind: str
    mu: float = 0.0
    sign: float = 1.0
    shift: float = 0.0
    norm: float = 1.0
    c0: float = 1.0
    c1: float = 0.0

    def __call__(self, s: np.ndarray, deriv: int = 0) -> np.ndarray:
        if self.kind == "lin":
            return [self.c0 + self.c1 * s, np.full_like(s, self.c1), np.zeros_like(s)][deriv]
        if self.kind == "cos":
            return _trig("cos", self.mu, s, deriv)
        z = self.mu * (self.sign * s + self.shift)
        fac = (self.mu * self.sign) ** deriv / self.norm
        even = np.cosh(z) if self.kind == "cosh" else np.sinh(z)
        odd = np.sinh(z) if self.kind == "cosh" else np.cosh(z)
        return fac * (even if deriv % 2 == 0 else odd)


@dataclass
class HarmonicExtension:
    """Separable harmonic ``Q~`` with ``Q~ = Q_D`` on the Dirichlet faces and
    zero normal derivative on the Neumann faces."""

    geometry: Geometry
    terms: list  # (C (d,d), profile_x, profile_y)

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def evaluate(self, points: np.ndarray, order: int = 1):
        """Values (P,d,d), gradients (P,d,d,d) and optionally Laplacians (P,d,d)."""
        points = np.atleast_2d(points)
        d = self.geometry.d
        P = len(points)
        val = np.zeros((P, d, d))
        grad = np.zeros((P, d, d, d))
        lap = np.zeros((P, d, d))
        for C, px, py in self.terms:
            x, y = points[:, 0], points[:, 1]
            fx, fy = px(x), py(y)
            val += (fx * fy)[:, None, None] * C
            grad[:, 0] += (px(x, 1) * fy)[:, None, None] * C
            grad[:, 1] += (fx * py(y, 1))[:, None, None] * C
            lap += (px(x, 2) * fy + fx * py(y, 2))[:, None, None] * C
        if order == 2:
            return val, grad, lap
        return val, grad

    def dirichlet_energy(self, grid: Grid) -> float:
        _, g = self.evaluate(grid.points)
        return grid.integrate(np.einsum("pkab,pkab->p", g, g))


def _as_face_series(data) -> dict:
    """Normalise face data to ``{m: S0 matrix}`` (cosine coefficients)."""
    if isinstance(data, Mapping):
        out = {int(m): np.asarray(C, dtype=float) for m, C in data.items()}
    else:
        out = {0: np.asarray(data, dtype=float)}
    for C in out.values():
        if C.shape != (2, 2) or np.max(np.abs(C - s0_project(C))) > 1e-12 * max(1.0, np.max(np.abs(C))):
            raise InvalidInputError("incompatible data: boundary values must be symmetric trace-free 2x2")
    return {m: C for m, C in out.items() if np.any(C != 0)}


def harmonic_extension(geom: Geometry, q_dirichlet=None, q_neumann=None) -> HarmonicExtension:
    """Harmonic lift of Dirichlet data.

    ``q_dirichlet`` maps face names ('x0', 'x1', 'y0', 'y1') to either a
    constant S0 matrix or ``{m: C_m}``, meaning ``sum_m C_m cos(m pi s / L_t)``
    in the face's tangential coordinate ``s``. Non-constant data requires
    all Dirichlet faces to be normal to one axis. ``q_neumann`` is accepted
    for interface symmetry only: the lift always has zero normal derivative
    on the Neumann faces.
    """
    if geom.mode == "torus":
        if q_dirichlet:
            raise UnsupportedGeometryError("a torus carries no boundary data")
        return HarmonicExtension(geom, [])
    q_dirichlet = dict(q_dirichlet or {})
    extra = set(q_dirichlet) - geom.dirichlet_faces
    if extra:
        raise InvalidInputError(f"incompatible data: faces {sorted(extra)} are not Dirichlet faces")
    series = {f: _as_face_series(q_dirichlet.get(f, {})) for f in geom.dirichlet_faces}
    if not any(series.values()):
        return HarmonicExtension(geom, [])
    axes = {0 if f.startswith("x") else 1 for f in geom.dirichlet_faces}
    if len(axes) > 1:
        consts = [s.get(0) for s in series.values()]
        if all(set(s) == {0} for s in series.values()) and all(np.array_equal(consts[0], C) for C in consts):
            return HarmonicExtension(geom, [(consts[0], _Profile("lin"), _Profile("lin"))])
        raise UnsupportedGeometryError(
            "non-constant Dirichlet data on faces normal to both axes is not supported"
        )
    ax = axes.pop()
    tan = 1 - ax
    Ln, Lt = geom.lengths[ax], geom.lengths[tan]
    kind = geom.axis_kind(ax)
    name = "xy"[ax]
    lo, hi = series.get(f"{name}0", {}), series.get(f"{name}1", {})
    terms = []
    for m in sorted(set(lo) | set(hi)):
        mu = m * np.pi / Lt
        tprof = _Profile("lin") if m == 0 else _Profile("cos", mu)
        pieces = []
        if kind == "DD":
            C0, C1 = lo.get(m), hi.get(m)
            if m == 0:
                if C0 is not None:
                    pieces.append((C0, _Profile("lin", c0=1.0, c1=-1.0 / Ln)))
                if C1 is not None:
                    pieces.append((C1, _Profile("lin", c0=0.0, c1=1.0 / Ln)))
            else:
                if C0 is not None:
                    pieces.append((C0, _Profile("sinh", mu, -1.0, Ln, np.sinh(mu * Ln))))
                if C1 is not None:
                    pieces.append((C1, _Profile("sinh", mu, 1.0, 0.0, np.sinh(mu * Ln))))
        elif kind == "DN":
            C0 = lo[m]
            prof = _Profile("lin") if m == 0 else _Profile("cosh", mu, -1.0, Ln, np.cosh(mu * Ln))
            pieces.append((C0, prof))
        else:  # "ND"
            C1 = hi[m]
            prof = _Profile("lin") if m == 0 else _Profile("cosh", mu, 1.0, 0.0, np.cosh(mu * Ln))
            pieces.append((C1, prof))
        for C, nprof in pieces:
            terms.append((C, nprof, tprof) if ax == 0 else (C, tprof, nprof))
    return HarmonicExtension(geom, terms)


# ---------------------------------------------------------------------------
# Helmholtz-Leray projection


def leray_project(v: np.ndarray, geom: Geometry, space: "SpectralSpace | None" = None) -> np.ndarray:
    """Divergence-free part of a vector field sampled on a grid.

    On the torus ``v`` has shape ``(M_1, ..., M_d, d)`` on the uniform grid
    and the projection is exact in Fourier space. On a rectangle ``v`` has
    shape ``(P, d)`` on ``space.grid`` and is projected onto the span of the
    Stokes basis.
    """
    v = np.asarray(v, dtype=float)
    if geom.mode == "rectangle":
        if space is None:
            raise GridMismatchError("rectangle Leray projection needs a SpectralSpace")
        return space.synth_u(space.project_velocity(v))
    d = geom.d
    if v.ndim != d + 1 or v.shape[-1] != d:
        raise GridMismatchError(f"expected shape (M,)*{d} + ({d},), got {v.shape}")
    shape = v.shape[:-1]
    ks = np.meshgrid(
        *[np.fft.fftfreq(m, d=L / m) * 2 * np.pi for m, L in zip(shape, geom.lengths)], indexing="ij"
    )
    vh = np.stack([np.fft.fftn(v[..., i]) for i in range(d)], axis=-1)
    k = np.stack(ks, axis=-1)
    k2 = np.sum(k * k, axis=-1)
    k2[(0,) * d] = 1.0
    kv = np.sum(k * vh, axis=-1)
    vh = vh - k * (kv / k2)[..., None]
    return np.stack([np.fft.ifftn(vh[..., i]).real for i in range(d)], axis=-1)


# ---------------------------------------------------------------------------
# Bases sampled on a quadrature grid


class SpectralSpace:
    """Laplace and Stokes bases sampled on a common quadrature grid.

    Holds mode values and gradients at the grid points together with the
    harmonic lift ``Q~``. All projections use the discrete inner product of
    the grid, under which both bases are orthonormal.
    """

    def __init__(self, geometry, laplace, stokes, grid, tilde=None):
        self.geometry = geometry
        self.laplace = laplace
        self.stokes = stokes
        self.grid = grid
        self.d = geometry.d
        self.tilde = tilde if tilde is not None else HarmonicExtension(geometry, [])
        d, P = self.d, grid.size
        uniq, idx = laplace.unique_scalars()
        sv = np.empty((len(uniq), P))
        sg = np.empty((len(uniq), P, d))
        for i, m in enumerate(uniq):
            sv[i], sg[i] = m.evaluate(grid.points)
        self.phi = sv[idx]
        self.dphi = sg[idx]
        self.dirs = laplace.s0[laplace.directions]
        self._dirs_flat = self.dirs.reshape(len(idx), d * d)
        if stokes.analytic:
            self.v, self.dv = stokes.evaluate(grid.points)
        else:
            g = stokes.native_grid
            if g.shape != grid.shape or not np.allclose(g.points, grid.points):
                raise GridMismatchError("numeric Stokes basis requires its native grid")
            self.v, self.dv = stokes.samples
        self._dv_flat = self.dv.reshape(len(self.v), -1)
        if self.tilde.is_zero:
            self.qt = np.zeros((P, d, d))
            self.dqt = np.zeros((P, d, d, d))
            self.tilde_energy = 0.0
        else:
            self.qt, self.dqt = self.tilde.evaluate(grid.points)
            self.tilde_energy = self.tilde.dirichlet_energy(grid)

    @classmethod
    def build(cls, geometry, n_q, n_u, *, cells=64, padding=2.0, q_dirichlet=None):
        lap = laplace_eigenpairs(geometry, n_q)
        sto = stokes_eigenpairs(geometry, n_u, cells=cells)
        if geometry.mode == "torus":
            grid = torus_grid(geometry, max(max_wavenumber(lap), max_wavenumber(sto)), padding)
        else:
            grid = sto.native_grid
        tilde = harmonic_extension(geometry, q_dirichlet)
        return cls(geometry, lap, sto, grid, tilde)

    @property
    def n_q(self) -> int:
        return self.laplace.n

    @property
    def n_u(self) -> int:
        return self.stokes.n

    @property
    def lam_q(self) -> np.ndarray:
        return self.laplace.eigenvalues

    @property
    def lam_u(self) -> np.ndarray:
        return self.stokes.eigenvalues

    # -- tensors
    def synth_q(self, h, tilde: bool = True) -> np.ndarray:
        P, d = self.grid.size, self.d
        Q = (self.phi.T @ (np.asarray(h)[:, None] * self._dirs_flat)).reshape(P, d, d)
        return Q + self.qt if tilde else Q

    def grad_q(self, h, tilde: bool = True) -> np.ndarray:
        P, d = self.grid.size, self.d
        g = np.tensordot(self.dphi, np.asarray(h)[:, None] * self._dirs_flat, axes=([0], [0]))
        g = g.reshape(P, d, d, d)
        return g + self.dqt if tilde else g

    def project_tensor(self, F: np.ndarray) -> np.ndarray:
        """Coefficients ``(F, e_i)`` in the discrete inner product."""
        F = np.asarray(F, dtype=float)
        P, d = self.grid.size, self.d
        if F.shape != (P, d, d):
            raise GridMismatchError(f"expected tensor samples of shape {(P, d, d)}, got {F.shape}")
        M = self.phi @ (self.grid.weights[:, None] * F.reshape(P, d * d))
        return np.einsum("nk,nk->n", M, self._dirs_flat)

    # -- velocities
    def synth_u(self, c) -> np.ndarray:
        return np.tensordot(np.asarray(c), self.v, axes=1)

    def grad_u(self, c) -> np.ndarray:
        return np.tensordot(np.asarray(c), self.dv, axes=1)

    def project_velocity(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape != (self.grid.size, self.d):
            raise GridMismatchError(f"expected velocity samples of shape {(self.grid.size, self.d)}, got {f.shape}")
        return self.v.reshape(len(self.v), -1) @ (self.grid.weights[:, None] * f).ravel()

    def pair_grad_u(self, F: np.ndarray) -> np.ndarray:
        """``(F, grad v_k)`` for a matrix field ``F`` of shape (P, d, d)."""
        return self._dv_flat @ (self.grid.weights[:, None, None] * F).ravel()

    def metadata(self) -> dict:
        return {
            "geometry": self.geometry.metadata(),
            "n_u": self.n_u,
            "n_q": self.n_q,
            "grid": list(self.grid.shape),
            "grid_kind": self.grid.kind,
        }
