"""Pointwise algebra of symmetric trace-free tensors.

Every function accepts arrays whose trailing two axes are the ``d x d``
matrix axes; leading axes are treated as a batch (typically quadrature
points). Velocity gradients follow the convention ``G[..., i, j] = d_i u_j``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class InvalidInputError(ValueError):
    """Raised for non-finite or otherwise malformed tensor input."""


class PreconditionError(ValueError):
    """Raised when an operation's precondition does not hold."""


@dataclass(frozen=True)
class Viscosity:
    """``nu(Q) = nu0 + nu1 / (1 + tr Q^2)``; ``nu1 = 0`` gives a constant."""

    nu0: float = 1.0
    nu1: float = 0.0

    def __post_init__(self):
        if not self.nu0 > 0:
            raise ValueError("viscosity nu0 must be > 0")
        if self.nu1 < 0:
            raise ValueError("viscosity nu1 must be >= 0")

    @property
    def kind(self) -> str:
        return "constant" if self.nu1 == 0 else "rational"

    @property
    def bounds(self) -> tuple[float, float]:
        return self.nu0, self.nu0 + self.nu1

    def __call__(self, Q: np.ndarray) -> np.ndarray:
        Q = np.asarray(Q, dtype=float)
        if self.nu1 == 0:
            return np.full(Q.shape[:-2], self.nu0)
        return self.nu0 + self.nu1 / (1.0 + np.einsum("...ij,...ij->...", Q, Q))


@dataclass(frozen=True)
class ModelParams:
    """Material constants of the Beris-Edwards system.

    ``lam`` is the elastic constant and ``gamma`` the rotational mobility.
    """

    xi: float = 0.0
    gamma: float = 1.0
    lam: float = 1.0
    a: float = 1.0
    b: float = 1.0
    c: float = 1.0
    viscosity: Viscosity = field(default_factory=Viscosity)

    def __post_init__(self):
        for name in ("xi", "gamma", "lam", "a", "b", "c"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not self.c > 0:
            raise ValueError("c must be > 0")
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if not self.lam > 0:
            raise ValueError("lambda must be > 0")

    def nu(self, Q: np.ndarray) -> np.ndarray:
        return self.viscosity(Q)


def _check_pair(A: np.ndarray, B: np.ndarray) -> None:
    if A.shape[-2:] != B.shape[-2:]:
        raise InvalidInputError(f"dimension mismatch: {A.shape[-2:]} vs {B.shape[-2:]}")


def _eye(A: np.ndarray) -> np.ndarray:
    return np.eye(A.shape[-1])


def _tr(A: np.ndarray) -> np.ndarray:
    return np.trace(A, axis1=-2, axis2=-1)


def _T(A: np.ndarray) -> np.ndarray:
    return np.swapaxes(A, -1, -2)


def ddot(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Frobenius contraction ``A : B`` over the trailing matrix axes."""
    return np.einsum("...ij,...ij->...", A, B)


def s0_basis(d: int) -> np.ndarray:
    """Orthonormal basis of the symmetric trace-free ``d x d`` matrices.

    Returns an array of shape ``(m, d, d)`` with ``m = d(d+1)/2 - 1``.
    The ordering is fixed: diagonal directions first, then off-diagonals
    in row-major order.
    """
    if d == 2:
        r = 1.0 / np.sqrt(2.0)
        return np.array([[[r, 0.0], [0.0, -r]], [[0.0, r], [r, 0.0]]])
    if d == 3:
        r2, r6 = 1.0 / np.sqrt(2.0), 1.0 / np.sqrt(6.0)
        out = [np.diag([r2, -r2, 0.0]), np.diag([r6, r6, -2.0 * r6])]
        for i, j in ((0, 1), (0, 2), (1, 2)):
            E = np.zeros((3, 3))
            E[i, j] = E[j, i] = r2
            out.append(E)
        return np.array(out)
    raise InvalidInputError(f"unsupported dimension d={d}")


def s0_project(M: np.ndarray) -> np.ndarray:
    """Symmetric trace-free part ``(M + M^T)/2 - tr(M)/d I``."""
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise InvalidInputError("non-finite entries")
    S = 0.5 * (M + _T(M))
    return S - (_tr(S) / M.shape[-1])[..., None, None] * _eye(M)


def sym_skew(G: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a velocity gradient into stretch ``Du`` and vorticity ``Wu``."""
    G = np.asarray(G, dtype=float)
    Gt = _T(G)
    return 0.5 * (G + Gt), 0.5 * (G - Gt)


def sigma_op(Q: np.ndarray, H: np.ndarray) -> np.ndarray:
    """Skew commutator ``QH - HQ``."""
    _check_pair(Q, H)
    return Q @ H - H @ Q


def tau2_op(Q: np.ndarray, H: np.ndarray) -> np.ndarray:
    _check_pair(Q, H)
    QpI = Q + _eye(Q) / Q.shape[-1]
    return -(Q @ H) - H @ Q + 2.0 * QpI * ddot(Q, H)[..., None, None]


def s1_op(G: np.ndarray, Q: np.ndarray) -> np.ndarray:
    _check_pair(G, Q)
    _, W = sym_skew(G)
    return W @ Q - Q @ W


def s2_op(G: np.ndarray, Q: np.ndarray) -> np.ndarray:
    _check_pair(G, Q)
    D, _ = sym_skew(G)
    QpI = Q + _eye(Q) / Q.shape[-1]
    # tr(Q G) = Q : G^T = Q : G for symmetric Q
    return D @ Q + Q @ D - 2.0 * QpI * ddot(Q, G)[..., None, None]


def s_full(G: np.ndarray, Q: np.ndarray, params: ModelParams) -> np.ndarray:
    """Co-rotational / stretching term ``S(grad u, Q)``."""
    d = Q.shape[-1]
    D, _ = sym_skew(G)
    xi = params.xi
    return s1_op(G, Q) + xi * s2_op(G, Q) + (2.0 * xi / d) * D


def s_full_closed_form(G: np.ndarray, Q: np.ndarray, params: ModelParams) -> np.ndarray:
    """``S`` from its unexpanded definition; kept as an independent cross-check."""
    d = Q.shape[-1]
    D, W = sym_skew(G)
    xi = params.xi
    QpI = Q + _eye(Q) / d
    return (
        (xi * D + W) @ QpI
        + QpI @ (xi * D - W)
        - 2.0 * xi * QpI * _tr(Q @ G)[..., None, None]
    )


def tau_elastic(gradQ: np.ndarray, params: ModelParams) -> np.ndarray:
    """Deviatoric elastic stress ``-lam (d_i Q : d_j Q)_{ij}``.

    ``gradQ[..., i, :, :]`` holds ``d_i Q``. Isotropic contributions are
    omitted; they vanish against divergence-free test fields.
    """
    gradQ = np.asarray(gradQ, dtype=float)
    return -params.lam * np.einsum("...iab,...jab->...ij", gradQ, gradQ)


def bulk_energy(Q: np.ndarray, params: ModelParams) -> np.ndarray:
    """Landau-de Gennes bulk density ``a/2 trQ^2 - b/3 trQ^3 + c/4 (trQ^2)^2``."""
    Q = np.asarray(Q, dtype=float)
    Q2 = Q @ Q
    t2 = _tr(Q2)
    t3 = ddot(Q2, _T(Q))
    return 0.5 * params.a * t2 - params.b / 3.0 * t3 + 0.25 * params.c * t2 * t2


def bulk_force(Q: np.ndarray, params: ModelParams) -> np.ndarray:
    """``L(Q) = -aQ + b(Q^2 - trQ^2/d I) - c trQ^2 Q``, the negative S0-gradient of
    :func:`bulk_energy`."""
    Q = np.asarray(Q, dtype=float)
    d = Q.shape[-1]
    Q2 = Q @ Q
    t2 = _tr(Q2)[..., None, None]
    return -params.a * Q + params.b * (Q2 - t2 / d * _eye(Q)) - params.c * t2 * Q


def cancellation_residual(Q1, Q2, G, params: ModelParams, trace_tol: float = 1e-12):
    """Left-hand side of the coupling cancellation identity.

    ``S(G, Q1) : Q2 + (sigma(Q1, Q2) + xi tau2(Q1, Q2) - 2 xi / d Q2) : G``
    vanishes whenever ``tr G = 0``.
    """
    Q1, Q2, G = (np.asarray(x, dtype=float) for x in (Q1, Q2, G))
    scale = max(1.0, float(np.max(np.abs(G), initial=0.0)))
    if np.any(np.abs(_tr(G)) > trace_tol * scale):
        raise PreconditionError("velocity gradient must be trace-free")
    d = Q1.shape[-1]
    xi = params.xi
    coupling = sigma_op(Q1, Q2) + xi * tau2_op(Q1, Q2) - (2.0 * xi / d) * Q2
    return ddot(s_full(G, Q1, params), Q2) + ddot(coupling, G)
