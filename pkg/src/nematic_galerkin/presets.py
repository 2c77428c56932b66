"""Named initial conditions, as grid samples of ``(u0, Q0)``.

Torus presets are built from low trigonometric modes in the first two
coordinates; rectangle presets start from the lift and add basis modes so
they satisfy the boundary conditions exactly.
"""
from __future__ import annotations

import numpy as np

from .spectral_basis import SpectralSpace
from .tensor_core import s0_basis

PRESETS = ("equilibrium", "relax", "shear", "vortex", "random", "small")


def _unit(geom_len):
    return 2 * np.pi / geom_len


def initial_data(space: SpectralSpace, name: str, amp_u: float = 0.5, amp_q: float = 0.5, seed: int = 0):
    """Return ``(u0, Q0)`` grid samples for the preset ``name``."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; expected one of {PRESETS}")
    g = space.geometry
    P, d = space.grid.size, space.d
    u0 = np.zeros((P, d))
    Q0 = space.qt.copy()
    if name == "equilibrium":
        return u0, Q0
    if name in ("random", "small") or g.mode == "rectangle":
        rng = np.random.default_rng(seed)
        if name == "small":
            amp_u, amp_q = 0.1 * amp_u, 0.1 * amp_q
        du = rng.standard_normal(space.n_u) / (1.0 + space.lam_u) ** 2
        dq = rng.standard_normal(space.n_q) / (1.0 + space.lam_q) ** 2
        return amp_u * space.synth_u(du), Q0 + amp_q * space.synth_q(dq, tilde=False)

    E = s0_basis(d)
    x = space.grid.points
    k = _unit(g.lengths[0])
    X, Y = k * x[:, 0], k * x[:, 1]
    if name == "relax":
        Q0 += amp_q * (np.cos(X)[:, None, None] * E[0] + np.sin(Y)[:, None, None] * E[1])
    elif name == "shear":
        u0[:, 0] = amp_u * np.sin(Y)
        Q0 += amp_q * np.cos(X)[:, None, None] * E[0]
    elif name == "vortex":
        u0[:, 0] = amp_u * np.sin(X) * np.cos(Y)
        u0[:, 1] = -amp_u * np.cos(X) * np.sin(Y)
        Q0 += amp_q * (np.cos(X + Y)[:, None, None] * E[0] + np.sin(2 * X)[:, None, None] * E[-1])
    return u0, Q0
