"""TOML run configuration.

Every section and key is listed in ``_SCHEMA``; anything else is rejected so
that typos fail loudly. Lengths are in the domain's length unit, times in
the model's time unit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

import numpy as np

from .spectral_basis import FACES_2D, Geometry, UnsupportedGeometryError
from .tensor_core import ModelParams, Viscosity

__all__ = ["ConfigError", "SimConfig", "load_config", "parse_config"]


class ConfigError(ValueError):
    pass


_SCHEMA = {
    "": {"seed", "t_end", "geometry", "modes", "params", "initial", "boundary", "integrator", "output",
         "linearize", "contraction"},
    "geometry": {"mode", "d", "lengths", "dirichlet_faces"},
    "modes": {"n_q", "n_u", "cells", "padding"},
    "params": {"xi", "gamma", "lam", "a", "b", "c", "viscosity"},
    "params.viscosity": {"nu0", "nu1"},
    "initial": {"preset", "amp_u", "amp_q", "snapshot"},
    "boundary": {"q_dirichlet", "q_neumann"},
    "integrator": {"kind", "dt", "tol"},
    "output": {"dir", "snapshot_stride"},
    "linearize": {"T", "n_steps", "tol", "max_iter"},
    "contraction": {"T", "R", "n_pairs", "n_steps"},
}


@dataclass
class IntegratorSpec:
    kind: str = "implicit_midpoint"
    dt: float = 0.01
    tol: float | None = None


@dataclass
class InitialSpec:
    preset: str = "relax"
    amp_u: float = 0.5
    amp_q: float = 0.5
    snapshot: str | None = None


@dataclass
class LinearizeSpec:
    T: float = 0.05
    n_steps: int = 32
    tol: float = 1e-10
    max_iter: int = 60


@dataclass
class ContractionSpec:
    T: list = field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05])
    R: float = 1.0
    n_pairs: int = 8
    n_steps: int = 32


@dataclass
class SimConfig:
    geometry: Geometry
    params: ModelParams
    n_q: int = 64
    n_u: int = 32
    cells: int = 64
    padding: float = 2.0
    initial: InitialSpec = field(default_factory=InitialSpec)
    q_dirichlet: dict = field(default_factory=dict)
    q_neumann: dict = field(default_factory=dict)
    integrator: IntegratorSpec = field(default_factory=IntegratorSpec)
    t_end: float = 1.0
    out_dir: str = "out"
    snapshot_stride: int = 0
    seed: int = 0
    linearize: LinearizeSpec = field(default_factory=LinearizeSpec)
    contraction: ContractionSpec = field(default_factory=ContractionSpec)

    @property
    def d(self) -> int:
        return self.geometry.d


def _check_keys(table: dict, section: str):
    allowed = _SCHEMA[section]
    for key, val in table.items():
        name = f"{section}.{key}" if section else key
        if key not in allowed:
            raise ConfigError(f"{name}: unknown key")
        sub = f"{section}.{key}" if section else key
        if isinstance(val, dict) and sub in _SCHEMA:
            _check_keys(val, sub)


def _num(table, key, default, section, kind=float, positive=False):
    val = table.get(key, default)
    if val is None:
        return None
    name = f"{section}.{key}"
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{name}: expected a number, got {val!r}")
    if kind is int:
        if int(val) != val:
            raise ConfigError(f"{name}: expected an integer")
        val = int(val)
    else:
        val = float(val)
        if not math.isfinite(val):
            raise ConfigError(f"{name}: must be finite")
    if positive and not val > 0:
        raise ConfigError(f"{name}: must be > 0")
    return val


def _matrix(val, name):
    try:
        M = np.asarray(val, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: expected a 2x2 matrix") from exc
    if M.shape != (2, 2):
        raise ConfigError(f"{name}: expected a 2x2 matrix")
    return M


def parse_config(doc: dict, base_dir: Path | None = None) -> SimConfig:
    _check_keys(doc, "")
    g = doc.get("geometry", {})
    mode = g.get("mode", "torus")
    d = _num(g, "d", 2, "geometry", int)
    try:
        if mode == "torus":
            lengths = g.get("lengths", [2 * math.pi] * d)
            if len(lengths) != d:
                raise ConfigError("geometry.lengths: need one length per dimension")
            if "dirichlet_faces" in g:
                raise ConfigError("geometry.dirichlet_faces: a torus has no faces")
            geom = Geometry("torus", tuple(float(x) for x in lengths))
        elif mode == "rectangle":
            if d != 2:
                raise ConfigError("geometry: unsupported geometry: rectangle mode requires d=2")
            lengths = g.get("lengths", [math.pi, math.pi])
            faces = g.get("dirichlet_faces", ["x0", "x1"])
            geom = Geometry.rectangle(tuple(float(x) for x in lengths), tuple(faces))
        else:
            raise ConfigError(f"geometry.mode: unsupported geometry {mode!r}")
    except (UnsupportedGeometryError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"geometry: {exc}") from exc

    p = doc.get("params", {})
    v = p.get("viscosity", {})
    try:
        visc = Viscosity(_num(v, "nu0", 1.0, "params.viscosity"), _num(v, "nu1", 0.0, "params.viscosity"))
        params = ModelParams(**{k: _num(p, k, dflt, "params") for k, dflt in
                                (("xi", 0.0), ("gamma", 1.0), ("lam", 1.0), ("a", 1.0), ("b", 1.0), ("c", 1.0))},
                             viscosity=visc)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"params: {exc}") from exc

    m = doc.get("modes", {})
    cfg = SimConfig(
        geometry=geom,
        params=params,
        n_q=_num(m, "n_q", 64, "modes", int, positive=True),
        n_u=_num(m, "n_u", 32, "modes", int, positive=True),
        cells=_num(m, "cells", 64, "modes", int, positive=True),
        padding=_num(m, "padding", 2.0, "modes", positive=True),
    )
    if cfg.padding < 2.0:
        raise ConfigError("modes.padding: must be >= 2 for exact quadrature")
    if geom.mode == "rectangle" and cfg.cells < 8:
        raise ConfigError("modes.cells: must be >= 8")

    ini = doc.get("initial", {})
    snap = ini.get("snapshot")
    if snap is not None and base_dir is not None and not Path(snap).is_absolute():
        snap = str(base_dir / snap)
    cfg.initial = InitialSpec(
        preset=str(ini.get("preset", "relax")),
        amp_u=_num(ini, "amp_u", 0.5, "initial"),
        amp_q=_num(ini, "amp_q", 0.5, "initial"),
        snapshot=snap,
    )
    from .presets import PRESETS

    if snap is None and cfg.initial.preset not in PRESETS:
        raise ConfigError(f"initial.preset: unknown preset {cfg.initial.preset!r}")

    b = doc.get("boundary", {})
    qd = b.get("q_dirichlet", {})
    for face, data in qd.items():
        if face not in FACES_2D or face not in geom.dirichlet_faces:
            raise ConfigError(f"boundary.q_dirichlet.{face}: not a Dirichlet face")
        if isinstance(data, dict):
            cfg.q_dirichlet[face] = {int(k): _matrix(M, f"boundary.q_dirichlet.{face}.{k}") for k, M in data.items()}
        else:
            cfg.q_dirichlet[face] = _matrix(data, f"boundary.q_dirichlet.{face}")
    qn = b.get("q_neumann", {})
    if qn is not False:
        for face, data in dict(qn or {}).items():
            if face not in geom.neumann_faces:
                raise ConfigError(f"boundary.q_neumann.{face}: not a Neumann face")
            M = _matrix(data, f"boundary.q_neumann.{face}")
            if np.any(M != 0):
                raise ConfigError(f"boundary.q_neumann.{face}: only homogeneous Neumann data is supported")
            cfg.q_neumann[face] = M

    it = doc.get("integrator", {})
    kind = it.get("kind", "implicit_midpoint")
    if kind not in ("implicit_midpoint", "rk45"):
        raise ConfigError(f"integrator.kind: unknown integrator {kind!r}")
    cfg.integrator = IntegratorSpec(kind, _num(it, "dt", 0.01, "integrator", positive=True),
                                    _num(it, "tol", None, "integrator", positive=True))
    cfg.t_end = _num(doc, "t_end", 1.0, "", positive=False)
    if cfg.t_end < 0:
        raise ConfigError("t_end: must be >= 0")
    cfg.seed = _num(doc, "seed", 0, "", int)

    out = doc.get("output", {})
    cfg.out_dir = str(out.get("dir", "out"))
    cfg.snapshot_stride = _num(out, "snapshot_stride", 0, "output", int)
    if cfg.snapshot_stride < 0:
        raise ConfigError("output.snapshot_stride: must be >= 0")

    lin = doc.get("linearize", {})
    cfg.linearize = LinearizeSpec(
        _num(lin, "T", 0.05, "linearize", positive=True),
        _num(lin, "n_steps", 32, "linearize", int, positive=True),
        _num(lin, "tol", 1e-10, "linearize", positive=True),
        _num(lin, "max_iter", 60, "linearize", int, positive=True),
    )
    con = doc.get("contraction", {})
    Ts = con.get("T", [0.4, 0.2, 0.1, 0.05])
    if not isinstance(Ts, list) or not Ts or not all(isinstance(t, (int, float)) and t > 0 for t in Ts):
        raise ConfigError("contraction.T: expected a non-empty list of positive times")
    cfg.contraction = ContractionSpec(
        [float(t) for t in Ts],
        _num(con, "R", 1.0, "contraction", positive=True),
        _num(con, "n_pairs", 8, "contraction", int, positive=True),
        _num(con, "n_steps", 32, "contraction", int, positive=True),
    )
    return cfg


def load_config(path) -> SimConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from exc
    return parse_config(doc, path.parent)
