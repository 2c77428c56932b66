"""Energy logs (CSV) and coefficient snapshots (text header + binary payload).

Snapshot layout::

    NEMATIC-GALERKIN-SNAPSHOT 1
    geometry: <json>
    basis: <json>
    params: <json>
    t: <float repr>
    n_u: <int>
    n_q: <int>
    payload: float64 little-endian, velocity coefficients then tensor coefficients
    END
    <(n_u + n_q) * 8 bytes>

JSON is written with sorted keys so identical inputs give identical bytes.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .galerkin_sim import EnergyReport, SimState

MAGIC = "NEMATIC-GALERKIN-SNAPSHOT 1"
ENERGY_HEADER = EnergyReport.FIELDS


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def _dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))


def write_energy_log(reports, path) -> None:
    """CSV with one row per report; floats use ``repr`` so they round-trip."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(ENERGY_HEADER) + "\n")
        for r in reports:
            fh.write(",".join(repr(float(x)) for x in r.row()) + "\n")


def read_energy_log(path) -> dict[str, np.ndarray]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if tuple(header) != ENERGY_HEADER:
        raise ValueError(f"unexpected energy log header {header}")
    data = np.array([[float(x) for x in row] for row in body]).reshape(-1, len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


def params_metadata(params) -> dict:
    return asdict(params)


def write_snapshot(path, state: SimState, space=None, params=None) -> None:
    d = np.ascontiguousarray(state.d, dtype="<f8")
    h = np.ascontiguousarray(state.h, dtype="<f8")
    lines = [
        MAGIC,
        "geometry: " + _dumps(space.geometry.metadata() if space is not None else {}),
        "basis: " + _dumps(space.metadata() if space is not None else {}),
        "params: " + _dumps(params_metadata(params) if params is not None else {}),
        f"t: {float(state.t)!r}",
        f"n_u: {len(d)}",
        f"n_q: {len(h)}",
        "payload: float64 little-endian, velocity coefficients then tensor coefficients",
        "END",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        fh.write(d.tobytes())
        fh.write(h.tobytes())


def read_snapshot(path) -> tuple[SimState, dict]:
    raw = Path(path).read_bytes()
    marker = b"\nEND\n"
    k = raw.find(marker)
    if not raw.startswith(MAGIC.encode()) or k < 0:
        raise ValueError(f"{path}: not a snapshot file")
    header = {}
    for line in raw[:k].decode("utf-8").splitlines()[1:]:
        key, _, val = line.partition(": ")
        header[key] = val
    for key in ("geometry", "basis", "params"):
        header[key] = json.loads(header[key])
    n_u, n_q = int(header["n_u"]), int(header["n_q"])
    payload = raw[k + len(marker):]
    if len(payload) != 8 * (n_u + n_q):
        raise ValueError(f"{path}: payload has {len(payload)} bytes, expected {8 * (n_u + n_q)}")
    arr = np.frombuffer(payload, dtype="<f8").astype(float)
    t = float(header["t"])
    return SimState(t, arr[:n_u].copy(), arr[n_u:].copy()), header
