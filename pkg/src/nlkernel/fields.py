"""Time-indexed displacement/velocity fields and their CSV form."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# quadrature rule identifier written into every output header
QUADRATURE_RULE = "riemann-full-endpoint"


@dataclass
class FieldSeries:
    """Fields ``u[n, i]`` (and optionally ``v[n, i]``) at times ``t[n]`` and points ``x[i]``.

    ``meta`` carries string-valued header entries (``b``, ``dt``, ``grid``, ``h``, ...).
    """

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    v: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        if self.u.shape != (self.t.size, self.x.size):
            raise ValueError(f"u has shape {self.u.shape}, expected {(self.t.size, self.x.size)}")
        if self.v is not None:
            self.v = np.asarray(self.v, dtype=float)
            if self.v.shape != self.u.shape:
                raise ValueError("v and u shapes differ")

    @property
    def dt(self) -> float:
        if self.t.size < 2:
            raise ValueError("need at least two snapshots to define dt")
        return float(self.t[1] - self.t[0])

    def snapshot(self, time: float, tol: float = 1e-9) -> int:
        """Index of the stored snapshot at ``time``."""
        idx = int(np.argmin(np.abs(self.t - time)))
        if abs(self.t[idx] - time) > tol * max(1.0, abs(time)):
            raise KeyError(f"no snapshot at t={time}")
        return idx


def config_hash(config: dict) -> str:
    """Short stable hash of a flat configuration mapping."""
    blob = json.dumps({k: str(v) for k, v in sorted(config.items())}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _fmt(a) -> np.ndarray:
    return np.char.mod("%.17g", np.asarray(a, dtype=float))


def write_header(fh, meta: dict):
    for key, val in meta.items():
        fh.write(f"# {key}={val}\n")


def write_field_csv(path, series: FieldSeries, meta: dict | None = None):
    """Long-format CSV: ``# key=value`` header lines then rows ``t,x,u,v``."""
    header = dict(series.meta)
    if meta:
        header.update(meta)
    header.setdefault("quadrature", QUADRATURE_RULE)
    nt, nx = series.u.shape
    tt = np.repeat(series.t, nx)
    xx = np.tile(series.x, nt)
    v = series.v if series.v is not None else np.full_like(series.u, np.nan)
    cols = [_fmt(tt), _fmt(xx), _fmt(series.u.ravel()), _fmt(v.ravel())]
    with open(path, "w") as fh:
        write_header(fh, header)
        fh.write("t,x,u,v\n")
        rows = cols[0]
        for c in cols[1:]:
            rows = np.char.add(np.char.add(rows, ","), c)
        fh.write("\n".join(rows.tolist()))
        fh.write("\n")


def read_header(path) -> tuple[dict, int]:
    """Parse ``# key=value`` lines; returns the mapping and the number of comment lines."""
    meta, n = {}, 0
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            n += 1
            body = line[1:].strip()
            if "=" in body:
                key, val = body.split("=", 1)
                meta[key.strip()] = val.strip()
    return meta, n


def read_field_csv(path) -> FieldSeries:
    meta, nskip = read_header(path)
    data = np.loadtxt(path, delimiter=",", skiprows=nskip + 1, ndmin=2)
    t = np.unique(data[:, 0])
    nt = t.size
    nx = data.shape[0] // nt
    x = data[:nx, 1]
    u = data[:, 2].reshape(nt, nx)
    v = data[:, 3].reshape(nt, nx)
    if np.all(np.isnan(v)):
        v = None
    return FieldSeries(t=t, x=x, u=u, v=v, meta=meta)


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
