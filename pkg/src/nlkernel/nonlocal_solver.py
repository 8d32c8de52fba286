"""Explicit central-difference solver for ``u_tt = L_K[u] + f`` on a uniform grid.

The grid covers ``[-b - delta, b + delta]``. Points in the two collars of
width ``delta`` (``x <= -b`` and ``x >= b``) carry prescribed nonlocal
boundary data; the remaining points are updated by the recursion.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from nlkernel.fields import FieldSeries
from nlkernel.kernel import KernelModel, OperatorStencil, apply_interior, omega_squared, stencil, stencil_radius


class SimulationError(FloatingPointError):
    """Non-finite values appeared during time stepping."""


class StabilityWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class UniformGrid:
    """Interior ``(-b, b)`` with spacing ``h`` plus collars of ``J = delta/h`` cells."""

    b: float
    h: float
    delta: float

    def __post_init__(self):
        ratio = 2 * self.b / self.h
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 2:
            raise ValueError(f"2b/h = {ratio:.12g} must be an integer >= 2")
        stencil_radius(self.delta, self.h)

    @property
    def J(self) -> int:
        return stencil_radius(self.delta, self.h)

    @property
    def n_points(self) -> int:
        return round(2 * self.b / self.h) + 2 * self.J + 1

    @property
    def x(self) -> np.ndarray:
        n = self.n_points
        return (np.arange(n) - (n - 1) / 2) * self.h

    @property
    def interior(self) -> slice:
        return slice(self.J + 1, self.n_points - self.J - 1)

    @property
    def layer_index(self) -> np.ndarray:
        n, J = self.n_points, self.J
        return np.concatenate((np.arange(J + 1), np.arange(n - J - 1, n)))

    @property
    def x_interior(self) -> np.ndarray:
        return self.x[self.interior]

    @property
    def x_layer(self) -> np.ndarray:
        return self.x[self.layer_index]


class BoundarySource:
    """Prescribed values on the collar points."""

    def values(self, n: int, t: float, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class ZeroSource(BoundarySource):
    def values(self, n, t, x):
        return np.zeros(x.shape)


class FunctionSource(BoundarySource):
    def __init__(self, fn: Callable[[np.ndarray, float], np.ndarray]):
        self.fn = fn

    def values(self, n, t, x):
        return np.asarray(self.fn(x, t), dtype=float) * np.ones(x.shape)


class SeriesSource(BoundarySource):
    """Collar data read row by row from a field series sampled at every solver step.

    The series must contain the collar points (matched to ``1e-9``) and
    rows at ``t = n dt``.
    """

    def __init__(self, series: FieldSeries, x_layer: np.ndarray, tol: float = 1e-9):
        idx = np.searchsorted(series.x, x_layer - tol)
        idx = np.clip(idx, 0, series.x.size - 1)
        if np.any(np.abs(series.x[idx] - x_layer) > tol):
            bad = x_layer[np.abs(series.x[idx] - x_layer) > tol]
            raise ValueError(f"boundary series does not cover collar points, e.g. x={bad[0]:g}")
        self.rows = series.u[:, idx]
        self.t = series.t

    def values(self, n, t, x):
        if n >= self.rows.shape[0]:
            raise IndexError(f"boundary series ends at t={self.t[-1]:g}, step {n} requested")
        if abs(self.t[n] - t) > 1e-9 * max(1.0, t):
            raise ValueError(f"boundary series row {n} is at t={self.t[n]:g}, expected {t:g}")
        return self.rows[n]


@dataclass
class SimState:
    u_prev: np.ndarray
    u_curr: np.ndarray
    n: int
    dt: float

    @property
    def t(self) -> float:
        return self.n * self.dt


def _operator(st: OperatorStencil, u: np.ndarray) -> np.ndarray:
    """Operator at interior points of a full grid array (collars excluded)."""
    return apply_interior(st.half, u)[..., 1:-1]


def bootstrap(u0: np.ndarray, v0: np.ndarray, f0: np.ndarray | None, st: OperatorStencil, dt: float) -> np.ndarray:
    """Second-order Taylor start ``u1 = u0 + dt v0 + dt^2/2 (L u0 + f0)``.

    ``u0`` and ``v0`` cover the full grid; ``f0`` the interior points only.
    The collar entries of the result are ``u0 + dt v0`` and are expected to
    be overwritten by the boundary source.
    """
    u1 = u0 + dt * v0
    acc = _operator(st, u0)
    if f0 is not None:
        acc = acc + f0
    J = st.J
    u1[J + 1 : u0.size - J - 1] += 0.5 * dt**2 * acc
    return u1


def step(
    state: SimState,
    grid: UniformGrid,
    st: OperatorStencil,
    forcing: Callable[[np.ndarray, float], np.ndarray] | None = None,
    source: BoundarySource | None = None,
    check: bool = True,
) -> SimState:
    """One step of ``u^{n+1} = 2u^n - u^{n-1} + dt^2 (L u^n + f^n)`` then collar refill."""
    dt = state.dt
    u, up = state.u_curr, state.u_prev
    acc = _operator(st, u)
    if forcing is not None:
        acc = acc + forcing(grid.x_interior, state.n * dt)
    new = np.empty_like(u)
    inner = grid.interior
    new[inner] = 2.0 * u[inner] - up[inner] + dt**2 * acc
    src = source or ZeroSource()
    new[grid.layer_index] = src.values(state.n + 1, (state.n + 1) * dt, grid.x_layer)
    if check and not np.isfinite(new).all():
        raise SimulationError(f"non-finite nonlocal state at step {state.n + 1}")
    return SimState(u, new, state.n + 1, dt)


def max_frequency(st: OperatorStencil, rho: float = 1.0, n_k: int = 2000) -> float:
    k = np.linspace(0.0, math.pi / st.h, n_k + 1)
    return float(np.sqrt(np.clip(omega_squared(st, k, rho), 0.0, None)).max())


def check_stability(st: OperatorStencil, dt: float, rho: float = 1.0) -> float:
    """Warn when ``dt * omega_max > 2``; returns ``dt * omega_max``."""
    val = dt * max_frequency(st, rho)
    if val > 2.0:
        warnings.warn(f"dt*omega_max = {val:.3g} exceeds 2; central differencing is unstable", StabilityWarning)
    return val


def _full(grid: UniformGrid, f) -> np.ndarray:
    if f is None:
        return np.zeros(grid.n_points)
    if callable(f):
        return np.asarray(f(grid.x), dtype=float) * np.ones(grid.n_points)
    return np.array(f, dtype=float)


def start(
    grid: UniformGrid,
    st: OperatorStencil,
    dt: float,
    u0=None,
    v0=None,
    forcing=None,
    source: BoundarySource | None = None,
) -> SimState:
    """State holding ``u^0`` and ``u^1`` with collars taken from ``source``."""
    src = source or ZeroSource()
    u0 = _full(grid, u0)
    v0 = _full(grid, v0)
    u0[grid.layer_index] = src.values(0, 0.0, grid.x_layer)
    f0 = forcing(grid.x_interior, 0.0) if forcing is not None else None
    u1 = bootstrap(u0, v0, f0, st, dt)
    u1[grid.layer_index] = src.values(1, dt, grid.x_layer)
    return SimState(u0, u1, 1, dt)


def march(state, grid, st, n_steps, forcing=None, source=None, check_every=256) -> Iterator[SimState]:
    for i in range(n_steps):
        state = step(state, grid, st, forcing, source, check=(i + 1) % check_every == 0 or i + 1 == n_steps)
        yield state


def run(
    grid: UniformGrid,
    kernel: KernelModel | OperatorStencil,
    T: float,
    dt: float,
    u0=None,
    v0=None,
    forcing=None,
    source: BoundarySource | None = None,
    every: int = 1,
    snapshot_times=None,
) -> FieldSeries:
    """Integrate to ``T`` and return ``u`` with centred-difference velocities.

    By default every ``every``-th step is stored; with ``snapshot_times``
    only those instants. Velocities always use the two neighbouring solver
    steps (one-sided at ``t = 0`` and ``t = T``).
    """
    st = stencil(kernel, grid.h) if isinstance(kernel, KernelModel) else kernel
    rho = kernel.rho if isinstance(kernel, KernelModel) else 1.0
    check_stability(st, dt, rho)
    n_total = round(T / dt)
    if n_total < 1 or abs(n_total * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} must be a positive integer multiple of dt={dt}")
    state = start(grid, st, dt, u0, v0, forcing, source)

    if snapshot_times is None:
        targets = list(range(0, n_total + 1, every))
    else:
        targets = sorted({round(t / dt) for t in snapshot_times})
        if targets[0] < 0 or targets[-1] > n_total:
            raise ValueError("snapshot times must lie in [0, T]")
    keep = {m for n in targets for m in (n - 1, n, n + 1) if 0 <= m <= n_total}
    store = {}
    if 0 in keep:
        store[0] = state.u_prev.copy()
    if 1 in keep:
        store[1] = state.u_curr.copy()
    for s in march(state, grid, st, n_total - 1, forcing, source):
        if s.n in keep:
            store[s.n] = s.u_curr.copy()

    rows, vel = [], []
    for n in targets:
        rows.append(store[n])
        lo, hi = max(n - 1, 0), min(n + 1, n_total)
        vel.append((store[hi] - store[lo]) / ((hi - lo) * dt))
    meta = {"b": f"{grid.b:.17g}", "dt": f"{dt * (every if snapshot_times is None else 1):.17g}", "grid": "uniform", "h": f"{grid.h:.17g}"}
    return FieldSeries(t=np.array(targets) * dt, x=grid.x, u=np.array(rows), v=np.array(vel), meta=meta)


def velocity(series: FieldSeries) -> FieldSeries:
    """``v^n = (u^{n+1} - u^{n-1}) / (2 dt)``, one-sided at the first and last snapshot."""
    u = series.u
    if u.shape[0] < 3:
        raise ValueError("velocity needs at least three snapshots")
    t = series.t
    v = np.empty_like(u)
    v[1:-1] = (u[2:] - u[:-2]) / (t[2:] - t[:-2])[:, None]
    v[0] = (u[1] - u[0]) / (t[1] - t[0])
    v[-1] = (u[-1] - u[-2]) / (t[-1] - t[-2])
    return FieldSeries(t=t, x=series.x, u=v, meta=dict(series.meta))
