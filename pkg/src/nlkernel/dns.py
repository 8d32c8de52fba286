"""Wave-diagram solver for 1D elastodynamics in the layered bar.

Nodes are placed so that a wave needs exactly one time step ``dt`` to cross
any segment. Each node then meets one right-running characteristic from its
left neighbour and one left-running characteristic from its right neighbour,
and the jump conditions ``[sigma] = -+ Z [v]`` fix the new velocity and
stress without any truncation error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Union

import numpy as np

from nlkernel.fields import FieldSeries
from nlkernel.material import Microstructure, effective_speed

Forcing = Callable[[np.ndarray, float], np.ndarray]
Drive = Union[str, Callable[[float], float]]


class CommensurabilityError(ValueError):
    """Layer lengths are not integer multiples of ``c * dt``."""


class SimulationError(FloatingPointError):
    """Non-finite values appeared during time stepping."""


@dataclass(frozen=True)
class DnsGrid:
    """Non-uniform node set with unit travel time per segment.

    ``segment_*`` arrays have one entry per segment ``[x[g], x[g+1]]``.
    """

    node_positions: np.ndarray
    segment_impedance: np.ndarray
    segment_speed: np.ndarray
    segment_density: np.ndarray
    dt: float

    @property
    def x(self) -> np.ndarray:
        return self.node_positions

    @property
    def n_nodes(self) -> int:
        return self.node_positions.size

    @property
    def segment_length(self) -> np.ndarray:
        return np.diff(self.node_positions)

    @property
    def segment_modulus(self) -> np.ndarray:
        return self.segment_density * self.segment_speed**2

    @property
    def cell_weights(self) -> np.ndarray:
        """Half of each adjacent segment, summed per node."""
        w = np.zeros(self.n_nodes)
        half = 0.5 * self.segment_length
        w[:-1] += half
        w[1:] += half
        return w


def _pieces(ms: Microstructure, x_left: float, x_right: float):
    if ms.is_homogeneous:
        return [(x_left, x_right, ms.material_a)]
    cuts = np.concatenate(([x_left], ms.interfaces(x_left, x_right), [x_right]))
    return [(a, b, ms.material_at(0.5 * (a + b))) for a, b in zip(cuts[:-1], cuts[1:])]


def _suggest_dt(pieces, dt: float) -> float | None:
    taus = sorted({round((b - a) / m.wave_speed, 12) for a, b, m in pieces})
    tau0 = taus[0]
    n0 = max(1, math.ceil(tau0 / dt - 1e-9))
    for n in range(n0, n0 + 100000):
        cand = tau0 / n
        if all(abs(t / cand - round(t / cand)) < 1e-6 for t in taus):
            return cand
    return None


def build_grid(ms: Microstructure, domain: tuple[float, float], dt: float) -> DnsGrid:
    """Place nodes on ``domain`` with spacing ``c * dt`` inside every layer.

    Raises
    ------
    CommensurabilityError
        If some layer piece is not an integer number of ``c * dt`` long.
    """
    x_left, x_right = map(float, domain)
    if not x_right > x_left:
        raise ValueError("domain must have positive length")
    if not dt > 0:
        raise ValueError("dt must be positive")
    pieces = _pieces(ms, x_left, x_right)
    xs, z, c, rho = [np.array([x_left])], [], [], []
    for a, b, m in pieces:
        ratio = (b - a) / (m.wave_speed * dt)
        n = round(ratio)
        if n < 1 or abs(ratio - n) > 1e-6 * max(1.0, ratio):
            hint = _suggest_dt(pieces, dt)
            msg = (
                f"layer piece [{a:g}, {b:g}] with c={m.wave_speed:g} holds {ratio:.6g} "
                f"segments of c*dt; it must be an integer"
            )
            if hint is not None:
                msg += f"; nearest admissible dt not above {dt:g} is {hint:.12g}"
            raise CommensurabilityError(msg)
        xs.append(np.linspace(a, b, n + 1)[1:])
        z.append(np.full(n, m.impedance))
        c.append(np.full(n, m.wave_speed))
        rho.append(np.full(n, m.density))
    return DnsGrid(
        node_positions=np.concatenate(xs),
        segment_impedance=np.concatenate(z),
        segment_speed=np.concatenate(c),
        segment_density=np.concatenate(rho),
        dt=float(dt),
    )


def commensurate_half_width(b: float, ms: Microstructure) -> float:
    """Largest multiple of the period ``2L`` not exceeding ``b``."""
    p = ms.period
    return p * math.floor(b / p + 1e-9)


@dataclass
class DnsState:
    v: np.ndarray
    sigma: np.ndarray
    u: np.ndarray
    step_index: int = 0

    @classmethod
    def zeros(cls, n_nodes: int) -> "DnsState":
        return cls(np.zeros(n_nodes), np.zeros(n_nodes), np.zeros(n_nodes), 0)


@dataclass(frozen=True)
class BoundaryDrive:
    """End conditions. ``left`` may be a velocity history ``g(t)``, ``"free"`` or ``"fixed"``."""

    left: Drive = "free"
    right: str = "free"

    def __post_init__(self):
        if isinstance(self.left, str) and self.left not in ("free", "fixed"):
            raise ValueError(f"unknown left boundary {self.left!r}")
        if self.right not in ("free", "fixed"):
            raise ValueError(f"unknown right boundary {self.right!r}")


def step(
    state: DnsState,
    grid: DnsGrid,
    forcing: Forcing | None = None,
    drive: BoundaryDrive = BoundaryDrive(),
    check: bool = True,
) -> DnsState:
    """Advance one ``dt`` along the characteristics."""
    z = grid.segment_impedance
    v, s = state.v, state.sigma
    n = state.step_index
    dt = grid.dt

    v_new = np.empty_like(v)
    s_new = np.empty_like(s)
    zl, zr = z[:-1], z[1:]
    right_inv = s[:-2] - zl * v[:-2]  # sigma - Z v along dx/dt = +c
    left_inv = s[2:] + zr * v[2:]  # sigma + Z v along dx/dt = -c
    zsum = zl + zr
    v_new[1:-1] = (left_inv - right_inv) / zsum
    s_new[1:-1] = (zr * right_inv + zl * left_inv) / zsum

    z0 = z[0]
    li = s[1] + z0 * v[1]
    if callable(drive.left):
        v_new[0] = drive.left((n + 1) * dt)
        s_new[0] = li - z0 * v_new[0]
    elif drive.left == "free":
        v_new[0] = li / z0
        s_new[0] = 0.0
    else:
        v_new[0] = 0.0
        s_new[0] = li

    zn = z[-1]
    ri = s[-2] - zn * v[-2]
    if drive.right == "free":
        v_new[-1] = -ri / zn
        s_new[-1] = 0.0
    else:
        v_new[-1] = 0.0
        s_new[-1] = ri

    if forcing is not None:
        acc = np.asarray(forcing(grid.node_positions, n * dt), dtype=float) * dt
        if callable(drive.left) or drive.left == "fixed":
            acc[0] = 0.0
        if drive.right == "fixed":
            acc[-1] = 0.0
        v_new += acc

    u_new = state.u + dt * v_new
    if check and not (np.isfinite(v_new).all() and np.isfinite(s_new).all()):
        raise SimulationError(f"non-finite DNS state at step {n + 1}")
    return DnsState(v_new, s_new, u_new, n + 1)


def march(
    grid: DnsGrid,
    state: DnsState,
    n_steps: int,
    forcing: Forcing | None = None,
    drive: BoundaryDrive = BoundaryDrive(),
    check_every: int = 256,
) -> Iterator[DnsState]:
    """Yield the state after each of ``n_steps`` steps."""
    for i in range(n_steps):
        state = step(state, grid, forcing, drive, check=(i + 1) % check_every == 0 or i + 1 == n_steps)
        yield state


def n_steps_for(T: float, dt: float) -> int:
    n = round(T / dt)
    if abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not an integer multiple of dt={dt}")
    return n


class _Interp:
    """Linear interpolation from sorted nodes onto fixed targets."""

    def __init__(self, x_src: np.ndarray, x_dst: np.ndarray, tol: float = 1e-9):
        x_dst = np.asarray(x_dst, dtype=float)
        lo_b, hi_b = x_src[0], x_src[-1]
        if x_dst.size and (x_dst.min() < lo_b - tol or x_dst.max() > hi_b + tol):
            raise ValueError(
                f"target points [{x_dst.min():g}, {x_dst.max():g}] extend beyond "
                f"source [{lo_b:g}, {hi_b:g}]"
            )
        xd = np.clip(x_dst, lo_b, hi_b)
        hi = np.clip(np.searchsorted(x_src, xd, side="left"), 1, x_src.size - 1)
        lo = hi - 1
        w = (xd - x_src[lo]) / (x_src[hi] - x_src[lo])
        # exact hits reuse the node value without rounding
        exact_hi = xd == x_src[hi]
        w[exact_hi] = 1.0
        exact_lo = xd == x_src[lo]
        w[exact_lo] = 0.0
        self.lo, self.hi, self.w = lo, hi, w

    def __call__(self, a: np.ndarray) -> np.ndarray:
        return (1.0 - self.w) * a[..., self.lo] + self.w * a[..., self.hi]


def initial_state(grid: DnsGrid, u0=None, v0=None, sigma0=None) -> DnsState:
    """State at ``t = 0``; each argument is ``None``, an array, or a function of ``x``."""

    def _field(f):
        if f is None:
            return np.zeros(grid.n_nodes)
        if callable(f):
            return np.asarray(f(grid.node_positions), dtype=float).copy()
        return np.asarray(f, dtype=float).copy()

    return DnsState(_field(v0), _field(sigma0), _field(u0), 0)


def run(
    grid: DnsGrid,
    T: float,
    drive: BoundaryDrive = BoundaryDrive(),
    forcing: Forcing | None = None,
    u0=None,
    v0=None,
    sigma0=None,
    every: int = 1,
    x_out: np.ndarray | None = None,
) -> FieldSeries:
    """Full ``(u, v)`` history every ``every`` steps up to ``T``.

    Initial stress defaults to zero. With ``x_out`` the fields are linearly
    interpolated onto those points instead of being stored on every node.
    """
    n_total = n_steps_for(T, grid.dt)
    state = initial_state(grid, u0, v0, sigma0)
    interp = _Interp(grid.node_positions, x_out) if x_out is not None else None
    pick = (lambda a: interp(a)) if interp is not None else (lambda a: a.copy())
    ts, us, vs = [0.0], [pick(state.u)], [pick(state.v)]
    for st in march(grid, state, n_total, forcing, drive):
        if st.step_index % every == 0:
            ts.append(st.step_index * grid.dt)
            us.append(pick(st.u))
            vs.append(pick(st.v))
    x = grid.node_positions if x_out is None else np.asarray(x_out, dtype=float)
    meta = {
        "b": f"{0.5 * (grid.node_positions[-1] - grid.node_positions[0]):.17g}",
        "dt": f"{grid.dt * every:.17g}",
        "grid": "nonuniform" if x_out is None else "uniform",
    }
    if x_out is not None and x.size > 1:
        meta["h"] = f"{x[1] - x[0]:.17g}"
    return FieldSeries(t=np.array(ts), x=x, u=np.array(us), v=np.array(vs), meta=meta)


def resample(series: FieldSeries, x_target: np.ndarray, target_dt: float) -> FieldSeries:
    """Linear interpolation in space, exact subsampling in time.

    Raises ``ValueError`` if ``target_dt`` is not an integer multiple of the
    stored step or if any target point lies outside the stored points.
    """
    dt = series.dt
    ratio = target_dt / dt
    stride = round(ratio)
    if stride < 1 or abs(ratio - stride) > 1e-9 * max(1.0, ratio):
        raise ValueError(f"target_dt={target_dt} is not an integer multiple of dt={dt}")
    interp = _Interp(series.x, x_target)
    rows = slice(0, None, stride)
    u = interp(series.u[rows])
    v = interp(series.v[rows]) if series.v is not None else None
    x_target = np.asarray(x_target, dtype=float)
    meta = dict(series.meta)
    meta.update(grid="uniform", dt=f"{target_dt:.17g}")
    if x_target.size > 1:
        meta["h"] = f"{x_target[1] - x_target[0]:.17g}"
    return FieldSeries(t=series.t[rows], x=x_target, u=u, v=v, meta=meta)


def energy(state: DnsState, grid: DnsGrid) -> float:
    """Kinetic plus strain energy, each segment split evenly between its end nodes."""
    return float(np.sum(energy_density(state, grid)))


def energy_density(state: DnsState, grid: DnsGrid) -> np.ndarray:
    """Energy attributed to each node (half-segment rule)."""
    rho = grid.segment_density
    e_mod = grid.segment_modulus
    half = 0.5 * grid.segment_length
    v, s = state.v, state.sigma
    left = half * (0.5 * rho * v[:-1] ** 2 + s[:-1] ** 2 / (2 * e_mod))
    right = half * (0.5 * rho * v[1:] ** 2 + s[1:] ** 2 / (2 * e_mod))
    out = np.zeros(grid.n_nodes)
    out[:-1] += left
    out[1:] += right
    return out


@dataclass
class PacketMeasurement:
    """Outcome of one wave-packet group-velocity measurement."""

    omega: float
    vg: float
    omega_rms: float
    ok: bool
    reason: str = ""
    energy_ratio: float = math.nan
    times: np.ndarray = field(default_factory=lambda: np.empty(0))
    centroids: np.ndarray = field(default_factory=lambda: np.empty(0))


def packet_group_velocity(
    ms: Microstructure,
    omega: float,
    dt: float = 0.01,
    cycles: float = 3.0,
    travel_time: float = 200.0,
    n_probes: int = 101,
    min_energy_ratio: float = 0.05,
) -> PacketMeasurement:
    """Group velocity at ``omega`` from the energy centroid of a DNS wave packet.

    The left end is driven with ``sin(omega t) exp(-((t - tc)/tau)^2)`` where
    ``tau = cycles * pi / omega``. After the drive has decayed the centroid of
    the energy density is sampled ``n_probes`` times over ``travel_time`` and
    its speed is the least-squares slope.
    """
    if not omega > 0:
        raise ValueError("omega must be positive")
    c0 = effective_speed(ms) if not ms.is_homogeneous else ms.material_a.wave_speed
    tau = cycles * math.pi / omega
    tc = 3.5 * tau
    t_on = 2 * tc
    t1 = dt * math.ceil(t_on / dt)
    t2 = t1 + dt * round(travel_time / dt)
    length = c0 * t2 + 8.0 * c0 * tau
    x_right = ms.period * math.ceil(length / ms.period)
    grid = build_grid(ms, (0.0, x_right), dt)

    def g(t):
        return math.sin(omega * t) * math.exp(-(((t - tc) / tau) ** 2))

    drive = BoundaryDrive(left=g, right="free")
    n1, n2 = round(t1 / dt), round(t2 / dt)
    probe_steps = set(np.linspace(n1, n2, n_probes).round().astype(int).tolist())
    times, cents, energies = [], [], []
    x = grid.node_positions
    for st in march(grid, DnsState.zeros(grid.n_nodes), n2, drive=drive):
        if st.step_index in probe_steps:
            e = energy_density(st, grid)
            tot = e.sum()
            times.append(st.step_index * dt)
            energies.append(tot)
            cents.append(np.dot(x, e) / tot if tot > 0 else math.nan)
    times, cents = np.array(times), np.array(cents)
    omega_rms = math.sqrt(omega**2 + 1.0 / tau**2)
    z_in = grid.segment_impedance[0]
    injected = z_in * math.sqrt(math.pi / 2) * tau / 2  # Z * integral of g^2 for a slowly varying envelope
    ratio = energies[0] / injected if injected > 0 else math.nan
    if not np.all(np.isfinite(cents)) or ratio < min_energy_ratio:
        return PacketMeasurement(omega, 0.0, omega_rms, False, "packet energy did not enter the bar", ratio, times, cents)
    vg = float(np.polyfit(times, cents, 1)[0])
    if vg <= 0:
        return PacketMeasurement(omega, vg, omega_rms, False, "centroid not advancing", ratio, times, cents)
    return PacketMeasurement(omega, vg, omega_rms, True, "", ratio, times, cents)
