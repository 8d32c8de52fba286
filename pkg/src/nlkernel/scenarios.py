"""Loading scenarios, normalized training samples, and validation runs."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from nlkernel import dns
from nlkernel import nonlocal_solver as nls
from nlkernel.fields import FieldSeries, ensure_dir, read_field_csv, read_header, write_field_csv, write_header
from nlkernel.kernel import KernelModel
from nlkernel.material import Microstructure, reference_microstructure

SOURCE_INDICES = tuple(range(1, 21))
PLANE_WAVE_FREQUENCIES = tuple(round(0.35 * i, 2) for i in range(1, 12))
PACKET_FREQUENCIES = (2.0, 3.9, 5.0)
SOURCE_T0 = 0.8
SOURCE_TP = 0.8
IMPACT_WIDTH = 1.6


@dataclass(frozen=True)
class Scenario:
    """One loading case on the symmetric domain ``(-b, b)``.

    ``forcing(x, t)`` is a body acceleration, ``drive(t)`` a prescribed
    velocity at ``x = -b`` and ``v0(x)`` an initial velocity; unused ones
    are ``None``.
    """

    kind: str
    param: float | None
    b: float
    T: float
    forcing: Callable[[np.ndarray, float], np.ndarray] | None = field(default=None, compare=False)
    drive: Callable[[float], float] | None = field(default=None, compare=False)
    v0: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)

    @property
    def label(self) -> str:
        return self.kind if self.param is None else f"{self.kind}:{self.param:g}"

    def boundary_drive(self) -> dns.BoundaryDrive:
        return dns.BoundaryDrive(left=self.drive if self.drive is not None else "free", right="free")


def _warn_outside(name, value, allowed):
    if not any(math.isclose(value, a, rel_tol=1e-9) for a in allowed):
        warnings.warn(f"{name}={value} is outside the reference set {allowed}", stacklevel=3)


def oscillating_source(k: int, L: float = 0.2, b: float = 50.0, T: float = 2.0) -> Scenario:
    """Localized oscillating body force switched on around ``t = 0.8``."""
    if int(k) != k or k < 1:
        raise ValueError("source index k must be a positive integer")
    _warn_outside("k", k, SOURCE_INDICES)
    kl = k * L

    def forcing(x, t):
        x = np.asarray(x, dtype=float)
        return (
            np.exp(-((2.0 * x / (5.0 * kl)) ** 2))
            * math.exp(-(((t - SOURCE_T0) / SOURCE_TP) ** 2))
            * np.cos(2.0 * math.pi * x / kl) ** 2
        )

    return Scenario("oscillating_source", float(k), b, T, forcing=forcing)


def plane_wave(omega: float, b: float = 50.0, T: float = 2.0) -> Scenario:
    """``v(-b, t) = sin(omega t)``."""
    if not omega > 0:
        raise ValueError("omega must be positive")
    _warn_outside("omega", omega, PLANE_WAVE_FREQUENCIES)

    def drive(t):
        return math.sin(omega * t)

    return Scenario("plane_wave", float(omega), b, T, drive=drive)


def packet_envelope(t: float) -> float:
    return math.exp(-((t / 5.0 - 3.0) ** 2))


def wave_packet(omega: float, b: float = 133.3, T: float = 320.0) -> Scenario:
    """``v(-b, t) = sin(omega t) exp(-(t/5 - 3)^2)``; envelope peaks at ``t = 15``."""
    if not omega > 0:
        raise ValueError("omega must be positive")
    _warn_outside("omega", omega, PACKET_FREQUENCIES)

    def drive(t):
        return math.sin(omega * t) * packet_envelope(t)

    return Scenario("wave_packet", float(omega), b, T, drive=drive)


def impact(b: float = 266.6, T: float = 600.0, width: float = IMPACT_WIDTH) -> Scenario:
    """Unit initial velocity on ``[-b, -b + width]``, free left end."""

    def v0(x):
        x = np.asarray(x, dtype=float)
        return np.where(x <= -b + width + 1e-12, 1.0, 0.0)

    return Scenario("impact", None, b, T, v0=v0)


def training_scenarios() -> list[Scenario]:
    """The 20 oscillating sources followed by the 11 plane waves."""
    return [oscillating_source(k) for k in SOURCE_INDICES] + [plane_wave(w) for w in PLANE_WAVE_FREQUENCIES]


def parse_scenario(text: str) -> Scenario:
    """``kind[:param]``, e.g. ``wave_packet:3.9`` or ``impact``."""
    kind, _, param = text.partition(":")
    builders = {
        "oscillating_source": lambda p: oscillating_source(int(float(p))),
        "plane_wave": lambda p: plane_wave(float(p)),
        "wave_packet": lambda p: wave_packet(float(p)),
        "impact": lambda p: impact(),
    }
    if kind not in builders:
        raise ValueError(f"unknown scenario kind {kind!r}; expected one of {sorted(builders)}")
    if kind != "impact" and not param:
        raise ValueError(f"scenario {kind} needs a parameter, e.g. {kind}:2")
    return builders[kind](param)


def scenario_from(kind: str, param, b: float | None = None, T: float | None = None) -> Scenario:
    text = kind if param in (None, "", "none") else f"{kind}:{param}"
    sc = parse_scenario(text)
    return replace(sc, b=b if b is not None else sc.b, T=T if T is not None else sc.T)


@dataclass
class TrainingSample:
    """Normalized reference displacement on the uniform grid spanning ``[-b, b]``.

    ``u`` and ``forcing`` have shape ``(n_steps + 1, n_points)``; both are
    divided by ``norm_constant``. ``boundary`` is ``"zero"`` or ``"series"``
    and says whether collar data come from ``u`` itself.
    """

    id: int
    kind: str
    param: float | None
    b: float
    h: float
    dt: float
    T: float
    x: np.ndarray
    t: np.ndarray
    u: np.ndarray
    forcing: np.ndarray
    boundary: str
    norm_constant: float

    def collar_grid(self, delta: float) -> nls.UniformGrid:
        """Nonlocal grid whose collars are the outermost ``delta`` of ``[-b, b]``."""
        grid = nls.UniformGrid(self.b - delta, self.h, delta)
        if grid.n_points != self.x.size:
            raise ValueError("sample grid does not match the requested horizon")
        return grid

    @property
    def n_steps(self) -> int:
        return self.t.size - 1


def l2_norm(u: np.ndarray, h: float, dt: float) -> float:
    """``sqrt(sum u^2 h dt)`` over all stored times and the open interval (endpoints dropped)."""
    inner = u[:, 1:-1]
    return math.sqrt(float(np.sum(inner * inner)) * h * dt)


def normalize(sample: TrainingSample) -> TrainingSample:
    """Divide ``u`` and ``forcing`` by the discrete L2 norm of ``u``.

    Already normalized samples (norm 1 to ``1e-12``) are returned as is.
    """
    c = l2_norm(sample.u, sample.h, sample.dt)
    if c == 0.0:
        raise ValueError(f"sample {sample.id} has a zero reference solution")
    if abs(c - 1.0) < 1e-12:
        return sample
    return replace(sample, u=sample.u / c, forcing=sample.forcing / c, norm_constant=sample.norm_constant * c)


def uniform_points(b: float, h: float) -> np.ndarray:
    n = round(2 * b / h) + 1
    return (np.arange(n) - (n - 1) / 2) * h


def _forcing_table(sc: Scenario, x: np.ndarray, t: np.ndarray) -> np.ndarray:
    if sc.forcing is None:
        return np.zeros((t.size, x.size))
    return np.array([sc.forcing(x, tn) for tn in t])


def make_sample(
    scenario: Scenario,
    ms: Microstructure | None = None,
    h: float = 0.05,
    dt: float = 0.02,
    T_tr: float = 2.0,
    dns_dt: float = 0.01,
    sample_id: int = 0,
) -> TrainingSample:
    """Run the DNS for ``scenario`` and return the normalized sample on the uniform grid."""
    ms = ms or reference_microstructure()
    b = dns.commensurate_half_width(scenario.b, ms)
    grid = dns.build_grid(ms, (-b, b), dns_dt)
    series = dns.run(grid, T_tr, scenario.boundary_drive(), scenario.forcing, v0=scenario.v0)
    x = uniform_points(b, h)
    res = dns.resample(series, x, dt)
    f = _forcing_table(scenario, x, res.t)
    raw = TrainingSample(
        id=sample_id,
        kind=scenario.kind,
        param=scenario.param,
        b=b,
        h=h,
        dt=dt,
        T=T_tr,
        x=x,
        t=res.t,
        u=res.u,
        forcing=f,
        boundary="zero" if scenario.kind == "oscillating_source" else "series",
        norm_constant=1.0,
    )
    return normalize(raw)


def generate_training_set(ms: Microstructure | None = None, scenarios=None, **kw) -> list[TrainingSample]:
    scenarios = training_scenarios() if scenarios is None else scenarios
    return [make_sample(sc, ms, sample_id=i, **kw) for i, sc in enumerate(scenarios)]


MANIFEST_COLUMNS = ["id", "kind", "param", "b", "T_tr", "norm_constant", "file"]


def write_manifest(directory, samples: list[TrainingSample], meta: dict | None = None) -> Path:
    """One field CSV per sample plus ``manifest.csv``."""
    d = ensure_dir(directory)
    meta = dict(meta or {})
    rows = []
    for s in samples:
        name = f"sample_{s.id:03d}.csv"
        series = FieldSeries(t=s.t, x=s.x, u=s.u, meta={"b": f"{s.b:.17g}", "dt": f"{s.dt:.17g}", "grid": "uniform", "h": f"{s.h:.17g}"})
        write_field_csv(d / name, series, meta)
        param = "" if s.param is None else f"{s.param:.17g}"
        rows.append([s.id, s.kind, param, f"{s.b:.17g}", f"{s.T:.17g}", f"{s.norm_constant:.17g}", name])
    path = d / "manifest.csv"
    with open(path, "w", newline="") as fh:
        write_header(fh, meta)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        w.writerows(rows)
    return path


def read_manifest(directory) -> tuple[list[TrainingSample], dict]:
    """Reload samples; forcings are rebuilt from the scenario and rescaled by the stored constant."""
    d = Path(directory)
    path = d / "manifest.csv" if d.is_dir() else d
    d = path.parent
    meta, nskip = read_header(path)
    samples = []
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines()[nskip:] if ln and not ln.startswith("#")]
    for row in csv.DictReader(lines):
        series = read_field_csv(d / row["file"])
        param = float(row["param"]) if row["param"] else None
        sc = scenario_from(row["kind"], param)
        c = float(row["norm_constant"])
        h = float(series.meta["h"])
        dt = float(series.meta["dt"])
        samples.append(
            TrainingSample(
                id=int(row["id"]),
                kind=row["kind"],
                param=param,
                b=float(row["b"]),
                h=h,
                dt=dt,
                T=float(row["T_tr"]),
                x=series.x,
                t=series.t,
                u=series.u,
                forcing=_forcing_table(sc, series.x, series.t) / c,
                boundary="zero" if row["kind"] == "oscillating_source" else "series",
                norm_constant=c,
            )
        )
    return samples, meta


@dataclass
class ValidationResult:
    """Model and DNS fields at the requested snapshot times on the uniform grid."""

    scenario: Scenario
    model: FieldSeries
    reference: FieldSeries
    grid: nls.UniformGrid

    def write_csv(self, path, meta: dict | None = None):
        """Columns ``t,x,u_model,v_model,u_dns,v_dns``."""
        header = {"scenario": self.scenario.label, "b": f"{self.grid.b + self.grid.delta:.17g}", "h": f"{self.grid.h:.17g}"}
        header.update(self.model.meta)
        header.update(meta or {})
        with open(path, "w") as fh:
            write_header(fh, header)
            fh.write("t,x,u_model,v_model,u_dns,v_dns\n")
            for n, t in enumerate(self.model.t):
                for i, x in enumerate(self.model.x):
                    fh.write(
                        f"{t:.17g},{x:.17g},{self.model.u[n, i]:.17g},{self.model.v[n, i]:.17g},"
                        f"{self.reference.u[n, i]:.17g},{self.reference.v[n, i]:.17g}\n"
                    )


def dns_reference(
    scenario: Scenario,
    ms: Microstructure,
    x_out: np.ndarray,
    collar_x: np.ndarray,
    dt: float,
    snapshot_times,
    dns_dt: float = 0.01,
) -> tuple[FieldSeries, FieldSeries]:
    """DNS collar history every ``dt`` and full snapshots at ``snapshot_times``."""
    b = dns.commensurate_half_width(scenario.b, ms)
    grid = dns.build_grid(ms, (-b, b), dns_dt)
    stride = round(dt / dns_dt)
    if abs(stride * dns_dt - dt) > 1e-12:
        raise ValueError("solver dt must be an integer multiple of the DNS step")
    # one solver step past the last snapshot so the model velocity there is centred
    n_total = dns.n_steps_for(max(snapshot_times) + dt, dns_dt)
    snap_steps = {dns.n_steps_for(t, dns_dt): t for t in snapshot_times}
    to_collar = dns._Interp(grid.node_positions, collar_x)
    to_out = dns._Interp(grid.node_positions, x_out)
    state = dns.initial_state(grid, v0=scenario.v0)
    ct, cu = [0.0], [to_collar(state.u)]
    snaps = {}
    if 0 in snap_steps:
        snaps[0] = (to_out(state.u), to_out(state.v))
    for st in dns.march(grid, state, n_total, scenario.forcing, scenario.boundary_drive()):
        if st.step_index % stride == 0:
            ct.append(st.step_index * dns_dt)
            cu.append(to_collar(st.u))
        if st.step_index in snap_steps:
            snaps[st.step_index] = (to_out(st.u), to_out(st.v))
    collar = FieldSeries(t=np.array(ct), x=collar_x, u=np.array(cu))
    keys = sorted(snaps)
    ref = FieldSeries(
        t=np.array(keys) * dns_dt,
        x=x_out,
        u=np.array([snaps[k][0] for k in keys]),
        v=np.array([snaps[k][1] for k in keys]),
        meta={"b": f"{b:.17g}", "dt": f"{dns_dt:.17g}", "grid": "uniform"},
    )
    return collar, ref


def validate(
    kernel: KernelModel,
    scenario: Scenario,
    ms: Microstructure | None = None,
    h: float = 0.05,
    dt: float = 0.02,
    snapshot_times=None,
    dns_dt: float = 0.01,
) -> ValidationResult:
    """Run DNS and the nonlocal model with DNS collar data; compare at ``snapshot_times``."""
    ms = ms or reference_microstructure()
    times = [scenario.T] if snapshot_times is None else list(snapshot_times)
    b = dns.commensurate_half_width(scenario.b, ms)
    grid = nls.UniformGrid(b - kernel.delta, h, kernel.delta)
    collar, ref = dns_reference(scenario, ms, grid.x, grid.x_layer, dt, times, dns_dt)
    model = nls.run(
        grid,
        kernel,
        max(times) + dt,
        dt,
        v0=scenario.v0,
        forcing=scenario.forcing,
        source=nls.SeriesSource(collar, grid.x_layer),
        snapshot_times=times,
    )
    return ValidationResult(scenario, model, ref, grid)

