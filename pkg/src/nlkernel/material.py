"""Materials, the two-phase periodic bar, and its long-wavelength parameters."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class Material:
    """Linear elastic bar material.

    Parameters
    ----------
    youngs_modulus : float
        Young's modulus E (> 0).
    density : float
        Mass density rho (> 0).
    """

    youngs_modulus: float
    density: float = 1.0

    def __post_init__(self):
        if not self.youngs_modulus > 0:
            raise ValueError(f"youngs_modulus must be positive, got {self.youngs_modulus}")
        if not self.density > 0:
            raise ValueError(f"density must be positive, got {self.density}")

    @property
    def wave_speed(self) -> float:
        return math.sqrt(self.youngs_modulus / self.density)

    @property
    def impedance(self) -> float:
        return self.density * self.wave_speed


def wave_speed(m: Material) -> float:
    """Bar wave speed sqrt(E/rho)."""
    return m.wave_speed


def impedance(m: Material) -> float:
    """Acoustic impedance rho*c."""
    return m.impedance


@dataclass(frozen=True)
class Microstructure:
    """Two materials of equal layer length ``L`` alternating with period ``2L``.

    ``material_a`` occupies ``[phase_offset, phase_offset + L)`` modulo ``2L``.
    """

    layer_length: float
    material_a: Material
    material_b: Material
    phase_offset: float = 0.0

    def __post_init__(self):
        if not self.layer_length > 0:
            raise ValueError(f"layer_length must be positive, got {self.layer_length}")

    @property
    def period(self) -> float:
        return 2.0 * self.layer_length

    @property
    def is_homogeneous(self) -> bool:
        return self.material_a == self.material_b

    def material_at(self, x: float) -> Material:
        return material_at(self, x)

    def interfaces(self, x_left: float, x_right: float) -> np.ndarray:
        """Interface positions ``phase_offset + j*L`` strictly inside ``(x_left, x_right)``."""
        L = self.layer_length
        j0 = math.floor((x_left - self.phase_offset) / L) + 1
        j1 = math.ceil((x_right - self.phase_offset) / L) - 1
        pts = self.phase_offset + L * np.arange(j0, j1 + 1)
        # snap to the nearest multiple so that repeated construction is exact
        return pts[(pts > x_left + 1e-12 * L) & (pts < x_right - 1e-12 * L)]


def material_at(ms: Microstructure, x: float) -> Material:
    """Material occupying position ``x``."""
    s = math.fmod(x - ms.phase_offset, ms.period)
    if s < 0:
        s += ms.period
    return ms.material_a if s < ms.layer_length else ms.material_b


def reference_microstructure() -> Microstructure:
    """L = 0.2, E1 = 1, E2 = 0.25, rho = 1."""
    return Microstructure(0.2, Material(1.0, 1.0), Material(0.25, 1.0))


@dataclass(frozen=True)
class EffectiveParams:
    """Long-wavelength speed ``c0`` and group-velocity curvature ``R = v_g''(0)``."""

    c0: float
    R: float

    def __post_init__(self):
        if not self.c0 > 0:
            raise ValueError(f"c0 must be positive, got {self.c0}")


def effective_speed(ms: Microstructure) -> float:
    """Long-wavelength speed from the harmonic mean of the two moduli.

    Only valid for equal densities; unequal densities raise ``ValueError``.
    """
    a, b = ms.material_a, ms.material_b
    if not math.isclose(a.density, b.density, rel_tol=1e-12):
        raise ValueError("effective_speed requires equal layer densities")
    e_eff = 2.0 / (1.0 / a.youngs_modulus + 1.0 / b.youngs_modulus)
    return math.sqrt(e_eff / a.density)


def fit_curvature(omegas: Sequence[float], vg: Sequence[float], c0: float) -> tuple[float, float]:
    """Least-squares ``R`` in ``vg = c0 + R/2 * omega**2`` with the intercept fixed.

    Returns
    -------
    R : float
    residual : float
        RMS residual of the fit.
    """
    w2 = np.asarray(omegas, dtype=float) ** 2
    y = np.asarray(vg, dtype=float) - c0
    half_r = np.dot(w2, y) / np.dot(w2, w2)
    resid = y - half_r * w2
    return 2.0 * half_r, float(np.sqrt(np.mean(resid**2)))


class GroupVelocityError(RuntimeError):
    """A wave packet could not be tracked reliably."""


def estimate_R(
    ms: Microstructure,
    omegas: Sequence[float] = (0.3, 0.45, 0.6),
    dt: float = 0.01,
    cycles: float = 3.0,
    travel_time: float = 200.0,
    max_residual: float = 5e-4,
) -> EffectiveParams:
    """Measure the group-velocity curvature of the bar from DNS wave packets.

    One packet per frequency is launched from the left end and its energy
    centroid is tracked after the drive has switched off. The measured
    speeds are regressed against ``<omega**2>`` of the drive spectrum, with
    the intercept held at :func:`effective_speed`.

    Raises
    ------
    GroupVelocityError
        If fewer than three frequencies are given, a packet cannot be
        tracked, or the quadratic fit residual exceeds ``max_residual``.
    """
    from nlkernel.dns import packet_group_velocity

    if len(omegas) < 3:
        raise GroupVelocityError("estimate_R needs at least three frequencies")
    c0 = effective_speed(ms)
    eff_w, speeds = [], []
    for w in omegas:
        m = packet_group_velocity(ms, w, dt=dt, cycles=cycles, travel_time=travel_time)
        if not m.ok:
            raise GroupVelocityError(f"packet at omega={w} not trackable: {m.reason}")
        eff_w.append(m.omega_rms)
        speeds.append(m.vg)
    R, resid = fit_curvature(eff_w, speeds, c0)
    if resid > max_residual:
        raise GroupVelocityError(f"curvature fit residual {resid:.3g} exceeds {max_residual:.3g}")
    return EffectiveParams(c0=c0, R=R)


# Analytic Bloch dispersion of the two-layer cell. Used as an independent
# check of the DNS group-velocity measurement, never inside training.

def bloch_cos(ms: Microstructure, omega):
    """Right-hand side of ``cos(2 k L) = f(omega)`` for the bilayer cell."""
    a, b = ms.material_a, ms.material_b
    L = ms.layer_length
    pa = np.asarray(omega) * L / a.wave_speed
    pb = np.asarray(omega) * L / b.wave_speed
    zr = a.impedance / b.impedance
    return np.cos(pa) * np.cos(pb) - 0.5 * (zr + 1.0 / zr) * np.sin(pa) * np.sin(pb)


def bloch_wavenumber(ms: Microstructure, omega):
    """Bloch wavenumber in the first zone; NaN inside stop bands."""
    f = bloch_cos(ms, omega)
    k = np.arccos(np.clip(f, -1.0, 1.0)) / ms.period
    return np.where(np.abs(f) <= 1.0, k, np.nan)


def bloch_group_velocity(ms: Microstructure, omega):
    """``d omega / d k`` from implicit differentiation of the Bloch relation."""
    omega = np.asarray(omega, dtype=float)
    eps = 1e-6 * np.maximum(omega, 1.0)
    dfdw = (bloch_cos(ms, omega + eps) - bloch_cos(ms, omega - eps)) / (2 * eps)
    f = bloch_cos(ms, omega)
    dkdw = -dfdw / (ms.period * np.sqrt(np.clip(1.0 - f**2, 0.0, None)))
    with np.errstate(divide="ignore"):
        vg = 1.0 / dkdw
    return np.where(np.abs(f) < 1.0, vg, 0.0)


def bloch_band_edge(ms: Microstructure, omega_max: float = 50.0) -> float:
    """Upper edge of the first pass band."""
    from scipy.optimize import brentq

    w = np.linspace(1e-6, omega_max, 200001)
    f = bloch_cos(ms, w) + 1.0
    idx = np.flatnonzero(f < 0)
    if idx.size == 0:
        return math.inf
    i = idx[0]
    return brentq(lambda s: bloch_cos(ms, s) + 1.0, w[i - 1], w[i])
