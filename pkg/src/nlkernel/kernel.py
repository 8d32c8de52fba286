"""Bernstein-polynomial nonlocal kernels, their Riemann-sum stencils and dispersion."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from nlkernel.fields import QUADRATURE_RULE, write_header


def bernstein_basis(M: int, x) -> np.ndarray:
    """All degree-``M`` Bernstein polynomials at ``x``; shape ``x.shape + (M + 1,)``.

    Built with the de Casteljau recurrence ``B[m, k] = (1-x) B[m, k-1] + x B[m-1, k-1]``,
    which stays well conditioned for large ``M``.
    """
    if M < 0:
        raise ValueError("degree must be non-negative")
    x = np.asarray(x, dtype=float)
    if np.any((x < 0) | (x > 1)) or np.any(np.isnan(x)):
        raise ValueError("Bernstein polynomials are evaluated on [0, 1]")
    out = np.zeros(x.shape + (M + 1,))
    out[..., 0] = 1.0
    s = 1.0 - x
    for k in range(1, M + 1):
        # update in place from the top so lower entries are still degree k-1
        out[..., k] = x * out[..., k - 1]
        for m in range(k - 1, 0, -1):
            out[..., m] = s * out[..., m] + x * out[..., m - 1]
        out[..., 0] = s * out[..., 0]
    return out


def bernstein(m: int, M: int, x):
    """``B_{m,M}(x) = C(M, m) x^m (1-x)^(M-m)`` on ``[0, 1]``."""
    if not 0 <= m <= M:
        raise ValueError(f"need 0 <= m <= M, got m={m}, M={M}")
    return bernstein_basis(M, x)[..., m]


@dataclass(frozen=True)
class KernelModel:
    """Radial kernel ``K(y) = sum_m C_m / delta^3 * B_{m,M}(|y| / delta)`` for ``|y| <= delta``."""

    delta: float
    degree: int
    coefficients: np.ndarray
    rho: float = 1.0

    def __post_init__(self):
        coeffs = np.array(self.coefficients, dtype=float)
        coeffs.setflags(write=False)
        object.__setattr__(self, "coefficients", coeffs)
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.degree < 2:
            raise ValueError("degree must be at least 2")
        if coeffs.shape != (self.degree + 1,):
            raise ValueError(f"expected {self.degree + 1} coefficients, got {coeffs.shape}")
        if not self.rho > 0:
            raise ValueError("rho must be positive")

    def __call__(self, y):
        return evaluate(self, y)

    @classmethod
    def constant(cls, value: float, delta: float, degree: int, rho: float = 1.0) -> "KernelModel":
        return cls(delta, degree, np.full(degree + 1, float(value)), rho)


def evaluate(kernel: KernelModel, y):
    """Kernel value at signed offset(s) ``y``; zero outside ``[-delta, delta]``."""
    y = np.abs(np.asarray(y, dtype=float))
    inside = y <= kernel.delta
    s = np.where(inside, y / kernel.delta, 0.0)
    val = bernstein_basis(kernel.degree, s) @ kernel.coefficients / kernel.delta**3
    return np.where(inside, val, 0.0)


def stencil_radius(delta: float, h: float, tol: float = 1e-9) -> int:
    """``J = delta / h``, which must be an integer."""
    ratio = delta / h
    J = round(ratio)
    if J < 1 or abs(ratio - J) > tol * max(1.0, ratio):
        raise ValueError(f"delta/h = {ratio:.12g} is not a positive integer")
    return J


def basis_weights(M: int, delta: float, h: float) -> np.ndarray:
    """Riemann weights of each basis function, ``b[m, j] = B_{m,M}(j h / delta) h / delta^3``, j = 0..J."""
    J = stencil_radius(delta, h)
    s = np.arange(J + 1) * h / delta
    s[-1] = 1.0
    return bernstein_basis(M, s).T * (h / delta**3)


@dataclass(frozen=True)
class OperatorStencil:
    """Weights ``w_j = K(|j h|) h`` for ``j = -J..J``."""

    h: float
    weights: np.ndarray

    @property
    def J(self) -> int:
        return (self.weights.size - 1) // 2

    @property
    def half(self) -> np.ndarray:
        """``w_1 .. w_J``."""
        return self.weights[self.J + 1 :]


def stencil(kernel: KernelModel, h: float) -> OperatorStencil:
    J = stencil_radius(kernel.delta, h)
    half = kernel.coefficients @ basis_weights(kernel.degree, kernel.delta, h)
    w = np.concatenate((half[:0:-1], half))
    w.setflags(write=False)
    return OperatorStencil(h=float(h), weights=w)


def apply(st: OperatorStencil, u: np.ndarray, i: int) -> float:
    """``sum_j w_j (u[i+j] - u[i])`` at one grid index."""
    J = st.J
    missing = [k for k in range(i - J, i + J + 1) if k < 0 or k >= len(u)]
    if missing:
        raise IndexError(f"stencil at index {i} needs missing indices {missing[0]}..{missing[-1]}")
    seg = np.asarray(u[i - J : i + J + 1], dtype=float)
    return float(np.dot(st.weights, seg - seg[J]))


def apply_interior(half: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Operator at every index with a full stencil, along the last axis.

    Uses the paired form ``sum_{j>=1} w_j (u[i+j] + u[i-j] - 2 u[i])`` so that
    constants are annihilated exactly.
    """
    J = half.size
    n = u.shape[-1]
    if n < 2 * J + 1:
        raise IndexError(f"field of length {n} too short for stencil radius {J}")
    c = u[..., J : n - J]
    out = np.zeros(c.shape)
    for j in range(1, J + 1):
        out += half[j - 1] * ((u[..., J + j : n - J + j] + u[..., J - j : n - J - j]) - 2.0 * c)
    return out


def moments_discrete(M: int, delta: float, h: float, p: int) -> np.ndarray:
    """Riemann sums of ``int_0^delta y^p / delta^3 B_{m,M}(y/delta) dy`` on ``y_q = q h``."""
    J = stencil_radius(delta, h)
    y = np.arange(J + 1) * h
    return basis_weights(M, delta, h) @ (y**p)


def moments_exact(M: int, delta: float, p: int) -> np.ndarray:
    """Closed form ``delta^(p-2) C(M,m) (m+p)! (M-m)! / (M+p+1)!``."""
    m = np.arange(M + 1)
    lg = (
        math.lgamma(M + 1)
        - np.array([math.lgamma(k + 1) + math.lgamma(M - k + 1) for k in m])
        + np.array([math.lgamma(k + p + 1) + math.lgamma(M - k + 1) for k in m])
        - math.lgamma(M + p + 2)
    )
    return delta ** (p - 2) * np.exp(lg)


@dataclass
class DispersionCurve:
    """Samples of ``omega(k)`` and ``v_g`` on ``k = 0 .. k_max``."""

    k: np.ndarray
    omega: np.ndarray
    vg: np.ndarray
    omega_sq: np.ndarray | None = None
    c0: float = math.nan
    band_stop: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def unstable(self) -> np.ndarray:
        """Mask of samples where ``omega^2 < 0``."""
        if self.omega_sq is None:
            return np.zeros(self.k.size, dtype=bool)
        return self.omega_sq < 0

    @property
    def is_stable(self) -> bool:
        return not bool(self.unstable.any())


def _central_slope(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    d = np.empty_like(y)
    d[1:-1] = (y[2:] - y[:-2]) / (x[2:] - x[:-2])
    d[0] = (y[1] - y[0]) / (x[1] - x[0])
    d[-1] = (y[-1] - y[-2]) / (x[-1] - x[-2])
    return d


def omega_squared(st: OperatorStencil, k, rho: float = 1.0) -> np.ndarray:
    """``(1/rho) sum_q K(|y_q|) (1 - cos(k y_q)) h`` over ``y_q = q h, q = -J..J``."""
    k = np.asarray(k, dtype=float)
    y = np.arange(1, st.J + 1) * st.h
    return (2.0 / rho) * ((1.0 - np.cos(np.multiply.outer(k, y))) @ st.half)


def long_wave_speed(st: OperatorStencil, rho: float = 1.0) -> float:
    """``sqrt(sum_{q>=1} w_q y_q^2 / rho)``, the ``k -> 0`` phase velocity of the stencil."""
    y = np.arange(1, st.J + 1) * st.h
    c2 = np.dot(st.half, y**2) / rho
    return math.sqrt(c2) if c2 > 0 else math.nan


def dispersion(kernel: KernelModel, h: float, n_k: int = 200, k_max: float | None = None) -> DispersionCurve:
    """Discrete dispersion relation of the Riemann-sum operator.

    Wavenumbers are ``k_i = i k_max / n_k`` with ``k_max = 2 pi / h`` by
    default. ``omega`` is the clamped square root of ``omega^2``; negative
    ``omega^2`` are kept in ``omega_sq`` and flagged by ``unstable``.
    """
    st = stencil(kernel, h)
    if k_max is None:
        k_max = 2.0 * math.pi / h
    k = np.linspace(0.0, k_max, n_k + 1)
    w2 = omega_squared(st, k, kernel.rho)
    w2[0] = 0.0
    omega = np.sqrt(np.clip(w2, 0.0, None))
    vg = _central_slope(k, omega)
    curve = DispersionCurve(k=k, omega=omega, vg=vg, omega_sq=w2, c0=long_wave_speed(st, kernel.rho))
    curve.band_stop = band_stop(curve)
    curve.meta["quadrature"] = QUADRATURE_RULE
    return curve


def band_stop(curve: DispersionCurve, c0: float | None = None, rel_threshold: float = 0.02) -> float | None:
    """Smallest ``omega > 0`` where ``v_g`` first drops below ``rel_threshold * c0``.

    ``c0`` defaults to the curve's long-wave speed, or to ``v_g`` at the
    first nonzero wavenumber. Returns ``None`` when there is no crossing.
    """
    if c0 is None:
        c0 = curve.c0 if math.isfinite(curve.c0) else float(curve.vg[1])
    thr = rel_threshold * c0
    vg, om = curve.vg, curve.omega
    below = np.flatnonzero(vg[1:] < thr) + 1
    if below.size == 0:
        return None
    i = below[0]
    frac = (thr - vg[i - 1]) / (vg[i] - vg[i - 1])
    return float(om[i - 1] + frac * (om[i] - om[i - 1]))


def save_kernel(path, kernel: KernelModel, meta: dict | None = None):
    """Text kernel file with ``key = value`` lines; ``#`` lines carry metadata."""
    header = {"quadrature": QUADRATURE_RULE}
    if meta:
        header.update(meta)
    with open(path, "w") as fh:
        write_header(fh, header)
        fh.write(f"delta = {kernel.delta:.17g}\n")
        fh.write(f"M = {kernel.degree:d}\n")
        fh.write(f"rho = {kernel.rho:.17g}\n")
        fh.write("coefficients = " + ",".join(f"{c:.17g}" for c in kernel.coefficients) + "\n")


def load_kernel(path) -> KernelModel:
    vals = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, val = line.split("=", 1)
            vals[key.strip()] = val.strip()
    missing = {"delta", "M", "coefficients"} - vals.keys()
    if missing:
        raise ValueError(f"kernel file {path} lacks {sorted(missing)}")
    coeffs = [float(c) for c in vals["coefficients"].split(",")]
    return KernelModel(float(vals["delta"]), int(vals["M"]), np.array(coeffs), float(vals.get("rho", 1.0)))


def write_dispersion_csv(path, curve: DispersionCurve, meta: dict | None = None):
    header = dict(curve.meta)
    if meta:
        header.update(meta)
    with open(path, "w") as fh:
        write_header(fh, header)
        fh.write("k,omega,vg\n")
        for k, w, v in zip(curve.k, curve.omega, curve.vg):
            fh.write(f"{k:.17g},{w:.17g},{v:.17g}\n")
        bs = "none" if curve.band_stop is None else f"{curve.band_stop:.17g}"
        fh.write(f"# band_stop={bs}\n")
