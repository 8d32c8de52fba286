"""Constrained learning of the Bernstein kernel coefficients.

The two highest coefficients are eliminated through the discrete moment
constraints, so the optimizer only sees ``theta = (C_0 .. C_{M-2})`` and
every iterate is a feasible kernel.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numba import njit
from scipy.optimize import line_search

from nlkernel.fields import write_header
from nlkernel.kernel import KernelModel, basis_weights, dispersion, moments_discrete, stencil_radius

log = logging.getLogger(__name__)

BLOWUP_LOSS = 1e30


@dataclass(frozen=True)
class ConstraintSystem:
    """Discrete second and fourth moment constraints solved for ``C_{M-1}, C_M``.

    ``sum_m C_m p2[m] = rho c0^2`` and ``sum_m C_m p4[m] = -4 rho c0^3 R``.
    """

    p2: np.ndarray
    p4: np.ndarray
    targets: np.ndarray
    block: np.ndarray
    block_inv: np.ndarray

    @classmethod
    def build(cls, M: int, delta: float, h: float, rho: float, c0: float, R: float) -> "ConstraintSystem":
        if M < 2:
            raise ValueError("elimination needs M >= 2")
        p2 = moments_discrete(M, delta, h, 2)
        p4 = moments_discrete(M, delta, h, 4)
        block = np.array([[p2[M - 1], p2[M]], [p4[M - 1], p4[M]]])
        det = np.linalg.det(block)
        scale = np.linalg.norm(block[0]) * np.linalg.norm(block[1])
        if abs(det) < 1e-14 * scale:
            raise ValueError(f"constraint block is singular (det={det:.3g})")
        targets = np.array([rho * c0**2, -4.0 * rho * c0**3 * R])
        return cls(p2, p4, targets, block, np.linalg.inv(block))

    @property
    def degree(self) -> int:
        return self.p2.size - 1

    @property
    def jacobian(self) -> np.ndarray:
        """Constant ``dC/dtheta``, shape ``(M+1, M-1)``."""
        M = self.degree
        E = np.zeros((M + 1, M - 1))
        E[: M - 1] = np.eye(M - 1)
        E[M - 1 :] = -self.block_inv @ np.vstack((self.p2[: M - 1], self.p4[: M - 1]))
        return E

    def residuals(self, C: np.ndarray) -> np.ndarray:
        return np.array([C @ self.p2, C @ self.p4]) - self.targets


def eliminate(theta: np.ndarray, cs: ConstraintSystem) -> np.ndarray:
    """Complete ``theta`` with the two coefficients that satisfy both constraints."""
    M = cs.degree
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (M - 1,):
        raise ValueError(f"theta must have length {M - 1}, got {theta.shape}")
    rhs = cs.targets - np.array([cs.p2[: M - 1] @ theta, cs.p4[: M - 1] @ theta])
    tail = np.linalg.solve(cs.block, rhs)
    return np.concatenate((theta, tail))


@dataclass(frozen=True)
class TrainConfig:
    """Discretization, constraint and optimizer settings (reference defaults)."""

    delta: float = 1.2
    degree: int = 24
    epsilon: float = 0.01
    h: float = 0.05
    dt: float = 0.02
    T_tr: float = 2.0
    rho: float = 1.0
    c0: float = math.sqrt(0.4)
    R: float = math.nan
    history: int = 10
    gtol: float = 1e-8
    ftol: float = 1e-12
    max_iter: int = 500
    c1: float = 1e-4
    c2: float = 0.9
    gradient: str = "forward"

    def constraints(self) -> ConstraintSystem:
        if not math.isfinite(self.R):
            raise ValueError("TrainConfig.R is not set; estimate it with material.estimate_R")
        return ConstraintSystem.build(self.degree, self.delta, self.h, self.rho, self.c0, self.R)

    def kernel(self, C: np.ndarray) -> KernelModel:
        return KernelModel(self.delta, self.degree, C, self.rho)


# compiled per-sample passes --------------------------------------------------


@njit(cache=True)
def _pass_forward(half, dhalf, ref, bnd, forc, lo, hi, dt, with_grad):
    """Loss ``sum r^2`` and forward-sensitivity gradient for one sample.

    ``dhalf[p, j]`` is ``d w_{j+1} / d theta_p``; collars of ``bnd`` give the
    boundary data and sensitivities vanish there.
    """
    nt, N = ref.shape
    J = half.size
    P = dhalf.shape[0]
    n_in = hi - lo
    dt2 = dt * dt
    hsum = half.sum()
    up = ref[0].copy()
    up[:lo] = bnd[0, :lo]
    up[hi:] = bnd[0, hi:]
    uc = np.zeros(N)
    un = np.zeros(N)
    sp = np.zeros((P, N))
    sc = np.zeros((P, N))
    sn = np.zeros((P, N))
    D = np.empty((J, n_in))
    acc = np.empty(n_in)
    r = np.empty(n_in)
    loss = 0.0
    grad = np.zeros(P)
    for n in range(0, nt - 1):
        # second differences of the current field, shared by L u and dL/dtheta u
        cur = up if n == 0 else uc
        for j in range(J):
            for i in range(n_in):
                k = lo + i
                D[j, i] = cur[k + j + 1] + cur[k - j - 1] - 2.0 * cur[k]
        for i in range(n_in):
            acc[i] = 0.0
        for j in range(J):
            for i in range(n_in):
                acc[i] += half[j] * D[j, i]
        if n == 0:
            uc[:lo] = bnd[1, :lo]
            uc[hi:] = bnd[1, hi:]
            for i in range(n_in):
                uc[lo + i] = up[lo + i] + 0.5 * dt2 * (acc[i] + forc[0, lo + i])
            if with_grad:
                G = dhalf @ D
                for p in range(P):
                    for i in range(n_in):
                        sc[p, lo + i] = 0.5 * dt2 * G[p, i]
            continue
        un[:lo] = bnd[n + 1, :lo]
        un[hi:] = bnd[n + 1, hi:]
        for i in range(n_in):
            k = lo + i
            un[k] = 2.0 * uc[k] - up[k] + dt2 * (acc[i] + forc[n, k])
            r[i] = un[k] - ref[n + 1, k]
            loss += r[i] * r[i]
        if with_grad:
            G = dhalf @ D
            for p in range(P):
                for i in range(n_in):
                    acc[i] = G[p, i] - 2.0 * hsum * sc[p, lo + i]
                for j in range(J):
                    w = half[j]
                    for i in range(n_in):
                        acc[i] += w * (sc[p, lo + i + j + 1] + sc[p, lo + i - j - 1])
                gp = 0.0
                for i in range(n_in):
                    k = lo + i
                    sn[p, k] = 2.0 * sc[p, k] - sp[p, k] + dt2 * acc[i]
                    gp += sn[p, k] * r[i]
                grad[p] += 2.0 * gp
        up, uc, un = uc, un, up
        sp, sc, sn = sc, sn, sp
    return loss, grad


@njit(cache=True)
def _pass_adjoint(half, dhalf, ref, bnd, forc, lo, hi, dt):
    """Same loss and gradient as ``_pass_forward`` via one backward sweep."""
    nt, N = ref.shape
    J = half.size
    dt2 = dt * dt
    U = np.zeros((nt, N))
    U[0] = ref[0]
    U[0, :lo] = bnd[0, :lo]
    U[0, hi:] = bnd[0, hi:]
    for n in range(1, nt):
        U[n, :lo] = bnd[n, :lo]
        U[n, hi:] = bnd[n, hi:]
    for i in range(lo, hi):
        lap = 0.0
        for j in range(J):
            lap += half[j] * (U[0, i + j + 1] + U[0, i - j - 1] - 2.0 * U[0, i])
        U[1, i] = U[0, i] + 0.5 * dt2 * (lap + forc[0, i])
    loss = 0.0
    for n in range(1, nt - 1):
        for i in range(lo, hi):
            lap = 0.0
            for j in range(J):
                lap += half[j] * (U[n, i + j + 1] + U[n, i - j - 1] - 2.0 * U[n, i])
            U[n + 1, i] = 2.0 * U[n, i] - U[n - 1, i] + dt2 * (lap + forc[n, i])
            r = U[n + 1, i] - ref[n + 1, i]
            loss += r * r
    m1 = np.zeros(N)  # mu^{n+1}
    m2 = np.zeros(N)  # mu^{n+2}
    m0 = np.zeros(N)
    H = np.zeros(J)
    for n in range(nt - 1, 0, -1):
        for i in range(lo, hi):
            g = 2.0 * (U[n, i] - ref[n, i]) if n >= 2 else 0.0
            lap = 0.0
            for j in range(J):
                lap += half[j] * (m1[i + j + 1] + m1[i - j - 1] - 2.0 * m1[i])
            m0[i] = g + 2.0 * m1[i] + dt2 * lap - m2[i]
        w = dt2 if n >= 2 else 0.5 * dt2
        for i in range(lo, hi):
            for j in range(J):
                H[j] += w * m0[i] * (U[n - 1, i + j + 1] + U[n - 1, i - j - 1] - 2.0 * U[n - 1, i])
        m2, m1, m0 = m1, m0, m2
    return loss, dhalf @ H


@dataclass
class _Prepared:
    ref: np.ndarray
    bnd: np.ndarray
    forc: np.ndarray
    lo: int
    hi: int
    dt: float


def _prepare(samples, cfg: TrainConfig) -> list[_Prepared]:
    J = stencil_radius(cfg.delta, cfg.h)
    out = []
    for s in samples:
        if not (math.isclose(s.h, cfg.h) and math.isclose(s.dt, cfg.dt)):
            raise ValueError(f"sample {s.id} grid (h={s.h}, dt={s.dt}) differs from config")
        n_keep = round(cfg.T_tr / cfg.dt) + 1
        if s.u.shape[0] < n_keep:
            raise ValueError(f"sample {s.id} is shorter than T_tr")
        N = s.x.size
        ref = np.ascontiguousarray(s.u[:n_keep])
        bnd = ref if s.boundary == "series" else np.zeros_like(ref)
        out.append(_Prepared(ref, bnd, np.ascontiguousarray(s.forcing[:n_keep]), J + 1, N - J - 1, s.dt))
    return out


class Objective:
    """Loss and gradient in the free coefficients for a fixed sample set.

    An empty sample set leaves only the regularization term.

    Caches the last evaluation so a line search asking for ``f`` and then
    ``f'`` at one point solves the recursion only once.
    """

    def __init__(self, samples, cfg: TrainConfig, method: str | None = None):
        self.cfg = cfg
        self.cs = cfg.constraints()
        self.E = self.cs.jacobian
        self.B = basis_weights(cfg.degree, cfg.delta, cfg.h)[:, 1:]  # (M+1, J)
        self.dhalf = np.ascontiguousarray(self.E.T @ self.B)
        self.data = _prepare(samples, cfg)
        self.prefactor = cfg.T_tr / (cfg.dt**3 * max(len(samples), 1))
        self.method = method or cfg.gradient
        if self.method not in ("forward", "adjoint"):
            raise ValueError(f"unknown gradient method {self.method!r}")
        self._cache: dict = {}
        self.n_solves = 0

    def coefficients(self, theta) -> np.ndarray:
        return eliminate(theta, self.cs)

    def regularization(self, theta) -> tuple[float, np.ndarray]:
        C = self.coefficients(theta)
        scale = self.cfg.epsilon / (self.cfg.degree + 1)
        return scale * float(C @ C), 2.0 * scale * (self.E.T @ C)

    def _data_term(self, theta, with_grad: bool):
        key = (np.asarray(theta, dtype=float).tobytes(), with_grad)
        if key in self._cache:
            return self._cache[key]
        if not with_grad and (key[0], True) in self._cache:
            return self._cache[(key[0], True)]
        C = self.coefficients(theta)
        half = np.ascontiguousarray(C @ self.B)
        total, grad = 0.0, np.zeros(self.dhalf.shape[0])
        for d in self.data:
            if with_grad and self.method == "adjoint":
                l, g = _pass_adjoint(half, self.dhalf, d.ref, d.bnd, d.forc, d.lo, d.hi, d.dt)
            else:
                l, g = _pass_forward(half, self.dhalf, d.ref, d.bnd, d.forc, d.lo, d.hi, d.dt, with_grad)
            total += l
            grad += g
        self.n_solves += 1
        out = (self.prefactor * total, self.prefactor * grad)
        if not (out[0] <= BLOWUP_LOSS and np.all(np.isfinite(out[1]))):
            log.warning("nonlocal solver blew up; returning sentinel loss")
            out = (BLOWUP_LOSS, np.zeros_like(grad))
        self._cache = {key: out}
        return out

    def loss(self, theta) -> float:
        f, _ = self._data_term(theta, False)
        r, _ = self.regularization(theta)
        return f + r

    def gradient(self, theta) -> np.ndarray:
        _, g = self._data_term(theta, True)
        _, gr = self.regularization(theta)
        return g + gr

    def loss_and_gradient(self, theta) -> tuple[float, np.ndarray]:
        f, g = self._data_term(theta, True)
        r, gr = self.regularization(theta)
        return f + r, g + gr


def loss(theta, samples, cfg: TrainConfig) -> float:
    """``T_tr/(dt^3 N) sum_k sum_n ||u_bar^{n+1} - u^{n+1}||^2 + eps/(M+1) sum_m C_m^2``."""
    return Objective(samples, cfg).loss(theta)


def gradient(theta, samples, cfg: TrainConfig, method: str | None = None) -> np.ndarray:
    """Gradient of :func:`loss` with respect to the free coefficients."""
    return Objective(samples, cfg, method).gradient(theta)


@dataclass
class LossReport:
    """Per-iteration trace of an optimization run."""

    iterations: list = field(default_factory=list)
    status: str = ""
    message: str = ""
    n_solves: int = 0

    def record(self, it, f, gnorm, step):
        self.iterations.append((it, float(f), float(gnorm), float(step)))

    @property
    def losses(self) -> np.ndarray:
        return np.array([r[1] for r in self.iterations])

    @property
    def final_loss(self) -> float:
        return self.iterations[-1][1] if self.iterations else math.nan

    def write_csv(self, path, meta: dict | None = None):
        with open(path, "w", newline="") as fh:
            write_header(fh, dict(meta or {}, status=self.status))
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "loss", "grad_norm", "step_length"])
            for it, f, g, s in self.iterations:
                w.writerow([it, f"{f:.17g}", f"{g:.17g}", f"{s:.17g}"])


def lbfgs(fun, grad, x0, history=10, gtol=1e-8, ftol=1e-12, max_iter=500, c1=1e-4, c2=0.9, callback=None):
    """Limited-memory BFGS with a strong-Wolfe line search.

    Returns ``(x, f, report)``; ``report.status`` is one of ``"gtol"``,
    ``"ftol"``, ``"max_iter"`` or ``"line_search_failed"``.
    """
    x = np.array(x0, dtype=float)
    f = fun(x)
    g = grad(x)
    report = LossReport()
    report.record(0, f, np.max(np.abs(g)) if g.size else 0.0, 0.0)
    S, Y = [], []
    f_prev = f + np.linalg.norm(g) / 2
    best = (f, x.copy())
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) < gtol:
            report.status = "gtol"
            break
        p = _two_loop(g, S, Y)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ls = line_search(fun, grad, x, p, gfk=g, old_fval=f, old_old_fval=f_prev, c1=c1, c2=c2)
        alpha = ls[0]
        if alpha is None and S:
            # drop curvature pairs and retry along steepest descent
            S, Y = [], []
            p = -g
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                ls = line_search(fun, grad, x, p, gfk=g, old_fval=f, old_old_fval=f + np.linalg.norm(g) / 2, c1=c1, c2=c2)
            alpha = ls[0]
        if alpha is None:
            report.status = "line_search_failed"
            report.message = "strong-Wolfe line search failed after restart; returning best iterate"
            warnings.warn(report.message, RuntimeWarning)
            break
        x_new = x + alpha * p
        f_new = ls[3]
        g_new = ls[5] if ls[5] is not None else grad(x_new)
        s, y = x_new - x, g_new - g
        if s @ y > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            S.append(s)
            Y.append(y)
            if len(S) > history:
                S.pop(0)
                Y.pop(0)
        rel = (f - f_new) / max(abs(f), abs(f_new), 1.0)
        f_prev, f, x, g = f, f_new, x_new, g_new
        if f < best[0]:
            best = (f, x.copy())
        report.record(it, f, np.max(np.abs(g)), np.linalg.norm(s))
        if callback is not None:
            callback(it, x, f, g)
        if rel <= ftol:
            report.status = "ftol"
            break
    else:
        report.status = "max_iter"
    if not report.status:
        report.status = "max_iter"
    return best[1], best[0], report


def _two_loop(g, S, Y):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(S), reversed(Y)):
        a = (s @ q) / (y @ s)
        alphas.append(a)
        q -= a * y
    if S:
        q *= (S[-1] @ Y[-1]) / (Y[-1] @ Y[-1])
    for (s, y), a in zip(zip(S, Y), reversed(alphas)):
        b = (y @ q) / (y @ s)
        q += (a - b) * s
    return -q


def minimize(samples, cfg: TrainConfig, theta_init=None, callback=None) -> tuple[KernelModel, LossReport]:
    """Fit the free coefficients with L-BFGS; ``theta_init`` defaults to zeros."""
    obj = Objective(samples, cfg)
    theta0 = np.zeros(cfg.degree - 1) if theta_init is None else np.asarray(theta_init, dtype=float)
    theta, f, report = lbfgs(
        obj.loss,
        obj.gradient,
        theta0,
        history=cfg.history,
        gtol=cfg.gtol,
        ftol=cfg.ftol,
        max_iter=cfg.max_iter,
        c1=cfg.c1,
        c2=cfg.c2,
        callback=callback,
    )
    report.n_solves = obj.n_solves
    log.info("training finished: %s after %d iterations, loss %.6g", report.status, len(report.iterations) - 1, f)
    return cfg.kernel(obj.coefficients(theta)), report


# group-velocity model selection ---------------------------------------------


@dataclass
class GroupVelocityCurve:
    omega: np.ndarray
    vg: np.ndarray
    ok: np.ndarray


def dns_group_velocity(ms, omegas: Sequence[float], **kw) -> GroupVelocityCurve:
    """Packet-centroid group velocity of the layered bar at each frequency."""
    from nlkernel.dns import packet_group_velocity

    res = [packet_group_velocity(ms, w, **kw) for w in omegas]
    return GroupVelocityCurve(
        omega=np.array([r.omega for r in res]),
        vg=np.array([r.vg if r.ok else 0.0 for r in res]),
        ok=np.array([r.ok for r in res]),
    )


def kernel_group_velocity(kernel: KernelModel, h: float, omegas, n_k: int = 4000) -> np.ndarray:
    """Model ``v_g(omega)`` along the first branch of the discrete dispersion curve.

    Frequencies beyond the top of the branch get ``v_g = 0``.
    """
    curve = dispersion(kernel, h, n_k=n_k, k_max=math.pi / h)
    w, vg = curve.omega, curve.vg
    stop = np.flatnonzero((np.diff(w) <= 0) | (vg[1:] <= 0))
    end = stop[0] + 1 if stop.size else w.size
    return np.interp(np.asarray(omegas, dtype=float), w[:end], vg[:end], right=0.0)


def vg_mismatch(kernel: KernelModel, h: float, reference: GroupVelocityCurve) -> float:
    """RMS difference between model and reference group velocity over trackable frequencies."""
    ok = reference.ok
    if not ok.any():
        return math.nan
    model = kernel_group_velocity(kernel, h, reference.omega[ok])
    return float(np.sqrt(np.mean((model - reference.vg[ok]) ** 2)))


@dataclass
class SweepRow:
    delta: float
    epsilon: float
    vg_mismatch: float
    final_loss: float
    status: str = ""
    kernel: KernelModel | None = None


@dataclass
class SweepResult:
    rows: list

    @property
    def best(self) -> SweepRow | None:
        good = [r for r in self.rows if math.isfinite(r.vg_mismatch)]
        return min(good, key=lambda r: r.vg_mismatch) if good else None

    def write_csv(self, path, meta: dict | None = None):
        with open(path, "w", newline="") as fh:
            best = self.best
            header = dict(meta or {})
            if best is not None:
                header["best"] = f"{best.delta:g},{best.epsilon:g}"
            write_header(fh, header)
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["delta", "epsilon", "vg_mismatch", "final_loss"])
            for r in self.rows:
                w.writerow([f"{r.delta:.17g}", f"{r.epsilon:.17g}", f"{r.vg_mismatch:.17g}", f"{r.final_loss:.17g}"])


def sweep(samples, deltas, epsilons, cfg: TrainConfig, reference: GroupVelocityCurve) -> SweepResult:
    """Train one kernel per ``(delta, epsilon)`` and score its group velocity."""
    if not deltas or not epsilons:
        raise ValueError("sweep grids must be nonempty")
    rows = []
    for d in deltas:
        for e in epsilons:
            c = replace(cfg, delta=float(d), epsilon=float(e))
            try:
                kern, rep = minimize(samples, c)
                rows.append(SweepRow(d, e, vg_mismatch(kern, c.h, reference), rep.final_loss, rep.status, kern))
            except Exception as exc:  # one bad pair must not stop the sweep
                log.warning("sweep pair (%g, %g) failed: %s", d, e, exc)
                rows.append(SweepRow(d, e, math.nan, math.nan, f"failed: {exc}"))
    return SweepResult(rows)
