import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nlkernel import nonlocal_solver as nls
from nlkernel.kernel import KernelModel
from nlkernel.scenarios import TrainingSample

settings.register_profile("repo", deadline=None, max_examples=30, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def gaussian_forcing(center=0.0, width=0.4, t0=0.15, tp=0.1):
    def f(x, t):
        x = np.asarray(x, dtype=float)
        return np.exp(-(((x - center) / width) ** 2)) * math.exp(-(((t - t0) / tp) ** 2))

    return f


def manufactured_sample(kernel: KernelModel, b=1.5, h=0.05, dt=0.02, n_steps=20, forcing=None, sample_id=0):
    """Sample whose reference is the nonlocal solution of ``kernel`` itself (zero collars)."""
    forcing = forcing or gaussian_forcing()
    grid = nls.UniformGrid(b - kernel.delta, h, kernel.delta)
    T = n_steps * dt
    series = nls.run(grid, kernel, T, dt, forcing=forcing)
    f_full = np.array([forcing(grid.x, t) for t in series.t])
    return TrainingSample(
        id=sample_id,
        kind="manufactured",
        param=None,
        b=b,
        h=h,
        dt=dt,
        T=T,
        x=grid.x,
        t=series.t,
        u=series.u,
        forcing=f_full,
        boundary="zero",
        norm_constant=1.0,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance report ------------------------------------------------------------

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture(scope="session")
def record():
    """``record(n, ok, detail)`` stores the one-line verdict for criterion ``n``."""

    def _record(n: int, ok: bool, detail: str) -> bool:
        _ACCEPTANCE[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(_ACCEPTANCE[n])
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
