import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import rosen, rosen_der

from nlkernel import kernel as K
from nlkernel import training as T
from nlkernel.kernel import KernelModel

from conftest import gaussian_forcing, manufactured_sample

C0 = math.sqrt(0.4)
R_REF = -0.0057

SMALL = T.TrainConfig(delta=0.3, degree=6, epsilon=0.0, h=0.05, dt=0.02, T_tr=0.4, c0=C0, R=R_REF)


def truth_theta():
    return np.array([3.0, 1.5, -0.5, 2.0, 1.0])


@pytest.fixture(scope="module")
def truth():
    cs = SMALL.constraints()
    C = T.eliminate(truth_theta(), cs)
    return SMALL.kernel(C)


@pytest.fixture(scope="module")
def small_samples(truth):
    return [
        manufactured_sample(truth, forcing=gaussian_forcing(0.0)),
        manufactured_sample(truth, forcing=gaussian_forcing(0.3, 0.2, 0.1, 0.05), sample_id=1),
    ]


# constraint elimination -------------------------------------------------------


def test_constraint_system_reference_defaults():
    cs = T.TrainConfig(R=R_REF).constraints()
    assert cs.degree == 24
    np.testing.assert_allclose(cs.targets, [0.4, -4 * 0.4**1.5 * R_REF], rtol=1e-15)


def test_eliminate_at_origin_solves_bare_targets():
    cs = T.TrainConfig(R=R_REF).constraints()
    C = T.eliminate(np.zeros(23), cs)
    assert not C[:23].any()
    np.testing.assert_allclose(C[23:], np.linalg.solve(cs.block, cs.targets), rtol=1e-14)


@given(st.lists(st.floats(-100, 100), min_size=23, max_size=23))
def test_eliminate_satisfies_constraints(theta):
    cs = T.TrainConfig(R=R_REF).constraints()
    C = T.eliminate(np.array(theta), cs)
    scale = max(1.0, np.abs(C).max() * np.abs(cs.p2).max())
    assert np.all(np.abs(cs.residuals(C)) < 1e-12 * scale)


def test_elimination_is_affine_with_constant_jacobian(rng):
    cs = SMALL.constraints()
    E = cs.jacobian
    a, b = rng.normal(size=5), rng.normal(size=5)
    np.testing.assert_allclose(T.eliminate(a, cs) - T.eliminate(b, cs), E @ (a - b), atol=1e-12)


def test_small_degree_matches_beta_moment_solve():
    # M = 2: two constraints fix C1, C2 given C0; compare with closed-form moments as h -> 0
    delta, c0, R = 1.0, 0.8, -0.01
    theta = np.array([0.7])
    p2, p4 = K.moments_exact(2, delta, 2), K.moments_exact(2, delta, 4)
    A = np.array([[p2[1], p2[2]], [p4[1], p4[2]]])
    rhs = np.array([c0**2, -4 * c0**3 * R]) - theta[0] * np.array([p2[0], p4[0]])
    expected = np.linalg.solve(A, rhs)
    errs = []
    for h in (0.01, 0.005, 0.0025):
        cs = T.ConstraintSystem.build(2, delta, h, 1.0, c0, R)
        errs.append(np.abs(T.eliminate(theta, cs)[1:] - expected).max())
    assert errs[-1] < 0.02 * np.abs(expected).max()
    assert errs[0] / errs[1] > 1.8 and errs[1] / errs[2] > 1.8


def test_singular_block_rejected():
    with pytest.raises(ValueError, match="singular"):
        # with delta = h only y = h contributes, so both moment rows are proportional
        T.ConstraintSystem.build(6, 0.05, 0.05, 1.0, C0, R_REF)


def test_missing_R_rejected():
    with pytest.raises(ValueError):
        T.TrainConfig().constraints()


@given(st.lists(st.floats(-20, 20), min_size=23, max_size=23))
def test_completed_kernel_small_k_speed_is_c0(theta):
    cfg = T.TrainConfig(R=R_REF)
    kern = cfg.kernel(T.eliminate(np.array(theta), cfg.constraints()))
    st_ = K.stencil(kern, cfg.h)
    k1 = 1e-3
    w = math.sqrt(float(K.omega_squared(st_, k1)))
    assert w / k1 == pytest.approx(C0, rel=1e-3)


# loss ------------------------------------------------------------------------


def test_loss_at_truth_is_regularization(truth, small_samples):
    th = truth_theta()
    assert T.loss(th, small_samples, SMALL) < 1e-18
    cfg = replace(SMALL, epsilon=0.3)
    reg = 0.3 / 7 * float(truth.coefficients @ truth.coefficients)
    assert T.loss(th, small_samples, cfg) == pytest.approx(reg, rel=1e-12)


def test_loss_invariant_to_order_and_duplication(small_samples, rng):
    th = truth_theta() + 0.1 * rng.normal(size=5)
    base = T.loss(th, small_samples, SMALL)
    assert base > 0
    assert T.loss(th, small_samples[::-1], SMALL) == pytest.approx(base, rel=1e-14)
    assert T.loss(th, small_samples * 2, SMALL) == pytest.approx(base, rel=1e-14)


def test_loss_matches_independent_solver(small_samples, rng):
    """Data term recomputed with the reference time stepper."""
    from nlkernel import nonlocal_solver as nls

    th = truth_theta() + 0.2 * rng.normal(size=5)
    obj = T.Objective(small_samples, SMALL)
    kern = SMALL.kernel(obj.coefficients(th))
    total = 0.0
    for s in small_samples:
        g = s.collar_grid(kern.delta)
        out = nls.run(g, kern, s.T, s.dt, forcing=lambda x, t, s=s: s.forcing[round(t / s.dt), g.interior])
        r = out.u[2:, g.interior] - s.u[2:, g.interior]
        total += float(np.sum(r * r))
    expected = SMALL.T_tr / (SMALL.dt**3 * len(small_samples)) * total
    assert obj.loss(th) == pytest.approx(expected, rel=1e-10)


def test_blowup_returns_sentinel(small_samples, caplog):
    th = np.full(5, 1e9)
    assert T.loss(th, small_samples, SMALL) == T.BLOWUP_LOSS
    assert "blew up" in caplog.text


# gradient --------------------------------------------------------------------


def _fd_gradient(obj, th, eps=1e-5):
    g = np.zeros_like(th)
    for p in range(th.size):
        d = np.zeros_like(th)
        d[p] = eps * max(1.0, abs(th[p]))
        g[p] = (obj.loss(th + d) - obj.loss(th - d)) / (2 * d[p])
    return g


def test_gradient_zero_at_manufactured_optimum(small_samples):
    g = T.gradient(truth_theta(), small_samples, SMALL)
    assert np.max(np.abs(g)) < 1e-10


@pytest.mark.parametrize("seed", range(10))
def test_gradient_matches_finite_differences(seed, truth):
    rng = np.random.default_rng(seed)
    sample = manufactured_sample(truth, forcing=gaussian_forcing(rng.uniform(-0.3, 0.3)))
    cfg = replace(SMALL, epsilon=0.01)
    th = truth_theta() + rng.normal(size=5)
    obj = T.Objective([sample], cfg)
    g = obj.gradient(th)
    fd = _fd_gradient(obj, th)
    rel = np.abs(fd - g) / np.abs(g)
    assert np.all(rel < 1e-5), rel


def test_adjoint_equals_forward(small_samples, rng):
    th = truth_theta() + rng.normal(size=5)
    gf = T.gradient(th, small_samples, SMALL, method="forward")
    ga = T.gradient(th, small_samples, SMALL, method="adjoint")
    np.testing.assert_allclose(ga, gf, rtol=1e-10, atol=1e-12 * np.abs(gf).max())


def test_regularization_gradient_is_affine_expression(rng):
    cfg = replace(SMALL, epsilon=0.7)
    obj = T.Objective([], cfg)
    cs = cfg.constraints()
    # Jacobian by exact differencing of the affine map
    C0_ = T.eliminate(np.zeros(5), cs)
    E = np.column_stack([T.eliminate(np.eye(5)[p], cs) - C0_ for p in range(5)])
    th = rng.normal(size=5)
    expected = 2 * 0.7 / 7 * E.T @ (E @ th + C0_)
    np.testing.assert_allclose(obj.gradient(th), expected, rtol=1e-10)


def test_gradient_rejects_unknown_method(small_samples):
    with pytest.raises(ValueError):
        T.Objective(small_samples, SMALL, method="magic")


# optimizer -------------------------------------------------------------------


def test_lbfgs_rosenbrock():
    x, f, rep = T.lbfgs(rosen, rosen_der, np.array([-1.2, 1.0, -0.5, 0.8]), gtol=1e-9, max_iter=500)
    np.testing.assert_allclose(x, 1.0, atol=1e-6)
    assert rep.status in ("gtol", "ftol")
    assert np.all(np.diff(rep.losses) <= 0)


def test_pure_regularization_quadratic_converges_fast():
    cfg = replace(SMALL, epsilon=0.5, gtol=1e-10)
    cs = cfg.constraints()
    E, c = cs.jacobian, T.eliminate(np.zeros(5), cs)
    exact = -np.linalg.solve(E.T @ E, E.T @ c)
    kern, rep = T.minimize([], cfg)
    np.testing.assert_allclose(kern.coefficients[:5], exact, rtol=1e-6, atol=1e-8)
    assert len(rep.iterations) - 1 <= cfg.degree


def rough_forcing(seed):
    r = np.random.default_rng(seed)
    ks, ph = r.uniform(1, 60, 12), r.uniform(0, 2 * np.pi, 12)
    return lambda x, t: np.sin(np.outer(x, ks) + ph).sum(-1) * math.exp(-(((t - 0.1) / 0.08) ** 2))


def test_null_direction_when_stencil_too_short():
    # the two moment constraints are linear in the J stencil weights, so M-1 free
    # coefficients are only identifiable from data when J >= M+1
    short = T.Objective([], SMALL).dhalf
    assert np.linalg.matrix_rank(short) == K.stencil_radius(SMALL.delta, SMALL.h) - 2 < SMALL.degree - 1
    wide = T.Objective([], replace(SMALL, delta=0.4)).dhalf
    assert np.linalg.matrix_rank(wide) == SMALL.degree - 1


def test_manufactured_kernel_recovery():
    cfg = replace(SMALL, delta=0.4, epsilon=1e-8, ftol=0.0)
    truth = cfg.kernel(T.eliminate(truth_theta(), cfg.constraints()))
    samples = [manufactured_sample(truth, b=2.0, forcing=rough_forcing(s), sample_id=s) for s in range(2)]
    kern, rep = T.minimize(samples, cfg)
    assert rep.status == "gtol"
    np.testing.assert_allclose(kern.coefficients, truth.coefficients, rtol=1e-3, atol=1e-3 * np.abs(truth.coefficients).max())
    assert np.all(np.diff(rep.losses) <= 1e-12 * rep.losses[0])
    cs = cfg.constraints()
    assert np.all(np.abs(cs.residuals(kern.coefficients)) < 1e-12)


def test_loss_report_csv(tmp_path, small_samples):
    _, rep = T.minimize(small_samples, replace(SMALL, max_iter=3))
    p = tmp_path / "r.csv"
    rep.write_csv(p, {"config_hash": "h"})
    lines = p.read_text().splitlines()
    assert lines[0] == "# config_hash=h"
    assert "iter,loss,grad_norm,step_length" in lines
    assert len(rep.iterations) <= 4


def test_line_search_failure_returns_best():
    # gradient pointing uphill makes every line search fail
    with pytest.warns(RuntimeWarning, match="line search failed"):
        x, f, rep = T.lbfgs(lambda x: float(x @ x), lambda x: -2 * x, np.array([1.0, 2.0]))
    assert rep.status == "line_search_failed"
    assert f == 5.0


# group velocity / sweep -------------------------------------------------------


def test_kernel_group_velocity_self_consistency():
    kern = KernelModel.constant(0.7714, 0.15, 3)
    curve = K.dispersion(kern, 0.05, n_k=4000, k_max=math.pi / 0.05)
    sel = slice(5, 400, 40)
    ref = T.GroupVelocityCurve(curve.omega[sel], curve.vg[sel], np.ones(curve.omega[sel].size, bool))
    assert T.vg_mismatch(kern, 0.05, ref) < 1e-12


def test_dns_group_velocity_homogeneous():
    from nlkernel.material import Material, Microstructure

    ms = Microstructure(0.2, Material(1.0), Material(1.0))
    gv = T.dns_group_velocity(ms, [0.8, 2.0], travel_time=30.0)
    np.testing.assert_allclose(gv.vg, 1.0, atol=1e-6)
    assert gv.ok.all()


def test_sweep_singleton_and_failures(small_samples, tmp_path):
    ref = T.GroupVelocityCurve(np.array([0.5, 1.0]), np.array([C0, C0]), np.array([True, True]))
    cfg = replace(SMALL, max_iter=5)
    res = T.sweep(small_samples, [0.3], [0.01], cfg, ref)
    assert len(res.rows) == 1 and res.best is res.rows[0]
    res = T.sweep(small_samples, [0.3, 0.33], [0.01], cfg, ref)
    assert len(res.rows) == 2
    assert math.isnan(res.rows[1].vg_mismatch) and res.rows[1].status.startswith("failed")
    assert res.best.delta == 0.3
    res.write_csv(tmp_path / "s.csv", {"config_hash": "h"})
    text = (tmp_path / "s.csv").read_text()
    assert "delta,epsilon,vg_mismatch,final_loss" in text and "# best=0.3,0.01" in text
    with pytest.raises(ValueError):
        T.sweep(small_samples, [], [0.01], cfg, ref)
