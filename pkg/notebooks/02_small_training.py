# %% [markdown]
# # Kernel learning on a reduced data set
#
# Eight of the 31 training scenarios, a 40-iteration L-BFGS budget and the
# analytic Bloch curvature in place of the DNS estimate. Takes about a
# minute. The full pipeline is `nlkernel generate && nlkernel train`.

# %%
import math

import numpy as np

from nlkernel import kernel as K, material as Mt, scenarios as S, training as T

ms = Mt.reference_microstructure()
c0 = Mt.effective_speed(ms)
w = np.array([0.2, 0.3, 0.4])
R, _ = Mt.fit_curvature(w, Mt.bloch_group_velocity(ms, w), c0)
print(f"c0 = {c0:.5f}, R (Bloch) = {R:.5f}")

# %%
picked = [S.oscillating_source(k) for k in (1, 4, 8, 16)] + [S.plane_wave(wv) for wv in (0.7, 1.75, 2.8, 3.85)]
samples = [S.make_sample(sc, ms, sample_id=i) for i, sc in enumerate(picked)]
cfg = T.TrainConfig(c0=c0, R=R, max_iter=40, gradient="adjoint")


def show(it, theta, f, g):
    if it % 10 == 0:
        print(f"iter {it:3d}  loss {f:12.2f}  |g|max {np.abs(g).max():.2e}")


kern, report = T.minimize(samples, cfg, callback=show)
print(report.status, report.message)

# %%
curve = K.dispersion(kern, cfg.h, n_k=4000)
print(f"band stop {K.band_stop(curve)}, min omega^2 {curve.omega_sq.min():.3g}")
y = np.linspace(0, cfg.delta, 7)
print("K(y):", np.round(kern(y), 2))
omegas = [0.5, 1.5, 2.5, 3.5]
ref = T.GroupVelocityCurve(np.array(omegas), Mt.bloch_group_velocity(ms, omegas), np.ones(4, bool))
print(f"vg mismatch against Bloch: {T.vg_mismatch(kern, cfg.h, ref):.4f}")
assert math.isfinite(report.final_loss)
