# %% [markdown]
# # Dispersion of a layered bar and of a nonlocal kernel
#
# Compares the exact Bloch group velocity of the two-phase bar with the
# group velocity implied by a constant-amplitude Bernstein kernel, and
# measures one packet speed with the characteristics solver.
# Run with `python notebooks/01_dispersion_basics.py`.

# %%
import numpy as np

from nlkernel import dns, kernel as K, material as Mt

ms = Mt.reference_microstructure()
c0 = Mt.effective_speed(ms)
edge = Mt.bloch_band_edge(ms)
print(f"c0 = {c0:.6f}, first Bloch band edge at omega = {edge:.4f}")

# %% constant kernel, horizon 0.15
const = K.KernelModel.constant(0.7714, 0.15, 3)
curve = K.dispersion(const, 0.05, n_k=4000)
print(f"constant kernel: long-wave speed {curve.c0:.4f}, band stop {K.band_stop(curve)}")

print(" omega   vg(Bloch)  vg(const kernel)")
for w in (0.5, 1.0, 2.0, 3.0, 3.8):
    i = np.searchsorted(curve.omega[: np.argmax(curve.omega)], w)
    print(f"{w:6.2f}  {float(Mt.bloch_group_velocity(ms, w)):9.4f}  {curve.vg[i]:9.4f}")

# %% one DNS packet
m = dns.packet_group_velocity(ms, 2.0, travel_time=60.0)
print(f"DNS packet at omega=2: vg = {m.vg:.4f} (Bloch at omega_rms {m.omega_rms:.3f}: "
      f"{float(Mt.bloch_group_velocity(ms, m.omega_rms)):.4f})")
