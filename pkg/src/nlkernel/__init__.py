"""Learning Bernstein-polynomial nonlocal kernels for wave propagation in layered bars.

Submodules
----------
material         layered periodic bar, effective speed and dispersion curvature
dns              characteristics-based high-fidelity solver for the layered bar
kernel           Bernstein kernel, Riemann-sum stencil, moments, dispersion
nonlocal_solver  central-difference time integrator for the nonlocal wave equation
scenarios        the four loading scenarios, training samples, validation runs
training         constrained kernel learning with L-BFGS and the (delta, eps) sweep
cli              command line front end
"""

from nlkernel.fields import FieldSeries
from nlkernel.kernel import KernelModel, DispersionCurve, dispersion, band_stop
from nlkernel.material import Material, Microstructure, EffectiveParams, reference_microstructure

__all__ = [
    "FieldSeries",
    "KernelModel",
    "DispersionCurve",
    "dispersion",
    "band_stop",
    "Material",
    "Microstructure",
    "EffectiveParams",
    "reference_microstructure",
]

__version__ = "0.1.0"
