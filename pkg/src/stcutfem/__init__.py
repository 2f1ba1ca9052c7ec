"""Space-time cut finite element toolkit for PDEs on moving interfaces.

Solves convection-diffusion equations on evolving curves and a coupled
bulk-surface surfactant system on a fixed background mesh. The interface
cuts arbitrarily through the mesh; stabilization terms keep the linear
systems well conditioned, and time integrals over each space-time slab are
approximated by Newton-Cotes quadrature so geometry is only needed at the
time quadrature points.
"""

from ._kernels import BACKEND as kernel_backend

__version__ = "0.1.0"

__all__ = ["kernel_backend", "__version__"]
