"""Spectral-element compressible Euler solver with HEVI time integration.

Subpackages cover the 1D Lobatto basis, cubed-sphere/box meshes, curl-invariant
metric terms, the equation-set operators (2NC, 2C, 3C), tensor hyper-diffusion,
banded/Krylov linear algebra, IMEX additive Runge-Kutta tableaux, the three
HEVI stage solvers (NHEVI-GMRES, NHEVI-LU, LHEVI), test-case initializers and
the run/verification command line.
"""

__version__ = "0.1.0"
