"""Tensor hyper-diffusion: viscous metric tensor and the alpha-fold Laplacian.

The viscous metric tensor combines viscosity and geometry in a single
per-gridpoint 3x3 tensor G_nu = sum_i nu_i lambda_i^-1 (e_i x e_i) built
from the eigendecomposition of G = J^-1 J^-T; only G_nu is stored.  The
weak Laplacian with natural (no-flux) boundaries is applied alpha times
with DSS and inverse mass between applications; the sign convention makes
every order dissipative.
"""

from dataclasses import dataclass

import numpy as np

from . import assembly


@dataclass
class HyperDiffConfig:
    alpha: int = 2                     # 1 = Laplacian, 2 = fourth order
    mode: str = "scaled"               # "scaled" | "constant" | "anisotropic"
    c: tuple = (0.0045, 0.0045, 0.0001)
    nu: tuple = (0.0, 0.0, 0.0)        # constant viscosities, L^2 / T^(1/alpha)
    nu_h: float = 0.0                  # anisotropic horizontal / vertical pair
    nu_v: float = 0.0
    variables: tuple = (1, 2, 3, 4)    # momentum + thermodynamic, never rho
    final_stage_only: bool = False

    def __post_init__(self):
        if self.alpha not in (1, 2):
            raise ValueError("alpha must be 1 or 2")
        if self.mode not in ("scaled", "constant", "anisotropic"):
            raise ValueError(f"unknown hyperdiff mode {self.mode!r}")
        if min(self.c) < 0 or min(self.nu) < 0 or self.nu_h < 0 or self.nu_v < 0:
            raise ValueError("coefficients must be >= 0")
        if 0 in self.variables:
            raise ValueError("hyper-diffusing density is out of scope")


class ViscousMetric:
    """G_nu tensor per element gridpoint, plus cached eigen-data of G.

    lam is ordered as the stretching lengths lambda_1 >= lambda_2 >= lambda_3
    (the reciprocals of the ascending eigenvalues of G); Delta x = 2 sqrt(lam)
    on an affine element.  No tau tensor is kept.
    """

    def __init__(self, Gnu, lam, evecs):
        self.Gnu = Gnu      # (nelem, n1, n2, n3, 3, 3)
        self.lam = lam      # (nelem, n1, n2, n3, 3)
        self.evecs = evecs  # (nelem, n1, n2, n3, 3, 3), columns are e_i


def scaled_viscosity(c, lam, N, dt, alpha):
    """nu_i = c_i^(1/alpha) * 4 lambda_i / (N^2 dt^(1/alpha))."""
    if dt <= 0:
        raise ValueError("scaled viscosities need dt > 0")
    c = np.asarray(c, dtype=float)
    return (c ** (1.0 / alpha)) * 4.0 * lam / (N**2 * dt ** (1.0 / alpha))


def build_viscous_metric(mesh, mets, cfg, dt=None):
    """Assemble G_nu from the metric tensor eigendecomposition."""
    grad = mets.grad_elem  # (nelem, 3 dir, 3 comp, n1, n2, n3)
    G = np.einsum("emcijk,encijk->eijkmn", grad, grad)
    vals, vecs = np.linalg.eigh(G)  # ascending eigenvalues of G = 1/lambda
    if np.any(vals <= 0):
        raise ValueError("degenerate element: non-positive metric eigenvalue")
    lam = 1.0 / vals  # lambda_1 >= lambda_2 >= lambda_3
    if cfg.mode == "scaled":
        N = max(mesh.cfg.degree_xi, mesh.cfg.degree_eta, mesh.cfg.degree_zeta)
        nu = scaled_viscosity(cfg.c, lam, N, dt, cfg.alpha)
    elif cfg.mode == "constant":
        nu = np.broadcast_to(np.asarray(cfg.nu, dtype=float), lam.shape)
    else:  # anisotropic: nu_1 = nu_2 = nu_H, nu_3 = nu_V
        nu = np.empty_like(lam)
        nu[..., 0] = cfg.nu_h
        nu[..., 1] = cfg.nu_h
        nu[..., 2] = cfg.nu_v
    Gnu = np.einsum("...m,...cm,...dm->...cd", nu * vals, vecs, vecs)
    return ViscousMetric(Gnu, lam, vecs)


def laplacian_apply(field_g, viscous, ops):
    """M^-1 DSS(-L_nu q): the weak viscous Laplacian, globally continuous."""
    mesh = ops.mesh
    q = assembly.gather(mesh, field_g)
    dq = np.stack([assembly.elem_deriv(mesh, q, m) for m in range(3)], axis=-1)
    flux = np.einsum("eijkmn,eijkn->eijkm", viscous.Gnu, dq)
    flux *= ops.Jg_e[..., None]
    acc = np.zeros_like(q)
    for m in range(3):
        acc += assembly.weak_deriv_acc(mesh, flux[..., m], m)
    return assembly.dss(mesh, acc) * ops.mass.Minv


def hyperdiffusion_apply(state, cfg, viscous, ops):
    """(-1)^(alpha+1) (Laplacian)^alpha on the configured variables only."""
    out = np.zeros_like(state.data)
    sign = (-1.0) ** (cfg.alpha + 1)
    for v in cfg.variables:
        y = state.data[:, v]
        for _ in range(cfg.alpha):
            y = laplacian_apply(y, viscous, ops)
        out[:, v] = sign * y
    return out
