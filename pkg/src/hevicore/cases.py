"""Test-case initializers and verification harnesses.

The mountain rest state and the spherical inertia-gravity wave, both on an
isothermal background brought into *discrete* hydrostatic balance column by
column (the assembled vertical momentum residual is driven to zero, so a
rest state really is a rest state of the solver).  Also the relative L2
error and the temporal convergence-order fit used by the verification runs.
"""

from dataclasses import dataclass

import numpy as np

from .state import StateField, pressure


@dataclass
class CaseConfig:
    name: str = "mountain"
    dtheta: float = 10.0          # IGW perturbation amplitude (K)
    r_pert: float = None          # horizontal radius; default r_e / 3
    h_m: float = 15.0e3           # mountain height (m)
    a_m: float = 5.0e6            # mountain half-width (m)
    T0: float = 300.0             # isothermal background temperature (K)
    rotation: bool = False

    def __post_init__(self):
        if self.r_pert is not None and self.r_pert <= 0:
            raise ValueError("perturbation radius must be positive")
        if not np.isfinite(self.dtheta):
            raise ValueError("perturbation amplitude must be finite")


def great_circle_distance(lam, phi, r_e, lam0=0.0, phi0=0.0):
    """r = r_e arccos(sin phi sin phi0 + cos phi cos phi0 cos(lam - lam0))."""
    arg = np.sin(phi) * np.sin(phi0) + np.cos(phi) * np.cos(phi0) * np.cos(lam - lam0)
    return r_e * np.arccos(np.clip(arg, -1.0, 1.0))


def mountain_height(lam, phi, cfg, r_e):
    """Axisymmetric profile h_m / (1 + (r / a_m)^2), r the great-circle distance."""
    r = great_circle_distance(lam, phi, r_e)
    return cfg.h_m / (1.0 + (r / cfg.a_m) ** 2)


def isothermal_theta(z, constants, T0):
    """Potential temperature of an isothermal hydrostatic atmosphere."""
    c = constants
    return T0 * np.exp(c.kappa * c.g * z / (c.R * T0))


def _analytic_rho(z, constants, T0):
    c = constants
    p = c.P_A * np.exp(-c.g * z / (c.R * T0))
    theta = isothermal_theta(z, constants, T0)
    return (c.P_A / (c.R * theta)) * (p / c.P_A) ** (1.0 / c.gamma)


def hydrostatic_columns(ops, theta_col, T0=300.0, tol=1e-11, max_iter=30):
    """Discretely balanced column density (and boundary theta adjustment).

    Solves, per column, the joint square system: every assembled vertical
    momentum row (interior, interface, and boundary) vanishes, with the
    bottom and top pressures anchored at the analytic isothermal values.
    The unknowns are the nodal densities plus theta at the two boundary
    nodes; the boundary-theta freedom is what makes all rows satisfiable.
    Returns (rho_col, theta_col) with theta modified only at the boundaries
    (by ~1e-4 relative at typical resolutions).
    """
    c = ops.c
    mesh = ops.mesh
    n_z = mesh.n_z
    zcol = mesh.height()[mesh.col_gid]
    rho = _analytic_rho(zcol, c, T0)
    theta = theta_col.copy()
    pb = c.P_A * np.exp(-c.g * zcol[:, 0] / (c.R * T0))
    pt = c.P_A * np.exp(-c.g * zcol[:, -1] / (c.R * T0))
    Dz, wz, pos = ops.Dz, ops.wz, ops.colpos
    wJ = wz[None, None, :] * ops.colJ
    Ml = ops.colMass[:, pos]
    dphi = ops.colDzPhi
    ncol = rho.shape[0]
    N = n_z + 2
    gscale = max(float(np.max(np.abs(dphi))), 1e-30)
    idx = np.arange(ops.nzl)
    for _ in range(max_iter):
        rl = rho[:, pos]
        thl = theta[:, pos]
        q = np.stack([rl, np.zeros_like(rl), np.zeros_like(rl),
                      np.zeros_like(rl), thl], axis=-1)
        P = pressure("2NC", q, c)
        dPdr = c.gamma * P / rl
        dPdt = c.gamma * P / thl
        dP = np.einsum("ia,cla->cli", Dz, P)
        res_l = wJ * (dP / rl + dphi) / Ml
        R = np.zeros((ncol, N))
        Jm = np.zeros((ncol, N, N))
        nz = ops.nzl - 1
        for l in range(ops.nlay):
            sl = slice(l * nz, l * nz + ops.nzl)
            coef = wJ[:, l] / Ml[:, l]
            R[:, sl] += res_l[:, l]
            block = np.einsum("ci,ia,ca->cia", coef / rl[:, l], Dz, dPdr[:, l])
            block[:, idx, idx] += -coef * dP[:, l] / rl[:, l] ** 2
            Jm[:, sl, sl] += block
            if l == 0:  # theta at the global bottom node
                Jm[:, sl, n_z] += np.einsum("ci,i,c->ci", coef / rl[:, l],
                                            Dz[:, 0], dPdt[:, 0, 0])
            if l == ops.nlay - 1:  # theta at the global top node
                Jm[:, sl, n_z + 1] += np.einsum("ci,i,c->ci", coef / rl[:, l],
                                                Dz[:, -1], dPdt[:, -1, -1])
        R[:, n_z] = (P[:, 0, 0] - pb) / c.P_A * gscale
        R[:, n_z + 1] = (P[:, -1, -1] - pt) / c.P_A * gscale
        Jm[:, n_z, 0] = dPdr[:, 0, 0] / c.P_A * gscale
        Jm[:, n_z, n_z] = dPdt[:, 0, 0] / c.P_A * gscale
        Jm[:, n_z + 1, n_z - 1] = dPdr[:, -1, -1] / c.P_A * gscale
        Jm[:, n_z + 1, n_z + 1] = dPdt[:, -1, -1] / c.P_A * gscale
        if np.max(np.abs(R)) < tol * gscale:
            break
        dx = np.linalg.solve(Jm, -R[..., None])[..., 0]
        rho = rho + dx[:, :n_z]
        theta[:, 0] += dx[:, n_z]
        theta[:, -1] += dx[:, n_z + 1]
    return rho, theta


def balanced_rest_state(ops, T0=300.0):
    """Hydrostatically balanced isothermal 2NC rest state on ops' mesh."""
    mesh = ops.mesh
    z = mesh.height()
    theta_col = isothermal_theta(z, ops.c, T0)[mesh.col_gid]
    rho_col, theta_col = hydrostatic_columns(ops, theta_col, T0=T0)
    data = np.zeros((mesh.nglobal, 5))
    data[mesh.col_gid, 0] = rho_col
    data[mesh.col_gid, 4] = theta_col
    return StateField("2NC", data)


def init_mountain(ops, case):
    """Rest atmosphere over the axisymmetric mountain (terrain pre-applied)."""
    if ops.mesh.cfg.geometry != "sphere":
        raise ValueError("mountain case runs on the sphere")
    if case.h_m >= ops.mesh.cfg.z_top:
        raise ValueError("terrain reaches the model top")
    return balanced_rest_state(ops, T0=case.T0)


def init_inertia_gravity(ops, case):
    """Balanced background plus the compact potential-temperature pulse.

    theta' = dtheta * f(lam, phi) * g(z), f = (1 + cos(pi r / r_pert)) / 2
    inside r < r_pert and exactly zero outside, g = sin(pi z / z_top); r is
    the great-circle distance from (0, 0).
    """
    mesh = ops.mesh
    state = balanced_rest_state(ops, T0=case.T0)
    lam, phi = mesh.lonlat()
    r_pert = case.r_pert if case.r_pert is not None else mesh.cfg.radius / 3.0
    r = great_circle_distance(lam, phi, mesh.cfg.radius)
    f = np.where(r < r_pert, 0.5 * (1.0 + np.cos(np.pi * r / r_pert)), 0.0)
    gz = np.sin(np.pi * mesh.height() / mesh.cfg.z_top)
    state.data[:, 4] += case.dtheta * f * gz
    return state


def l2_relative_error(state, reference, ops, variable=4):
    """sqrt(int (q - q_true)^2) / sqrt(int q_true^2) by Lobatto quadrature."""
    M = ops.mass.M
    d = state.data[:, variable] - reference.data[:, variable]
    denom = np.sum(M * reference.data[:, variable] ** 2)
    if denom == 0.0:
        raise ValueError("reference field has zero norm")
    return float(np.sqrt(np.sum(M * d**2) / denom))


def fit_order(dts, errors, floor=0.0):
    """Least-squares slope of log err vs log dt over the asymptotic range.

    Points on the large-dt plateau (local order < 0.5) and points within
    100x of `floor` are excluded; returns (order, used_mask).
    """
    dts = np.asarray(dts, dtype=float)
    errors = np.asarray(errors, dtype=float)
    order = np.argsort(-dts)
    dts, errors = dts[order], errors[order]
    use = np.ones(len(dts), dtype=bool)
    use &= errors > 100.0 * floor
    # walk down from the largest dt past any plateau
    for k in range(len(dts) - 1):
        if not (use[k] and use[k + 1]):
            continue
        p_loc = np.log(errors[k] / errors[k + 1]) / np.log(dts[k] / dts[k + 1])
        if p_loc < 0.5:
            use[k] = False
        else:
            break
    idx = np.where(use)[0]
    if len(idx) < 2:
        return float("nan"), use
    A = np.vstack([np.log(dts[idx]), np.ones(len(idx))]).T
    slope, _ = np.linalg.lstsq(A, np.log(errors[idx]), rcond=None)[0]
    back = np.empty_like(use)
    back[order] = use
    return float(slope), back
