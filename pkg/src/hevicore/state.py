"""Physical constants, prognostic state containers, and equations of state.

Three equation sets share the 5-variable-per-gridpoint layout:
  2NC: (rho, u, v, w, theta)      advective momentum/thermodynamics
  2C : (rho, U, V, W, Theta)      full conservation form, Theta = rho theta
  3C : (rho, U, V, W, E)          total energy prognostic, E = rho e
"""

from dataclasses import dataclass, field

import numpy as np

SET_VARIABLES = {
    "2NC": ("rho", "u", "v", "w", "theta"),
    "2C": ("rho", "U", "V", "W", "Theta"),
    "3C": ("rho", "U", "V", "W", "E"),
}


class NonPhysicalStateError(Exception):
    pass


@dataclass
class PhysConstants:
    c_p: float = 1004.5     # J/(kg K)
    c_v: float = 717.5
    P_A: float = 1.0e5      # reference pressure (Pa)
    g: float = 9.80616      # m/s^2
    omega: float = 7.292e-5 # planet rotation (1/s)
    r_e: float = 6.371e6    # planet radius (m)

    def __post_init__(self):
        if min(self.c_p, self.c_v, self.P_A, self.g, self.r_e) <= 0 or self.omega < 0:
            raise ValueError("constants must be positive (omega >= 0)")

    @property
    def R(self):
        return self.c_p - self.c_v

    @property
    def gamma(self):
        return self.c_p / self.c_v

    @property
    def kappa(self):
        return self.R / self.c_p


@dataclass
class StateField:
    """Prognostic variables on the global grid, one 5-vector per gridpoint."""

    set_name: str
    data: np.ndarray  # (nglobal, 5)

    def __post_init__(self):
        if self.set_name not in SET_VARIABLES:
            raise ValueError(f"unknown equation set {self.set_name!r}")
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2 or self.data.shape[1] != 5:
            raise ValueError("state data must be (nglobal, 5)")

    @property
    def variables(self):
        return SET_VARIABLES[self.set_name]

    def copy(self):
        return StateField(self.set_name, self.data.copy())

    def var(self, name):
        return self.data[:, self.variables.index(name)]

    def validate(self, constants, Phi=None):
        if np.any(self.data[:, 0] <= 0):
            raise NonPhysicalStateError("non-positive density")
        if self.set_name in ("2NC", "2C") and np.any(self.data[:, 4] <= 0):
            raise NonPhysicalStateError("non-positive thermodynamic variable")
        P = pressure(self.set_name, self.data, constants, Phi=Phi)
        if np.any(P <= 0):
            raise NonPhysicalStateError("non-positive diagnosed pressure")


def pressure(set_name, q, constants, Phi=None):
    """Equation of state: pressure from the prognostic 5-vector.

    q has the variables on the last axis; Phi (geopotential) is required for
    set 3C where it enters the internal-energy diagnosis.
    """
    c = constants
    if set_name == "2NC":
        return c.P_A * (q[..., 0] * c.R * q[..., 4] / c.P_A) ** c.gamma
    if set_name == "2C":
        return c.P_A * (c.R * q[..., 4] / c.P_A) ** c.gamma
    if set_name == "3C":
        if Phi is None:
            raise ValueError("set 3C pressure needs the geopotential")
        rho = q[..., 0]
        ke = 0.5 * (q[..., 1] ** 2 + q[..., 2] ** 2 + q[..., 3] ** 2) / rho
        return (c.gamma - 1.0) * (q[..., 4] - ke - rho * Phi)
    raise ValueError(f"unknown equation set {set_name!r}")


def pressure_derivatives(set_name, q, constants, Phi=None):
    """d P / d q for each prognostic variable, same shapes as the state slices."""
    c = constants
    P = pressure(set_name, q, constants, Phi=Phi)
    zeros = np.zeros_like(P)
    if set_name == "2NC":
        return {"rho": c.gamma * P / q[..., 0], "theta": c.gamma * P / q[..., 4]}
    if set_name == "2C":
        return {"rho": zeros, "U": zeros, "V": zeros, "W": zeros,
                "Theta": c.gamma * P / q[..., 4]}
    if set_name == "3C":
        gm1 = c.gamma - 1.0
        rho = q[..., 0]
        return {
            "rho": gm1 * (0.5 * (q[..., 1] ** 2 + q[..., 2] ** 2 + q[..., 3] ** 2)
                          / rho**2 - Phi),
            "U": -gm1 * q[..., 1] / rho,
            "V": -gm1 * q[..., 2] / rho,
            "W": -gm1 * q[..., 3] / rho,
            "E": np.full_like(P, gm1),
        }
    raise ValueError(f"unknown equation set {set_name!r}")


def temperature(set_name, q, constants, Phi=None):
    """Ideal-gas temperature T = P / (rho R)."""
    return pressure(set_name, q, constants, Phi=Phi) / (q[..., 0] * constants.R)


def convert_state(state, target, constants, Phi):
    """Algebraic conversion between equation sets on the same grid."""
    if state.set_name == target:
        return state.copy()
    q = state.data
    rho = q[:, 0]
    if state.set_name == "2NC":
        u, v, w, theta = q[:, 1], q[:, 2], q[:, 3], q[:, 4]
        U, V, W = rho * u, rho * v, rho * w
    elif state.set_name in ("2C", "3C"):
        U, V, W = q[:, 1], q[:, 2], q[:, 3]
        u, v, w = U / rho, V / rho, W / rho
        if state.set_name == "2C":
            theta = q[:, 4] / rho
        else:
            T = temperature("3C", q, constants, Phi=Phi)
            P = pressure("3C", q, constants, Phi=Phi)
            theta = T * (constants.P_A / P) ** constants.kappa
    if target == "2NC":
        out = np.stack([rho, u, v, w, theta], axis=1)
    elif target == "2C":
        out = np.stack([rho, U, V, W, rho * theta], axis=1)
    elif target == "3C":
        P = constants.P_A * (rho * constants.R * theta / constants.P_A) ** constants.gamma
        T = P / (rho * constants.R)
        E = rho * (constants.c_v * T + 0.5 * (u**2 + v**2 + w**2) + Phi)
        out = np.stack([rho, U, V, W, E], axis=1)
    else:
        raise ValueError(f"unknown equation set {target!r}")
    return StateField(target, out)
