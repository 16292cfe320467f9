"""IMEX additive Runge-Kutta tableaux and the generic stage driver.

Five ESDIRK pairs: ARK2 (three-stage second order with a32 = 1/2), ARK3 and
ARK4 (the classic four- and six-stage stiffly accurate pairs with rational
coefficients), ARS3 (the four-stage third-order pair built on the SDIRK
gamma root), ARK5 (eight-stage fifth order, gamma = 2/9 family).  Every pair
shares b between the explicit and implicit tables (the condition for
conserving linear invariants) and is verified against the Butcher order
conditions at load time, so a transcription slip fails immediately.
"""

from dataclasses import dataclass
from fractions import Fraction as Fr

import numpy as np


@dataclass(frozen=True)
class ButcherPair:
    name: str
    order: int
    A: np.ndarray        # explicit, strictly lower triangular
    b: np.ndarray
    c: np.ndarray
    A_im: np.ndarray     # implicit, ESDIRK (zero first stage, constant diagonal)
    b_im: np.ndarray
    c_im: np.ndarray

    @property
    def stages(self):
        return len(self.b)

    @property
    def gamma(self):
        return float(self.A_im[-1, -1])

    @property
    def n_implicit(self):
        return int(np.sum(np.abs(np.diag(self.A_im)) > 0))


class TableauError(Exception):
    pass


def _rk_order_residuals(A, b, c, p):
    """Residuals of the Butcher conditions up to order p (p <= 5)."""
    res = []
    res.append(np.sum(b) - 1.0)
    if p >= 2:
        res.append(b @ c - 1 / 2)
    if p >= 3:
        res.append(b @ c**2 - 1 / 3)
        res.append(b @ (A @ c) - 1 / 6)
    if p >= 4:
        res.append(b @ c**3 - 1 / 4)
        res.append((b * c) @ (A @ c) - 1 / 8)
        res.append(b @ (A @ c**2) - 1 / 12)
        res.append(b @ (A @ (A @ c)) - 1 / 24)
    if p >= 5:
        res.append(b @ c**4 - 1 / 5)
        res.append((b * c**2) @ (A @ c) - 1 / 10)
        res.append(b @ ((A @ c) ** 2) - 1 / 20)
        res.append((b * c) @ (A @ c**2) - 1 / 15)
        res.append(b @ (A @ c**3) - 1 / 20)
        res.append((b * c) @ (A @ (A @ c)) - 1 / 30)
        res.append(b @ ((A * c[None, :]) @ (A @ c)) - 1 / 40)
        res.append(b @ (A @ (A @ c**2)) - 1 / 60)
        res.append(b @ (A @ (A @ (A @ c))) - 1 / 120)
    return np.array(res, dtype=float)


def _coupling_residuals(tab, p):
    """Mixed-tree conditions up to min(p, 3); trivial with b = b~ and c = c~."""
    res = []
    A, Ai, b, c = tab.A, tab.A_im, tab.b, tab.c
    res.append(np.max(np.abs(tab.b - tab.b_im)))
    res.append(np.max(np.abs(tab.c - tab.c_im)))
    if p >= 3:
        res.append(b @ (A @ tab.c_im) - 1 / 6)
        res.append(b @ (Ai @ c) - 1 / 6)
    return np.array(res, dtype=float)


def order_condition_residuals(tab):
    """Max |residual| over explicit, implicit, and coupling conditions."""
    p = min(tab.order, 5)
    return max(
        float(np.max(np.abs(_rk_order_residuals(tab.A, tab.b, tab.c, p)))),
        float(np.max(np.abs(_rk_order_residuals(tab.A_im, tab.b_im, tab.c_im, p)))),
        float(np.max(np.abs(_coupling_residuals(tab, p)))),
    )


def _validate(tab, tol=1e-12):
    if np.max(np.abs(np.triu(tab.A))) > 0:
        raise TableauError(f"{tab.name}: explicit table not strictly lower triangular")
    if np.max(np.abs(np.triu(tab.A_im, 1))) > 0:
        raise TableauError(f"{tab.name}: implicit table not lower triangular")
    if tab.A_im[0, 0] != 0.0:
        raise TableauError(f"{tab.name}: first implicit stage must be explicit (ESDIRK)")
    d = np.diag(tab.A_im)[1:]
    if np.max(np.abs(d - d[0])) > tol:
        raise TableauError(f"{tab.name}: implicit diagonal not constant (SDIRK)")
    if np.max(np.abs(tab.A.sum(axis=1) - tab.c)) > 1e-13:
        raise TableauError(f"{tab.name}: explicit row sums != c")
    if np.max(np.abs(tab.A_im.sum(axis=1) - tab.c_im)) > 1e-13:
        raise TableauError(f"{tab.name}: implicit row sums != c~")
    r = order_condition_residuals(tab)
    if r > tol:
        raise TableauError(f"{tab.name}: order-condition residual {r:.3e} > {tol}")
    return tab


def _ark2():
    s2 = np.sqrt(2.0)
    gam = 1.0 - 1.0 / s2
    b = np.array([1.0 / (2.0 * s2), 1.0 / (2.0 * s2), gam])
    c = np.array([0.0, 2.0 - s2, 1.0])
    A = np.zeros((3, 3))
    A[1, 0] = 2.0 - s2
    A[2, 0] = 0.5
    A[2, 1] = 0.5  # the "b" variant; the wedge-shaped stability region
    Ai = np.zeros((3, 3))
    Ai[1, 0] = gam
    Ai[1, 1] = gam
    Ai[2, :] = b
    return ButcherPair("ARK2", 2, A, b, c, Ai, b.copy(), c.copy())


def _ars3():
    # gamma is the middle root of 6 g^3 - 18 g^2 + 9 g - 1 = 0
    gam = float(np.roots([6.0, -18.0, 9.0, -1.0])[1])
    b2 = -1.5 * gam**2 + 4.0 * gam - 0.25
    b3 = 1.5 * gam**2 - 5.0 * gam + 1.25
    b = np.array([0.0, b2, b3, gam])
    c = np.array([0.0, gam, 0.5 * (1.0 + gam), 1.0])
    Ai = np.zeros((4, 4))
    Ai[1, 1] = gam
    Ai[2, 1] = 0.5 * (1.0 - gam)
    Ai[2, 2] = gam
    Ai[3, 1] = b2
    Ai[3, 2] = b3
    Ai[3, 3] = gam
    # explicit: published a32, with a42 = a43 solved from b.A.c = 1/6 so the
    # third-order condition holds to machine precision
    a32 = 0.3966543747256017
    A = np.zeros((4, 4))
    A[1, 0] = gam
    A[2, 1] = a32
    A[2, 0] = c[2] - a32
    K = (1.0 / 6.0 - b3 * a32 * gam) / (gam * (gam + c[2]))
    A[3, 1] = K
    A[3, 2] = K
    A[3, 0] = 1.0 - 2.0 * K
    return ButcherPair("ARS3", 3, A, b, c, Ai, b.copy(), c.copy())


def _ark3():
    g = Fr(1767732205903, 4055673282236)
    b = [Fr(1471266399579, 7840856788654), Fr(-4482444167858, 7529755066697),
         Fr(11266239266428, 11593286722821), g]
    c = [Fr(0), 2 * g, Fr(3, 5), Fr(1)]
    Ai = [
        [0, 0, 0, 0],
        [g, g, 0, 0],
        [Fr(2746238789719, 10658868560708), Fr(-640167445237, 6845629431997), g, 0],
        b,
    ]
    A = [
        [0, 0, 0, 0],
        [2 * g, 0, 0, 0],
        [Fr(5535828885825, 10492691773637), Fr(788022342437, 10882634858940), 0, 0],
        [Fr(6485989280629, 16251701735622), Fr(-4246266847089, 9704473918619),
         Fr(10755448449292, 10357097424841), 0],
    ]
    tofl = lambda M: np.array(M, dtype=float)
    return ButcherPair("ARK3", 3, tofl(A), tofl(b), tofl(c), tofl(Ai), tofl(b), tofl(c))


def _ark4():
    g = Fr(1, 4)
    b = [Fr(82889, 524892), Fr(0), Fr(15625, 83664), Fr(69875, 102672),
         Fr(-2260, 8211), g]
    c = [Fr(0), Fr(1, 2), Fr(83, 250), Fr(31, 50), Fr(17, 20), Fr(1)]
    Ai = [
        [0, 0, 0, 0, 0, 0],
        [g, g, 0, 0, 0, 0],
        [Fr(8611, 62500), Fr(-1743, 31250), g, 0, 0, 0],
        [Fr(5012029, 34652500), Fr(-654441, 2922500), Fr(174375, 388108), g, 0, 0],
        [Fr(15267082809, 155376265600), Fr(-71443401, 120774400),
         Fr(730878875, 902184768), Fr(2285395, 8070912), g, 0],
        b,
    ]
    A = [
        [0, 0, 0, 0, 0, 0],
        [Fr(1, 2), 0, 0, 0, 0, 0],
        [Fr(13861, 62500), Fr(6889, 62500), 0, 0, 0, 0],
        [Fr(-116923316275, 2393684061468), Fr(-2731218467317, 15368042101831),
         Fr(9408046702089, 11113171139209), 0, 0, 0],
        [Fr(-451086348788, 2902428689909), Fr(-2682348792572, 7519795681897),
         Fr(12662868775082, 11960479115383), Fr(3355817975965, 11060851509271), 0, 0],
        [Fr(647845179188, 3216320057751), Fr(73281519250, 8382639484533),
         Fr(552539513391, 3454668386233), Fr(3354512671639, 8306763924573),
         Fr(4040, 17871), 0],
    ]
    tofl = lambda M: np.array(M, dtype=float)
    return ButcherPair("ARK4", 4, tofl(A), tofl(b), tofl(c), tofl(Ai), tofl(b), tofl(c))


def _ark5():
    g = Fr(2, 9)
    b = [Fr(0), Fr(0), Fr(3517720773327, 20256071687669),
         Fr(4569610470461, 17934693873752), Fr(2819471173109, 11655438449929),
         Fr(3296210113763, 10722700128969), Fr(-1142099968913, 5710983926999), g]
    # c4 pinned to the (identical) row sums of both tables
    c4 = 2 * Fr(-257962897183, 4451812247028) + Fr(128530224461, 14379561246022) + g
    c = [Fr(0), Fr(4, 9), Fr(6456083330201, 8509243623797),
         c4, Fr(6365430648612, 17842476412687),
         Fr(18, 25), Fr(191, 200), Fr(1)]
    Ai = [
        [0, 0, 0, 0, 0, 0, 0, 0],
        [g, g, 0, 0, 0, 0, 0, 0],
        [Fr(2366667076620, 8822750406821), Fr(2366667076620, 8822750406821),
         g, 0, 0, 0, 0, 0],
        [Fr(-257962897183, 4451812247028), Fr(-257962897183, 4451812247028),
         Fr(128530224461, 14379561246022), g, 0, 0, 0, 0],
        [Fr(-486229321650, 11227943450093), Fr(-486229321650, 11227943450093),
         Fr(-225633144460, 6633558740617), Fr(1741320951451, 6824444397158),
         g, 0, 0, 0],
        [Fr(621307788657, 4714163060173), Fr(621307788657, 4714163060173),
         Fr(-125196015625, 3866852212004), Fr(940440206406, 7593089888465),
         Fr(961109811699, 6734810228204), g, 0, 0],
        [Fr(2036305566805, 6583108094622), Fr(2036305566805, 6583108094622),
         Fr(-3039402635899, 4450598839912), Fr(-1829510709469, 31102090912115),
         Fr(-286320471013, 6931253422520), Fr(8651533662697, 9642993110008),
         g, 0],
        b,
    ]
    A = [
        [0, 0, 0, 0, 0, 0, 0, 0],
        [Fr(4, 9), 0, 0, 0, 0, 0, 0, 0],
        [Fr(1, 9), Fr(1183333538310, 1827251437969), 0, 0, 0, 0, 0, 0],
        [Fr(895379019517, 9750411845327), Fr(477606656805, 13473228687314),
         Fr(-112564739183, 9373365219272), 0, 0, 0, 0, 0],
        [Fr(-4458043123994, 13015289567637), Fr(-2500665203865, 9342069639922),
         Fr(983347055801, 8893519644487), Fr(2185051477207, 2551468980502),
         0, 0, 0, 0],
        [Fr(-167316361917, 17121522574472), Fr(1605541814917, 7619724128744),
         Fr(991021770328, 13052792161721), Fr(2342280609577, 11279663441611),
         Fr(3012424348531, 12792462456678), 0, 0, 0],
        [Fr(6680998715867, 14310383562358), Fr(5029118570809, 3897454228471),
         Fr(2415062538259, 6382199904604), Fr(-3924368632305, 6964820224454),
         Fr(-4331110370267, 15021686902756), Fr(-3944303808049, 11994238218192),
         0, 0],
        [Fr(2193717860234, 3570523412979), Fr(2193717860234, 3570523412979),
         Fr(5952760925747, 18750164281544), Fr(-4412967128996, 6196664114337),
         Fr(4151782504231, 36106512998704), Fr(572599549169, 6265429158920),
         Fr(-457874356192, 11306498036315), 0],
    ]
    tofl = lambda M: np.array(M, dtype=float)
    return ButcherPair("ARK5", 5, tofl(A), tofl(b), tofl(c), tofl(Ai), tofl(b), tofl(c))


_BUILDERS = {"ARK2": _ark2, "ARK3": _ark3, "ARS3": _ars3, "ARK4": _ark4,
             "ARK5": _ark5}
_CACHE = {}


def tableau(name):
    """Load a verified IMEX pair by name (ARK2, ARK3, ARS3, ARK4, ARK5)."""
    if name not in _BUILDERS:
        raise KeyError(f"unknown tableau {name!r}; have {sorted(_BUILDERS)}")
    if name not in _CACHE:
        _CACHE[name] = _validate(_BUILDERS[name]())
    return _CACHE[name]


def tableau_names():
    return tuple(sorted(_BUILDERS))


# --------------------------------------------------------------------- driver

def imex_step(tab, qn, dt, explicit, implicit, stage_solver=None):
    """One IMEX step.

    explicit(q, i) and implicit(q) return tendencies; stage_solver(i, lam, R,
    guess) solves Q = R + lam I(Q) for the implicit stages and defaults to an
    error if any implicit stage is hit without a solver.  The implicit
    tendency at a solved stage is recovered algebraically as (Q - R)/lam.
    """
    qn = np.asarray(qn)
    s = tab.stages
    Ev, Iv = [None] * s, [None] * s
    Q = [None] * s
    for i in range(s):
        R = qn.copy()
        for j in range(i):
            if tab.A[i, j] != 0.0:
                R = R + (dt * tab.A[i, j]) * Ev[j]
            if tab.A_im[i, j] != 0.0:
                R = R + (dt * tab.A_im[i, j]) * Iv[j]
        aii = tab.A_im[i, i]
        if aii == 0.0:
            Q[i] = R
            Iv[i] = implicit(Q[i])
        else:
            lam = aii * dt
            if stage_solver is None:
                raise ValueError("implicit stage reached without a stage solver")
            Q[i] = stage_solver(i, lam, R, Q[i - 1])
            Iv[i] = (Q[i] - R) / lam
        Ev[i] = explicit(Q[i], i)
    q1 = qn.copy()
    for i in range(s):
        if tab.b[i] != 0.0:
            q1 = q1 + (dt * tab.b[i]) * Ev[i]
        if tab.b_im[i] != 0.0:
            q1 = q1 + (dt * tab.b_im[i]) * Iv[i]
    return q1


# ---------------------------------------------------------- stability region

@dataclass
class StabilityGrid:
    ks: np.ndarray        # slow (explicit) frequencies
    kf: np.ndarray        # fast (implicit) frequencies
    amp: np.ndarray       # |R| with shape (len(kf), len(ks))


def _scalar_imex_amp(tab, zs, zf):
    """|q1| after one exact-solve IMEX step on q' = i ks q + i kf q, q0 = 1."""
    s = tab.stages
    Q = np.zeros(s, dtype=complex)
    for i in range(s):
        R = 1.0 + 0.0j
        for j in range(i):
            R += tab.A[i, j] * zs * Q[j] + tab.A_im[i, j] * zf * Q[j]
        Q[i] = R / (1.0 - tab.A_im[i, i] * zf)
    q1 = 1.0 + np.sum((tab.b * zs + tab.b_im * zf) * Q)
    return abs(q1)


def stability_region(tab, ks_max=4.0, kf_max=40.0, n_ks=81, n_kf=81):
    """Amplification magnitude of the split scalar oscillator on a grid."""
    ks = np.linspace(0.0, ks_max, n_ks)
    kf = np.linspace(0.0, kf_max, n_kf)
    amp = np.empty((n_kf, n_ks))
    for a, kfv in enumerate(kf):
        for b, ksv in enumerate(ks):
            amp[a, b] = _scalar_imex_amp(tab, 1j * ksv, 1j * kfv)
    return StabilityGrid(ks=ks, kf=kf, amp=amp)


def explicit_stability_polynomial(tab, z):
    """R(z) of the explicit table alone: 1 + z b (I - z A)^-1 1."""
    s = tab.stages
    z = np.asarray(z, dtype=complex)
    out = np.empty(z.shape, dtype=complex)
    for idx in np.ndindex(z.shape):
        M = np.eye(s, dtype=complex) - z[idx] * tab.A
        out[idx] = 1.0 + z[idx] * (tab.b @ np.linalg.solve(M, np.ones(s)))
    return out


def stable_extent(grid, row, tol=1e-12):
    """Largest contiguous stable ks on one kf row of the grid."""
    stable = grid.amp[row] <= 1.0 + tol
    if not stable[0]:
        return 0.0
    idx = np.argmax(~stable) if np.any(~stable) else len(stable)
    return grid.ks[idx - 1]


# five-stage fourth-order low-storage (2N) RK: the reference integrator
LSRK4_A = (
    0.0,
    -567301805773.0 / 1357537059087.0,
    -2404267990393.0 / 2016746695238.0,
    -3550918686646.0 / 2091501179385.0,
    -1275806237668.0 / 842570457699.0,
)
LSRK4_B = (
    1432997174477.0 / 9575080441755.0,
    5161836677717.0 / 13612068292357.0,
    1720146321549.0 / 2090206949498.0,
    3134564353537.0 / 4481467310338.0,
    2277821191437.0 / 14882151754819.0,
)


def lsrk4_step(q, dt, rhs):
    """One step of the five-stage fourth-order low-storage explicit RK."""
    dq = np.zeros_like(q)
    for a, b in zip(LSRK4_A, LSRK4_B):
        dq = a * dq + dt * rhs(q)
        q = q + b * dq
    return q


def cost_ratio(dt_max_1, s_im_1, dt_max_2, s_im_2):
    """Effective-time-step ratio R = (dt1/s1) / (dt2/s2); > 1 means 1 faster."""
    if min(dt_max_1, s_im_1, dt_max_2, s_im_2) <= 0:
        raise ValueError("inputs must be positive")
    return (dt_max_1 / s_im_1) / (dt_max_2 / s_im_2)
