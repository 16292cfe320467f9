"""HEVI implicit-stage solvers: NHEVI-GMRES, NHEVI-LU, LHEVI.

All three solve the per-column stage problem F(Q) = Q - lam V(Q) - R = 0
with lam = a~_ii dt.  NHEVI-GMRES runs Newton with a matrix-free Krylov
solve of the Frechet-differenced Jacobian action; NHEVI-LU factors the
analytical banded column Jacobian at every Newton step; LHEVI performs one
linear solve per implicit stage against a cached factorization of the
Jacobian at a reference state, rebuilt every `update_interval` time steps
(PS) or never (RS).

A "column operator" here is anything with ncol / n_z / nvar / kl / ku /
Mdim attributes plus column_apply(qcol) and column_jacobian(qcol, lam);
EulerOps provides the physical one and LinearColumnOperator a synthetic one
for verification.
"""

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .ark import imex_step


class StageSolveError(Exception):
    def __init__(self, msg, column=None, stage=None):
        self.column = column
        self.stage = stage
        super().__init__(msg)


@dataclass
class NewtonConfig:
    """Tolerances and Frechet scaling for the nonlinear stage solves.

    newton_tol applies to the per-column RMS of the residual scaled by
    per-variable magnitudes (velocity scales floored at 1 so a resting
    atmosphere is not held to an impossible relative tolerance);
    gmres_tol is relative to the Newton right-hand side.  epsilon is the
    Frechet perturbation, a scalar broadcast over the five variables or a
    length-5 diagonal; the effective perturbation of variable v is
    epsilon_v times that variable's magnitude, the diagonal-matrix form.
    """

    newton_tol: float = 1e-5
    gmres_tol: float = 1e-9
    epsilon: object = 0.05
    max_newton: int = 50
    max_gmres: int = None

    def __post_init__(self):
        if self.newton_tol <= 0 or self.gmres_tol <= 0:
            raise ValueError("tolerances must be positive")
        eps = np.atleast_1d(np.asarray(self.epsilon, dtype=float))
        if np.any(eps <= 0):
            raise ValueError("epsilon entries must be positive")

    def eps_vector(self):
        eps = np.atleast_1d(np.asarray(self.epsilon, dtype=float))
        return np.broadcast_to(eps, (5,)).astype(float)


@dataclass
class SolverCounters:
    newton_iters: int = 0
    gmres_iters: int = 0
    factorizations: int = 0
    backsolves: int = 0
    residual_evals: int = 0
    rhs_horizontal: int = 0
    rhs_vertical: int = 0
    stages: int = 0
    newton_per_column: object = None
    gmres_per_column: object = None

    def report(self):
        out = {k: getattr(self, k) for k in
               ("newton_iters", "gmres_iters", "factorizations", "backsolves",
                "residual_evals", "rhs_horizontal", "rhs_vertical", "stages")}
        if self.stages and self.newton_per_column is not None:
            out["newton_per_column_per_stage"] = float(
                np.mean(self.newton_per_column) / self.stages
            )
        if self.stages and self.gmres_per_column is not None:
            out["gmres_per_column_per_stage"] = float(
                np.mean(self.gmres_per_column) / self.stages
            )
        return out


def complexity_model(method, n_z, N_zeta, n_var=5, n_newton=1, n_gmres=1):
    """Per-column per-stage flop estimates used for comparison in reports."""
    if method == "nhevi-gmres":
        return 25.0 * n_z**2 * n_newton * n_gmres**2
    B = 2 * n_var * (N_zeta + 1)
    if method == "nhevi-lu":
        return 10.0 * n_z * B * (B + 1) * n_newton
    if method == "lhevi":
        return {"factor": 1000.0 * n_z * N_zeta**2, "backsolve": 100.0 * n_z * N_zeta}
    raise ValueError(f"unknown method {method!r}")


def residual(vop, qcol, lam, Rcol):
    """F(q) = q - lam V(q) - R on column-major state."""
    return qcol - lam * vop.column_apply(qcol) - Rcol


def variable_scales(qcol):
    """Per-variable magnitudes for residual scaling; velocities floored at 1."""
    s = np.max(np.abs(qcol), axis=(0, 1))
    s[1:4] = np.maximum(s[1:4], 1.0)
    return np.maximum(s, 1e-30)


def scaled_norm(F, scale):
    """Per-column RMS of the scaled residual."""
    return np.sqrt(np.mean((F / scale) ** 2, axis=(1, 2)))


def _record_newton(counters, conv_at):
    if counters is None:
        return
    counters.newton_iters += int(np.sum(conv_at))
    if counters.newton_per_column is None:
        counters.newton_per_column = np.zeros_like(conv_at)
    counters.newton_per_column = counters.newton_per_column + conv_at
    counters.stages += 1


def solve_stage_lu(vop, lam, Rcol, guess, cfg=None, counters=None, stage=None):
    """Newton iteration with the analytical banded Jacobian and direct solves."""
    cfg = cfg or NewtonConfig()
    q = guess.copy()
    scale = variable_scales(np.where(np.isfinite(guess), guess, 0.0))
    conv_at = np.full(vop.ncol, -1, dtype=int)
    for m in range(cfg.max_newton + 1):
        F = residual(vop, q, lam, Rcol)
        if counters is not None:
            counters.residual_evals += 1
        norms = scaled_norm(F, scale)
        newly = (conv_at < 0) & (norms <= cfg.newton_tol)
        conv_at[newly] = m
        if np.all(conv_at >= 0):
            break
        if m == cfg.max_newton:
            worst = int(np.argmax(norms))
            raise StageSolveError(
                f"NHEVI-LU: no convergence in {m} Newton iterations "
                f"(worst column {worst}, residual {norms[worst]:.3e})",
                column=worst, stage=stage)
        band = vop.column_jacobian(q, lam)
        try:
            ipiv, _ = linalg.banded_lu_factor_batch(band, vop.kl, vop.ku)
        except linalg.SingularMatrixError as e:
            raise StageSolveError(f"singular column Jacobian: {e}",
                                  column=e.batch, stage=stage) from e
        if counters is not None:
            counters.factorizations += vop.ncol
        dq, _ = linalg.banded_solve_batch(band, ipiv, vop.kl, vop.ku,
                                          -F.reshape(vop.ncol, -1))
        if counters is not None:
            counters.backsolves += vop.ncol
        q = q + dq.reshape(q.shape)
    _record_newton(counters, conv_at)
    return q


def solve_stage_jfnk(vop, lam, Rcol, guess, cfg=None, counters=None, stage=None):
    """Jacobian-free Newton-Krylov stage solve (matrix-free GMRES inner loop)."""
    cfg = cfg or NewtonConfig()
    q = guess.copy()
    if not np.all(np.isfinite(q)):
        raise StageSolveError("non-finite initial guess", stage=stage)
    scale = variable_scales(q)
    eps_rel = cfg.eps_vector()
    conv_at = np.full(vop.ncol, -1, dtype=int)
    gm_total = np.zeros(vop.ncol, dtype=int)
    shape = q.shape
    for m in range(cfg.max_newton + 1):
        F = residual(vop, q, lam, Rcol)
        if counters is not None:
            counters.residual_evals += 1
        norms = scaled_norm(F, scale)
        newly = (conv_at < 0) & (norms <= cfg.newton_tol)
        conv_at[newly] = m
        if np.all(conv_at >= 0):
            break
        if m == cfg.max_newton:
            worst = int(np.argmax(norms))
            raise StageSolveError(
                f"NHEVI-GMRES: no convergence in {m} Newton iterations "
                f"(worst column {worst}, residual {norms[worst]:.3e})",
                column=worst, stage=stage)

        # E scales the Newton-step-sized directions: perturbations are
        # epsilon times the per-variable residual magnitude and shrink with
        # the residual, keeping the secant an accurate Jacobian action.
        eps = eps_rel * np.maximum(
            np.sqrt(np.mean(F**2, axis=(0, 1))), 1e-10 * scale)

        def frechet(vflat):
            # action of J diag(E) on v: one residual evaluation per product
            v = vflat.reshape(shape)
            Fp = residual(vop, q + eps * v, lam, Rcol)
            if counters is not None:
                counters.residual_evals += 1
            return (Fp - F).reshape(vop.ncol, -1)

        y, iters, _ = linalg.gmres_batch(
            frechet, -F.reshape(vop.ncol, -1), tol=cfg.gmres_tol,
            max_iter=cfg.max_gmres or vop.Mdim)
        gm_total += iters
        if counters is not None:
            counters.gmres_iters += int(np.sum(iters))
        q = q + eps * y.reshape(shape)  # undo the diagonal scaling
    _record_newton(counters, conv_at)
    if counters is not None:
        if counters.gmres_per_column is None:
            counters.gmres_per_column = np.zeros(vop.ncol, dtype=int)
        counters.gmres_per_column = counters.gmres_per_column + gm_total
    return q


# ------------------------------------------------------------------- LHEVI

class LheviState:
    """Cached factored column Jacobian for the linear HEVI solves.

    mode "PS" relinearizes about the newest accepted solution every
    `update_interval` time steps; "RS" keeps the initial reference state for
    the whole run.
    """

    def __init__(self, update_interval=5, mode="PS", reference=None):
        if mode not in ("PS", "RS"):
            raise ValueError("mode must be PS or RS")
        if update_interval < 1:
            raise ValueError("update interval must be >= 1")
        self.K = int(update_interval)
        self.mode = mode
        self.reference = reference  # column state for RS mode
        self.band = None
        self.ipiv = None
        self.lam = None
        self.age = 0

    def needs_rebuild(self, lam):
        if self.band is None or self.lam is None:
            return True
        if abs(lam - self.lam) > 1e-14 * max(abs(lam), 1.0):
            return True
        return self.mode == "PS" and self.age >= self.K

    def rebuild(self, vop, qcol, lam, counters=None):
        ref = self.reference if self.mode == "RS" else qcol
        if ref is None:
            raise StageSolveError("LHEVI-RS needs a reference state")
        band = vop.column_jacobian(ref, lam)
        ipiv, _ = linalg.banded_lu_factor_batch(band, vop.kl, vop.ku)
        self.band, self.ipiv, self.lam, self.age = band, ipiv, lam, 0
        if counters is not None:
            counters.factorizations += vop.ncol


def solve_stage_lhevi(lstate, vop, qhat_col, counters=None):
    """Backsolve the cached (I - lam L) system for one implicit stage."""
    if lstate.band is None:
        raise StageSolveError("LHEVI cache empty; rebuild before solving")
    x, _ = linalg.banded_solve_batch(lstate.band, lstate.ipiv, vop.kl, vop.ku,
                                     qhat_col.reshape(vop.ncol, -1))
    if counters is not None:
        counters.backsolves += vop.ncol
    return x.reshape(qhat_col.shape)


# ----------------------------------------------------------- step drivers

def _to_cols(mesh, qg):
    return qg[mesh.col_gid]


def _to_global(mesh, qcol, out=None):
    if out is None:
        out = np.empty((mesh.nglobal, qcol.shape[-1]))
    out[mesh.col_gid] = qcol
    return out


def step_nhevi(ops, tab, qg, dt, method="lu", cfg=None, counters=None,
               hyper_final_only=False):
    """One IMEX step with nonlinear vertical stage solves (LU or GMRES)."""
    from .state import StateField

    cfg = cfg or NewtonConfig()
    mesh = ops.mesh
    solver = solve_stage_lu if method == "lu" else solve_stage_jfnk

    def explicit(q, i):
        if counters is not None:
            counters.rhs_horizontal += 1
        with_h = (not hyper_final_only) or (i == tab.stages - 1)
        return ops.rhs_horizontal(StateField(ops.set_name, q), with_hyperdiff=with_h)

    def implicit(q):
        if counters is not None:
            counters.rhs_vertical += 1
        return ops.rhs_vertical(StateField(ops.set_name, q))

    def stage_solver(i, lam, R, guess):
        qcol = solver(ops, lam, _to_cols(mesh, R), _to_cols(mesh, guess),
                      cfg=cfg, counters=counters, stage=i)
        return _to_global(mesh, qcol)

    return imex_step(tab, qg, dt, explicit, implicit, stage_solver)


def step_lhevi(ops, tab, qg, dt, lstate, counters=None, hyper_final_only=False):
    """One LHEVI step: explicit accumulation of the full S plus one cached
    banded solve per implicit stage."""
    from .state import StateField

    mesh = ops.mesh
    gam = tab.gamma
    lam = gam * dt
    if lstate.needs_rebuild(lam):
        lstate.rebuild(ops, _to_cols(mesh, qg), lam, counters=counters)

    def S(q, i):
        if counters is not None:
            counters.rhs_horizontal += 1
            counters.rhs_vertical += 1
        st = StateField(ops.set_name, q)
        with_h = (not hyper_final_only) or (i == tab.stages - 1)
        return ops.rhs_horizontal(st, with_hyperdiff=with_h) + ops.rhs_vertical(st)

    s = tab.stages
    Q = [qg]
    Sv = [S(qg, 0)]
    for i in range(1, s):
        qE = qg.copy()
        for j in range(i):
            if tab.A[i, j] != 0.0:
                qE = qE + (dt * tab.A[i, j]) * Sv[j]
        corr = np.zeros_like(qg)
        for j in range(i):
            coef = (tab.A_im[i, j] - tab.A[i, j]) / gam
            if coef != 0.0:
                corr = corr + coef * Q[j]
        qhat = qE + corr
        qtt = _to_global(mesh, solve_stage_lhevi(
            lstate, ops, _to_cols(mesh, qhat), counters=counters))
        Qi = qtt - corr
        Q.append(Qi)
        Sv.append(S(Qi, i))
        if counters is not None:
            counters.stages += 1
    q1 = qg.copy()
    for i in range(s):
        if tab.b[i] != 0.0:
            q1 = q1 + (dt * tab.b[i]) * Sv[i]
    lstate.age += 1
    return q1


# ------------------------------------------------------------ test operator

class LinearColumnOperator:
    """Synthetic linear per-column vertical operator V(q) = L q.

    L is (Mdim, Mdim), shared by all columns, or (ncol, Mdim, Mdim).
    Used to verify solver equivalence and stage algebra on problems where
    the exact Jacobian is known.
    """

    def __init__(self, L, ncol, n_z, nvar=5, kl=None, ku=None):
        self.ncol, self.n_z, self.nvar = ncol, n_z, nvar
        self.Mdim = n_z * nvar
        L = np.asarray(L, dtype=float)
        if L.ndim == 2:
            L = np.broadcast_to(L, (ncol,) + L.shape)
        self.L = L
        if kl is None or ku is None:
            i, j = np.indices(L.shape[1:])
            nz = np.any(L != 0.0, axis=0)
            kl = int(max(0, np.max((i - j)[nz], initial=0)))
            ku = int(max(0, np.max((j - i)[nz], initial=0)))
        self.kl, self.ku = max(kl, 1), max(ku, 1)

    def column_apply(self, qcol):
        flat = qcol.reshape(self.ncol, -1)
        return np.einsum("bij,bj->bi", self.L, flat).reshape(qcol.shape)

    def column_jacobian(self, qcol, lam):
        rows = 2 * self.kl + self.ku + 1
        band = np.zeros((self.ncol, rows, self.Mdim))
        J = np.eye(self.Mdim)[None] - lam * self.L
        for j in range(self.Mdim):
            lo = max(0, j - self.ku)
            hi = min(self.Mdim - 1, j + self.kl)
            band[:, self.kl + self.ku + lo - j : self.kl + self.ku + hi - j + 1, j] = (
                J[:, lo : hi + 1, j]
            )
        return band
