"""Band-storage matrices, banded LU, and matrix-free GMRES.

The band layout is the LAPACK factorization-ready format: a matrix with kl
sub- and ku super-diagonals is stored in an array of (2*kl + ku + 1) rows,
``data[kl + ku + i - j, j] = A[i, j]`` (0-based), with kl spare rows on top
for the fill-in produced by partial pivoting.  For the column Jacobians used
by the vertical solvers kl == ku, so the row count is 3*(ku+1) - 2.

Everything exists in two forms: a single-matrix API (BandedMatrix) and
batched kernels operating on stacks of independent systems (one per mesh
column).  The batched kernels are the hot path; the single API is a batch of
one.  A dense LU oracle (scipy LAPACK) is provided for cross-checking.
"""

import io

import numpy as np
import scipy.linalg


class SingularMatrixError(Exception):
    """Raised when an exact zero pivot is met; carries the pivot index."""

    def __init__(self, index, batch=None):
        self.index = index
        self.batch = batch
        where = f"column {index}" if batch is None else f"column {index} (system {batch})"
        super().__init__(f"singular matrix: zero pivot at {where}")


class BandedMatrix:
    """Square banded matrix in LAPACK band storage with optional LU state."""

    def __init__(self, M, kl, ku, data=None):
        self.M = int(M)
        self.kl = int(kl)
        self.ku = int(ku)
        rows = 2 * self.kl + self.ku + 1
        if data is None:
            data = np.zeros((rows, self.M))
        data = np.asarray(data, dtype=float)
        if data.shape != (rows, self.M):
            raise ValueError(f"band storage must be {(rows, self.M)}, got {data.shape}")
        self.data = data
        self.ipiv = None
        self.flops = 0

    @property
    def factored(self):
        return self.ipiv is not None

    def __getitem__(self, ij):
        i, j = ij
        if max(0, j - self.ku) <= i <= min(self.M - 1, j + self.kl):
            return self.data[self.kl + self.ku + i - j, j]
        return 0.0

    def __setitem__(self, ij, value):
        i, j = ij
        if not (max(0, j - self.ku) <= i <= min(self.M - 1, j + self.kl)):
            raise IndexError(f"({i},{j}) outside band kl={self.kl}, ku={self.ku}")
        self.data[self.kl + self.ku + i - j, j] = value

    def to_dense(self):
        A = np.zeros((self.M, self.M))
        for j in range(self.M):
            lo = max(0, j - self.ku)
            hi = min(self.M - 1, j + self.kl)
            A[lo : hi + 1, j] = self.data[
                self.kl + self.ku + lo - j : self.kl + self.ku + hi - j + 1, j
            ]
        return A

    def matvec(self, x):
        A = self.to_dense()  # desk-scale systems; clarity over speed
        return A @ x


def band_rows(n_var, N_zeta):
    """Assembled band-storage row count for a column Jacobian."""
    return 3 * n_var * (N_zeta + 1) - 2


def half_bandwidth(n_var, N_zeta):
    """ku = kl = n_var (N_zeta + 1) - 1 for the column Jacobians."""
    return n_var * (N_zeta + 1) - 1


def banded_from_dense(A, kl, ku):
    """Copy a dense matrix into band storage; entries outside the band must be zero."""
    A = np.asarray(A, dtype=float)
    M = A.shape[0]
    if A.shape != (M, M):
        raise ValueError("matrix must be square")
    mask = np.ones_like(A, dtype=bool)
    i, j = np.indices(A.shape)
    mask &= (i - j > kl) | (j - i > ku)
    if np.any(A[mask] != 0.0):
        raise ValueError("nonzero entries outside the declared band")
    bm = BandedMatrix(M, kl, ku)
    for col in range(M):
        lo = max(0, col - ku)
        hi = min(M - 1, col + kl)
        bm.data[kl + ku + lo - col : kl + ku + hi - col + 1, col] = A[lo : hi + 1, col]
    return bm


# ---------------------------------------------------------------------------
# batched banded LU (partial pivoting), vectorized over independent systems
# ---------------------------------------------------------------------------

def banded_lu_factor_batch(data, kl, ku):
    """Factor a batch of banded matrices in place.

    data : (nbatch, 2*kl+ku+1, M) in LAPACK band layout.
    Returns (ipiv, flops): pivot rows (nbatch, M) and the multiply-add count
    per system (identical across the batch; bandwidth-limited, linear in M).
    """
    nb, rows, M = data.shape
    if rows != 2 * kl + ku + 1:
        raise ValueError("band storage has wrong row count")
    d = kl + ku  # storage row of the diagonal
    ipiv = np.tile(np.arange(M), (nb, 1))
    barange = np.arange(nb)
    flops = 0
    for j in range(M):
        lm = min(kl, M - 1 - j)           # active subdiagonal extent
        seg = data[:, d : d + lm + 1, j]  # (nb, lm+1) pivot candidates
        prel = np.argmax(np.abs(seg), axis=1)
        piv = seg[barange, prel]
        if np.any(piv == 0.0):
            b = int(np.argmax(piv == 0.0))
            raise SingularMatrixError(j, batch=b if nb > 1 else None)
        ipiv[:, j] = j + prel
        jmax = min(M - 1, j + ku + kl)
        cols = np.arange(j, jmax + 1)
        off = d + j - cols                # storage rows of logical row j
        if np.any(prel):
            r1 = data[:, off, cols]
            r2 = data[barange[:, None], off[None, :] + prel[:, None], cols[None, :]]
            data[:, off, cols] = r2
            data[barange[:, None], off[None, :] + prel[:, None], cols[None, :]] = r1
        if lm > 0:
            pivot = data[:, d, j]
            mult = data[:, d + 1 : d + lm + 1, j] / pivot[:, None]
            data[:, d + 1 : d + lm + 1, j] = mult
            ucols = cols[1:]
            uoff = off[1:]
            if ucols.size:
                urow = data[:, uoff, ucols]                       # (nb, nc)
                irel = np.arange(1, lm + 1)
                OFF = uoff[None, :] + irel[:, None]               # (lm, nc)
                COLS = np.broadcast_to(ucols, OFF.shape)
                blk = data[:, OFF, COLS]
                blk -= mult[:, :, None] * urow[:, None, :]
                data[:, OFF, COLS] = blk
                flops += 2 * lm * ucols.size + lm
    return ipiv, flops


def banded_solve_batch(data, ipiv, kl, ku, b):
    """Solve factored banded systems for a batch of right-hand sides.

    data/ipiv from banded_lu_factor_batch; b is (nbatch, M).  Returns
    (x, flops).
    """
    nb, rows, M = data.shape
    d = kl + ku
    x = np.array(b, dtype=float, copy=True)
    barange = np.arange(nb)
    flops = 0
    for j in range(M - 1):
        p = ipiv[:, j]
        swap = p != j
        if np.any(swap):
            xi = x[barange, p]
            xj = x[:, j].copy()
            x[:, j] = np.where(swap, xi, xj)
            x[barange, p] = np.where(swap, xj, xi)
        lm = min(kl, M - 1 - j)
        if lm > 0:
            x[:, j + 1 : j + lm + 1] -= data[:, d + 1 : d + lm + 1, j] * x[:, j][:, None]
            flops += 2 * lm
    for i in range(M - 1, -1, -1):
        jmax = min(M - 1, i + ku + kl)
        cols = np.arange(i + 1, jmax + 1)
        s = x[:, i]
        if cols.size:
            off = d + i - cols
            s = s - np.einsum("bc,bc->b", data[:, off, cols], x[:, cols])
            flops += 2 * cols.size
        x[:, i] = s / data[:, d, i]
        flops += 1
    return x, flops


def banded_lu_factor(bm):
    """LU-factor a BandedMatrix in place (partial pivoting)."""
    if bm.factored:
        raise ValueError("matrix already factored")
    batch = bm.data[None, :, :].copy()
    ipiv, flops = banded_lu_factor_batch(batch, bm.kl, bm.ku)
    bm.data[:] = batch[0]
    bm.ipiv = ipiv[0]
    bm.flops += flops
    return bm


def banded_solve(bm, b):
    """Solve A x = b for a factored BandedMatrix."""
    if not bm.factored:
        raise ValueError("matrix not factored; call banded_lu_factor first")
    x, flops = banded_solve_batch(bm.data[None, :, :], bm.ipiv[None, :], bm.kl, bm.ku,
                                  np.asarray(b, dtype=float)[None, :])
    bm.flops += flops
    return x[0]


def dense_lu_solve(A, b):
    """Dense LAPACK LU solve; the independent oracle for the banded path."""
    lu, piv = scipy.linalg.lu_factor(np.asarray(A, dtype=float))
    return scipy.linalg.lu_solve((lu, piv), np.asarray(b, dtype=float))


def dump_banded(bm):
    """Plain-text band dump: 'M kl ku' header plus the storage rows."""
    buf = io.StringIO()
    buf.write(f"{bm.M} {bm.kl} {bm.ku}\n")
    for row in bm.data:
        buf.write(" ".join(f"{v:.17g}" for v in row) + "\n")
    return buf.getvalue()


def load_banded(text):
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    M, kl, ku = (int(t) for t in lines[0].split())
    data = np.array([[float(t) for t in ln.split()] for ln in lines[1:]])
    return BandedMatrix(M, kl, ku, data=data)


# ---------------------------------------------------------------------------
# GMRES (no restarts; the column systems stay small)
# ---------------------------------------------------------------------------

class GmresResult:
    def __init__(self, x, iterations, converged, residual):
        self.x = x
        self.iterations = iterations
        self.converged = converged
        self.residual = residual


def gmres(apply, b, x0=None, tol=1e-9, max_iter=None):
    """Matrix-free GMRES on a single system.

    ``apply`` is the linear-operator action; convergence is relative to ||b||.
    Happy breakdown (exact solution inside the Krylov space) counts as
    convergence.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    b = np.asarray(b, dtype=float)
    n = b.size
    if max_iter is None:
        max_iter = n
    max_iter = min(max_iter, n)
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return GmresResult(np.zeros(n), 0, True, 0.0)
    r0 = b - apply(x0)
    beta = np.linalg.norm(r0)
    if beta / bnorm <= tol:
        return GmresResult(x0, 0, True, beta / bnorm)
    V = np.zeros((max_iter + 1, n))
    H = np.zeros((max_iter + 1, max_iter))
    cs = np.zeros(max_iter)
    sn = np.zeros(max_iter)
    g = np.zeros(max_iter + 1)
    g[0] = beta
    V[0] = r0 / beta
    k_done = 0
    for k in range(max_iter):
        w = np.array(apply(V[k]), dtype=float, copy=True)
        # modified Gram-Schmidt
        for i in range(k + 1):
            H[i, k] = V[i] @ w
            w -= H[i, k] * V[i]
        H[k + 1, k] = np.linalg.norm(w)
        happy = H[k + 1, k] < 1e-14 * max(beta, 1.0)
        if not happy:
            V[k + 1] = w / H[k + 1, k]
        # apply stored rotations, then a new one
        for i in range(k):
            t = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
            H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
            H[i, k] = t
        denom = np.hypot(H[k, k], H[k + 1, k])
        cs[k] = H[k, k] / denom
        sn[k] = H[k + 1, k] / denom
        H[k, k] = denom
        H[k + 1, k] = 0.0
        g[k + 1] = -sn[k] * g[k]
        g[k] = cs[k] * g[k]
        k_done = k + 1
        if abs(g[k + 1]) / bnorm <= tol or happy:
            break
    y = scipy.linalg.solve_triangular(H[:k_done, :k_done], g[:k_done], lower=False)
    x = x0 + y @ V[:k_done]
    res = abs(g[k_done]) / bnorm
    return GmresResult(x, k_done, res <= tol or bool(happy), res)


def gmres_batch(apply_batch, B, tol=1e-9, max_iter=None):
    """GMRES on a stack of independent systems with one shared operator.

    apply_batch maps (nb, n) -> (nb, n); all systems iterate together and the
    loop exits when every system has converged (extra iterations on already
    converged systems are harmless).  Returns (X, iters, converged) with
    per-system iteration counts.
    """
    B = np.asarray(B, dtype=float)
    nb, n = B.shape
    if max_iter is None:
        max_iter = n
    max_iter = min(max_iter, n)
    bnorm = np.linalg.norm(B, axis=1)
    ok0 = bnorm == 0.0
    bnorm_safe = np.where(ok0, 1.0, bnorm)
    V = np.zeros((max_iter + 1, nb, n))
    H = np.zeros((nb, max_iter + 1, max_iter))
    cs = np.zeros((nb, max_iter))
    sn = np.zeros((nb, max_iter))
    g = np.zeros((nb, max_iter + 1))
    g[:, 0] = bnorm
    V[0] = B / bnorm_safe[:, None]
    iters = np.zeros(nb, dtype=int)
    done = ok0.copy()
    k_done = 0
    for k in range(max_iter):
        w = apply_batch(V[k])
        coeff = np.einsum("ibn,bn->bi", V[: k + 1], w)
        w = w - np.einsum("bi,ibn->bn", coeff, V[: k + 1])
        # one reorthogonalization pass keeps the batched classical GS stable
        corr = np.einsum("ibn,bn->bi", V[: k + 1], w)
        w = w - np.einsum("bi,ibn->bn", corr, V[: k + 1])
        coeff += corr
        H[:, : k + 1, k] = coeff
        hnext = np.linalg.norm(w, axis=1)
        happy = hnext < 1e-14 * np.maximum(bnorm, 1.0)
        V[k + 1] = np.where(happy[:, None], 0.0, w / np.where(happy, 1.0, hnext)[:, None])
        H[:, k + 1, k] = np.where(happy, 0.0, hnext)
        for i in range(k):
            t = cs[:, i] * H[:, i, k] + sn[:, i] * H[:, i + 1, k]
            H[:, i + 1, k] = -sn[:, i] * H[:, i, k] + cs[:, i] * H[:, i + 1, k]
            H[:, i, k] = t
        denom = np.hypot(H[:, k, k], H[:, k + 1, k])
        denom = np.where(denom == 0.0, 1.0, denom)
        cs[:, k] = H[:, k, k] / denom
        sn[:, k] = H[:, k + 1, k] / denom
        H[:, k, k] = denom
        H[:, k + 1, k] = 0.0
        g[:, k + 1] = -sn[:, k] * g[:, k]
        g[:, k] = cs[:, k] * g[:, k]
        k_done = k + 1
        newly = (~done) & ((np.abs(g[:, k + 1]) / bnorm_safe <= tol) | happy)
        iters[newly] = k_done
        done |= newly
        if np.all(done):
            break
    iters[~done] = k_done
    X = np.zeros_like(B)
    for b in range(nb):
        kk = max(iters[b], 1) if bnorm[b] > 0 else 0
        if kk == 0:
            continue
        y = scipy.linalg.solve_triangular(H[b, :kk, :kk], g[b, :kk], lower=False)
        X[b] = y @ V[:kk, b, :]
    return X, iters, done
