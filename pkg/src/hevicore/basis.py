"""One-dimensional Legendre-Gauss-Lobatto basis.

Nodes, quadrature weights, Lagrange cardinal functions and the nodal
differentiation matrix on the reference interval [-1, 1].  These are the
building blocks of the tensor-product spectral elements used everywhere else.

Convention: ``diff_matrix[i, j]`` is the weight of the nodal value at node j
in the derivative evaluated at node i, so ``diff_matrix @ f`` returns the
derivative of the interpolant at the nodes and a constant vector maps to
zero (row sums vanish identically by the barycentric construction).
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Basis1D:
    """Lobatto nodes, weights and differentiation matrix of degree ``order``."""

    order: int
    nodes: np.ndarray        # (order+1,), strictly increasing, endpoints -1, +1
    weights: np.ndarray      # (order+1,), sum = 2
    diff_matrix: np.ndarray  # (order+1, order+1), derivative-at-node-i rows
    bary_weights: np.ndarray = field(repr=False, default=None)

    @property
    def npts(self):
        return self.order + 1


def _legendre_and_deriv(n, x):
    """Value and first derivative of the Legendre polynomial P_n at x."""
    x = np.asarray(x, dtype=float)
    p0 = np.ones_like(x)
    if n == 0:
        return p0, np.zeros_like(x)
    p1 = x.copy()
    for k in range(1, n):
        p0, p1 = p1, ((2 * k + 1) * x * p1 - k * p0) / (k + 1)
    at_end = np.abs(np.abs(x) - 1.0) < 1e-300
    denom = np.where(at_end, 1.0, x**2 - 1.0)
    dp = n * (x * p1 - p0) / denom
    # P_N'(+-1) = (+-1)^(N-1) N(N+1)/2
    dp = np.where(at_end, np.sign(x) ** (n - 1) * n * (n + 1) / 2.0, dp)
    return p1, dp


def lobatto(N):
    """Build the degree-N Lobatto basis (N+1 nodes).

    Interior nodes are the roots of P_N', found by Newton iteration from
    Chebyshev-Gauss-Lobatto initial guesses; converges to ~1e-15.
    """
    if N < 1:
        raise ValueError("Lobatto basis needs degree N >= 1")
    n = N + 1
    x = -np.cos(np.pi * np.arange(n) / N)  # Chebyshev-Lobatto guesses
    if N > 1:
        xi = x[1:-1].copy()
        for _ in range(100):
            # Interior nodes are roots of P_N'; Newton on g = (1-x^2) P_N'.
            p, dp = _legendre_and_deriv(N, xi)
            g = (1.0 - xi**2) * dp
            # g' = -2x P_N' + (1-x^2) P_N'' = -N(N+1) P_N  (Legendre ODE)
            dg = -N * (N + 1) * p
            dx = g / dg
            xi -= dx
            if np.max(np.abs(dx)) < 1e-15:
                break
        x[1:-1] = xi
    x[0], x[-1] = -1.0, 1.0
    pN, _ = _legendre_and_deriv(N, x)
    w = 2.0 / (N * (N + 1) * pN**2)

    # Barycentric weights and differentiation matrix.
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    bw = 1.0 / np.prod(diff, axis=1)
    D = np.empty((n, n))
    for i in range(n):
        dx = x[i] - x
        dx[i] = 1.0
        D[i, :] = (bw / bw[i]) / dx
        D[i, i] = 0.0
        D[i, i] = -np.sum(D[i, :])
    return Basis1D(order=N, nodes=x, weights=w, diff_matrix=D, bary_weights=bw)


def differentiate(basis, values):
    """Derivative of the interpolant of ``values`` at the nodes.

    Exact for polynomial data of degree <= N.
    """
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != basis.npts:
        raise ValueError(
            f"expected {basis.npts} nodal values, got {values.shape[-1]}"
        )
    return values @ basis.diff_matrix.T


def integrate(basis, values):
    """Lobatto quadrature of nodal data over [-1, 1]."""
    values = np.asarray(values, dtype=float)
    return values @ basis.weights


def cardinal_values(basis, x):
    """Evaluate the Lagrange cardinal functions at points ``x``.

    Returns an array of shape (len(x), N+1) whose [k, j] entry is h_j(x_k).
    Barycentric form; exact cardinality at the nodes.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    L = np.zeros((x.size, basis.npts))
    diff = x[:, None] - basis.nodes[None, :]
    exact = np.abs(diff) < 1e-14
    hit = exact.any(axis=1)
    terms = np.where(exact, 1.0, basis.bary_weights / np.where(exact, 1.0, diff))
    L[~hit] = terms[~hit] / terms[~hit].sum(axis=1, keepdims=True)
    L[hit] = exact[hit].astype(float)
    return L


def interpolate(basis, values, x):
    """Evaluate the interpolant of nodal ``values`` at points ``x``."""
    return cardinal_values(basis, x) @ np.asarray(values, dtype=float)


def flux_difference_check(basis, p, q, tol=1e-13):
    """Check the flux-differencing identity p_i (Dq)_i = sum_j D_ij (p_i q_j).

    The right-hand side is the contraction of the differentiation matrix with
    the two-point product array, the form used to rewrite advective terms;
    equality rests on the constant-annihilation (row-sum) property.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("p and q must have equal length")
    lhs = p * (basis.diff_matrix @ q)
    rhs = np.einsum("ij,i,j->i", basis.diff_matrix, p, q)
    return bool(np.max(np.abs(lhs - rhs)) <= tol)
