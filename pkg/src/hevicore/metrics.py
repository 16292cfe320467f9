"""Metric terms of the element maps: cross-product and curl-invariant forms.

Both schemes differentiate the interpolated nodal coordinates, so the
metrics carry the same aliasing the solver sees.  The curl-invariant form
satisfies the discrete metric identity sum_m D^m (J grad xi^m) = 0 to
roundoff on any mesh (the mixed tensor-product derivatives commute), which
is what guarantees free-stream preservation; the cross-product form does
not in 3D.

Storage follows the gridpoint (column-solver) convention: J and grad zeta
are reduced to one value per global gridpoint.  Without the column L2
projection this reduction is the naive element-loop gather (last writer
wins); `project_metrics_to_columns` replaces it with the mass-weighted L2
projection, which is exactly the reduction compatible with the Galerkin
mass matrix (DSS(w J~) == DSS(w J) identically), restoring machine-precision
mass conservation.
"""

import numpy as np

from . import assembly


class MetricTerms:
    """Per-element metric data plus gridpoint-stored J and grad zeta.

    dxdxi     : (nelem, 3 coord, 3 dir, n1, n2, n3) covariant basis d x / d xi^m
    J_elem    : (nelem, n1, n2, n3) metric Jacobian (determinant), > 0
    grad_elem : (nelem, 3 dir, 3 coord, n1, n2, n3) contravariant grad xi^m
    Jg        : (nglobal,) gridpoint J
    gradzeta_g: (nglobal, 3) gridpoint grad zeta
    """

    def __init__(self, scheme, mesh, dxdxi, J_elem, grad_elem):
        self.scheme = scheme
        self.projected = False
        self.dxdxi = dxdxi
        self.J_elem = J_elem
        self.grad_elem = grad_elem
        # naive gridpoint reduction: element-loop gather, last writer wins
        self.Jg = np.empty(mesh.nglobal)
        self.Jg[mesh.gid.ravel()] = J_elem.ravel()
        self.gradzeta_g = np.empty((mesh.nglobal, 3))
        self.gradzeta_g[mesh.gid.ravel()] = (
            grad_elem[:, 2].transpose(0, 2, 3, 4, 1).reshape(-1, 3)
        )


def _covariant_basis(mesh):
    dxdxi = np.empty((mesh.nelem, 3, 3) + tuple(mesh.shape))
    for c in range(3):
        for m in range(3):
            dxdxi[:, c, m] = assembly.elem_deriv(mesh, mesh.coords[:, c], m)
    return dxdxi


def _jacobian(dxdxi):
    a, b, c = dxdxi[:, :, 0], dxdxi[:, :, 1], dxdxi[:, :, 2]
    J = (
        a[:, 0] * (b[:, 1] * c[:, 2] - b[:, 2] * c[:, 1])
        - a[:, 1] * (b[:, 0] * c[:, 2] - b[:, 2] * c[:, 0])
        + a[:, 2] * (b[:, 0] * c[:, 1] - b[:, 1] * c[:, 0])
    )
    return J


def _cross(u, v):
    """Cross product over axis 1 of (nelem, 3, n1, n2, n3) arrays."""
    return np.stack(
        [
            u[:, 1] * v[:, 2] - u[:, 2] * v[:, 1],
            u[:, 2] * v[:, 0] - u[:, 0] * v[:, 2],
            u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0],
        ],
        axis=1,
    )


def cross_product_metrics(mesh):
    """grad xi^i = (1/J) (dx/dxi^j x dx/dxi^k), cyclic (i, j, k)."""
    dxdxi = _covariant_basis(mesh)
    J = _jacobian(dxdxi)
    if np.any(J <= 0):
        raise ValueError("inverted element: J <= 0")
    grad = np.empty_like(dxdxi)
    for i, (j, k) in enumerate(((1, 2), (2, 0), (0, 1))):
        grad[:, i] = _cross(dxdxi[:, :, j], dxdxi[:, :, k]) / J[:, None]
    return MetricTerms("cross-product", mesh, dxdxi, J, grad)


def curl_invariant_metrics(mesh):
    """grad xi^i = (1/2J) [ d/dxi^k (dx/dxi^j x x) - d/dxi^j (dx/dxi^k x x) ].

    J is taken from the cross-product formula; free-stream preservation
    depends only on the grad xi^i construction.
    """
    dxdxi = _covariant_basis(mesh)
    J = _jacobian(dxdxi)
    if np.any(J <= 0):
        raise ValueError("inverted element: J <= 0")
    A = [_cross(dxdxi[:, :, m], mesh.coords) for m in range(3)]
    grad = np.empty_like(dxdxi)
    for i, (j, k) in enumerate(((1, 2), (2, 0), (0, 1))):
        term = np.empty_like(mesh.coords)
        for c in range(3):
            term[:, c] = assembly.elem_deriv(mesh, A[j][:, c], k) - assembly.elem_deriv(
                mesh, A[k][:, c], j
            )
        grad[:, i] = 0.5 * term / J[:, None]
    return MetricTerms("curl-invariant", mesh, dxdxi, J, grad)


def build_metrics(mesh, scheme):
    if scheme == "curl-invariant":
        return curl_invariant_metrics(mesh)
    if scheme == "cross-product":
        return cross_product_metrics(mesh)
    raise ValueError(f"unknown metric scheme {scheme!r}")


def project_metrics_to_columns(metrics, mesh):
    """Column-continuous L2 projection of J and grad zeta (one-time cost).

    Element-wise weak-form integral, DSS, inverse mass: with collocated
    quadrature this is the wJ-weighted average at every shared gridpoint,
    leaving single-valued column metrics.  Idempotent because the weights
    come from the untouched element-wise J.
    """
    w3 = assembly.weights3(mesh)[None]
    mass = assembly.dss(mesh, w3 * metrics.J_elem)
    if np.any(mass == 0.0):
        raise ValueError("zero mass-matrix entry in projection")
    out = MetricTerms(metrics.scheme, mesh, metrics.dxdxi, metrics.J_elem,
                      metrics.grad_elem)
    wj = w3 * metrics.J_elem
    out.Jg = assembly.dss(mesh, wj * metrics.J_elem) / mass
    gz = np.empty((mesh.nglobal, 3))
    for c in range(3):
        gz[:, c] = assembly.dss(mesh, wj * metrics.grad_elem[:, 2, c]) / mass
    out.gradzeta_g = gz
    out.projected = True
    return out


def duality_error(mesh, metrics):
    """max |grad xi^i . dx/dxi^j - delta_ij| over the mesh (element-wise)."""
    err = 0.0
    for i in range(3):
        for j in range(3):
            dot = np.einsum("ec...,ec...->e...", metrics.grad_elem[:, i],
                            metrics.dxdxi[:, :, j])
            target = 1.0 if i == j else 0.0
            err = max(err, float(np.max(np.abs(dot - target))))
    return err


def constant_field_divergence(mesh, metrics, F):
    """Discrete contravariant divergence of a constant Cartesian field F.

    (1/J) sum_m D^m (J F . grad xi^m) with element-wise metrics; the
    free-stream measure (zero to roundoff for curl-invariant metrics).
    """
    F = np.asarray(F, dtype=float)
    div = np.zeros((mesh.nelem,) + tuple(mesh.shape))
    for m in range(3):
        flux = metrics.J_elem * np.einsum(
            "c,ec...->e...", F, metrics.grad_elem[:, m]
        )
        div += assembly.elem_deriv(mesh, flux, m)
    return div / metrics.J_elem
