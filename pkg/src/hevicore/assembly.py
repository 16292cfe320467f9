"""Element gather/scatter, direct-stiffness summation, derivatives, mass matrix."""

import numpy as np


def weights3(mesh):
    """Tensor-product quadrature weights of the reference element."""
    bx, be, bz = mesh.bases
    return bx.weights[:, None, None] * be.weights[None, :, None] * bz.weights[None, None, :]


def gather(mesh, field_g):
    """Global gridpoint field -> per-element nodal copies."""
    return field_g[mesh.gid]


def dss(mesh, field_e):
    """Direct-stiffness summation: add shared-gridpoint contributions.

    field_e is (nelem, n1, n2, n3) or (nelem, n1, n2, n3, k); returns the
    (nglobal,) or (nglobal, k) sum.  Interior points pass through unchanged.
    """
    extra = field_e.shape[4:]
    out = np.zeros((mesh.nglobal,) + extra)
    np.add.at(out, mesh.gid.ravel(), field_e.reshape((-1,) + extra))
    return out


def elem_deriv(mesh, f, axis):
    """Reference-coordinate derivative of element nodal data along one axis."""
    D = mesh.bases[axis].diff_matrix
    if axis == 0:
        return np.einsum("ia,eajk->eijk", D, f)
    if axis == 1:
        return np.einsum("ja,eiak->eijk", D, f)
    return np.einsum("ka,eija->eijk", D, f)


def weak_deriv_acc(mesh, f, axis):
    """Weak-form accumulator of +d f / d xi^axis: rows -sum_a w3_a D[a,i] f_a.

    The full tensor-product weights ride along with f, so the result is the
    element integral of -(d psi_i/d xi^axis) * f ready for DSS.
    """
    D = mesh.bases[axis].diff_matrix
    wf = weights3(mesh) * f
    if axis == 0:
        return -np.einsum("ai,eajk->eijk", D, wf)
    if axis == 1:
        return -np.einsum("aj,eiak->eijk", D, wf)
    return -np.einsum("ak,eija->eijk", D, wf)


class GlobalMass:
    """Diagonal global mass matrix, DSS of the element-wise w J."""

    def __init__(self, mesh, J_elem):
        self.M = dss(mesh, weights3(mesh)[None, :, :, :] * J_elem)
        if np.any(self.M <= 0.0):
            raise ValueError("non-positive mass-matrix entry (inverted element?)")
        self.Minv = 1.0 / self.M

    def volume(self):
        return float(np.sum(self.M))
