"""Cubed-sphere and Cartesian-box spectral-element meshes.

Elements are extruded in the vertical (radial on the sphere, z in the box)
so the third reference direction zeta is aligned with the columns on which
the implicit solves operate.  Global gridpoint numbering is conforming
(shared faces reference identical ids, established by geometric matching),
and every gridpoint belongs to exactly one vertical column of
n_z = Ne_zeta * N_zeta + 1 unique points.

The box has rigid (no-flux) top and bottom like the sphere and free
horizontal walls: weak-form boundary integrals are simply dropped, which is
the natural boundary condition of the discretization.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .basis import Basis1D, lobatto


@dataclass
class MeshConfig:
    geometry: str                  # "sphere" | "box"
    panels_per_edge: int = 1       # elements per panel edge (or x/y count for box)
    n_elem_vertical: int = 1
    degree: int = 4                # shared N_xi = N_eta = N_zeta unless overridden
    degree_xi: int = None
    degree_eta: int = None
    degree_zeta: int = None
    radius: float = 6.371e6        # planet radius r_e (m)
    z_top: float = 3.0e4           # model top above the surface (m)
    box_extents: tuple = (1.0, 1.0, 1.0)
    vertical_map: object = None    # optional stretching s in [0,1] -> [0,1]

    def __post_init__(self):
        if self.geometry not in ("sphere", "box"):
            raise ValueError(f"unknown geometry {self.geometry!r}")
        if self.panels_per_edge < 1 or self.n_elem_vertical < 1:
            raise ValueError("element counts must be >= 1")
        if self.z_top <= 0:
            raise ValueError("z_top must be positive")
        for name in ("degree_xi", "degree_eta", "degree_zeta"):
            if getattr(self, name) is None:
                setattr(self, name, self.degree)
        if min(self.degree_xi, self.degree_eta, self.degree_zeta) < 1:
            raise ValueError("polynomial degrees must be >= 1")
        if self.geometry == "box" and min(self.box_extents) <= 0:
            raise ValueError("degenerate box extents")


class Mesh:
    """Element coordinates plus the global numbering and column structure.

    Arrays
    ------
    coords   : (nelem, 3, n1, n2, n3) Cartesian nodal coordinates
    gid      : (nelem, n1, n2, n3) global gridpoint ids
    xg       : (nglobal, 3) one representative coordinate per gridpoint
    col_gid  : (ncol, n_z) global ids of each column, bottom to top
    col_of   : (nglobal,) column id per gridpoint
    level_of : (nglobal,) vertical level per gridpoint
    flux_mask: (nglobal,) 1 in the interior, 0 on the rigid bottom/top
    """

    def __init__(self, cfg, coords, bases, elem_layer, elem_hcol):
        self.cfg = cfg
        self.coords = coords
        self.bases = bases  # (Basis1D_xi, Basis1D_eta, Basis1D_zeta)
        self.nelem = coords.shape[0]
        self.shape = coords.shape[2:]
        self.elem_layer = elem_layer
        self.elem_hcol = elem_hcol
        self.n_z = cfg.n_elem_vertical * cfg.degree_zeta + 1
        self._number_gridpoints()
        self._build_columns()

    # -- construction helpers ------------------------------------------------

    def _dedupe_tol(self):
        if self.cfg.geometry == "sphere":
            return 1e-7 * self.cfg.radius / max(1.0, 10.0 * self.cfg.panels_per_edge)
        return 1e-9 * max(self.cfg.box_extents)

    def _number_gridpoints(self):
        pts = self.coords.transpose(0, 2, 3, 4, 1).reshape(-1, 3)
        tree = cKDTree(pts)
        pairs = tree.query_pairs(self._dedupe_tol(), output_type="ndarray")
        parent = np.arange(len(pts))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for a, b in pairs:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
        roots = np.array([find(i) for i in range(len(pts))])
        uniq, gid_flat = np.unique(roots, return_inverse=True)
        self.nglobal = len(uniq)
        self.gid = gid_flat.reshape((self.nelem,) + self.shape)
        self.xg = np.zeros((self.nglobal, 3))
        self.xg[gid_flat] = pts  # last writer; copies agree to the dedupe tol

    def _build_columns(self):
        nzl = self.cfg.degree_zeta + 1
        nlay = self.cfg.n_elem_vertical
        ncolh = {}
        col_gid = []
        for h in np.unique(self.elem_hcol):
            elems = np.where(self.elem_hcol == h)[0]
            order = np.argsort(self.elem_layer[elems])
            stack = elems[order]
            n1, n2 = self.shape[0], self.shape[1]
            for i in range(n1):
                for j in range(n2):
                    gids = np.empty(self.n_z, dtype=np.int64)
                    for l, e in enumerate(stack):
                        seg = self.gid[e, i, j, :]
                        gids[l * (nzl - 1) : l * (nzl - 1) + nzl] = seg
                    key = gids[0]
                    if key in ncolh:
                        if not np.array_equal(col_gid[ncolh[key]], gids):
                            raise RuntimeError("non-conforming column detected")
                    else:
                        ncolh[key] = len(col_gid)
                        col_gid.append(gids)
        self.col_gid = np.array(col_gid, dtype=np.int64)
        self.ncol = self.col_gid.shape[0]
        self.col_of = np.full(self.nglobal, -1, dtype=np.int64)
        self.level_of = np.full(self.nglobal, -1, dtype=np.int64)
        for c in range(self.ncol):
            self.col_of[self.col_gid[c]] = c
            self.level_of[self.col_gid[c]] = np.arange(self.n_z)
        if np.any(self.col_of < 0):
            raise RuntimeError("column extraction missed gridpoints")
        self.flux_mask = np.ones(self.nglobal)
        self.flux_mask[self.col_gid[:, 0]] = 0.0
        self.flux_mask[self.col_gid[:, -1]] = 0.0
        # element -> column map for the horizontal footprint of each node line
        self.elem_col = self.col_of[self.gid[:, :, :, 0]]

    # -- geometry ------------------------------------------------------------

    def height(self, x=None):
        """Height above the reference surface (sea level / box floor)."""
        x = self.xg if x is None else x
        if self.cfg.geometry == "sphere":
            return np.linalg.norm(x, axis=-1) - self.cfg.radius
        return x[..., 2]

    def lonlat(self, x=None):
        x = self.xg if x is None else x
        r = np.linalg.norm(x, axis=-1)
        lam = np.arctan2(x[..., 1], x[..., 0])
        phi = np.arcsin(np.clip(x[..., 2] / r, -1.0, 1.0))
        return lam, phi

    def summary(self):
        return (
            f"geometry: {self.cfg.geometry}\n"
            f"elements: {self.nelem}\n"
            f"gridpoints: {self.nglobal}\n"
            f"columns: {self.ncol}\n"
            f"n_z: {self.n_z}\n"
            f"degrees: {self.cfg.degree_xi} {self.cfg.degree_eta} {self.cfg.degree_zeta}\n"
        )


def _vertical_levels(cfg):
    """Element boundaries in normalized height, with the stretching hook."""
    s = np.linspace(0.0, 1.0, cfg.n_elem_vertical + 1)
    if cfg.vertical_map is not None:
        s = np.asarray([cfg.vertical_map(v) for v in s])
        if abs(s[0]) > 0 or abs(s[-1] - 1) > 1e-15 or np.any(np.diff(s) <= 0):
            raise ValueError("vertical_map must be increasing with endpoints 0, 1")
    return s


_PANEL_AXES = (
    # (axis vector builder) panel directions for the equiangular cubed sphere
    lambda t1, t2: (np.ones_like(t1), t1, t2),    # +x
    lambda t1, t2: (-t1, np.ones_like(t1), t2),   # +y
    lambda t1, t2: (-np.ones_like(t1), -t1, t2),  # -x
    lambda t1, t2: (t1, -np.ones_like(t1), t2),   # -y
    lambda t1, t2: (-t2, t1, np.ones_like(t1)),   # +z
    lambda t1, t2: (t2, t1, -np.ones_like(t1)),   # -z
)


def build_cubed_sphere(cfg):
    """Equiangular cubed-sphere shell mesh with radial extrusion."""
    if cfg.geometry != "sphere":
        raise ValueError("config geometry must be 'sphere'")
    bx, be, bz = lobatto(cfg.degree_xi), lobatto(cfg.degree_eta), lobatto(cfg.degree_zeta)
    ne = cfg.panels_per_edge
    nv = cfg.n_elem_vertical
    n1, n2, n3 = bx.npts, be.npts, bz.npts
    ang = np.linspace(-np.pi / 4, np.pi / 4, ne + 1)
    lev = _vertical_levels(cfg)
    nelem = 6 * ne * ne * nv
    coords = np.empty((nelem, 3, n1, n2, n3))
    elem_layer = np.empty(nelem, dtype=np.int64)
    elem_hcol = np.empty(nelem, dtype=np.int64)
    e = 0
    for p in range(6):
        for ia in range(ne):
            a = 0.5 * (ang[ia] + ang[ia + 1]) + 0.5 * (ang[ia + 1] - ang[ia]) * bx.nodes
            for ib in range(ne):
                b = 0.5 * (ang[ib] + ang[ib + 1]) + 0.5 * (ang[ib + 1] - ang[ib]) * be.nodes
                t1, t2 = np.meshgrid(np.tan(a), np.tan(b), indexing="ij")
                dx, dy, dz = _PANEL_AXES[p](t1, t2)
                norm = np.sqrt(dx * dx + dy * dy + dz * dz)
                d = np.stack([dx / norm, dy / norm, dz / norm])  # (3, n1, n2)
                hcol = (p * ne + ia) * ne + ib
                for l in range(nv):
                    z0, z1 = cfg.z_top * lev[l], cfg.z_top * lev[l + 1]
                    z = 0.5 * (z0 + z1) + 0.5 * (z1 - z0) * bz.nodes
                    r = cfg.radius + z
                    coords[e] = d[:, :, :, None] * r[None, None, None, :]
                    elem_layer[e] = l
                    elem_hcol[e] = hcol
                    e += 1
    return Mesh(cfg, coords, (bx, be, bz), elem_layer, elem_hcol)


def build_box(cfg):
    """Tensor-product brick mesh; zeta aligned with z."""
    if cfg.geometry != "box":
        raise ValueError("config geometry must be 'box'")
    bx, be, bz = lobatto(cfg.degree_xi), lobatto(cfg.degree_eta), lobatto(cfg.degree_zeta)
    Lx, Ly, Lz = cfg.box_extents
    ne = cfg.panels_per_edge
    nv = cfg.n_elem_vertical
    xs = np.linspace(0.0, Lx, ne + 1)
    ys = np.linspace(0.0, Ly, ne + 1)
    lev = _vertical_levels(cfg) * Lz
    nelem = ne * ne * nv
    coords = np.empty((nelem, 3, bx.npts, be.npts, bz.npts))
    elem_layer = np.empty(nelem, dtype=np.int64)
    elem_hcol = np.empty(nelem, dtype=np.int64)
    e = 0
    for ia in range(ne):
        x = 0.5 * (xs[ia] + xs[ia + 1]) + 0.5 * (xs[ia + 1] - xs[ia]) * bx.nodes
        for ib in range(ne):
            y = 0.5 * (ys[ib] + ys[ib + 1]) + 0.5 * (ys[ib + 1] - ys[ib]) * be.nodes
            for l in range(nv):
                z = 0.5 * (lev[l] + lev[l + 1]) + 0.5 * (lev[l + 1] - lev[l]) * bz.nodes
                X, Y, Z = np.meshgrid(x, y, z, indexing="ij")
                coords[e] = np.stack([X, Y, Z])
                elem_layer[e] = l
                elem_hcol[e] = ia * ne + ib
                e += 1
    return Mesh(cfg, coords, (bx, be, bz), elem_layer, elem_hcol)


def build_mesh(cfg):
    return build_cubed_sphere(cfg) if cfg.geometry == "sphere" else build_box(cfg)


def apply_terrain(mesh, surface_height):
    """Remap gridpoint radii with the linear-decay terrain-following rule.

    z_new = h_s + z_old (z_T - h_s) / z_T, where h_s = surface_height(lon, lat).
    The model top stays put and the bottom surface follows the terrain.
    Points with h_s == 0 keep their coordinates bitwise.
    """
    cfg = mesh.cfg
    if cfg.geometry != "sphere":
        raise ValueError("terrain mapping is defined for sphere meshes")
    pts = mesh.coords.transpose(0, 2, 3, 4, 1).reshape(-1, 3)
    r = np.linalg.norm(pts, axis=1)
    lam = np.arctan2(pts[:, 1], pts[:, 0])
    phi = np.arcsin(np.clip(pts[:, 2] / r, -1.0, 1.0))
    hs = np.asarray(surface_height(lam, phi), dtype=float)
    if np.any(hs < 0) or np.any(hs >= cfg.z_top):
        raise ValueError("terrain must satisfy 0 <= h_s < z_top")
    z = r - cfg.radius
    znew = hs + z * (cfg.z_top - hs) / cfg.z_top
    rnew = cfg.radius + znew
    scale = np.where(hs == 0.0, 1.0, rnew / r)
    newpts = pts * scale[:, None]
    coords = newpts.reshape(mesh.coords.shape[0], *mesh.shape, 3).transpose(0, 4, 1, 2, 3)
    out = Mesh(cfg, coords, mesh.bases, mesh.elem_layer.copy(), mesh.elem_hcol.copy())
    return out
