"""Element integration and global assembly of the heat conduction system.

Sign convention: applied heat flux is stored as ``q_inward`` (positive when
heating the body), so the flux load entries on the heated surface are positive
for heating.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import _kernels
from ._kernels.reference import gauss_2pt, hex_rule, hex_shape, quad_rule
from .exceptions import DegenerateElementError, NumericalError
from .mesh import BoundarySets, Mesh

_HEX_RULE = hex_rule()
_QUAD_RULE = quad_rule()


@dataclass(frozen=True)
class MaterialProperties:
    k: float          # W/(m C)
    rho: float        # kg/m^3
    cp: float         # J/(kg C)
    h: float          # W/(m^2 C)
    t_ambient: float  # C

    def __post_init__(self):
        for name in ("k", "rho", "cp"):
            if not getattr(self, name) > 0:
                raise ValueError(f"material.{name} must be positive")
        if not self.h >= 0:
            raise ValueError("material.h must be non-negative")
        if not np.isfinite(self.t_ambient):
            raise ValueError("material.t_ambient must be finite")

    @property
    def rho_cp(self) -> float:
        return self.rho * self.cp


@dataclass(frozen=True)
class AssembledSystem:
    """Global matrices of ``C dT/dt + K T = f_q + f_h``.

    ``K = K_base + H`` with ``H`` the convection surface term. ``fq_unit`` is
    the flux load of a unit uniform inward flux on the heated surface.
    """

    C: sp.csr_matrix
    K: sp.csr_matrix
    K_base: sp.csr_matrix
    H: sp.csr_matrix
    f_h: np.ndarray
    boundary: BoundarySets
    fq_unit: np.ndarray
    props: MaterialProperties | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_nodes(self) -> int:
        return self.K.shape[0]


def hex_shape_eval(local_coords, node_coords):
    """Shape values, physical gradient matrix ``B`` (3x8) and ``det J`` at a point."""
    n, dn = hex_shape(local_coords)
    jac = dn @ np.asarray(node_coords, dtype=float)
    det = float(np.linalg.det(jac))
    if det <= 0.0:
        raise DegenerateElementError(f"non-positive Jacobian determinant {det:g}")
    return n, np.linalg.solve(jac, dn), det


def hex_element_matrices(node_coords, props: MaterialProperties):
    """Conduction stiffness and capacitance of one hex, 2x2x2 Gauss rule."""
    pts, w = gauss_2pt(3)
    ke = np.zeros((8, 8))
    ce = np.zeros((8, 8))
    for p, wg in zip(pts, w):
        n, B, det = hex_shape_eval(p, node_coords)
        ke += wg * det * props.k * (B.T @ B)
        ce += wg * det * props.rho_cp * np.outer(n, n)
    return ke, ce


def quad_face_matrices(node_coords, props: MaterialProperties):
    """Convection matrix and ambient load of one bilinear quad, 2x2 Gauss rule."""
    N, dN, w = _QUAD_RULE
    x = np.asarray(node_coords, dtype=float)
    he = np.zeros((4, 4))
    fe = np.zeros(4)
    for n, dn, wg in zip(N, dN, w):
        t = dn @ x
        js = float(np.linalg.norm(np.cross(t[0], t[1])))
        if js <= 0.0:
            raise DegenerateElementError("degenerate boundary face")
        he += wg * js * props.h * np.outer(n, n)
        fe += wg * js * props.h * props.t_ambient * n
    return he, fe


def csr_pattern(conn: np.ndarray, n: int):
    """Sorted CSR ``(indptr, indices)`` covering all element couplings."""
    keys = (conn[:, :, None] * n + conn[:, None, :]).ravel()
    keys = np.unique(keys)
    rows = keys // n
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    return indptr, (keys % n).astype(np.int64)


def _scatter(kern, conn, vals, n):
    indptr, indices = csr_pattern(conn, n)
    data = np.zeros(len(indices))
    kern.scatter_add(np.ascontiguousarray(conn, dtype=np.int64), vals, indptr, indices, data)
    return sp.csr_matrix((data, indices, indptr), shape=(n, n))


def element_batches(mesh: Mesh, props: MaterialProperties, h_faces, kern=None):
    """Element matrices for all hexes and for the given faces."""
    kern = kern or _kernels
    N, dN, w = _HEX_RULE
    coords = np.ascontiguousarray(mesh.nodes[mesh.hexes])
    ke = np.empty((mesh.n_hexes, 8, 8))
    ce = np.empty((mesh.n_hexes, 8, 8))
    bad = kern.hex_batch(coords, N, dN, w, props.k, props.rho_cp, ke, ce)
    if bad >= 0:
        raise DegenerateElementError(f"hex {bad} has a non-positive Jacobian determinant")

    Nq, dNq, wq = _QUAD_RULE
    fcoords = np.ascontiguousarray(mesh.nodes[mesh.boundary_faces[h_faces]])
    he = np.empty((len(h_faces), 4, 4))
    fe = np.empty((len(h_faces), 4))
    bad = kern.quad_batch(fcoords, Nq, dNq, wq, props.h, props.h * props.t_ambient, he, fe)
    if bad >= 0:
        raise DegenerateElementError(f"face {h_faces[bad]} is degenerate")
    # exact symmetry regardless of backend summation order
    ke = 0.5 * (ke + ke.transpose(0, 2, 1))
    ce = 0.5 * (ce + ce.transpose(0, 2, 1))
    he = 0.5 * (he + he.transpose(0, 2, 1))
    return ke, ce, he, fe


def assemble_global(mesh: Mesh, sets: BoundarySets, props: MaterialProperties,
                    kern=None) -> AssembledSystem:
    kern = kern or _kernels
    n = mesh.n_nodes
    h_faces = sets.gamma_h_faces
    ke, ce, he, fe = element_batches(mesh, props, h_faces, kern)

    K_base = _scatter(kern, mesh.hexes, ke, n)
    C = _scatter(kern, mesh.hexes, ce, n)
    face_conn = mesh.boundary_faces[h_faces]
    if len(face_conn):
        H = _scatter(kern, face_conn, he, n)
        f_h = np.bincount(face_conn.ravel(), weights=fe.ravel(), minlength=n)
    else:
        H = sp.csr_matrix((n, n))
        f_h = np.zeros(n)
    K = (K_base + H).tocsr()
    K.sort_indices()

    ambient = H @ np.full(n, props.t_ambient)
    scale = max(np.abs(f_h).max(initial=0.0), np.finfo(float).tiny)
    if np.abs(ambient - f_h).max(initial=0.0) > 1e-12 * scale:
        raise NumericalError("convection load inconsistent with convection matrix")

    return AssembledSystem(
        C=C, K=K, K_base=K_base, H=H, f_h=f_h, boundary=sets,
        fq_unit=assemble_flux_load(mesh, sets, 1.0, kern), props=props,
    )


def assemble_flux_load(mesh: Mesh, sets: BoundarySets, q_inward: float, kern=None) -> np.ndarray:
    """Nodal load of a uniform inward flux ``q_inward`` (W/m^2) on the heated surface."""
    kern = kern or _kernels
    Nq, dNq, wq = _QUAD_RULE
    conn = mesh.boundary_faces[sets.gamma_q_faces]
    coords = np.ascontiguousarray(mesh.nodes[conn])
    he = np.empty((len(conn), 4, 4))
    fe = np.empty((len(conn), 4))
    bad = kern.quad_batch(coords, Nq, dNq, wq, 0.0, float(q_inward), he, fe)
    if bad >= 0:
        raise DegenerateElementError(f"face {sets.gamma_q_faces[bad]} is degenerate")
    return np.bincount(conn.ravel(), weights=fe.ravel(), minlength=mesh.n_nodes)
