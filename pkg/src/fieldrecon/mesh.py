"""Structured hexahedral box meshes and boundary set classification."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError

FACE_LABELS = ("-x", "+x", "-y", "+y", "-z", "+z")


@dataclass(frozen=True)
class Mesh:
    """Hexahedral mesh with its exterior quadrilateral faces.

    Hex vertices are ordered bottom face counterclockwise then top face
    counterclockwise (viewed from +z), which is also the VTK_HEXAHEDRON order.
    Boundary quads are ordered counterclockwise seen from outside the box.
    """

    nodes: np.ndarray           # (n_nodes, 3) float
    hexes: np.ndarray           # (n_hexes, 8) int
    boundary_faces: np.ndarray  # (n_faces, 4) int
    face_labels: np.ndarray     # (n_faces,) str, one of FACE_LABELS
    face_hex: np.ndarray        # (n_faces,) owning hex
    shape: tuple = (0, 0, 0)    # divisions, (0, 0, 0) for non-structured input

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_hexes(self) -> int:
        return len(self.hexes)

    @property
    def n_faces(self) -> int:
        return len(self.boundary_faces)

    @property
    def n_elements(self) -> int:
        """Volume plus surface elements."""
        return self.n_hexes + self.n_faces

    @property
    def volume(self) -> float:
        span = self.nodes.max(axis=0) - self.nodes.min(axis=0)
        return float(np.prod(span))

    def faces_with_label(self, label: str) -> np.ndarray:
        return np.flatnonzero(self.face_labels == label)


def build_box_mesh(lengths, divisions) -> Mesh:
    """Uniform axis-aligned box ``[0, Lx] x [0, Ly] x [0, Lz]``."""
    lengths = np.asarray(lengths, dtype=float)
    divisions = np.asarray(divisions)
    if lengths.shape != (3,) or divisions.shape != (3,):
        raise ValueError("lengths and divisions need three entries each")
    if not np.all(np.isfinite(lengths)) or np.any(lengths <= 0):
        raise ValueError(f"box lengths must be positive, got {lengths.tolist()}")
    if np.any(divisions != np.round(divisions)) or np.any(divisions < 1):
        raise ValueError(f"divisions must be positive integers, got {divisions.tolist()}")
    nx, ny, nz = (int(d) for d in divisions)

    xs = np.linspace(0.0, lengths[0], nx + 1)
    ys = np.linspace(0.0, lengths[1], ny + 1)
    zs = np.linspace(0.0, lengths[2], nz + 1)
    # x fastest, then y, then z
    zz, yy, xx = np.meshgrid(zs, ys, xs, indexing="ij")
    nodes = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])

    def nid(i, j, k):
        return i + (nx + 1) * (j + (ny + 1) * k)

    k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    hexes = np.column_stack([
        nid(i, j, k), nid(i + 1, j, k), nid(i + 1, j + 1, k), nid(i, j + 1, k),
        nid(i, j, k + 1), nid(i + 1, j, k + 1), nid(i + 1, j + 1, k + 1), nid(i, j + 1, k + 1),
    ]).astype(np.int64)

    def hid(i, j, k):
        return i + nx * (j + ny * k)

    faces, labels, owners = [], [], []

    def add(label, quads, owner):
        faces.append(np.column_stack(quads).astype(np.int64))
        labels.extend([label] * len(owner))
        owners.append(np.asarray(owner, dtype=np.int64))

    # -x / +x faces
    k, j = (a.ravel() for a in np.meshgrid(np.arange(nz), np.arange(ny), indexing="ij"))
    i0, i1 = np.zeros_like(j), np.full_like(j, nx)
    add("-x", [nid(i0, j, k), nid(i0, j, k + 1), nid(i0, j + 1, k + 1), nid(i0, j + 1, k)], hid(i0, j, k))
    add("+x", [nid(i1, j, k), nid(i1, j + 1, k), nid(i1, j + 1, k + 1), nid(i1, j, k + 1)], hid(i1 - 1, j, k))
    # -y / +y faces
    k, i = (a.ravel() for a in np.meshgrid(np.arange(nz), np.arange(nx), indexing="ij"))
    j0, j1 = np.zeros_like(i), np.full_like(i, ny)
    add("-y", [nid(i, j0, k), nid(i + 1, j0, k), nid(i + 1, j0, k + 1), nid(i, j0, k + 1)], hid(i, j0, k))
    add("+y", [nid(i, j1, k), nid(i, j1, k + 1), nid(i + 1, j1, k + 1), nid(i + 1, j1, k)], hid(i, j1 - 1, k))
    # -z / +z faces
    j, i = (a.ravel() for a in np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij"))
    k0, k1 = np.zeros_like(i), np.full_like(i, nz)
    add("-z", [nid(i, j, k0), nid(i, j + 1, k0), nid(i + 1, j + 1, k0), nid(i + 1, j, k0)], hid(i, j, k0))
    add("+z", [nid(i, j, k1), nid(i + 1, j, k1), nid(i + 1, j + 1, k1), nid(i, j + 1, k1)], hid(i, j, k1 - 1))

    return Mesh(
        nodes=nodes,
        hexes=hexes,
        boundary_faces=np.vstack(faces),
        face_labels=np.array(labels),
        face_hex=np.concatenate(owners),
        shape=(nx, ny, nz),
    )


@dataclass(frozen=True)
class BoundarySets:
    """Face and node sets the loss terms are defined over (sorted int arrays)."""

    gamma_q_faces: np.ndarray
    gamma_h_faces: np.ndarray
    gamma_q_nodes: np.ndarray
    gamma_h_nodes: np.ndarray
    gamma_edge_nodes: np.ndarray
    gamma_corner_nodes: np.ndarray
    interior_and_h_only_nodes: np.ndarray
    boundary_nodes: np.ndarray

    @property
    def q_interior_nodes(self) -> np.ndarray:
        """Heated-surface nodes away from its rim (Gamma_q minus Gamma_edge)."""
        return np.setdiff1d(self.gamma_q_nodes, self.gamma_edge_nodes)

    @property
    def edge_only_nodes(self) -> np.ndarray:
        """Rim nodes that are not corners."""
        return np.setdiff1d(self.gamma_edge_nodes, self.gamma_corner_nodes)

    def regularization_groups(self) -> dict[str, np.ndarray]:
        return {
            "face": self.q_interior_nodes,
            "edge": self.edge_only_nodes,
            "corner": self.gamma_corner_nodes,
        }


def classify_boundary(mesh: Mesh, heated_face_label: str) -> BoundarySets:
    if heated_face_label not in FACE_LABELS:
        raise ConfigError(
            f"heated face must be one of {', '.join(FACE_LABELS)}, got {heated_face_label!r}"
        )
    is_q = mesh.face_labels == heated_face_label
    q_faces = np.flatnonzero(is_q)
    h_faces = np.flatnonzero(~is_q)
    q_nodes = np.unique(mesh.boundary_faces[q_faces])
    h_nodes = np.unique(mesh.boundary_faces[h_faces])
    boundary_nodes = np.unique(mesh.boundary_faces)
    edge = np.intersect1d(q_nodes, h_nodes)

    # corner = rim node touched by a single heated face
    touches = np.bincount(mesh.boundary_faces[q_faces].ravel(), minlength=mesh.n_nodes)
    corners = edge[touches[edge] == 1]

    rest = np.setdiff1d(np.arange(mesh.n_nodes), q_nodes)
    return BoundarySets(
        gamma_q_faces=q_faces,
        gamma_h_faces=h_faces,
        gamma_q_nodes=q_nodes,
        gamma_h_nodes=h_nodes,
        gamma_edge_nodes=edge,
        gamma_corner_nodes=corners,
        interior_and_h_only_nodes=rest,
        boundary_nodes=boundary_nodes,
    )


def nearest_node(mesh: Mesh, point) -> int:
    d2 = np.sum((mesh.nodes - np.asarray(point, dtype=float)) ** 2, axis=1)
    # argmin returns the first (lowest id) among ties
    return int(np.argmin(d2))
