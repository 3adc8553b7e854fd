"""Reference-element shape functions and Gauss rules shared by both kernel backends."""
import numpy as np

HEX_VERTICES = np.array([
    (-1, -1, -1), (1, -1, -1), (1, 1, -1), (-1, 1, -1),
    (-1, -1, 1), (1, -1, 1), (1, 1, 1), (-1, 1, 1),
], dtype=float)

QUAD_VERTICES = np.array([(-1, -1), (1, -1), (1, 1), (-1, 1)], dtype=float)


def hex_shape(xi):
    """Trilinear shape values (8,) and local derivatives (3, 8) at ``xi``."""
    xi = np.asarray(xi, dtype=float)
    f = 1.0 + HEX_VERTICES * xi  # (8, 3)
    n = 0.125 * f[:, 0] * f[:, 1] * f[:, 2]
    dn = 0.125 * np.array([
        HEX_VERTICES[:, 0] * f[:, 1] * f[:, 2],
        f[:, 0] * HEX_VERTICES[:, 1] * f[:, 2],
        f[:, 0] * f[:, 1] * HEX_VERTICES[:, 2],
    ])
    return n, dn


def quad_shape(xi):
    """Bilinear shape values (4,) and local derivatives (2, 4) at ``xi``."""
    xi = np.asarray(xi, dtype=float)
    f = 1.0 + QUAD_VERTICES * xi
    n = 0.25 * f[:, 0] * f[:, 1]
    dn = 0.25 * np.array([QUAD_VERTICES[:, 0] * f[:, 1], f[:, 0] * QUAD_VERTICES[:, 1]])
    return n, dn


def gauss_2pt(dim):
    g = 1.0 / np.sqrt(3.0)
    axes = np.meshgrid(*([[-g, g]] * dim), indexing="ij")
    return np.column_stack([a.ravel() for a in axes]), np.ones(2 ** dim)


def hex_rule():
    """2x2x2 Gauss rule tabulated: N (8g, 8), dN (8g, 3, 8), weights (8g,)."""
    pts, w = gauss_2pt(3)
    tab = [hex_shape(p) for p in pts]
    return np.array([t[0] for t in tab]), np.array([t[1] for t in tab]), w


def quad_rule():
    """2x2 Gauss rule tabulated: N (4g, 4), dN (4g, 2, 4), weights (4g,)."""
    pts, w = gauss_2pt(2)
    tab = [quad_shape(p) for p in pts]
    return np.array([t[0] for t in tab]), np.array([t[1] for t in tab]), w
