"""Pure numpy implementation of the assembly kernels.

Every function mirrors the signature of its compiled counterpart in
``_ckernels.pyx``: output arrays are filled in place and the element kernels
return the index of the first degenerate element, or -1.
"""
import numpy as np


def hex_batch(coords, N, dN, w, k, rhocp, ke_out, ce_out):
    jac = np.einsum("gla,eai->egli", dN, coords)
    det = np.linalg.det(jac)
    bad = np.flatnonzero(np.any(det <= 0.0, axis=1))
    if len(bad):
        return int(bad[0])
    B = np.linalg.solve(jac, np.broadcast_to(dN, jac.shape[:2] + dN.shape[1:]))
    wd = det * w
    ke_out[...] = k * np.einsum("eg,egia,egib->eab", wd, B, B)
    ce_out[...] = rhocp * np.einsum("eg,ga,gb->eab", wd, N, N)
    return -1


def quad_batch(coords, N, dN, w, h, h_ta, he_out, fe_out):
    tang = np.einsum("gla,eai->egli", dN, coords)
    js = np.linalg.norm(np.cross(tang[:, :, 0], tang[:, :, 1]), axis=-1)
    bad = np.flatnonzero(np.any(js <= 0.0, axis=1))
    if len(bad):
        return int(bad[0])
    wj = js * w
    he_out[...] = h * np.einsum("eg,ga,gb->eab", wj, N, N)
    fe_out[...] = h_ta * (wj @ N)
    return -1


def scatter_add(conn, vals, indptr, indices, data):
    """Add element blocks ``vals[e]`` into CSR ``data`` in element order."""
    n_rows = len(indptr) - 1
    counts = np.diff(indptr)
    pattern_rows = np.repeat(np.arange(n_rows, dtype=np.int64), counts)
    pattern_keys = pattern_rows * n_rows + indices
    npe = conn.shape[1]
    keys = conn[:, :, None] * n_rows + conn[:, None, :]
    pos = np.searchsorted(pattern_keys, keys.ravel())
    data += np.bincount(pos, weights=vals.reshape(-1), minlength=len(data))
