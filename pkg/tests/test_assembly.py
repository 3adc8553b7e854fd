import itertools
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fieldrecon import _kernels
from fieldrecon.assembly import (MaterialProperties, assemble_flux_load, assemble_global,
                                 element_batches, hex_element_matrices, hex_shape_eval,
                                 quad_face_matrices)
from fieldrecon.exceptions import DegenerateElementError
from fieldrecon.mesh import build_box_mesh, classify_boundary

UNIT = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
                 [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]], dtype=float)
SIGNS = 2 * UNIT - 1


def props(k=1.0, rho=1.0, cp=1.0, h=1.0, ta=0.0):
    return MaterialProperties(k, rho, cp, h, ta)


def oracle_hex(x, k, rhocp, order=5):
    """Independent tensor Gauss-Legendre integration of the trilinear hex."""
    pts, wts = np.polynomial.legendre.leggauss(order)
    ke = np.zeros((8, 8))
    ce = np.zeros((8, 8))
    for (a, wa), (b, wb), (c, wc) in itertools.product(zip(pts, wts), repeat=3):
        xi = np.array([a, b, c])
        n = np.prod(1 + SIGNS * xi, axis=1) / 8
        dn = np.empty((3, 8))
        for d in range(3):
            others = [e for e in range(3) if e != d]
            dn[d] = SIGNS[:, d] * np.prod(1 + SIGNS[:, others] * xi[others], axis=1) / 8
        jac = dn @ x
        g = np.linalg.solve(jac, dn)
        w = wa * wb * wc * np.linalg.det(jac)
        ke += w * k * g.T @ g
        ce += w * rhocp * np.outer(n, n)
    return ke, ce


def test_shape_at_center_of_unit_cube():
    n, B, det = hex_shape_eval((0, 0, 0), UNIT)
    np.testing.assert_allclose(n, 1 / 8)
    assert det == pytest.approx(1 / 8)
    np.testing.assert_allclose(B.sum(axis=1), 0, atol=1e-15)


def test_linear_field_patch(rng):
    x = UNIT * [2.0, 1.0, 0.5] + rng.uniform(-0.1, 0.1, (8, 3))
    for p in rng.uniform(-1, 1, (5, 3)):
        n, B, _ = hex_shape_eval(p, x)
        assert n.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(B @ x[:, 0], [1, 0, 0], atol=1e-12)
        np.testing.assert_allclose(B @ x[:, 2], [0, 0, 1], atol=1e-12)


def test_inverted_hex_rejected():
    with pytest.raises(DegenerateElementError):
        hex_shape_eval((0, 0, 0), UNIT[[4, 5, 6, 7, 0, 1, 2, 3]])
    with pytest.raises(DegenerateElementError):
        hex_element_matrices(UNIT[[4, 5, 6, 7, 0, 1, 2, 3]], props())


def test_unit_cube_stiffness():
    ke, ce = hex_element_matrices(UNIT, props())
    np.testing.assert_allclose(ke.sum(axis=1), 0, atol=1e-15)
    np.testing.assert_allclose(np.diag(ke), 1 / 3)
    assert ce.sum() == pytest.approx(1.0)
    # analytic trilinear cube values: edge neighbours 0, face and body diagonals -1/12
    assert ke[0, 1] == pytest.approx(0.0, abs=1e-15)
    assert ke[0, 2] == pytest.approx(-1 / 12)
    assert ke[0, 6] == pytest.approx(-1 / 12)


def test_stiffness_scales_with_length():
    ke1, _ = hex_element_matrices(UNIT, props())
    ke2, ce2 = hex_element_matrices(2 * UNIT, props())
    np.testing.assert_allclose(ke2, 2 * ke1, rtol=1e-14, atol=1e-15)
    assert ce2.sum() == pytest.approx(8.0)


@pytest.mark.parametrize("scale", [(1, 1, 1), (0.3, 2.0, 0.7)])
def test_hex_matches_high_order_quadrature_on_boxes(scale):
    x = UNIT * scale + [0.2, -1.0, 3.0]
    ke, ce = hex_element_matrices(x, props(k=2.5, rho=3.0, cp=0.5))
    ko, co = oracle_hex(x, 2.5, 1.5)
    np.testing.assert_allclose(ke, ko, atol=1e-13 * np.abs(ko).max())
    np.testing.assert_allclose(ce, co, atol=1e-13 * np.abs(co).max())


def test_hex_matches_two_point_oracle_on_distorted(rng):
    x = UNIT + rng.uniform(-0.15, 0.15, (8, 3))
    ke, ce = hex_element_matrices(x, props(k=1.7))
    ko, co = oracle_hex(x, 1.7, 1.0, order=2)
    np.testing.assert_allclose(ke, ko, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(ce, co, rtol=1e-12, atol=1e-14)


def test_quad_face_unit_square():
    sq = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
    he, fe = quad_face_matrices(sq, props(h=1.0, ta=0.0))
    np.testing.assert_allclose(fe, 0)
    assert he.sum() == pytest.approx(1.0)
    he, fe = quad_face_matrices(sq, props(h=1.0, ta=20.0))
    np.testing.assert_allclose(fe, 5.0)
    np.testing.assert_allclose(he @ np.full(4, 20.0), fe)


def test_quad_face_skew(rng):
    q = np.array([[0, 0, 0], [2, 0, 0.3], [2.2, 1.5, 0.1], [-0.1, 1.0, 0.0]])
    he, fe = quad_face_matrices(q, props(h=3.0, ta=7.0))
    np.testing.assert_allclose(he @ np.full(4, 7.0), fe, rtol=1e-14)


def test_no_convection_gives_zero_load():
    m = build_box_mesh((1, 1, 1), (1, 1, 1))
    sys_ = assemble_global(m, classify_boundary(m, "+z"), props(h=0.0, ta=20.0))
    assert (sys_.K - sys_.K_base).count_nonzero() == 0
    np.testing.assert_array_equal(sys_.f_h, 0)


def test_strip_coupling_pattern():
    m = build_box_mesh((2, 1, 1), (2, 1, 1))
    sys_ = assemble_global(m, classify_boundary(m, "-x"), props())
    K = sys_.K_base.toarray()
    x = m.nodes[:, 0]
    far = np.abs(x[:, None] - x[None, :]) > 1.5
    assert np.all(K[far] == 0)
    assert np.all(K[~far & ~np.eye(len(x), dtype=bool)] <= 1e-15)


def test_flux_load(desk):
    mesh, system = desk
    sets = system.boundary
    np.testing.assert_array_equal(assemble_flux_load(mesh, sets, 0.0), 0)
    q = 600000 / 180 * 180
    f = assemble_flux_load(mesh, sets, q)
    assert f.sum() == pytest.approx(q * 0.1 * 0.1, rel=1e-12)
    assert np.all(f[sets.interior_and_h_only_nodes] == 0)
    # corner of the heated face touches one quad of area A
    area = (0.1 / 4) ** 2
    np.testing.assert_allclose(f[sets.gamma_corner_nodes], q * area / 4, rtol=1e-12)


def test_unit_top_face_total_load():
    m = build_box_mesh((1, 1, 0.25), (3, 3, 1))
    f = assemble_flux_load(m, classify_boundary(m, "+z"), 600000 / 180 * 180)
    assert f.sum() == pytest.approx(600000.0, rel=1e-12)


def check_invariants(system, p, volume):
    K, C = system.K, system.C
    assert abs(K - K.T).max() == 0
    assert abs(C - C.T).max() == 0
    n = system.n_nodes
    kscale = abs(system.K_base).max()
    assert np.abs(system.K_base @ np.ones(n)).max() <= 1e-12 * kscale * 8
    amb = system.H @ np.full(n, p.t_ambient)
    assert np.abs(amb - system.f_h).max() <= 1e-12 * max(np.abs(system.f_h).max(), 1e-300)
    assert (np.ones(n) @ (C @ np.ones(n))) == pytest.approx(p.rho_cp * volume, rel=1e-10)


@settings(max_examples=30, deadline=None)
@given(div=st.tuples(*[st.integers(1, 6)] * 3),
       lengths=st.tuples(*[st.floats(0.01, 2.0)] * 3),
       face=st.sampled_from(["-x", "+x", "-y", "+y", "-z", "+z"]))
def test_global_invariants(div, lengths, face):
    p = MaterialProperties(25.84, 7760.0, 416.8, 135.0, 20.0)
    m = build_box_mesh(lengths, div)
    check_invariants(assemble_global(m, classify_boundary(m, face), p), p, np.prod(lengths))


@pytest.mark.parametrize("div", [(1, 1, 1), (2, 3, 1), (3, 3, 3), (5, 5, 5)])
def test_semidefinite(div):
    m = build_box_mesh((1, 1, 1), div)
    s = assemble_global(m, classify_boundary(m, "+z"), props(h=2.0))
    K = s.K.toarray()
    assert np.linalg.eigvalsh(K).min() >= -1e-10 * np.abs(K).max()
    assert np.linalg.eigvalsh(s.C.toarray()).min() > 0


def _distorted_mesh(rng):
    m = build_box_mesh((1, 1, 1), (4, 3, 2))
    nodes = m.nodes + rng.uniform(-0.04, 0.04, m.nodes.shape)
    return type(m)(nodes, m.hexes, m.boundary_faces, m.face_labels, m.face_hex, m.shape)


@pytest.mark.skipif(_kernels.BACKEND != "cython", reason="compiled kernels not built")
def test_backends_agree(rng):
    m = _distorted_mesh(rng)
    s = classify_boundary(m, "+z")
    p = props(k=3.0, rho=2.0, h=5.0, ta=11.0)
    py = element_batches(m, p, s.gamma_h_faces, _kernels.backend_module("python"))
    cy = element_batches(m, p, s.gamma_h_faces, _kernels.backend_module("cython"))
    for a, b in zip(py, cy):
        np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-15)
    A = assemble_global(m, s, p, _kernels.backend_module("python"))
    B = assemble_global(m, s, p, _kernels.backend_module("cython"))
    assert abs(A.K - B.K).max() <= 1e-13 * abs(A.K).max()
    assert abs(A.C - B.C).max() <= 1e-13 * abs(A.C).max()
    np.testing.assert_allclose(A.fq_unit, B.fq_unit, rtol=1e-13)


def test_batch_matches_single_element(rng):
    m = _distorted_mesh(rng)
    s = classify_boundary(m, "+z")
    p = props(k=3.0, rho=2.0, h=5.0)
    ke, ce, he, fe = element_batches(m, p, s.gamma_h_faces)
    for e in (0, 7, m.n_hexes - 1):
        k1, c1 = hex_element_matrices(m.nodes[m.hexes[e]], p)
        np.testing.assert_allclose(ke[e], k1, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(ce[e], c1, rtol=1e-12, atol=1e-15)
    f = s.gamma_h_faces[3]
    h1, f1 = quad_face_matrices(m.nodes[m.boundary_faces[f]], p)
    np.testing.assert_allclose(he[3], h1, rtol=1e-12)
    np.testing.assert_allclose(fe[3], f1, rtol=1e-12)


def test_pure_python_backend_env():
    env = {**os.environ, "FIELDRECON_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", "import fieldrecon._kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
