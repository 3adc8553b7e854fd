import numpy as np
import pytest

from fieldrecon.assembly import MaterialProperties, assemble_global
from fieldrecon.io import DEFAULT_CASE, read_case_config
from fieldrecon.mesh import build_box_mesh, classify_boundary

STEEL = MaterialProperties(k=25.84, rho=7760.0, cp=416.8, h=135.0, t_ambient=20.0)


def make_system(lengths=(0.1, 0.1, 0.025), divisions=(4, 4, 2), props=STEEL, face="+z"):
    mesh = build_box_mesh(lengths, divisions)
    return mesh, assemble_global(mesh, classify_boundary(mesh, face), props)


@pytest.fixture
def desk():
    """Small (4, 4, 2) plate: 75 nodes, 25 on the heated face."""
    return make_system()


@pytest.fixture(scope="session")
def plate_case():
    return read_case_config(DEFAULT_CASE)


@pytest.fixture(scope="session")
def plate(plate_case):
    return plate_case.build_system()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def bar_system():
    """Three-node bar: unit conductances, convection h=1 at the far node, Ta=0.

    Built directly from its global matrices; the heated set is node 0 only and
    there are no rim or corner nodes.
    """
    import scipy.sparse as sp

    from fieldrecon.assembly import AssembledSystem
    from fieldrecon.mesh import BoundarySets

    K_base = sp.csr_matrix(np.array([[1.0, -1, 0], [-1, 2, -1], [0, -1, 1]]))
    H = sp.csr_matrix(np.diag([0.0, 0.0, 1.0]))
    C = sp.csr_matrix(np.array([[2.0, 1, 0], [1, 4, 1], [0, 1, 2]]) / 6)
    empty = np.array([], dtype=np.int64)
    sets = BoundarySets(
        gamma_q_faces=empty, gamma_h_faces=empty,
        gamma_q_nodes=np.array([0]), gamma_h_nodes=np.array([2]),
        gamma_edge_nodes=empty, gamma_corner_nodes=empty,
        interior_and_h_only_nodes=np.array([1, 2]), boundary_nodes=np.array([0, 2]),
    )
    return AssembledSystem(C=C, K=(K_base + H).tocsr(), K_base=K_base, H=H, f_h=np.zeros(3),
                           boundary=sets, fq_unit=np.array([1.0, 0.0, 0.0]))


@pytest.fixture
def bar():
    return bar_system()


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def record(criterion, ok, detail=""):
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  criterion {criterion}: {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
