import numpy as np
import pytest
import scipy.sparse as sp

from fieldrecon.exceptions import ConfigError, RankDeficiencyError
from fieldrecon.forward import (MeasurementSeries, TransientSolution, run_forward,
                                sample_measurements, steady_solve, transient_step)
from fieldrecon.inverse import (LossWeights, NCGState, ReconstructionConfig, ResidualStack,
                                build_reconstruction_stack, error_amplification, error_metrics,
                                gn_iterate, loss_and_gradient, minimize_stack, ncg_iterate,
                                reconstruct_series, reconstruct_step, recover_fq,
                                regularization_rows)
from fieldrecon.mesh import nearest_node

from conftest import make_system

RAMP = 600000 / 180
INF = np.inf


def desk_sensors(mesh):
    """8 rim points on the heated face plus one side point."""
    pts = [(0, 0), (0.05, 0), (0.1, 0), (0.1, 0.05), (0.1, 0.1), (0.05, 0.1), (0, 0.1), (0, 0.05)]
    ids = [nearest_node(mesh, (x, y, 0.025)) for x, y in pts]
    return np.array(ids + [nearest_node(mesh, (0.05, 0.0, 0.0125))])


@pytest.fixture
def desk_run(desk):
    mesh, s = desk
    sol = run_forward(s, np.full(s.n_nodes, 20.0), 1.0, 10.0, lambda t: RAMP * t)
    return mesh, s, sol, desk_sensors(mesh)


def stack_at(s, sol, ids, step, weights=LossWeights()):
    vals = sol.fields[step, ids]
    if step == 0:
        return build_reconstruction_stack(s, (ids, vals), None, INF, weights)
    return build_reconstruction_stack(s, (ids, vals), sol.fields[step - 1], 1.0, weights)


# --------------------------------------------------------------------------- weights and configs


def test_weights_validation():
    with pytest.raises(ConfigError):
        LossWeights(c1=0.0)
    with pytest.raises(ConfigError):
        LossWeights(c3=-1.0)
    with pytest.raises(ConfigError):
        LossWeights(c2=np.nan)
    with pytest.raises(ConfigError):
        ReconstructionConfig(0.0)
    with pytest.raises(ConfigError):
        ReconstructionConfig(1.0, s_ncg=0, s_gn=0)
    with pytest.raises(ConfigError):
        ReconstructionConfig(1.0, weights=LossWeights(c2=0.0))
    assert ReconstructionConfig(2.0).tsr(0.1) == pytest.approx(20.0)


# --------------------------------------------------------------------------- flux recovery


def test_recover_fq_roundtrip(desk, rng):
    _, s = desk
    Tp = 20 + rng.uniform(0, 3, s.n_nodes)
    fq = 7000 * s.fq_unit
    T = transient_step(s, Tp, 0.5, fq)
    got = recover_fq(s, T, Tp, 0.5)
    q = s.boundary.gamma_q_nodes
    np.testing.assert_allclose(got[q], fq[q], rtol=1e-8)
    assert np.all(got[s.boundary.interior_and_h_only_nodes] == 0)


def test_recover_fq_ambient_steady(desk):
    _, s = desk
    T = np.full(s.n_nodes, 20.0)
    np.testing.assert_allclose(recover_fq(s, T, T, INF), 0, atol=1e-9)


def test_recover_fq_bar(bar):
    assert recover_fq(bar, np.array([3.0, 2.0, 1.0]), None, INF)[0] == pytest.approx(1.0)


# --------------------------------------------------------------------------- regularization rows


def _field_with_loads(s, fq):
    """Steady field whose implied heated-surface loads are ``fq``."""
    return steady_solve(s, fq)


def test_regularization_rows_uniform_groups(desk):
    _, s = desk
    T = _field_with_loads(s, 3000 * s.fq_unit)
    np.testing.assert_allclose(regularization_rows(s, T, None, INF), 0, atol=1e-9)


def test_regularization_rows_two_node_group():
    _, s = make_system(lengths=(0.3, 0.2, 0.1), divisions=(3, 2, 1))
    groups = s.boundary.regularization_groups()
    assert len(groups["face"]) == 2
    fq = np.zeros(s.n_nodes)
    fq[groups["face"]] = [2.0, 4.0]
    rows = regularization_rows(s, _field_with_loads(s, fq), None, INF)
    np.testing.assert_allclose(rows[:2], [-1.0, 1.0], atol=1e-9)
    start = 0
    for g in ("face", "edge", "corner"):
        n = len(groups[g])
        assert rows[start:start + n].sum() == pytest.approx(0.0, abs=1e-9)
        start += n


def test_regularization_link_row(desk):
    _, s = desk
    g = s.boundary.regularization_groups()
    fq = np.zeros(s.n_nodes)
    fq[g["edge"]] = 6.0
    fq[g["corner"]] = 3.0
    rows = regularization_rows(s, _field_with_loads(s, fq), None, INF, mode="generation")
    assert len(rows) == 26
    assert rows[-1] == pytest.approx(0.0, abs=1e-9)
    fq[g["corner"]] = 1.0
    rows = regularization_rows(s, _field_with_loads(s, fq), None, INF, mode="generation")
    assert rows[-1] == pytest.approx(4.0)


def test_regularization_empty_group(bar):
    with pytest.raises(ConfigError, match="edge"):
        regularization_rows(bar, np.zeros(3), None, INF)
    with pytest.raises(ValueError):
        regularization_rows(bar, np.zeros(3), None, INF, mode="other")


# --------------------------------------------------------------------------- stack


def test_row_count(desk_run):
    _, s, sol, ids = desk_run
    stack = stack_at(s, sol, ids, 3)
    assert stack.n_rows == 50 + 9 + 25
    assert len(stack.rows("measurement")) == 9
    assert len(stack.rows("reg-face")) == 9


def test_residual_zero_at_truth(desk_run):
    _, s, sol, ids = desk_run
    for step in (0, 4):
        stack = stack_at(s, sol, ids, step)
        r = stack.residual(sol.fields[step])
        hard = np.concatenate([stack.rows("residual-term"), stack.rows("measurement")])
        assert np.abs(r[hard]).max() <= 1e-8
        # per group the uniform-flux loads are uniform, so smoothing rows vanish too
        assert stack.loss(sol.fields[step]) <= 1e-16


def test_measurement_under_source_warns(desk_run):
    mesh, s, sol, ids = desk_run
    inner = s.boundary.q_interior_nodes[0]
    with pytest.warns(UserWarning, match="heated surface"):
        stack_at(s, sol, np.append(ids, inner), 2)


def test_bad_measurement_node(desk_run):
    _, s, sol, _ = desk_run
    with pytest.raises(ConfigError):
        build_reconstruction_stack(s, ([s.n_nodes], [1.0]), None, INF, LossWeights())
    with pytest.raises(ConfigError):
        build_reconstruction_stack(s, ([], []), None, INF, LossWeights())


def test_affinity(desk_run, rng):
    _, s, sol, ids = desk_run
    stack = stack_at(s, sol, ids, 5)
    T1, T2 = 20 + rng.normal(0, 5, (2, s.n_nodes))
    a = 0.3
    mix = a * T1 + (1 - a) * T2
    r = stack.jacobian @ mix + stack.offset
    assert stack.loss(mix) == pytest.approx(float(r @ r), rel=1e-14)
    # exactly quadratic: second difference along a line is constant
    d = rng.normal(size=s.n_nodes)
    l0, l1, l2, l3 = (stack.loss(T1 + k * d) for k in range(4))
    assert (l2 - 2 * l1 + l0) == pytest.approx(l3 - 2 * l2 + l1, rel=1e-7)


# --------------------------------------------------------------------------- loss and gradient


def test_zero_jacobian():
    stack = ResidualStack(sp.csr_matrix((3, 4)), np.array([1.0, 2.0, 2.0]), np.ones(3),
                          np.array(["residual-term"] * 3))
    loss, g = loss_and_gradient(stack, np.arange(4.0))
    assert loss == pytest.approx(9.0)
    np.testing.assert_array_equal(g, 0)


def test_gradient_finite_differences(desk_run, rng):
    _, s, sol, ids = desk_run
    stack = stack_at(s, sol, ids, 6)
    T = sol.fields[6] + rng.normal(0, 2, s.n_nodes)
    _, g = loss_and_gradient(stack, T)
    for i in rng.choice(s.n_nodes, 20, replace=False):
        h = 1e-4 * (1 + abs(T[i]))
        e = np.zeros(s.n_nodes)
        e[i] = h
        fd = (stack.loss(T + e) - stack.loss(T - e)) / (2 * h)
        assert fd == pytest.approx(g[i], rel=1e-6, abs=1e-9 * np.abs(g).max())


# --------------------------------------------------------------------------- optimizers


def _diag_stack():
    J = sp.csr_matrix(np.diag([1.0, 3.0]))
    return ResidualStack(J, np.array([-1.0, -2.0]), np.ones(2), np.array(["residual-term"] * 2))


def test_ncg_two_steps_on_diagonal_quadratic():
    stack = _diag_stack()
    T, state = ncg_iterate(stack, np.array([5.0, -4.0]))
    T, state = ncg_iterate(stack, T, state)
    np.testing.assert_allclose(T, [1.0, 2.0 / 3.0], atol=1e-12)


def test_ncg_fresh_step_decreases(desk_run):
    _, s, sol, ids = desk_run
    stack = stack_at(s, sol, ids, 2)
    T0 = np.full(s.n_nodes, 25.0)
    T1, state = ncg_iterate(stack, T0)
    assert stack.loss(T1) < stack.loss(T0)
    assert isinstance(state, NCGState)


def test_ncg_at_minimum_is_stationary():
    stack = _diag_stack()
    x = np.array([1.0, 2.0 / 3.0])
    T, _ = ncg_iterate(stack, x)
    np.testing.assert_array_equal(T, x)


def test_gn_one_step(desk_run, rng):
    _, s, sol, ids = desk_run
    stack = stack_at(s, sol, ids, 7)
    T = gn_iterate(stack, 20 + rng.uniform(0, 50, s.n_nodes))
    loss, g = loss_and_gradient(stack, T)
    assert np.linalg.norm(g) <= 1e-8 * (1 + loss)
    again = gn_iterate(stack, T)
    assert np.abs(again - T).max() <= 1e-7 * np.abs(T).max()


def test_gn_rank_deficient_without_smoothing(desk_run):
    _, s, sol, ids = desk_run
    stack = stack_at(s, sol, ids, 3, LossWeights(c3=0.0))
    with pytest.raises(RankDeficiencyError, match="rank"):
        gn_iterate(stack, sol.fields[3])


def test_stage_losses_never_increase(desk_run):
    _, s, sol, ids = desk_run
    stack = stack_at(s, sol, ids, 5)
    _, losses = minimize_stack(stack, np.full(s.n_nodes, 30.0), 4, 2)
    assert all(b <= a * (1 + 1e-12) + 1e-20 for a, b in zip(losses, losses[1:]))


# --------------------------------------------------------------------------- reconstruction


def test_bar_reconstruction():
    from conftest import bar_system
    bar = bar_system()
    cfg = ReconstructionConfig(1.0, weights=LossWeights(c1=1, c2=1, c3=0))
    T, fq = reconstruct_step(bar, cfg, ([1], [2.0]), None, dt=INF)
    np.testing.assert_allclose(T, [3.0, 2.0, 1.0], atol=1e-8)
    assert fq[0] == pytest.approx(1.0, abs=1e-8)


@pytest.mark.filterwarnings("ignore:measurements on the heated")
def test_all_nodes_measured(desk_run):
    _, s, sol, _ = desk_run
    every = np.arange(s.n_nodes)
    cfg = ReconstructionConfig(1.0)
    T, _ = reconstruct_step(s, cfg, (every, sol.fields[4, every]), sol.fields[3])
    np.testing.assert_allclose(T, sol.fields[4], rtol=1e-6)


def test_huge_step_matches_steady(desk):
    mesh, s = desk
    ids = desk_sensors(mesh)
    ref = steady_solve(s, 20000 * s.fq_unit)
    cfg = ReconstructionConfig(1.0)
    steady, _ = reconstruct_step(s, cfg, (ids, ref[ids]), None, dt=INF)
    slow, _ = reconstruct_step(s, cfg, (ids, ref[ids]), ref, dt=1e12)
    np.testing.assert_allclose(slow, steady, rtol=1e-6)


def test_series_on_desk(desk_run):
    _, s, sol, ids = desk_run
    meas = sample_measurements(sol, ids, 1.0)
    calls = []
    rec = reconstruct_series(s, ReconstructionConfig(1.0), meas,
                             progress=lambda *a: calls.append(a))
    assert len(calls) == len(sol.times)
    rep = error_metrics(rec, sol)
    assert rep.avg_rel <= 1.0 and rep.max_rel <= 5.0
    assert max(rec.info["gradient_norm"]) <= 1e-8 * (1 + max(rec.info["loss"]))
    assert rec.recovered_fq.shape == rec.fields.shape


def test_series_coarser_steps(desk):
    _, s = desk
    ids = desk_sensors(desk[0])
    sol = run_forward(s, np.full(s.n_nodes, 20.0), 0.5, 6.0, lambda t: RAMP * t)
    meas = sample_measurements(sol, ids, 0.5)
    rec = reconstruct_series(s, ReconstructionConfig(2.0), meas)
    np.testing.assert_allclose(rec.times, [0, 2, 4, 6])
    assert error_metrics(rec, sol).avg_rel < 5.0


def test_series_missing_column(desk_run):
    _, s, sol, ids = desk_run
    meas = sample_measurements(sol, ids, 2.0)
    with pytest.raises(ConfigError, match="no measurement"):
        reconstruct_series(s, ReconstructionConfig(1.0), meas)
    late = MeasurementSeries(ids, [1.0, 2.0], np.zeros((len(ids), 2)))
    with pytest.raises(ConfigError, match="t = 0"):
        reconstruct_series(s, ReconstructionConfig(1.0), late)


# --------------------------------------------------------------------------- error metrics


def test_metrics_identical():
    sol = TransientSolution([0.0, 1.0], [[20.0, 30.0], [21.0, 35.0]])
    rep = error_metrics(sol, sol)
    assert rep.summary() == {"avg_rel_pct": 0.0, "max_rel_pct": 0.0, "avg_abs_C": 0.0, "max_abs_C": 0.0}


def test_metrics_single_node():
    rec = TransientSolution([0.0], [[101.0]])
    ref = TransientSolution([0.0], [[100.0]])
    rep = error_metrics(rec, ref)
    assert rep.avg_rel == pytest.approx(1.0)
    assert rep.max_abs == pytest.approx(1.0)


def test_metrics_exclusion_and_averaging():
    ref = TransientSolution([0.0, 1.0, 2.0], [[10.0, 0.05], [20.0, 40.0], [50.0, 50.0]])
    rec = TransientSolution([0.0, 2.0], [[11.0, 0.0], [50.0, 55.0]])
    rep = error_metrics(rec, ref)
    assert rep.excluded == 1
    np.testing.assert_allclose(rep.avg_rel_series, [10.0, 5.0])
    assert rep.avg_rel == pytest.approx(7.5)
    assert rep.max_abs == pytest.approx(5.0)
    np.testing.assert_allclose(rep.avg_abs_series, [(1 + 0.05) / 2, 2.5])
    rows = list(rep.series_rows())
    assert [r["time_s"] for r in rows] == [0.0, 2.0]
    with pytest.raises(ConfigError):
        error_metrics(TransientSolution([0.5], [[1.0, 1.0]]), ref)


# --------------------------------------------------------------------------- amplification


def test_amplification_of_default_layouts(plate, plate_case):
    mesh, s = plate
    for name, ids in plate_case.layout_nodes(mesh).items():
        for dt in (1.0, 2.0):
            assert error_amplification(s, dt, LossWeights(), ids, iterations=60) < 1.0, (name, dt)


def test_amplification_flags_unstable_layout(plate):
    mesh, s = plate
    rim = [(0, 0), (0.05, 0), (0.1, 0), (0.1, 0.05), (0.1, 0.1), (0.05, 0.1), (0, 0.1), (0, 0.05)]
    ids = [nearest_node(mesh, (x, y, 0.025)) for x, y in rim]
    # side sensor two layers below the heated face
    ids.append(nearest_node(mesh, (0.0, 0.05, 0.025 * 4 / 6)))
    assert error_amplification(s, 1.0, LossWeights(), ids, iterations=60) > 1.0


def test_normal_solver_rejects_dependent_columns():
    from fieldrecon.normal import NormalSolver
    base = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 4.0], [-1.0, -2.0]]))
    with pytest.raises(RankDeficiencyError):
        NormalSolver(base, base, np.zeros((2, 0)), np.zeros(0))
