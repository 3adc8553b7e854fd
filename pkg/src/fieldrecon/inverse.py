"""Field reconstruction from sparse measurements by discrete-loss minimisation.

The loss for one time step is a sum of squared affine residuals in the
end-of-step temperature ``T``:

* equation residuals at every node off the heated surface (weight c1),
* measurement mismatches (weight c2),
* deviations of the implied heated-surface loads from their group means, with
  separate groups for the face interior, its rim and its corners (weight c3).

Because every row is affine in ``T`` the Jacobian is a constant sparse matrix
per step length, and a single Gauss-Newton step is an exact least-squares
solve. Nonlinear conjugate gradient iterations run first, as a cheap warm-up.
"""
from __future__ import annotations

import threading
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import AssembledSystem
from .balance import balance_matrix, balance_offset, heat_offset, heat_row, load_balance
from .exceptions import ConfigError
from .forward import MeasurementSeries, TransientSolution, time_grid, time_index
from .normal import NormalSolver

STEADY = np.inf


@dataclass(frozen=True)
class LossWeights:
    c1: float = 1.0
    c2: float = 1.0
    c3: float = 1.0
    c4: float = 0.0

    def __post_init__(self):
        for name in ("c1", "c2", "c3", "c4"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                raise ConfigError(f"weight {name} must be a non-negative number, got {value}")
        if self.c1 <= 0:
            raise ConfigError("weight c1 must be positive")


@dataclass(frozen=True)
class ReconstructionConfig:
    dt_rec: float
    s_ncg: int = 2
    s_gn: int = 1
    weights: LossWeights = LossWeights()

    def __post_init__(self):
        if not self.dt_rec > 0:
            raise ConfigError(f"dt_rec must be positive, got {self.dt_rec}")
        if self.s_ncg < 0 or self.s_gn < 0 or self.s_ncg + self.s_gn < 1:
            raise ConfigError("need s_ncg >= 0, s_gn >= 0 and at least one iteration")
        if self.weights.c2 <= 0:
            raise ConfigError("reconstruction needs a positive measurement weight c2")

    def tsr(self, dt_ref: float) -> float:
        return self.dt_rec / dt_ref


class StackLayout:
    """Step-invariant part of a residual stack (Jacobian, weights, factorisation).

    Depends only on the step length, the weights, the measured nodes and the
    mode, so one layout serves every step of a run.
    """

    def __init__(self, system: AssembledSystem, dt: float, weights: LossWeights,
                 measured_nodes=(), generation: bool = False):
        self.system = system
        self.dt = dt
        self.generation = generation
        self.measured_nodes = np.asarray(measured_nodes, dtype=np.int64)
        sets = system.boundary
        n = system.n_nodes
        A = balance_matrix(system, dt)

        jac, base, labels, row_w = [], [], [], []
        u_cols, signs = [], []

        def add(block, label, w, base_block=None):
            jac.append(sp.csr_matrix(block))
            base.append(sp.csr_matrix(block if base_block is None else base_block))
            labels.extend([label] * block.shape[0])
            row_w.extend([w] * block.shape[0])

        self._residual_nodes = sets.interior_and_h_only_nodes
        w1 = np.sqrt(weights.c1)
        add(w1 * A[self._residual_nodes], "residual-term", w1)

        M = len(self.measured_nodes)
        if M:
            w2 = np.sqrt(weights.c2)
            E = sp.csr_matrix((np.ones(M), (np.arange(M), self.measured_nodes)), shape=(M, n))
            add(w2 * E, "measurement", w2)

        self._groups = []
        self._link = None
        w3 = np.sqrt(weights.c3)
        if weights.c3 > 0:
            means = {}
            for name, nodes in sets.regularization_groups().items():
                if len(nodes) == 0:
                    if generation and name == "corner":
                        continue
                    raise ConfigError(f"regularization group {name!r} has no nodes")
                Ag = A[nodes]
                mean_row = sp.csr_matrix(np.full((1, len(nodes)), 1.0 / len(nodes))) @ Ag
                means[name] = mean_row
                proj = Ag - sp.csr_matrix(np.ones((len(nodes), 1))) @ mean_row
                add(w3 * proj, f"reg-{name}", w3, base_block=w3 * Ag)
                u_cols.append(w3 * np.sqrt(len(nodes)) * mean_row.toarray().ravel())
                signs.append(-1.0)
                self._groups.append(nodes)
            if generation:
                if "corner" in means and "edge" in means:
                    link = means["edge"] - 2.0 * means["corner"]
                    jac.append(w3 * link)
                    labels.append("reg-link")
                    row_w.append(w3)
                    u_cols.append(w3 * link.toarray().ravel())
                    signs.append(1.0)
                    self._link = (sets.edge_only_nodes, sets.gamma_corner_nodes)
                else:
                    warnings.warn("no corner nodes on the heated surface; link row omitted",
                                  stacklevel=3)

        self._heat = generation and weights.c4 > 0
        if generation and not self._heat:
            raise ConfigError("generation mode needs a positive heat weight c4")
        if self._heat:
            w4 = np.sqrt(weights.c4)
            row = w4 * heat_row(system, dt)
            jac.append(sp.csr_matrix(row))
            labels.append("heat-goal")
            row_w.append(w4)
            u_cols.append(row)
            signs.append(1.0)

        self.weights_vector = np.asarray(row_w)
        self.sqrt_w = (w1, np.sqrt(weights.c2), w3, np.sqrt(weights.c4))
        self.jacobian = sp.vstack(jac, format="csr")
        self.row_labels = np.asarray(labels)
        self._base = sp.vstack(base, format="csr")
        self._U = np.column_stack(u_cols) if u_cols else np.zeros((n, 0))
        self._signs = np.asarray(signs)
        self._solver = None

    @property
    def solver(self) -> NormalSolver:
        with _LAYOUT_LOCK:
            if self._solver is None:
                self._solver = NormalSolver(self.jacobian, self._base, self._U, self._signs,
                                            allow_null=self.generation)
        return self._solver

    def offset(self, T_prev, values=None, heat_goal: float | None = None) -> np.ndarray:
        w1, w2, w3, w4 = self.sqrt_w
        b = balance_offset(self.system, T_prev, self.dt)
        parts = [w1 * b[self._residual_nodes]]
        if len(self.measured_nodes):
            parts.append(-w2 * np.asarray(values, dtype=float))
        for nodes in self._groups:
            bg = b[nodes]
            parts.append(w3 * (bg - bg.mean()))
        if self._link is not None:
            edge, corner = self._link
            parts.append([w3 * (b[edge].mean() - 2.0 * b[corner].mean())])
        if self._heat:
            parts.append([w4 * (heat_offset(self.system, T_prev, self.dt) - heat_goal)])
        return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])


_LAYOUT_LOCK = threading.Lock()


def get_layout(system, dt, weights, measured_nodes=(), generation=False) -> StackLayout:
    key = ("layout", float(dt), weights, tuple(int(i) for i in measured_nodes), generation)
    with _LAYOUT_LOCK:
        if key not in system._cache:
            system._cache[key] = StackLayout(system, dt, weights, measured_nodes, generation)
        return system._cache[key]


@dataclass
class ResidualStack:
    """Weighted affine residual ``r(T) = J T + offset``; loss is ``|r|^2``."""

    jacobian: sp.csr_matrix
    offset: np.ndarray
    weights: np.ndarray
    row_labels: np.ndarray
    layout: StackLayout | None = field(default=None, repr=False)

    @property
    def n_rows(self) -> int:
        return self.jacobian.shape[0]

    def residual(self, T) -> np.ndarray:
        return self.jacobian @ T + self.offset

    def loss(self, T) -> float:
        r = self.residual(T)
        return float(r @ r)

    def rows(self, label: str) -> np.ndarray:
        return np.flatnonzero(self.row_labels == label)

    @property
    def solver(self) -> NormalSolver:
        if self.layout is not None:
            return self.layout.solver
        # ad hoc stack: treat the whole Jacobian as sparse base
        return NormalSolver(self.jacobian, self.jacobian, np.zeros((self.jacobian.shape[1], 0)), [])


def _split_measurements(measurements_at_step):
    if isinstance(measurements_at_step, dict):
        ids = np.fromiter(measurements_at_step.keys(), dtype=np.int64)
        vals = np.fromiter(measurements_at_step.values(), dtype=float)
    else:
        ids, vals = measurements_at_step
    return np.asarray(ids, dtype=np.int64), np.asarray(vals, dtype=float)


def recover_fq(system: AssembledSystem, T_next, T_prev, dt: float) -> np.ndarray:
    """Heated-surface loads implied by ``T_next`` (zero off the heated surface)."""
    fq = np.zeros(system.n_nodes)
    nodes = system.boundary.gamma_q_nodes
    fq[nodes] = load_balance(system, T_next, T_prev, dt)[nodes]
    return fq


def regularization_rows(system: AssembledSystem, T_next, T_prev, dt: float,
                        mode: str = "reconstruction") -> np.ndarray:
    """Unweighted smoothing residuals: face, edge and corner deviations from
    their group means, plus the edge/corner link row in generation mode."""
    if mode not in ("reconstruction", "generation"):
        raise ValueError(f"unknown mode {mode!r}")
    fq = load_balance(system, T_next, T_prev, dt)
    out = []
    groups = system.boundary.regularization_groups()
    for name, nodes in groups.items():
        if len(nodes) == 0:
            if mode == "generation" and name == "corner":
                continue
            raise ConfigError(f"regularization group {name!r} has no nodes")
        out.append(fq[nodes] - fq[nodes].mean())
    if mode == "generation" and len(groups["corner"]) and len(groups["edge"]):
        out.append([fq[groups["edge"]].mean() - 2.0 * fq[groups["corner"]].mean()])
    return np.concatenate([np.asarray(o, dtype=float) for o in out])


def build_reconstruction_stack(system: AssembledSystem, measurements_at_step, T_prev,
                               dt: float, weights: LossWeights) -> ResidualStack:
    ids, vals = _split_measurements(measurements_at_step)
    if len(ids) == 0:
        raise ConfigError("reconstruction needs at least one measurement")
    if np.any(ids < 0) or np.any(ids >= system.n_nodes):
        bad = ids[(ids < 0) | (ids >= system.n_nodes)][0]
        raise ConfigError(f"measurement node {bad} is not a mesh node")
    under_source = np.intersect1d(ids, system.boundary.q_interior_nodes)
    if len(under_source):
        warnings.warn(f"measurements on the heated surface interior: nodes {under_source.tolist()}",
                      stacklevel=2)
    layout = get_layout(system, dt, weights, ids)
    return ResidualStack(layout.jacobian, layout.offset(T_prev, vals), layout.weights_vector,
                         layout.row_labels, layout)


def loss_and_gradient(stack: ResidualStack, T):
    r = stack.residual(T)
    return float(r @ r), 2.0 * (stack.jacobian.T @ r)


@dataclass
class NCGState:
    gradient: np.ndarray | None = None
    direction: np.ndarray | None = None


def ncg_iterate(stack: ResidualStack, T, state: NCGState | None = None):
    """One Polak-Ribiere(+) step with exact line search on the quadratic loss."""
    state = state or NCGState()
    _, g = loss_and_gradient(stack, T)
    if state.direction is None:
        d = -g
    else:
        g_old = state.gradient
        beta = max(0.0, float(g @ (g - g_old)) / max(float(g_old @ g_old), np.finfo(float).tiny))
        d = -g + beta * state.direction
        if g @ d >= 0:
            d = -g
    Jd = stack.jacobian @ d
    curv = float(Jd @ Jd)
    slope = float(g @ d)
    if curv == 0.0 or slope == 0.0:
        return np.array(T, dtype=float), NCGState(g, d)
    alpha = -slope / (2.0 * curv)
    return T + alpha * d, NCGState(g, d)


def gn_iterate(stack: ResidualStack, T):
    """Gauss-Newton step: solve ``J^T J dT = -J^T r``; exact for affine residuals."""
    half_grad = stack.jacobian.T @ stack.residual(T)
    return T + stack.solver.solve(-half_grad)


def minimize_stack(stack: ResidualStack, T0, s_ncg: int, s_gn: int):
    """Run the two-stage schedule; returns the final field and the loss trace."""
    T = np.array(T0, dtype=float)
    losses = [stack.loss(T)]
    state = None
    for _ in range(s_ncg):
        T, state = ncg_iterate(stack, T, state)
        losses.append(stack.loss(T))
    for _ in range(s_gn):
        T = gn_iterate(stack, T)
        losses.append(stack.loss(T))
    return T, losses


def reconstruct_step(system: AssembledSystem, config: ReconstructionConfig, measurements_at_step,
                     T_prev, dt: float | None = None, trace: dict | None = None):
    """Reconstruct one step from a uniform guess at the mean measured value.

    ``dt=np.inf`` gives the steady-state problem. Returns ``(T_next, f_q)``.
    """
    dt = config.dt_rec if dt is None else dt
    ids, vals = _split_measurements(measurements_at_step)
    stack = build_reconstruction_stack(system, (ids, vals), T_prev, dt, config.weights)
    T0 = np.full(system.n_nodes, vals.mean())
    T, losses = minimize_stack(stack, T0, config.s_ncg, config.s_gn)
    if trace is not None:
        loss, grad = loss_and_gradient(stack, T)
        trace.update(losses=losses, loss=loss, gradient_norm=float(np.linalg.norm(grad)))
    return T, recover_fq(system, T, T_prev, dt)


def reconstruct_series(system: AssembledSystem, config: ReconstructionConfig,
                       measurements: MeasurementSeries, progress=None) -> TransientSolution:
    """Steady reconstruction at t=0, then one step per ``dt_rec`` to the last measurement."""
    times = time_grid(config.dt_rec, float(measurements.times[-1]))
    if abs(measurements.times[0]) > 1e-9:
        raise ConfigError("measurements must start at t = 0")
    fields = np.empty((len(times), system.n_nodes))
    fqs = np.empty_like(fields)
    info = {"losses": [], "loss": [], "gradient_norm": [], "wall": []}
    T_prev = None
    for n, t in enumerate(times):
        try:
            vals = measurements.at(t)
        except KeyError:
            raise ConfigError(f"no measurement column at t = {t:g} s") from None
        dt = STEADY if n == 0 else config.dt_rec
        tic = time.perf_counter()
        trace = {}
        T, fq = reconstruct_step(system, config, (measurements.node_ids, vals), T_prev, dt, trace)
        wall = time.perf_counter() - tic
        fields[n], fqs[n] = T, fq
        for k in ("losses", "loss", "gradient_norm"):
            info[k].append(trace[k])
        info["wall"].append(wall)
        if progress is not None:
            progress(n, t, trace["loss"], wall)
        T_prev = T
    return TransientSolution(times, fields, fqs, info=info)


def error_amplification(system: AssembledSystem, dt: float, weights: LossWeights, measured_nodes,
                        iterations: int = 120, seed: int = 0) -> float:
    """Per-step growth factor of an error in the previous field (power iteration).

    Each reconstruction step maps an error ``e`` in ``T_prev`` linearly to an
    error in ``T_next``. If the dominant factor exceeds 1, roundoff and noise
    grow geometrically over a run, whatever the data. The factor depends on
    the step length and on where the sensors sit, so it is worth checking for
    a new layout.
    """
    ids = np.asarray(measured_nodes, dtype=np.int64)
    layout = get_layout(system, dt, weights, ids)
    zero_vals = np.zeros(len(ids))
    base = layout.offset(np.zeros(system.n_nodes), zero_vals)

    def propagate(e):
        return layout.solver.solve(-(layout.jacobian.T @ (layout.offset(e, zero_vals) - base)))

    e = np.random.default_rng(seed).standard_normal(system.n_nodes)
    e /= np.linalg.norm(e)
    logs = []
    for _ in range(iterations):
        f = propagate(e)
        g = np.linalg.norm(f)
        if g == 0.0:
            return 0.0
        logs.append(np.log(g))
        e = f / g
    # geometric mean over the second half copes with complex or sign-flipping modes
    return float(np.exp(np.mean(logs[len(logs) // 2:])))


@dataclass
class ErrorReport:
    avg_rel: float      # percent
    max_rel: float      # percent
    avg_abs: float      # C
    max_abs: float      # C
    times: np.ndarray
    avg_rel_series: np.ndarray
    max_rel_series: np.ndarray
    avg_abs_series: np.ndarray
    max_abs_series: np.ndarray
    excluded: int = 0   # node-time pairs left out of the relative metrics

    def summary(self) -> dict:
        return {"avg_rel_pct": self.avg_rel, "max_rel_pct": self.max_rel,
                "avg_abs_C": self.avg_abs, "max_abs_C": self.max_abs}

    def series_rows(self):
        for i, t in enumerate(self.times):
            yield {"step": i, "time_s": t,
                   "avg_rel_pct": self.avg_rel_series[i], "max_rel_pct": self.max_rel_series[i],
                   "avg_abs_C": self.avg_abs_series[i], "max_abs_C": self.max_abs_series[i]}


def error_metrics(reconstructed: TransientSolution, reference: TransientSolution,
                  min_reference: float = 0.1) -> ErrorReport:
    """Pointwise errors in C and percent of ``|T_ref|`` (C); averaged over space then time.

    Points where ``|T_ref| < min_reference`` are excluded from the relative metrics only.
    """
    idx = []
    for t in reconstructed.times:
        try:
            idx.append(time_index(reference.times, t))
        except KeyError:
            raise ConfigError(f"reference solution has no field at t = {t:g} s") from None
    ref = reference.fields[idx]
    err = np.abs(reconstructed.fields - ref)
    valid = np.abs(ref) >= min_reference
    rel = np.where(valid, err / np.where(valid, np.abs(ref), 1.0) * 100.0, np.nan)

    avg_abs_series = err.mean(axis=1)
    max_abs_series = err.max(axis=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        avg_rel_series = np.nanmean(rel, axis=1)
        max_rel_series = np.nanmax(rel, axis=1)
    return ErrorReport(
        avg_rel=float(np.nanmean(avg_rel_series)) if valid.any() else float("nan"),
        max_rel=float(np.nanmax(rel)) if valid.any() else float("nan"),
        avg_abs=float(avg_abs_series.mean()),
        max_abs=float(err.max()),
        times=np.asarray(reconstructed.times, dtype=float),
        avg_rel_series=avg_rel_series,
        max_rel_series=max_rel_series,
        avg_abs_series=avg_abs_series,
        max_abs_series=max_abs_series,
        excluded=int((~valid).sum()),
    )
