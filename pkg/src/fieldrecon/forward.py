"""Reference forward solver: steady and fully implicit transient conduction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import AssembledSystem
from .exceptions import ConfigError, SingularSystemError, SolverBreakdown

RTOL = 1e-10


@dataclass
class TransientSolution:
    times: np.ndarray                 # (n_times,)
    fields: np.ndarray                # (n_times, n_nodes)
    recovered_fq: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.fields = np.asarray(self.fields, dtype=float)
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("solution times must be strictly increasing")
        if self.fields.shape[0] != len(self.times):
            raise ValueError("one field per time is required")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else np.inf

    def index_of(self, t: float) -> int:
        return time_index(self.times, t)


@dataclass
class MeasurementSeries:
    node_ids: np.ndarray   # (M,)
    times: np.ndarray      # (n_times,)
    values: np.ndarray     # (M, n_times)
    noise_stddev: float = 0.0

    def __post_init__(self):
        self.node_ids = np.asarray(self.node_ids, dtype=np.int64)
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float).reshape(len(self.node_ids), len(self.times))
        if len(np.unique(self.node_ids)) != len(self.node_ids):
            raise ConfigError("measurement node ids must be distinct")
        if not np.all(np.isfinite(self.values)):
            raise ConfigError("measurement values must be finite")

    def at(self, t: float) -> np.ndarray:
        return self.values[:, time_index(self.times, t)]

    def __eq__(self, other):
        if not isinstance(other, MeasurementSeries):
            return NotImplemented
        return (np.array_equal(self.node_ids, other.node_ids)
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.values, other.values))


def time_index(times: np.ndarray, t: float) -> int:
    """Index of ``t`` in ``times`` (matching to 1e-9 s); KeyError if absent."""
    i = int(np.searchsorted(times, t - 1e-9))
    if i < len(times) and abs(times[i] - t) <= 1e-9 * max(1.0, abs(t)):
        return i
    raise KeyError(f"no entry at t = {t:g} s")


def time_grid(dt: float, t_end: float) -> np.ndarray:
    if not dt > 0:
        raise ConfigError(f"time step must be positive, got {dt}")
    n = int(round(t_end / dt))
    if n < 1 or abs(n * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ConfigError(f"t_end = {t_end} is not a multiple of dt = {dt}")
    return np.round(np.arange(n + 1) * dt, 12)


class _Factorized:
    """Cached solver for one SPD system matrix."""

    def __init__(self, A: sp.spmatrix, method: str = "direct"):
        self.A = A.tocsr()
        self.method = method
        if method == "direct":
            self._lu = spla.splu(A.tocsc())
        elif method == "cg":
            self._diag = A.diagonal()
        else:
            raise ValueError(f"unknown linear solver {method!r}")

    def solve(self, b: np.ndarray, x0=None) -> np.ndarray:
        bnorm = np.linalg.norm(b)
        if bnorm == 0.0:
            return np.zeros_like(b)
        if self.method == "direct":
            x = self._lu.solve(b)
            for _ in range(3):
                r = b - self.A @ x
                if np.linalg.norm(r) <= RTOL * bnorm:
                    break
                x += self._lu.solve(r)
        else:
            n = len(b)
            M = sp.diags(1.0 / self._diag)
            x, info = spla.cg(self.A, b, x0=x0, rtol=RTOL, maxiter=10 * n, M=M)
            if info != 0:
                res = np.linalg.norm(b - self.A @ x) / bnorm
                raise SolverBreakdown(
                    f"conjugate gradient stopped (info={info}) at relative residual {res:.3e}"
                )
        res = np.linalg.norm(b - self.A @ x) / bnorm
        if res > RTOL:
            raise SolverBreakdown(f"linear solve reached relative residual {res:.3e} > {RTOL:g}")
        return x


def _solver(system: AssembledSystem, dt: float, method: str) -> _Factorized:
    key = ("forward", float(dt), method)
    if key not in system._cache:
        if system.H.nnz == 0 or not np.any(system.H.diagonal() > 0):
            raise SingularSystemError("stiffness matrix is singular: no convection on any face")
        A = system.K if np.isinf(dt) else (system.C / dt + system.K)
        system._cache[key] = _Factorized(A, method)
    return system._cache[key]


def steady_solve(system: AssembledSystem, f_q: np.ndarray, method: str = "direct") -> np.ndarray:
    """Solve ``K T = f_q + f_h``."""
    return _solver(system, np.inf, method).solve(f_q + system.f_h)


def transient_step(system: AssembledSystem, T_prev: np.ndarray, dt: float,
                   f_q_next: np.ndarray, method: str = "direct") -> np.ndarray:
    """One implicit Euler step ``(C/dt + K) T = f_q + f_h + C T_prev / dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    rhs = f_q_next + system.f_h + (system.C @ T_prev) / dt
    return _solver(system, dt, method).solve(rhs, x0=T_prev)


def _flux_load(system, q):
    q = np.asarray(q, dtype=float)
    return q * system.fq_unit if q.ndim == 0 else q


def run_forward(system: AssembledSystem, T_init, dt_ref: float, t_end: float,
                q_of_t, method: str = "direct") -> TransientSolution:
    """March from ``T_init`` at t=0 to ``t_end``; the flux is evaluated at step ends.

    ``q_of_t(t)`` returns either a scalar uniform inward flux (W/m^2) or a full
    nodal load vector.
    """
    times = time_grid(dt_ref, t_end)
    fields = np.empty((len(times), system.n_nodes))
    fields[0] = T_init
    for n in range(1, len(times)):
        fields[n] = transient_step(system, fields[n - 1], dt_ref, _flux_load(system, q_of_t(times[n])), method)
    return TransientSolution(times, fields, info={"dt": dt_ref})


def sample_measurements(solution: TransientSolution, node_ids, sample_dt: float,
                        noise_stddev: float = 0.0, seed: int = 0) -> MeasurementSeries:
    """Pick nodal values every ``sample_dt`` seconds, optionally with Gaussian noise."""
    node_ids = np.asarray(node_ids, dtype=np.int64)
    if np.any(node_ids < 0) or np.any(node_ids >= solution.fields.shape[1]):
        raise ConfigError("measurement node id outside the mesh")
    stride = sample_dt / solution.dt
    if not sample_dt > 0 or abs(stride - round(stride)) > 1e-9 * max(1.0, stride):
        raise ConfigError(f"sample_dt = {sample_dt} is not a multiple of the solution step {solution.dt}")
    idx = np.arange(0, len(solution.times), int(round(stride)))
    values = solution.fields[np.ix_(idx, node_ids)].T.copy()
    if noise_stddev > 0:
        values += np.random.default_rng(seed).normal(0.0, noise_stddev, values.shape)
    return MeasurementSeries(node_ids, solution.times[idx], values, noise_stddev)
