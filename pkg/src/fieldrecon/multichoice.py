"""Generation of several distinct transient fields that share a total-heat history.

Measurements are replaced by a single row tying the total boundary heat rate
to a goal trajectory. With only three flux levels on the heated surface,
tied together by the corner link row and the heat row, the least-squares
problem keeps one free direction. Each step starts from a random field and
takes the minimum-norm Gauss-Newton correction, so the random start's component
along that direction survives and different seeds give different options.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .assembly import AssembledSystem
from .balance import heat_offset, heat_row
from .exceptions import ConfigError, OptionErrors
from .forward import TransientSolution, time_grid
from .inverse import (LossWeights, ResidualStack, get_layout, loss_and_gradient, minimize_stack,
                      recover_fq)


@dataclass(frozen=True)
class HeatGoal:
    """Target total heat rate (W), either ``a t^2 + b t`` or one sample per step.

    ``samples[n - 1]`` is the target at the end of step ``n``.
    """

    a: float | None = None
    b: float | None = None
    samples: tuple | None = None

    def __post_init__(self):
        closed = self.a is not None and self.b is not None
        if closed == (self.samples is not None):
            raise ConfigError("heat goal needs either coefficients (a, b) or samples")
        if self.samples is not None:
            object.__setattr__(self, "samples", tuple(float(v) for v in self.samples))
        values = (self.a, self.b) if closed else self.samples
        if not np.all(np.isfinite(values)):
            raise ConfigError("heat goal values must be finite")

    def value(self, step: int, t: float) -> float:
        if self.samples is None:
            return self.a * t * t + self.b * t
        if not 1 <= step <= len(self.samples):
            raise ConfigError(f"heat goal has no sample for step {step}")
        return self.samples[step - 1]


@dataclass(frozen=True)
class GenerationConfig:
    dt_rec: float
    t_end: float
    t_min: float
    t_max: float
    seed: int
    weights: LossWeights = LossWeights(c1=1.0, c2=0.0, c3=0.1, c4=0.14)
    s_ncg: int = 2
    s_gn: int = 1

    def __post_init__(self):
        if not self.dt_rec > 0:
            raise ConfigError(f"generation dt must be positive, got {self.dt_rec}")
        time_grid(self.dt_rec, self.t_end)
        if not self.t_min < self.t_max:
            raise ConfigError("generation needs t_min < t_max")
        if self.weights.c4 <= 0:
            raise ConfigError("generation needs a positive heat weight c4")
        if self.s_ncg < 0 or self.s_gn < 0 or self.s_ncg + self.s_gn < 1:
            raise ConfigError("need s_ncg >= 0, s_gn >= 0 and at least one iteration")


def total_heat(system: AssembledSystem, T_next, T_prev, dt: float) -> float:
    """Boundary-node sum of the capacity and conduction rows (no convection term)."""
    return float(heat_row(system, dt) @ T_next + heat_offset(system, T_prev, dt))


def build_generation_stack(system: AssembledSystem, heat_goal_value: float, T_prev, dt: float,
                           weights: LossWeights) -> ResidualStack:
    layout = get_layout(system, dt, weights, generation=True)
    return ResidualStack(layout.jacobian, layout.offset(T_prev, heat_goal=heat_goal_value),
                         layout.weights_vector, layout.row_labels, layout)


def random_initial_field(n_nodes: int, t_min: float, t_max: float, seed: int,
                         step_index: int) -> np.ndarray:
    """Uniform values in ``[t_min, t_max)``, determined by ``(seed, step_index)``."""
    if not t_min < t_max:
        raise ConfigError("need t_min < t_max")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(step_index)]))
    values = t_min + (t_max - t_min) * rng.random(n_nodes)
    # rounding can land exactly on t_max for narrow intervals
    return np.minimum(values, np.nextafter(t_max, -np.inf))


@dataclass
class HeatReport:
    times: np.ndarray
    total_heat: np.ndarray
    goal: np.ndarray
    abs_err: np.ndarray = field(init=False)
    rel_err: np.ndarray = field(init=False)   # percent, nan where the goal is zero

    def __post_init__(self):
        self.abs_err = np.abs(self.total_heat - self.goal)
        nonzero = np.abs(self.goal) > 0
        self.rel_err = np.where(nonzero, self.abs_err / np.where(nonzero, np.abs(self.goal), 1.0) * 100,
                                np.nan)

    def summary(self) -> dict:
        rel = self.rel_err[np.isfinite(self.rel_err)]
        return {
            "avg_rel_pct": float(rel.mean()) if len(rel) else float("nan"),
            "max_rel_pct": float(rel.max()) if len(rel) else float("nan"),
            "avg_abs_W": float(self.abs_err.mean()) if len(self.abs_err) else float("nan"),
            "max_abs_W": float(self.abs_err.max()) if len(self.abs_err) else float("nan"),
        }

    def rows(self):
        for i, t in enumerate(self.times):
            yield {"step": i + 1, "time": t, "total_heat": self.total_heat[i], "goal": self.goal[i],
                   "abs_err": self.abs_err[i], "rel_err": self.rel_err[i]}


def heat_report(solution: TransientSolution) -> HeatReport:
    """Heat-tracking errors of a generated option (steps after t = 0)."""
    return HeatReport(solution.times[1:], np.asarray(solution.info["total_heat"]),
                      np.asarray(solution.info["goal"]))


def generate_option(system: AssembledSystem, config: GenerationConfig, heat_goal: HeatGoal,
                    T_init=None, progress=None) -> TransientSolution:
    """March from ``T_init`` (ambient by default) with a fresh random guess each step."""
    times = time_grid(config.dt_rec, config.t_end)
    n = system.n_nodes
    if T_init is None:
        ta = system.props.t_ambient if system.props is not None else 0.0
        T_init = np.full(n, ta)
    guesses = [random_initial_field(n, config.t_min, config.t_max, config.seed, s)
               for s in range(1, len(times))]

    fields = np.empty((len(times), n))
    fqs = np.zeros_like(fields)
    fields[0] = T_init
    info = {"total_heat": [], "goal": [], "loss": [], "gradient_norm": [], "seed": config.seed,
            "c4": config.weights.c4}
    dt = config.dt_rec
    for step in range(1, len(times)):
        T_prev = fields[step - 1]
        goal = heat_goal.value(step, times[step])
        stack = build_generation_stack(system, goal, T_prev, dt, config.weights)
        T, _ = minimize_stack(stack, guesses[step - 1], config.s_ncg, config.s_gn)
        loss, grad = loss_and_gradient(stack, T)
        fields[step] = T
        fqs[step] = recover_fq(system, T, T_prev, dt)
        info["total_heat"].append(total_heat(system, T, T_prev, dt))
        info["goal"].append(goal)
        info["loss"].append(loss)
        info["gradient_norm"].append(float(np.linalg.norm(grad)))
        if progress is not None:
            progress(step, times[step], loss)
    return TransientSolution(times, fields, fqs, info=info)


def generate_options(system: AssembledSystem, configs, heat_goal: HeatGoal, jobs: int = 1,
                     progress=None) -> list:
    """Run every option; failures are collected and raised together at the end.

    ``progress(option_index, step, time, loss)`` is called from worker threads
    when ``jobs > 1``.
    """
    configs = list(configs)
    if not configs:
        raise ConfigError("no generation options to run")
    if jobs < 1:
        raise ConfigError(f"jobs must be at least 1, got {jobs}")

    def run(i):
        cb = None if progress is None else (lambda s, t, l: progress(i, s, t, l))
        return generate_option(system, configs[i], heat_goal, progress=cb)

    results, errors = [None] * len(configs), {}
    if jobs == 1:
        for i in range(len(configs)):
            try:
                results[i] = run(i)
            except Exception as exc:  # collected, re-raised below
                errors[i] = exc
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run, i) for i in range(len(configs))]
            for i, fut in enumerate(futures):
                try:
                    results[i] = fut.result()
                except Exception as exc:
                    errors[i] = exc
    if errors:
        raise OptionErrors(errors, results)
    return results
