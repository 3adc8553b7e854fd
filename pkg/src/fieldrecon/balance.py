"""Affine maps from the end-of-step temperature to nodal loads and total heat.

For a step of length ``dt`` (``np.inf`` for steady state) the implicit load
needed to balance the discrete equations is

    f_q(T) = (C/dt + K) T - C T_prev/dt - f_h

and the total heat rate over the boundary nodes is

    Q(T) = sum_{i in boundary} (C_i (T - T_prev)/dt + K_base_i T).
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .assembly import AssembledSystem


def _steady(dt) -> bool:
    return dt is None or np.isinf(dt)


def balance_matrix(system: AssembledSystem, dt: float) -> sp.csr_matrix:
    key = ("balance", None if _steady(dt) else float(dt))
    if key not in system._cache:
        A = system.K if _steady(dt) else system.C / dt + system.K
        system._cache[key] = sp.csr_matrix(A)
    return system._cache[key]


def balance_offset(system: AssembledSystem, T_prev, dt: float) -> np.ndarray:
    if _steady(dt):
        return -system.f_h
    return -(system.C @ T_prev) / dt - system.f_h


def load_balance(system: AssembledSystem, T_next, T_prev, dt: float) -> np.ndarray:
    """Full nodal ``f_q`` implied by ``T_next`` (nonzero off the heated face means imbalance)."""
    return balance_matrix(system, dt) @ T_next + balance_offset(system, T_prev, dt)


def heat_row(system: AssembledSystem, dt: float) -> np.ndarray:
    """Dense coefficient vector of the total heat rate in ``T_next``."""
    key = ("heat_row", None if _steady(dt) else float(dt))
    if key not in system._cache:
        A = system.K_base if _steady(dt) else system.C / dt + system.K_base
        mask = np.zeros(system.n_nodes)
        mask[system.boundary.boundary_nodes] = 1.0
        system._cache[key] = np.asarray(A.T @ mask).ravel()
    return system._cache[key]


def heat_offset(system: AssembledSystem, T_prev, dt: float) -> float:
    if _steady(dt):
        return 0.0
    nodes = system.boundary.boundary_nodes
    return -float(np.sum((system.C @ T_prev)[nodes])) / dt
