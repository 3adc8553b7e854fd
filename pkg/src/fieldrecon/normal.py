"""Normal-equation solves for residual stacks with a few non-sparse rows.

The stack Jacobian ``J`` has ``J^T J = S + U diag(signs) U^T`` where
``S = B^T B`` comes from a sparse base matrix ``B`` and the low-rank part
accounts for mean-subtracted row groups (sign -1) and dense rows (sign +1).
``S`` is factorised once; solves use the Woodbury identity followed by
iterative refinement against the exact ``J^T J`` product.
"""
from __future__ import annotations

import threading

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import RankDeficiencyError, SolverBreakdown

RTOL = 1e-10
_NULL_RCOND = 1e-9
_PIVOT_RTOL = 1e-13


class NormalSolver:
    def __init__(self, jacobian: sp.csr_matrix, base: sp.csr_matrix, U: np.ndarray,
                 signs: np.ndarray, allow_null: bool = False):
        self.J = jacobian
        self._lock = threading.Lock()
        n = jacobian.shape[1]
        if base.shape[0] < n:
            raise RankDeficiencyError(
                f"least-squares system is rank deficient: {n} unknowns but only "
                f"{base.shape[0]} sparse rows (is the regularization weight c3 zero?)"
            )
        S = (base.T @ base).tocsc()
        try:
            # S is symmetric positive (semi)definite: no pivoting, symmetric ordering
            self._lu = spla.splu(S, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                 options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise RankDeficiencyError(f"normal matrix is singular: {exc}") from exc
        pivots = np.abs(self._lu.U.diagonal())
        if pivots.min() <= _PIVOT_RTOL * pivots.max():
            raise RankDeficiencyError(
                f"least-squares system is rank deficient: pivot ratio "
                f"{pivots.min() / pivots.max():.2e} (is the regularization weight c3 zero?)"
            )

        self.U = np.asarray(U, dtype=float).reshape(n, -1)
        self.null_basis = np.zeros((n, 0))
        if self.U.shape[1]:
            self._SinvU = self._lu.solve(self.U)
            cap = np.diag(np.asarray(signs, dtype=float)) + self.U.T @ self._SinvU
            cap = 0.5 * (cap + cap.T)
            lam, W = np.linalg.eigh(cap)
            scale = max(1.0, np.abs(lam).max())
            small = np.abs(lam) <= _NULL_RCOND * scale
            if small.any() and not allow_null:
                raise RankDeficiencyError(
                    f"normal matrix has {int(small.sum())} null direction(s) "
                    f"(capacitance eigenvalue {np.abs(lam).min():.2e})"
                )
            inv_lam = np.where(small, 0.0, 1.0 / np.where(small, 1.0, lam))
            self._cap_inv = (W * inv_lam) @ W.T
            if small.any():
                Z = self._SinvU @ W[:, small]
                self.null_basis, _ = np.linalg.qr(Z)
        else:
            self._SinvU = np.zeros((n, 0))
            self._cap_inv = np.zeros((0, 0))

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.J.T @ (self.J @ x)

    def _apply_inverse(self, b):
        with self._lock:
            y = self._lu.solve(b)
        if self._cap_inv.size:
            y = y - self._SinvU @ (self._cap_inv @ (self.U.T @ y))
        return y

    def _project(self, x):
        if self.null_basis.shape[1]:
            x = x - self.null_basis @ (self.null_basis.T @ x)
        return x

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Minimum-norm solution of ``J^T J x = b`` for ``b`` in the range of ``J^T``."""
        bnorm = np.linalg.norm(b)
        if bnorm == 0.0:
            return np.zeros_like(b)
        x = self._project(self._apply_inverse(b))
        res = np.linalg.norm(b - self.matvec(x))
        for _ in range(6):
            if res <= 1e-14 * bnorm:
                break
            x_new = self._project(x + self._apply_inverse(b - self.matvec(x)))
            res_new = np.linalg.norm(b - self.matvec(x_new))
            if res_new >= res:
                break
            x, res = x_new, res_new
        if res > RTOL * bnorm:
            raise SolverBreakdown(
                f"normal equations solved only to relative residual {res / bnorm:.3e}"
            )
        return x


def dense_rows_to_columns(rows) -> np.ndarray:
    """Stack sparse/dense row vectors as columns of a dense array."""
    cols = [np.asarray(r.toarray() if sp.issparse(r) else r, dtype=float).ravel() for r in rows]
    return np.column_stack(cols) if cols else None

