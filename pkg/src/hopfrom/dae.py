"""Quadratic differential-algebraic system  B y' = A y + Q(y, y).

The operators are real sparse matrices / bilinear evaluators; complex
arithmetic lives entirely in the vectors.  Q follows the symmetrised
convention Q(y1, y2) = (q(y1, y2) + q(y2, y1)) / 2 where q is the raw
discretised form, so that order-by-order expansion sums are convention-free.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class DofPartition:
    """Index sets splitting the unknown vector into semantic slots."""
    velocity: np.ndarray
    pressure: np.ndarray
    param: int

    def views(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, complex]:
        return y[self.velocity], y[self.pressure], y[self.param]


class CooBilinear:
    """Raw bilinear form stored as a sparse third-order tensor in COO layout.

    ``eval(y1, y2)[i] = sum vals * y1[jdx] * y2[kdx]`` accumulated per row.
    """

    def __init__(self, n: int, rows, jdx, kdx, vals):
        self.n = n
        self.rows = np.asarray(rows, dtype=np.intp)
        self.jdx = np.asarray(jdx, dtype=np.intp)
        self.kdx = np.asarray(kdx, dtype=np.intp)
        self.vals = np.asarray(vals, dtype=float)

    def eval(self, y1: np.ndarray, y2: np.ndarray) -> np.ndarray:
        prod = self.vals * y1[self.jdx] * y2[self.kdx]
        out = np.zeros(self.n, dtype=prod.dtype)
        np.add.at(out, self.rows, prod)
        return out

    def left_matrix(self, y1: np.ndarray) -> sp.spmatrix:
        """Sparse matrix L with L @ y2 = eval(y1, y2)."""
        data = self.vals * y1[self.jdx]
        return sp.coo_matrix((data, (self.rows, self.kdx)),
                             shape=(self.n, self.n)).tocsr()

    def right_matrix(self, y2: np.ndarray) -> sp.spmatrix:
        """Sparse matrix R with R @ y1 = eval(y1, y2)."""
        data = self.vals * y2[self.kdx]
        return sp.coo_matrix((data, (self.rows, self.jdx)),
                             shape=(self.n, self.n)).tocsr()


@dataclass
class QuadraticDae:
    """Assembled quadratic DAE around a steady state.

    ``q_raw`` evaluates the raw (unsymmetrised) bilinear form; an optional
    ``q_left_matrix`` hook returns, for a fixed left argument, a sparse
    matrix acting on the right argument of the *symmetrised* form.
    """

    n_dof: int
    B: sp.spmatrix
    A: sp.spmatrix
    q_raw: Callable[[np.ndarray, np.ndarray], np.ndarray]
    partition: DofPartition
    q_left_matrix_raw: Callable[[np.ndarray], sp.spmatrix] | None = None
    meta: dict = field(default_factory=dict)

    def q_bilinear(self, y1: np.ndarray, y2: np.ndarray) -> np.ndarray:
        """Symmetrised quadratic operator."""
        return 0.5 * (self.q_raw(y1, y2) + self.q_raw(y2, y1))

    def q_left_matrix(self, y1: np.ndarray) -> sp.spmatrix:
        """Matrix of y2 -> q_bilinear(y1, y2); needs the raw matrix hooks."""
        if self.q_left_matrix_raw is None:
            raise NotImplementedError("no bilinear matrix hook provided")
        return self.q_left_matrix_raw(y1)

    def residual_full(self, y: np.ndarray, y_dot: np.ndarray) -> np.ndarray:
        """B y' - A y - Q(y, y)."""
        return self.B @ y_dot - self.A @ y - self.q_bilinear(y, y)

    def unit_param_vector(self, dtype=float) -> np.ndarray:
        e = np.zeros(self.n_dof, dtype=dtype)
        e[self.partition.param] = 1.0
        return e


def residual_full(dae: QuadraticDae, y: np.ndarray, y_dot: np.ndarray) -> np.ndarray:
    return dae.residual_full(y, y_dot)


def q_bilinear(dae: QuadraticDae, y1: np.ndarray, y2: np.ndarray) -> np.ndarray:
    return dae.q_bilinear(y1, y2)


def coo_bilinear_dae(n: int, B: sp.spmatrix, A: sp.spmatrix,
                     tensor: CooBilinear, partition: DofPartition,
                     meta: dict | None = None) -> QuadraticDae:
    """Convenience constructor for systems whose Q fits in a COO tensor."""

    def q_left(y1: np.ndarray) -> sp.spmatrix:
        return 0.5 * (tensor.left_matrix(y1) + tensor.right_matrix(y1))

    return QuadraticDae(n_dof=n, B=B.tocsr(), A=A.tocsr(), q_raw=tensor.eval,
                        partition=partition, q_left_matrix_raw=q_left,
                        meta=meta or {})
