"""Multi-index bookkeeping for polynomial expansions in the manifold coordinates.

Monomials are identified by their exponent tuples.  The ordering is graded
lexicographic: order-major, then descending lexicographic on the exponents,
so for three coordinates the order-1 monomials come out as
(1,0,0), (0,1,0), (0,0,1), i.e. aligned with the coordinates themselves.
"""

from __future__ import annotations

from math import comb
from typing import Iterator, Sequence

import numpy as np

MultiIndex = tuple[int, ...]


def enumerate_monomials(n_vars: int, order: int) -> list[MultiIndex]:
    """All exponent tuples of the given total order, descending lexicographic."""
    if n_vars < 1:
        raise ValueError(f"n_vars must be >= 1, got {n_vars}")
    if order < 0:
        raise ValueError(f"order must be >= 0, got {order}")

    def rec(nv: int, total: int) -> Iterator[tuple[int, ...]]:
        if nv == 1:
            yield (total,)
            return
        for first in range(total, -1, -1):
            for rest in rec(nv - 1, total - first):
                yield (first,) + rest

    out = list(rec(n_vars, order))
    assert len(out) == comb(order + n_vars - 1, order)
    return out


def conjugate_index(alpha: MultiIndex, pair: tuple[int, int] = (0, 1)) -> MultiIndex:
    """Exponents of the complex-conjugate monomial (swap the paired coordinates)."""
    i, j = pair
    a = list(alpha)
    a[i], a[j] = a[j], a[i]
    return tuple(a)


class MonomialTable:
    """Immutable registry of all monomials up to ``max_order``.

    Provides deterministic (order, position) numbering, product lookup and,
    when a conjugate pair of coordinates is declared, the conjugation
    involution together with a representative marking (one monomial per
    conjugate pair, the one with ``alpha[i] >= alpha[j]``).
    """

    def __init__(self, n_vars: int, max_order: int,
                 conj_pair: tuple[int, int] | None = (0, 1)):
        if n_vars < 1 or max_order < 1:
            raise ValueError("n_vars and max_order must be >= 1")
        self.n_vars = n_vars
        self.max_order = max_order
        self.conj_pair = conj_pair
        self._monomials: dict[int, list[MultiIndex]] = {
            p: enumerate_monomials(n_vars, p) for p in range(1, max_order + 1)
        }
        self._position: dict[MultiIndex, tuple[int, int]] = {}
        for p, monos in self._monomials.items():
            for k, alpha in enumerate(monos):
                self._position[alpha] = (p, k)

    def monomials(self, order: int) -> list[MultiIndex]:
        return self._monomials[order]

    def count(self, order: int) -> int:
        return len(self._monomials[order])

    def position(self, alpha: MultiIndex) -> tuple[int, int]:
        """(order, index) of a registered monomial."""
        try:
            return self._position[tuple(alpha)]
        except KeyError:
            raise KeyError(f"monomial {alpha} not registered (max order "
                           f"{self.max_order})") from None

    def product_index(self, a1: MultiIndex, a2: MultiIndex) -> tuple[MultiIndex, tuple[int, int]]:
        """Componentwise sum of two registered monomials and its table position."""
        self.position(a1)
        self.position(a2)
        prod = tuple(x + y for x, y in zip(a1, a2))
        if sum(prod) > self.max_order:
            raise ValueError(f"product {prod} exceeds table max order {self.max_order}")
        return prod, self.position(prod)

    # -- conjugation ------------------------------------------------------

    def conjugate(self, alpha: MultiIndex) -> MultiIndex:
        if self.conj_pair is None:
            return tuple(alpha)
        return conjugate_index(tuple(alpha), self.conj_pair)

    def is_representative(self, alpha: MultiIndex) -> bool:
        """One member per conjugate pair; self-conjugate monomials count."""
        if self.conj_pair is None:
            return True
        i, j = self.conj_pair
        return alpha[i] >= alpha[j]

    def representatives(self, order_min: int, order_max: int) -> list[MultiIndex]:
        out = []
        for p in range(order_min, order_max + 1):
            out.extend(a for a in self._monomials[p] if self.is_representative(a))
        return out


class PolyMap:
    """Polynomial map: per monomial (p, k) a complex coefficient vector.

    ``coeffs[p]`` is a complex array of shape (m_p, dim); orders without
    stored coefficients evaluate to zero.
    """

    def __init__(self, table: MonomialTable, dim: int):
        self.table = table
        self.dim = dim
        self.coeffs: dict[int, np.ndarray] = {}

    def ensure_order(self, order: int) -> np.ndarray:
        if order not in self.coeffs:
            self.coeffs[order] = np.zeros((self.table.count(order), self.dim),
                                          dtype=complex)
        return self.coeffs[order]

    def set(self, alpha: MultiIndex, value: np.ndarray) -> None:
        p, k = self.table.position(alpha)
        self.ensure_order(p)[k] = value

    def get(self, alpha: MultiIndex) -> np.ndarray:
        p, k = self.table.position(alpha)
        if p not in self.coeffs:
            return np.zeros(self.dim, dtype=complex)
        return self.coeffs[p][k]

    def orders(self) -> list[int]:
        return sorted(self.coeffs)

    def copy(self) -> "PolyMap":
        out = PolyMap(self.table, self.dim)
        out.coeffs = {p: c.copy() for p, c in self.coeffs.items()}
        return out

    def fill_conjugates(self, component_swap: tuple[int, int] | None = None) -> None:
        """Overwrite non-representative coefficients from their conjugates.

        ``component_swap`` additionally swaps two output components, which is
        needed when the map's output axes themselves come in a conjugate pair
        (the reduced-dynamics coefficients over the manifold coordinates).
        """
        for p, block in self.coeffs.items():
            for k, alpha in enumerate(self.table.monomials(p)):
                if self.table.is_representative(alpha):
                    continue
                pc, kc = self.table.position(self.table.conjugate(alpha))
                val = np.conj(self.coeffs[pc][kc])
                if component_swap is not None:
                    i, j = component_swap
                    val = val.copy()
                    val[[i, j]] = val[[j, i]]
                block[k] = val

    def monomial_values(self, z: Sequence[complex], order: int) -> np.ndarray:
        """z**alpha for every monomial of the given order."""
        zarr = np.asarray(z, dtype=complex)
        monos = self.table.monomials(order)
        vals = np.empty(len(monos), dtype=complex)
        for k, alpha in enumerate(monos):
            v = 1.0 + 0.0j
            for zi, ai in zip(zarr, alpha):
                if ai:
                    v *= zi ** ai
            vals[k] = v
        return vals

    def eval(self, z: Sequence[complex]) -> np.ndarray:
        """Sum of coeff^(p,k) * z^alpha(p,k) over all stored monomials."""
        if len(z) != self.table.n_vars:
            raise ValueError("coordinate count mismatch")
        out = np.zeros(self.dim, dtype=complex)
        for p, block in self.coeffs.items():
            out += self.monomial_values(z, p) @ block
        return out

    def eval_component(self, z: Sequence[complex], comp: int) -> complex:
        return complex(self.eval(z)[comp])

    def eval_many(self, zs: Sequence[Sequence[complex]]) -> np.ndarray:
        """Evaluate at many points at once; returns (n_points, dim).

        One matrix product per stored order instead of one matrix-vector
        product per point, which keeps large batches in BLAS-3."""
        zs = np.asarray(zs, dtype=complex)
        out = np.zeros((zs.shape[0], self.dim), dtype=complex)
        for p in self.coeffs:
            vals = np.array([self.monomial_values(z, p) for z in zs])
            out += vals @ self.coeffs[p]
        return out


def eval_poly(pmap: PolyMap, z: Sequence[complex]) -> np.ndarray:
    """Functional alias for :meth:`PolyMap.eval`."""
    return pmap.eval(z)
