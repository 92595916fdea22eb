"""Order-by-order construction of the manifold mapping and reduced dynamics.

Each monomial of order p >= 2 yields one underdetermined linear (homological)
equation; the chosen parametrisation style closes it and a bordered solve
produces the mapping coefficient W^(p,k) together with the reduced-dynamics
coefficients f^(p,k).  Only representative monomials are solved; conjugates
follow by symmetry, which reproduces the expected solve counts and halves
the cost.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dae import QuadraticDae
from .exceptions import ConfigError, SingularSystemError
from .multiindex import MonomialTable, MultiIndex, PolyMap
from .spectral import ModeSet

DENSE_SOLVE_CUTOFF = 2000
N_COORDS = 3


@dataclass(frozen=True)
class StyleChoice:
    """Parametrisation style and its near-resonance tolerance."""
    kind: str = "normal_form"
    resonance_tol: float = 0.1

    def __post_init__(self):
        if self.kind not in ("graph", "normal_form"):
            raise ConfigError(f"unknown style kind {self.kind!r}")
        if self.resonance_tol <= 0:
            raise ConfigError("resonance_tol must be > 0")


@dataclass(frozen=True)
class HomologicalRhs:
    """Known right-hand-side pieces of one order-p homological equation."""
    alpha: MultiIndex
    sigma: complex
    q_term: np.ndarray
    n3_term: np.ndarray


@dataclass
class RomArtifact:
    """Polynomial mapping + reduced dynamics built at one expansion point."""
    re0: float
    order: int
    style: StyleChoice
    modes: ModeSet
    W: PolyMap
    f: PolyMap
    table: MonomialTable
    steady: object | None = None
    dae: QuadraticDae | None = None
    solve_count: int = 0
    provenance: dict = field(default_factory=dict)

    @property
    def lam(self) -> complex:
        return self.modes.lam


def resonance_set(sigma: complex, lambdas: Sequence[complex],
                  tol: float) -> frozenset[int]:
    """0-based indices j with |sigma - lambda_j| <= tol * max(|lambda_1|, 1)."""
    if tol <= 0:
        raise ConfigError("resonance tolerance must be > 0")
    thresh = tol * max(abs(lambdas[0]), 1.0)
    return frozenset(j for j, lam in enumerate(lambdas)
                     if abs(sigma - lam) <= thresh)


def _sigma(alpha: MultiIndex, lambdas: np.ndarray) -> complex:
    return complex(sum(a * lam for a, lam in zip(alpha, lambdas)))


def assemble_rhs(dae: QuadraticDae, modes: ModeSet, table: MonomialTable,
                 alpha: MultiIndex, W: PolyMap, f: PolyMap,
                 q_cache: dict | None = None) -> HomologicalRhs:
    """Lower-order contributions feeding the (p,k) homological equation.

    q_term sums Q(W^(p1,k1), W^(p2,k2)) over all ordered splittings with
    matching exponents; n3_term collects the gradient-times-f products of
    intermediate orders.  Both depend only on finalized lower orders.
    """
    p = sum(alpha)
    for q in range(1, p):
        assert q in W.coeffs, f"order {q} coefficients missing"
    n = dae.n_dof
    q_term = np.zeros(n, dtype=complex)
    for p1 in range(1, p):
        p2 = p - p1
        for a1 in table.monomials(p1):
            a2 = tuple(x - y for x, y in zip(alpha, a1))
            if any(e < 0 for e in a2):
                continue
            assert sum(a2) == p2
            if q_cache is not None:
                key = (a1, a2) if a1 <= a2 else (a2, a1)
                if key not in q_cache:
                    q_cache[key] = dae.q_bilinear(W.get(key[0]), W.get(key[1]))
                q_term += q_cache[key]
            else:
                q_term += dae.q_bilinear(W.get(a1), W.get(a2))

    n3_term = np.zeros(n, dtype=complex)
    for p_w in range(2, p - 1 + 1):
        p_f = p + 1 - p_w
        if p_f < 2 or p_f > p - 1:
            continue
        if p_f not in f.coeffs:
            continue
        for k_w, a_w in enumerate(table.monomials(p_w)):
            w_coeff = None
            for s in range(N_COORDS):
                if a_w[s] == 0:
                    continue
                a_f = tuple(alpha[i] + (1 if i == s else 0) - a_w[i]
                            for i in range(N_COORDS))
                if any(e < 0 for e in a_f) or sum(a_f) != p_f:
                    continue
                fs = f.get(a_f)[s]
                if fs == 0:
                    continue
                if w_coeff is None:
                    w_coeff = W.coeffs[p_w][k_w]
                n3_term += a_w[s] * fs * w_coeff

    return HomologicalRhs(alpha=tuple(alpha), sigma=_sigma(alpha, modes.lambdas),
                          q_term=q_term, n3_term=n3_term)


class _BorderedOperator:
    """Factorized solver for one bordered operator (sigma B - A | border).

    sigma depends only on the master-mode exponent pair (a1, a2), so one
    factorization serves every power of the parameter coordinate.  On large
    systems the border is handled by block elimination with iterative
    refinement, so only the sparse unbordered block is factorized; the full
    bordered factorization is kept as a fallback for (near-)singular blocks.
    """

    def __init__(self, dae: QuadraticDae, modes: ModeSet, sigma: complex,
                 border: tuple[int, ...]):
        self.sigma = sigma
        self.border = border
        self.nb = len(border)
        self.n = dae.n_dof
        self.lhs = (sigma * dae.B - dae.A).astype(complex).tocsr()
        self.b_phi = (np.asarray(dae.B @ modes.phi[:, border])
                      if self.nb else None)
        self.psi_b = (np.conj(modes.psi[:, border]).T
                      @ dae.B.astype(complex) if self.nb else None)
        self._lu = None
        self._wh = None
        self._schur = None
        self._lu_full = None
        self._lock = threading.Lock()
        if self.n <= DENSE_SOLVE_CUTOFF:
            if self.nb:
                mat = np.block([
                    [self.lhs.toarray(), self.b_phi],
                    [self.psi_b, np.zeros((self.nb, self.nb))]])
            else:
                mat = self.lhs.toarray()
            self._dense = sla.lu_factor(mat)
        else:
            self._dense = None
            try:
                self._lu = spla.splu(self.lhs.tocsc())
                if self.nb:
                    self._wh = self._lu.solve(self.b_phi)
                    self._schur = self.psi_b @ self._wh
            except (RuntimeError, np.linalg.LinAlgError):
                self._lu = None     # exactly singular block: border required

    def defect(self, w: np.ndarray, f_b: np.ndarray, r_vec: np.ndarray) -> float:
        d = self.lhs @ w - r_vec
        if self.nb:
            d = d + self.b_phi @ f_b
            return float(np.sqrt(np.linalg.norm(d) ** 2
                                 + np.linalg.norm(self.psi_b @ w) ** 2))
        return float(np.linalg.norm(d))

    def _full_bordered(self, r_vec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        with self._lock:
            if self._lu_full is None:
                mat = sp.bmat([[self.lhs, sp.csr_matrix(self.b_phi)],
                               [sp.csr_matrix(self.psi_b), None]], format="csc")
                self._lu_full = spla.splu(mat)
        sol = self._lu_full.solve(
            np.concatenate([r_vec, np.zeros(self.nb, dtype=complex)]))
        return sol[: self.n], sol[self.n:]

    def solve(self, r_vec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        scale = max(np.linalg.norm(r_vec), 1e-300)
        if self._dense is not None:
            rhs = (np.concatenate([r_vec, np.zeros(self.nb, dtype=complex)])
                   if self.nb else r_vec)
            sol = sla.lu_solve(self._dense, rhs)
            return sol[: self.n], sol[self.n:]
        if self.nb == 0:
            if self._lu is None:
                raise SingularSystemError(
                    f"unbordered operator at sigma = {self.sigma} is "
                    f"singular: inner resonance with a non-master eigenvalue")
            w = self._lu.solve(r_vec)
            return w, np.zeros(0, dtype=complex)
        if self._lu is not None:
            def block_solve(res_top, res_bot):
                wp = self._lu.solve(res_top)
                fb = np.linalg.solve(self._schur, self.psi_b @ wp - res_bot)
                return wp - self._wh @ fb, fb

            w, f_b = block_solve(r_vec, np.zeros(self.nb, dtype=complex))
            for _ in range(2):
                if self.defect(w, f_b, r_vec) <= 1e-10 * max(scale, 1.0):
                    return w, f_b
                dw, df = block_solve(
                    r_vec - self.lhs @ w - self.b_phi @ f_b, self.psi_b @ w)
                w, f_b = w + dw, f_b + df
            if self.defect(w, f_b, r_vec) <= 1e-8 * max(scale, 1.0):
                return w, f_b
        return self._full_bordered(r_vec)


def _operator_key(alpha: MultiIndex) -> tuple[int, int]:
    """sigma and the border depend on alpha only through this pair."""
    return (alpha[0] + alpha[1], alpha[0] - alpha[1])


def get_operator(dae: QuadraticDae, modes: ModeSet, alpha: MultiIndex,
                 style: StyleChoice,
                 cache: dict | None = None) -> _BorderedOperator:
    key = _operator_key(alpha)
    if cache is not None and key in cache:
        return cache[key]
    sigma = _sigma(alpha, modes.lambdas)
    res_set = resonance_set(sigma, modes.lambdas, style.resonance_tol)
    border = (0, 1, 2) if style.kind == "graph" else tuple(sorted(res_set))
    op = _BorderedOperator(dae, modes, sigma, border)
    if cache is not None:
        cache[key] = op
    return op


def solve_homological(dae: QuadraticDae, modes: ModeSet, rhs: HomologicalRhs,
                      style: StyleChoice,
                      op: _BorderedOperator | None = None
                      ) -> tuple[np.ndarray, np.ndarray]:
    """One bordered solve producing (W^(p,k), f^(p,k)).

    Graph style borders with all three modes; normal-form style borders with
    the (near-)resonant set only and zeroes the remaining f components.  The
    parameter-coordinate dynamics comes out identically zero either way and
    is pinned exactly.
    """
    if op is None:
        op = get_operator(dae, modes, rhs.alpha, style)
    r_vec = rhs.q_term - dae.B @ rhs.n3_term
    scale = max(np.linalg.norm(r_vec), 1e-300)
    try:
        w_pk, w_b = op.solve(r_vec)
    except (RuntimeError, np.linalg.LinAlgError) as exc:
        raise SingularSystemError(
            f"bordered system singular for monomial {rhs.alpha} "
            f"(sigma = {rhs.sigma}): inner resonance with a non-master "
            f"eigenvalue") from exc

    defect = op.defect(w_pk, w_b, r_vec)
    if not np.isfinite(defect) or defect > 1e-8 * max(scale, 1.0):
        raise SingularSystemError(
            f"bordered solve for monomial {rhs.alpha} left defect "
            f"{defect:.3e} (sigma = {rhs.sigma}); matrix near-singular")

    f_pk = np.zeros(N_COORDS, dtype=complex)
    for pos, j in enumerate(op.border):
        f_pk[j] = w_b[pos]
    # d/dt eta' = 0 holds exactly: the parameter reduced equation vanishes
    f_pk[2] = 0.0
    return w_pk, f_pk


def _fill_order_conjugates(table: MonomialTable, W: PolyMap, f: PolyMap,
                           order: int) -> None:
    for k, alpha in enumerate(table.monomials(order)):
        if table.is_representative(alpha):
            continue
        pc, kc = table.position(table.conjugate(alpha))
        W.coeffs[order][k] = np.conj(W.coeffs[pc][kc])
        fv = np.conj(f.coeffs[pc][kc]).copy()
        fv[[0, 1]] = fv[[1, 0]]
        f.coeffs[order][k] = fv


def build_rom(dae: QuadraticDae, modes: ModeSet, order: int, style: StyleChoice,
              re0: float = 0.0, steady: object | None = None,
              threads: int = 1, provenance: dict | None = None) -> RomArtifact:
    """Process orders 2..order sequentially; within an order the representative
    monomials are independent and may be solved concurrently."""
    if order < 2:
        raise ConfigError(f"expansion order must be >= 2, got {order}")
    table = MonomialTable(N_COORDS, order)
    n = dae.n_dof
    W = PolyMap(table, n)
    f = PolyMap(table, N_COORDS)
    W.ensure_order(1)
    f.ensure_order(1)
    for j, alpha in enumerate(table.monomials(1)):
        W.coeffs[1][j] = modes.phi[:, j]
        f.coeffs[1][j][j] = modes.lambdas[j]

    solve_count = 0
    op_cache: dict = {}
    for p in range(2, order + 1):
        W.ensure_order(p)
        f.ensure_order(p)
        reps = [(k, alpha) for k, alpha in enumerate(table.monomials(p))
                if table.is_representative(alpha)]
        q_cache: dict = {}

        if threads and threads > 1:
            # RHS assembly reads shared lower orders only; outputs go to
            # distinct slots, so results are order-independent.  Operators
            # are built serially so the factorization cache stays race-free.
            jobs = [(k, assemble_rhs(dae, modes, table, alpha, W, f, q_cache),
                     get_operator(dae, modes, alpha, style, op_cache))
                    for k, alpha in reps]
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(
                    lambda j: (j[0], solve_homological(dae, modes, j[1], style,
                                                       op=j[2])),
                    jobs))
        else:
            results = []
            for k, alpha in reps:
                rhs = assemble_rhs(dae, modes, table, alpha, W, f, q_cache)
                op = get_operator(dae, modes, alpha, style, op_cache)
                results.append((k, solve_homological(dae, modes, rhs, style,
                                                     op=op)))

        for k, (w_pk, f_pk) in results:
            W.coeffs[p][k] = w_pk
            f.coeffs[p][k] = f_pk
        solve_count += len(reps)
        _fill_order_conjugates(table, W, f, p)

    return RomArtifact(re0=re0, order=order, style=style, modes=modes,
                       W=W, f=f, table=table, steady=steady, dae=dae,
                       solve_count=solve_count,
                       provenance=dict(provenance or {}))
