"""Two-phase revised simplex for ``min c x  s.t.  A x = b, x >= 0``.

Pricing picks the most negative reduced cost; after a run of degenerate
pivots the method switches to Bland's rule for both the entering and the
leaving variable until the objective moves again, so it cannot cycle.  Ties
are broken by index, so the pivot sequence is fully determined by the input.
The basis is refactorised with a sparse LU at every iteration, which keeps
the code short and is adequate for the small problems this solver targets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


_PIVOT_TOL = 1e-9  # smallest admissible pivot, relative to the entering column
_STALL = 20  # consecutive degenerate pivots before falling back to Bland's rule


class SimplexError(RuntimeError):
    pass


@dataclass
class SimplexResult:
    x: np.ndarray
    objective: float
    status: str  # "optimal" | "infeasible" | "unbounded" | "iteration_limit"
    iterations: int
    phase1_residual: float = 0.0


def _factor(A, basis):
    Bm = A[:, basis].tocsc()
    try:
        return spla.splu(Bm)
    except RuntimeError as exc:  # singular basis
        raise SimplexError(f"singular basis: {exc}") from exc


def _iterate(A, b, c, basis, allowed, tol, max_iter, counter):
    """Pivot from a feasible ``basis`` until optimal; returns status."""
    m, n = A.shape
    AT = A.T.tocsr()
    stall = 0
    while True:
        if counter[0] >= max_iter:
            return "iteration_limit"
        lu = _factor(A, basis)
        xB = lu.solve(b)
        y = lu.solve(c[basis], trans="T")
        d = c - AT @ y
        d[basis] = 0.0
        candidates = np.flatnonzero((d < -tol) & allowed)
        if candidates.size == 0:
            return "optimal"
        bland = stall >= _STALL
        j = int(candidates[0] if bland else candidates[np.argmin(d[candidates])])
        col = A[:, j].toarray().ravel()
        w = lu.solve(col)
        pos = w > max(tol, _PIVOT_TOL) * max(1.0, np.abs(w).max())
        if not pos.any():
            return "unbounded"
        ratios = np.full(m, np.inf)
        ratios[pos] = np.maximum(xB[pos], 0.0) / w[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + tol * max(1.0, abs(best)))
        if bland:
            # among tied rows leave the basic variable with the smallest index
            leave = int(ties[np.argmin(np.asarray(basis)[ties])])
        else:
            # largest pivot among tied rows, for stability
            leave = int(ties[np.argmax(w[ties])])
        stall = stall + 1 if best <= tol else 0
        basis[leave] = j
        counter[0] += 1


def _warm_start(A, b, basis, tol):
    """Primal values of ``basis`` if it is a nonsingular feasible basis, else None."""
    if basis is None or len(basis) != A.shape[0]:
        return None
    try:
        xB = _factor(A, basis).solve(b)
    except SimplexError:
        return None
    return xB if xB.min() >= -tol * max(1.0, np.abs(b).max()) else None


def solve(c, A, b, tol: float = 1e-9, max_iter: int = 50_000, basis=None) -> SimplexResult:
    """Minimise ``c x`` subject to ``A x = b, x >= 0``.

    ``basis`` optionally lists ``A.shape[0]`` columns forming a primal feasible
    basis; phase 1 is skipped when it is one, and run as usual otherwise.
    """
    A = sp.csr_matrix(A, dtype=float)
    b = np.asarray(b, dtype=float).copy()
    c = np.asarray(c, dtype=float)
    m, n = A.shape
    counter = [0]
    if _warm_start(A, b, basis, tol) is not None:
        basis = [int(j) for j in basis]
        return _phase2(A, b, c, basis, tol, max_iter, counter)
    flip = b < 0
    if flip.any():
        D = sp.diags(np.where(flip, -1.0, 1.0))
        A = (D @ A).tocsr()
        b = np.abs(b)
    # phase 1: artificial identity basis
    A1 = sp.hstack([A, sp.identity(m, format="csr")], format="csr")
    c1 = np.concatenate([np.zeros(n), np.ones(m)])
    basis = list(range(n, n + m))
    allowed = np.ones(n + m, dtype=bool)
    status = _iterate(A1, b, c1, basis, allowed, tol, max_iter, counter)
    if status == "iteration_limit":
        return SimplexResult(np.zeros(n), np.nan, status, counter[0])
    lu = _factor(A1, basis)
    xB = lu.solve(b)
    infeas = float(sum(xB[r] for r, j in enumerate(basis) if j >= n))
    if infeas > tol * max(1.0, np.abs(b).max()):
        return SimplexResult(np.zeros(n), np.nan, "infeasible", counter[0], infeas)

    # drive zero-level artificials out of the basis; drop redundant rows
    keep_rows = list(range(m))
    for r in range(m):
        if basis[r] < n:
            continue
        lu = _factor(A1, basis)
        e = np.zeros(m)
        e[r] = 1.0
        row = A.T @ lu.solve(e, trans="T")
        row[[j for j in basis if j < n]] = 0.0
        cand = np.flatnonzero(np.abs(row) > tol)
        if cand.size:
            basis[r] = int(cand[0])
        else:
            keep_rows.remove(r)
    if len(keep_rows) < m:
        A = A[keep_rows]
        b = b[keep_rows]
        basis = [basis[r] for r in keep_rows]
    return _phase2(A, b, c, basis, tol, max_iter, counter)


def _phase2(A, b, c, basis, tol, max_iter, counter):
    n = A.shape[1]
    status = _iterate(A, b, c, basis, np.ones(n, dtype=bool), tol, max_iter, counter)
    x = np.zeros(n)
    if status == "optimal":
        lu = _factor(A, basis)
        x[basis] = lu.solve(b)
        x[np.abs(x) < tol * 1e-3] = 0.0
    return SimplexResult(x, float(c @ x) if status == "optimal" else np.nan, status, counter[0])
