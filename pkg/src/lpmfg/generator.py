"""Discrete generator ``L`` and boundary operator ``A`` on the state grid.

For each time cell ``n`` and action node ``k`` the matrix ``G[n][k]``
approximates, row by row,

    (L u)(x_i) = b u'(x_i) + 1/2 sigma^2 u''(x_i)
                 + lam(t) [u(x_i + beta) - u(x_i) - beta u'(x_i)]

with upwind first differences (direction set by the compensated drift
``c = b - lam beta``), a centred second difference and linear interpolation
of the jump destination.  Every ``G[n][k]`` is a rate matrix: rows sum to
zero and off-diagonal entries are nonnegative.

Boundary nodes are treated as reflecting.  The matrix row at a boundary node
only keeps the inward drift excess and the jumps; the flux an interior
stencil would send through the wall is carried by the boundary measure and
returned to the domain through ``B`` (the inward one-sided first
difference).  The boundary mass per time cell is

    lambda_b = kappa_wall * m[wall] + kappa_next * m[next to wall]

with ``kappa_wall = (outward part of c) + sigma^2 / (2 dx)`` and
``kappa_next`` the drift flux from the neighbouring node towards the wall.
Charging the neighbour's drift flux makes mass pinned against a wall by an
outward drift accrue reflection at the rate of that drift, which a monotone
matrix row alone cannot express.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from lpmfg.grid import DiscreteGrid, JumpStencil, locate
from lpmfg.measures import MASS_TOL, MeanFieldFlow
from lpmfg.model import MfgModel


class GeneratorError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FlowStats:
    """Statistic vectors ``z[n] = sum_i stat(t_n, x_i) mu_n[i]`` for each coefficient."""

    drift: np.ndarray  # (N+1, n_stat)
    diffusion: np.ndarray
    jump: np.ndarray
    cost: np.ndarray
    terminal: np.ndarray  # (n_stat_g,)

    def key(self) -> bytes:
        return b"".join(np.ascontiguousarray(a).tobytes()
                        for a in (self.drift, self.diffusion, self.jump, self.cost, self.terminal))


def _stat_table(fn, t, x):
    vals = np.asarray(fn(t, x), dtype=float)
    return vals.reshape(x.size, -1)


def stats_at(model: MfgModel, grid: DiscreteGrid, n: int, law: np.ndarray):
    """Statistic vectors at time node ``n`` for the state law ``law``."""
    t = float(grid.t_nodes[n])
    x = grid.x_nodes
    return tuple(law @ _stat_table(fn, t, x)
                 for fn in (model.drift_stat, model.diffusion_stat, model.jump_stat, model.cost_stat))


def flow_stats(model: MfgModel, grid: DiscreteGrid, flow: MeanFieldFlow) -> FlowStats:
    rho = np.asarray(flow.rho)
    if rho.shape != (grid.N + 1, grid.M + 1):
        raise GeneratorError(f"flow shape {rho.shape} does not match grid {(grid.N + 1, grid.M + 1)}")
    sums = rho.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > MASS_TOL):
        n = int(np.argmax(np.abs(sums - 1.0)))
        raise GeneratorError(f"flow slice {n} sums to {sums[n]!r}")
    per_node = [stats_at(model, grid, n, rho[n]) for n in range(grid.N + 1)]
    drift, diffusion, jump, cost = (np.array([s[j] for s in per_node]) for j in range(4))
    terminal = rho[-1] @ np.asarray(model.terminal_stat(grid.x_nodes), dtype=float).reshape(grid.M + 1, -1)
    return FlowStats(drift, diffusion, jump, cost, terminal)


@dataclass(frozen=True, eq=False)
class SliceCoefficients:
    """Coefficients on the (state, action) grid at one time node."""

    t: float
    intensity: float
    drift: np.ndarray  # (M+1, K+1)
    sigma2: np.ndarray
    jump: np.ndarray

    @property
    def compensated_drift(self) -> np.ndarray:
        return self.drift - self.intensity * self.jump


def slice_coefficients(model: MfgModel, grid: DiscreteGrid, n: int, z_drift, z_diffusion,
                       z_jump) -> SliceCoefficients:
    t = float(grid.t_nodes[n])
    shape = (grid.M + 1, grid.K + 1)
    x = grid.x_nodes[:, None]
    a = grid.a_nodes[None, :]

    def ev(fn, z):
        return np.broadcast_to(np.asarray(fn(t, x, z, a), dtype=float), shape)

    lam = float(model.intensity(t))
    sigma = ev(model.diffusion, z_diffusion)
    return SliceCoefficients(t, lam, ev(model.drift, z_drift), sigma**2, ev(model.jump, z_jump))


def _csr(rows, cols, vals, size):
    return sp.csr_matrix((vals, (rows, cols)), shape=(size, size))


def _rate_matrix(rows, cols, vals, size):
    """Rate matrix from off-diagonal entries; the diagonal makes rows sum to zero."""
    keep = rows != cols
    off = _csr(rows[keep], cols[keep], vals[keep], size)
    diag = -np.asarray(off.sum(axis=1)).ravel()
    return (off + sp.diags(diag, format="csr")).tocsr()


def slice_operators(grid: DiscreteGrid, coef: SliceCoefficients, index: np.ndarray,
                    weight: np.ndarray):
    """Rate matrices, jump brackets and boundary flux rates for one time cell.

    Returns ``(G, J, kappa)`` with ``G[k]``/``J[k]`` sparse ``(M+1, M+1)`` and
    ``kappa`` of shape ``(n_boundary, 2, K+1)``: per face, the flux rate of
    the wall node and of its inward neighbour (see :func:`flux_nodes`).
    """
    M, K = grid.M, grid.K
    dx = grid.dx
    lam = coef.intensity
    c = coef.compensated_drift
    s = coef.sigma2
    nodes = np.arange(M + 1)
    interior = nodes[1:-1]
    G, J = [], []
    for k in range(K + 1):
        ck, sk = c[:, k], s[:, k]
        up = np.maximum(ck, 0.0) / dx + 0.5 * sk / dx**2
        down = np.maximum(-ck, 0.0) / dx + 0.5 * sk / dx**2
        rows = [interior, interior, np.array([0]), np.array([M])]
        cols = [interior + 1, interior - 1, np.array([1]), np.array([M - 1])]
        vals = [up[1:-1], down[1:-1],
                np.array([max(ck[0], 0.0) / dx]), np.array([max(-ck[M], 0.0) / dx])]
        # jumps: rate lam to each interpolation node
        jr = np.repeat(nodes, 2)
        jc = index[:, k, :].ravel()
        jv = lam * weight[:, k, :].ravel()
        G.append(_rate_matrix(np.concatenate(rows + [jr]), np.concatenate(cols + [jc]),
                              np.concatenate(vals + [jv]), M + 1))

        # compensated bracket lam [W - I] - lam beta D, D the row's one-sided difference
        forward = np.ones(M + 1, dtype=bool)
        forward[1:-1] = ck[1:-1] >= 0.0
        forward[M] = False
        nb = np.where(forward, nodes + 1, nodes - 1)
        slope = np.where(forward, 1.0, -1.0) * lam * coef.jump[:, k] / dx
        J.append(_csr(np.concatenate([jr, nodes, nodes, nodes]),
                      np.concatenate([jc, nodes, nb, nodes]),
                      np.concatenate([jv, -lam * np.ones(M + 1), -slope, slope]), M + 1))
    sign = grid.inward_sign()
    nodes_ = flux_nodes(grid)
    wall = np.maximum(-sign[:, None] * c[nodes_[:, 0], :], 0.0) + 0.5 * s[nodes_[:, 0], :] / dx
    nxt = np.maximum(-sign[:, None] * c[nodes_[:, 1], :], 0.0)
    return G, J, np.stack([wall, nxt], axis=1)


def flux_nodes(grid: DiscreteGrid) -> np.ndarray:
    """``[[wall, neighbour], ...]`` state indices per boundary face."""
    sign = grid.inward_sign().astype(np.int64)
    bidx = np.asarray(grid.boundary_index, dtype=np.int64)
    return np.stack([bidx, bidx + sign], axis=1)


def boundary_operator(grid: DiscreteGrid) -> sp.csr_matrix:
    """``(B u)_j = m(x_j) * (one-sided derivative of u)`` at each boundary node."""
    M, dx = grid.M, grid.dx
    rows = np.array([0, 0, 1, 1])
    cols = np.array([0, 1, M, M - 1])
    vals = np.array([-1.0, 1.0, -1.0, 1.0]) / dx
    return sp.csr_matrix((vals, (rows, cols)), shape=(2, M + 1))


def apply_boundary(B: sp.spmatrix, u: np.ndarray) -> np.ndarray:
    return B @ np.asarray(u, dtype=float)


@dataclass(frozen=True, eq=False)
class GeneratorTensors:
    G: list  # G[n][k] sparse rate matrices
    J: list  # J[n][k] compensated jump brackets (contained in G)
    B: sp.csr_matrix
    kappa: np.ndarray  # (N, n_boundary, 2, K+1) flux per unit occupation at wall / neighbour
    coefficients: list  # SliceCoefficients per time cell

    def boundary_mass(self, grid: DiscreteGrid, m: np.ndarray) -> np.ndarray:
        """Boundary measure ``(N, n_boundary)`` implied by the occupation ``m``."""
        return boundary_mass(self.kappa, m, flux_nodes(grid))


def boundary_mass(kappa: np.ndarray, m: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """``lambda_b[..., j] = sum_{r, k} kappa[..., j, r, k] m[..., nodes[j, r], k]``."""
    return np.einsum("...jrk,...jrk->...j", kappa, m[..., nodes, :])


_CACHE: OrderedDict = OrderedDict()
_CACHE_SIZE = 8


def assemble_generator(model: MfgModel, grid: DiscreteGrid, stats: FlowStats,
                       stencil: JumpStencil) -> GeneratorTensors:
    """Assemble ``G[n][k]``, ``B`` and the boundary flux rates for a frozen flow.

    Results are memoised per (model, grid, statistics) since the fixed-point
    loop revisits identical flows.
    """
    if stencil.index.shape[:3] != (grid.N, grid.M + 1, grid.K + 1):
        raise GeneratorError("jump stencil does not match grid")
    key = (id(model), id(grid), stats.key())
    hit = _CACHE.get(key)
    if hit is not None and hit[0] is model and hit[1] is grid:
        _CACHE.move_to_end(key)
        return hit[2]
    Gs, Js, kappas, coefs = [], [], [], []
    for n in range(grid.N):
        coef = slice_coefficients(model, grid, n, stats.drift[n], stats.diffusion[n], stats.jump[n])
        G, J, kappa = slice_operators(grid, coef, stencil.index[n], stencil.weight[n])
        Gs.append(G)
        Js.append(J)
        kappas.append(kappa)
        coefs.append(coef)
    tensors = GeneratorTensors(Gs, Js, boundary_operator(grid), np.array(kappas), coefs)
    _CACHE[key] = (model, grid, tensors)
    if len(_CACHE) > _CACHE_SIZE:
        _CACHE.popitem(last=False)
    return tensors


def slice_from_law(model: MfgModel, grid: DiscreteGrid, n: int, law: np.ndarray):
    """Operators of cell ``n`` with coefficients frozen at the state law ``law``."""
    zb, zs, zj, _ = stats_at(model, grid, n, law)
    coef = slice_coefficients(model, grid, n, zb, zs, zj)
    dest = np.clip(grid.x_nodes[:, None] + coef.jump, grid.lo, grid.hi)
    index, weight = locate(grid, dest)
    return slice_operators(grid, coef, index, weight)


def dump_coo(matrix: sp.spmatrix, path) -> None:
    """Write a sparse matrix as ``row col value`` lines (17 significant digits)."""
    coo = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write(f"% {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v:.17g}\n")
