"""Monte Carlo simulation of the controlled reflected jump-diffusion.

Paths follow an Euler scheme with projection onto ``[lo, hi]``: per substep
of length ``h = dt / substeps``

    X' = X + (b - lam beta) h + sigma sqrt(h) xi  (+ beta with probability lam h)

followed by clamping; the clamped distance is the increment of the
reflection process and is booked on the face it was clamped to.  Actions are
drawn from the relaxed kernel at the nearest state node.  Coefficients use
the statistics of the frozen flow at the left end of each time cell.

Random numbers: path ``p`` owns the Philox stream with 128-bit key
``(seed << 64) | p`` and draws, in order, ``steps`` normals, ``steps`` jump
uniforms and ``steps`` action uniforms.  Estimates are therefore bit-identical
for identical ``(seed, n_paths, substeps)``; every path is also independent of
the chunking, which only changes the floating-point summation order.

Initial states are allocated deterministically: ``n_paths * m0`` rounded by
largest remainders, paths ordered by node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lpmfg.generator import FlowStats, flow_stats
from lpmfg.grid import DiscreteGrid
from lpmfg.measures import ControlKernel, MeanFieldFlow, OccupationTriple, extract_kernel  # noqa: F401
from lpmfg.model import MfgModel

MAX_JUMP_PROBABILITY = 0.5
_CHUNK = 20_000


class SimulationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SimulationEstimate:
    nu: np.ndarray  # (M+1,) terminal histogram on nearest nodes
    m: np.ndarray  # (N, M+1, K+1) occupation time per path
    lambda_b: np.ndarray  # (N, 2) reflection per path
    cost: float
    cost_se: float
    nu_se: np.ndarray
    n_paths: int
    seed: int
    substeps: int
    grid_shape: tuple[int, int, int]


def allocate_initial(m0: np.ndarray, n_paths: int) -> np.ndarray:
    """Node index of each path's initial state (largest-remainder rounding of ``n_paths * m0``)."""
    target = np.asarray(m0, dtype=float) * n_paths
    counts = np.floor(target).astype(np.int64)
    short = n_paths - counts.sum()
    if short > 0:
        order = np.argsort(-(target - counts), kind="stable")
        counts[order[:short]] += 1
    return np.repeat(np.arange(m0.size), counts)


def _draws(seed: int, first: int, stop: int, steps: int):
    size = stop - first
    xi = np.empty((size, steps))
    uj = np.empty((size, steps))
    ua = np.empty((size, steps))
    for r, p in enumerate(range(first, stop)):
        rng = np.random.Generator(np.random.Philox(key=(int(seed) << 64) | p))
        xi[r] = rng.standard_normal(steps)
        uj[r] = rng.random(steps)
        ua[r] = rng.random(steps)
    return xi, uj, ua


def _eval(fn, *args, shape):
    return np.broadcast_to(np.asarray(fn(*args), dtype=float), shape)


def simulate(model: MfgModel, grid: DiscreteGrid, kernel: ControlKernel, flow: MeanFieldFlow,
             n_paths: int, substeps: int, seed: int, stats: FlowStats | None = None) -> SimulationEstimate:
    N, M, K = grid.shape
    v = np.asarray(kernel.v)
    if v.shape != (N, M + 1, K + 1) or flow.rho.shape != (N + 1, M + 1):
        raise SimulationError("kernel or flow does not match the grid")
    if substeps < 1 or n_paths < 1:
        raise SimulationError("n_paths and substeps must be positive")
    h = grid.dt / substeps
    lam_max = max(float(model.intensity(t)) for t in grid.t_nodes)
    if lam_max * h > MAX_JUMP_PROBABILITY:
        raise SimulationError(f"jump probability per substep {lam_max * h:.3g} exceeds "
                              f"{MAX_JUMP_PROBABILITY}; increase substeps")
    stats = stats if stats is not None else flow_stats(model, grid, flow)
    lo, hi = grid.lo, grid.hi
    m0 = model.initial_law.on_grid(grid.x_nodes)
    start_node = allocate_initial(m0, n_paths)
    cdf = np.cumsum(v, axis=2)
    cdf[..., -1] = 1.0
    steps = N * substeps
    faces = np.array([lo, hi])
    h_face = np.array([[float(c) for c in np.broadcast_to(
        np.asarray(model.boundary_cost(float(grid.t_nodes[n]), faces), dtype=float), (2,))] for n in range(N)])

    nu_counts = np.zeros(M + 1)
    m_hat = np.zeros((N, M + 1, K + 1))
    lam_hat = np.zeros((N, 2))
    cost_sum = 0.0
    cost_sq = 0.0
    for first in range(0, n_paths, _CHUNK):
        stop = min(first + _CHUNK, n_paths)
        P = stop - first
        xi, uj, ua = _draws(seed, first, stop, steps)
        X = grid.x_nodes[start_node[first:stop]].copy()
        cost = np.zeros(P)
        for n in range(N):
            zb, zs, zj, zf = stats.drift[n], stats.diffusion[n], stats.jump[n], stats.cost[n]
            for s in range(substeps):
                col = n * substeps + s
                t = float(grid.t_nodes[n]) + s * h
                node = grid.nearest_node(X)
                k = (ua[:, col, None] > cdf[n, node]).sum(axis=1)
                k = np.minimum(k, K)
                a = grid.a_nodes[k]
                lam = float(model.intensity(t))
                b = _eval(model.drift, t, X, zb, a, shape=X.shape)
                sig = _eval(model.diffusion, t, X, zs, a, shape=X.shape)
                beta = _eval(model.jump, t, X, zj, a, shape=X.shape)
                f = _eval(model.running_cost, t, X, zf, a, shape=X.shape)
                np.add.at(m_hat[n], (node, k), h)
                cost += f * h
                Y = X + (b - lam * beta) * h + sig * np.sqrt(h) * xi[:, col]
                Y = Y + np.where(uj[:, col] < lam * h, beta, 0.0)
                below = np.maximum(lo - Y, 0.0)
                above = np.maximum(Y - hi, 0.0)
                lam_hat[n, 0] += below.sum()
                lam_hat[n, 1] += above.sum()
                cost += h_face[n, 0] * below + h_face[n, 1] * above
                X = np.clip(Y, lo, hi)
        cost += _eval(model.terminal_cost, X, stats.terminal, shape=X.shape)
        nu_counts += np.bincount(grid.nearest_node(X), minlength=M + 1)
        cost_sum += cost.sum()
        cost_sq += (cost**2).sum()

    nu = nu_counts / n_paths
    mean = cost_sum / n_paths
    var = max(cost_sq / n_paths - mean**2, 0.0) * n_paths / max(n_paths - 1, 1)
    return SimulationEstimate(
        nu=nu, m=m_hat / n_paths, lambda_b=lam_hat / n_paths, cost=float(mean),
        cost_se=float(np.sqrt(var / n_paths)), nu_se=np.sqrt(nu * (1.0 - nu) / n_paths),
        n_paths=int(n_paths), seed=int(seed), substeps=int(substeps), grid_shape=grid.shape)


def wasserstein_1d(p: np.ndarray, q: np.ndarray, nodes: np.ndarray) -> float:
    """``W1`` between two probability vectors on the same sorted nodes (integrated CDF gap)."""
    gap = np.abs(np.cumsum(p) - np.cumsum(q))[:-1]
    return float((gap * np.diff(nodes)).sum())


@dataclass(frozen=True)
class ComparisonReport:
    lp_cost: float
    sim_cost: float
    sim_se: float
    eps_disc: float
    cost_gap: float
    cost_ratio: float  # cost_gap / (3 se + eps_disc)
    w1_terminal: float
    tv_slices: tuple[float, ...]
    boundary_lp: float
    boundary_sim: float

    @property
    def max_tv(self) -> float:
        return max(self.tv_slices) if self.tv_slices else 0.0

    def passed(self, w1_bound: float = 0.05) -> bool:
        return self.cost_ratio <= 1.0 and self.w1_terminal <= w1_bound

    def row(self) -> dict:
        return {"lp_cost": self.lp_cost, "sim_cost": self.sim_cost, "sim_se": self.sim_se,
                "eps_disc": self.eps_disc, "cost_gap": self.cost_gap, "cost_ratio": self.cost_ratio,
                "w1_terminal": self.w1_terminal, "max_tv": self.max_tv,
                "boundary_lp": self.boundary_lp, "boundary_sim": self.boundary_sim}

    def __str__(self):
        return (f"J_LP={self.lp_cost:.6g} J_sim={self.sim_cost:.6g} (se {self.sim_se:.3g}) "
                f"gap={self.cost_gap:.3g} ratio={self.cost_ratio:.3g} W1={self.w1_terminal:.3g} "
                f"maxTV={self.max_tv:.3g}")


def compare_lp_vs_sim(triple: OccupationTriple, lp_cost: float, est: SimulationEstimate, grid: DiscreteGrid,
                      eps_disc: float | None = None) -> ComparisonReport:
    N, M, K = grid.shape
    if est.grid_shape != grid.shape or triple.m.shape != (N, M + 1, K + 1) or est.nu.shape != triple.nu.shape:
        raise SimulationError(f"grid mismatch: estimate {est.grid_shape}, LP {triple.m.shape}, grid {grid.shape}")
    if eps_disc is None:
        eps_disc = 0.02 * abs(lp_cost) + 0.01
    gap = abs(est.cost - lp_cost)
    denom = 3.0 * est.cost_se + eps_disc
    ratio = gap / denom if denom > 0 else (0.0 if gap == 0 else np.inf)
    lp_x = triple.m.sum(axis=2) / grid.dt
    sim_x = est.m.sum(axis=2) / grid.dt
    tv = tuple(float(0.5 * np.abs(lp_x[n] - sim_x[n]).sum()) for n in range(N))
    return ComparisonReport(float(lp_cost), est.cost, est.cost_se, float(eps_disc), float(gap), float(ratio),
                            wasserstein_1d(est.nu, triple.nu, grid.x_nodes), tv,
                            float(triple.lambda_b.sum()), float(est.lambda_b.sum()))
