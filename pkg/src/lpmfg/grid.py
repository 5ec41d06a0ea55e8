"""Uniform time/state/action grids, jump-destination stencils and CFL checks."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from lpmfg.model import MfgModel, StateDomain


class GridError(ValueError):
    pass


class ContainmentError(GridError):
    """A jump destination left the state grid."""


class CflWarning(UserWarning):
    pass


def _frozen(arr) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DiscreteGrid:
    t_nodes: np.ndarray
    x_nodes: np.ndarray
    a_nodes: np.ndarray
    boundary_index: tuple[int, ...]

    @property
    def N(self) -> int:
        return self.t_nodes.size - 1

    @property
    def M(self) -> int:
        return self.x_nodes.size - 1

    @property
    def K(self) -> int:
        return self.a_nodes.size - 1

    @property
    def T(self) -> float:
        return float(self.t_nodes[-1])

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def dx(self) -> float:
        return float(self.x_nodes[-1] - self.x_nodes[0]) / self.M

    @property
    def lo(self) -> float:
        return float(self.x_nodes[0])

    @property
    def hi(self) -> float:
        return float(self.x_nodes[-1])

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.N, self.M, self.K

    def inward_sign(self) -> np.ndarray:
        """Inward normal at each boundary node (+1 at lo, -1 at hi)."""
        return np.array([1.0 if j == 0 else -1.0 for j in self.boundary_index])

    def nearest_node(self, x: np.ndarray) -> np.ndarray:
        idx = np.rint((np.asarray(x, dtype=float) - self.lo) / self.dx).astype(np.int64)
        return np.clip(idx, 0, self.M)

    def same_as(self, other: DiscreteGrid) -> bool:
        return (
            self.shape == other.shape
            and np.array_equal(self.t_nodes, other.t_nodes)
            and np.array_equal(self.x_nodes, other.x_nodes)
            and np.array_equal(self.a_nodes, other.a_nodes)
        )


def build_grid(domain: StateDomain, T: float, N: int, M: int, K: int,
               action_range: tuple[float, float]) -> DiscreteGrid:
    """Uniform grids on ``[0, T] x [lo, hi] x [a_lo, a_hi]``.

    ``K = 0`` gives a single action node at ``a_lo``.
    """
    if domain.dim != 1:
        raise GridError(f"only one-dimensional state domains are supported, got dim={domain.dim}")
    for name, value, least in (("N", N, 1), ("M", M, 1), ("K", K, 0)):
        if int(value) != value or value < least:
            raise GridError(f"{name} must be an integer >= {least}, got {value}")
    if not (np.isfinite(T) and T > 0):
        raise GridError(f"horizon T must be positive, got {T}")
    a_lo, a_hi = (float(v) for v in action_range)
    if not (np.isfinite(a_lo) and np.isfinite(a_hi)) or a_hi < a_lo:
        raise GridError(f"invalid action range [{a_lo}, {a_hi}]")
    if K >= 1 and a_hi == a_lo:
        raise GridError("zero-length action range with K >= 1")
    lo, hi = domain.lo[0], domain.hi[0]
    t = np.linspace(0.0, T, N + 1)
    x = np.linspace(lo, hi, M + 1)
    a = np.linspace(a_lo, a_hi, K + 1) if K >= 1 else np.array([a_lo])
    return DiscreteGrid(_frozen(t), _frozen(x), _frozen(a), (0, M))


@dataclass(frozen=True, eq=False)
class JumpStencil:
    """Two-point interpolation of ``x_i + beta(t_n, x_i, z_n, a_k)`` onto the grid.

    ``index[n, i, k]`` holds the bracketing node pair and ``weight[n, i, k]``
    the convex weights; an exact node hit stores weight 1 on ``index[..., 0]``.
    """

    index: np.ndarray  # (N, M+1, K+1, 2) int
    weight: np.ndarray  # (N, M+1, K+1, 2)
    destination: np.ndarray  # (N, M+1, K+1)
    jump: np.ndarray  # (N, M+1, K+1) raw beta values

    def is_identity(self) -> bool:
        own = np.arange(self.index.shape[1])[None, :, None]
        return bool(np.all(self.index[..., 0] == own) and np.all(self.weight[..., 0] == 1.0))


def _evaluate(fn, t, x, z, a, shape):
    return np.broadcast_to(np.asarray(fn(t, x, z, a), dtype=float), shape)


def locate(grid: DiscreteGrid, dest: np.ndarray):
    """Bracketing nodes and linear weights for points inside ``[lo, hi]``."""
    pos = (dest - grid.lo) / grid.dx
    near = np.rint(pos)
    snap = np.abs(pos - near) <= 64 * np.finfo(float).eps * np.maximum(1.0, np.abs(pos))
    pos = np.where(snap, near, pos)
    lower = np.clip(np.floor(pos).astype(np.int64), 0, grid.M)
    frac = pos - lower
    exact = (frac == 0.0) | (lower == grid.M)
    upper = np.where(exact, lower, lower + 1)
    w_up = np.where(exact, 0.0, frac)
    index = np.stack([lower, upper], axis=-1)
    weight = np.stack([1.0 - w_up, w_up], axis=-1)
    return index, weight


def jump_stencil(model: MfgModel, grid: DiscreteGrid, flow_stats) -> JumpStencil:
    """Interpolation weights of every jump destination, one per (n, i, k)."""
    N, M, K = grid.shape
    shape = (M + 1, K + 1)
    x = grid.x_nodes[:, None]
    a = grid.a_nodes[None, :]
    beta = np.empty((N, M + 1, K + 1))
    for n in range(N):
        beta[n] = _evaluate(model.jump, float(grid.t_nodes[n]), x, flow_stats.jump[n], a, shape)
    dest = grid.x_nodes[None, :, None] + beta
    tol = 1e-12 * max(1.0, grid.hi - grid.lo)
    out = (dest < grid.lo - tol) | (dest > grid.hi + tol)
    if out.any():
        n, i, k = (int(v) for v in np.argwhere(out)[0])
        raise ContainmentError(
            f"jump destination {dest[n, i, k]:.6g} outside [{grid.lo}, {grid.hi}] "
            f"at (t={grid.t_nodes[n]:.6g}, x={grid.x_nodes[i]:.6g}, a={grid.a_nodes[k]:.6g})")
    dest = np.clip(dest, grid.lo, grid.hi)
    index, weight = locate(grid, dest)
    return JumpStencil(index, weight, dest, beta)


@dataclass(frozen=True)
class CflReport:
    number: float
    stable: bool
    worst: tuple[int, int, int]  # (n, i, k) attaining the maximum

    def __str__(self):
        n, i, k = self.worst
        flag = "stable" if self.stable else "UNSTABLE (explicit pairing needs <= 1)"
        return f"CFL number {self.number:.6g} at (n={n}, i={i}, k={k}): {flag}"


def cfl_report(model: MfgModel, grid: DiscreteGrid, flow_stats, warn: bool = True) -> CflReport:
    """Largest per-step exit probability bound ``dt (|b - lam beta|/dx + sigma^2/dx^2 + lam)``."""
    N, M, K = grid.shape
    shape = (M + 1, K + 1)
    x = grid.x_nodes[:, None]
    a = grid.a_nodes[None, :]
    best, worst = -1.0, (0, 0, 0)
    for n in range(N):
        t = float(grid.t_nodes[n])
        lam = float(model.intensity(t))
        b = _evaluate(model.drift, t, x, flow_stats.drift[n], a, shape)
        s = _evaluate(model.diffusion, t, x, flow_stats.diffusion[n], a, shape)
        beta = _evaluate(model.jump, t, x, flow_stats.jump[n], a, shape)
        rate = np.abs(b - lam * beta) / grid.dx + s**2 / grid.dx**2 + lam
        i, k = np.unravel_index(np.argmax(rate), shape)
        if rate[i, k] * grid.dt > best:
            best, worst = float(rate[i, k] * grid.dt), (n, int(i), int(k))
    report = CflReport(best, best <= 1.0, worst)
    if warn and not report.stable:
        warnings.warn(str(report), CflWarning, stacklevel=2)
    return report
