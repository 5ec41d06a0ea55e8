"""Discrete measures shared by the LP, the fixed-point loop and the simulator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lpmfg.grid import DiscreteGrid

MASS_TOL = 1e-8


class MeasureError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MeanFieldFlow:
    """State marginals ``rho[n]`` at the time nodes ``n = 0..N``."""

    rho: np.ndarray  # (N+1, M+1)

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float)
        if rho.ndim != 2:
            raise MeasureError("flow must be a 2-D array (time node, state node)")
        if np.any(rho < -MASS_TOL) or not np.isfinite(rho).all():
            raise MeasureError("flow slices must be finite and nonnegative")
        sums = rho.sum(axis=1)
        bad = np.abs(sums - 1.0) > MASS_TOL
        if bad.any():
            n = int(np.argmax(bad))
            raise MeasureError(f"flow slice {n} sums to {sums[n]!r}, not 1")
        rho = np.array(rho)
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    @classmethod
    def constant(cls, law: np.ndarray, N: int) -> MeanFieldFlow:
        return cls(np.tile(np.asarray(law, dtype=float), (N + 1, 1)))

    def mix(self, other: MeanFieldFlow, weight: float) -> MeanFieldFlow:
        """``(1 - weight) * self + weight * other``."""
        return MeanFieldFlow((1.0 - weight) * self.rho + weight * other.rho)

    def sup_tv(self, other: MeanFieldFlow) -> float:
        """Sup over time nodes of the total-variation distance."""
        return float(0.5 * np.abs(self.rho - other.rho).sum(axis=1).max())


@dataclass(frozen=True, eq=False)
class OccupationTriple:
    """Terminal law ``nu``, time-state-action occupation ``m`` and boundary mass ``lambda_b``.

    ``m[n, i, k]`` carries units of time: per cell its total is ``dt``.
    ``lambda_b[n, j]`` is indexed by time cell and boundary node.
    """

    nu: np.ndarray
    m: np.ndarray
    lambda_b: np.ndarray

    def total_boundary_mass(self) -> float:
        return float(self.lambda_b.sum())

    def check(self, grid: DiscreteGrid, tol: float = MASS_TOL) -> list[str]:
        """Violated occupation invariants (empty when the triple is admissible)."""
        N, M, K = grid.shape
        problems = []
        if self.nu.shape != (M + 1,) or self.m.shape != (N, M + 1, K + 1) \
                or self.lambda_b.shape != (N, len(grid.boundary_index)):
            return [f"shape mismatch with grid {grid.shape}"]
        if self.nu.min() < -tol:
            problems.append(f"nu has negative entry {self.nu.min():.3g}")
        if abs(self.nu.sum() - 1.0) > tol:
            problems.append(f"nu sums to {self.nu.sum()!r}")
        if self.m.min() < -tol:
            problems.append(f"m has negative entry {self.m.min():.3g}")
        cell = self.m.sum(axis=(1, 2))
        worst = int(np.argmax(np.abs(cell - grid.dt)))
        if abs(cell[worst] - grid.dt) > tol:
            problems.append(f"cell {worst} carries mass {cell[worst]!r}, expected dt={grid.dt!r}")
        if self.lambda_b.size and self.lambda_b.min() < -tol:
            problems.append(f"lambda_b has negative entry {self.lambda_b.min():.3g}")
        return problems


def marginal_flow(triple: OccupationTriple, grid: DiscreteGrid) -> MeanFieldFlow:
    """State marginals of an occupation triple: ``rho[n] = sum_k m[n, :, k] / dt``, ``rho[N] = nu``."""
    rho = np.empty((grid.N + 1, grid.M + 1))
    rho[:-1] = triple.m.sum(axis=2) / grid.dt
    rho[-1] = triple.nu
    return MeanFieldFlow(rho)


@dataclass(frozen=True, eq=False)
class ControlKernel:
    """Relaxed feedback control: ``v[n, i, :]`` is a law over the action nodes."""

    v: np.ndarray  # (N, M+1, K+1)

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        if v.ndim != 3 or np.any(v < 0) or np.any(np.abs(v.sum(axis=2) - 1.0) > 1e-9):
            raise MeasureError("kernel rows must be probability vectors over actions")


def extract_kernel(triple: OccupationTriple, grid: DiscreteGrid, default_action: int = 0,
                   mass_floor: float = 0.0) -> ControlKernel:
    """Disintegrate ``m`` into ``v[n, i, k] m^X[n, i]``.

    States without occupation mass get the Dirac kernel at ``default_action``.
    """
    m = np.clip(triple.m, 0.0, None)
    mass = m.sum(axis=2, keepdims=True)
    v = np.zeros_like(m)
    v[..., default_action] = 1.0
    has_mass = mass[..., 0] > mass_floor
    v[has_mass] = m[has_mass] / mass[has_mass]
    return ControlKernel(v)


def constant_kernel(grid: DiscreteGrid, action: int) -> ControlKernel:
    v = np.zeros((grid.N, grid.M + 1, grid.K + 1))
    v[..., action] = 1.0
    return ControlKernel(v)
