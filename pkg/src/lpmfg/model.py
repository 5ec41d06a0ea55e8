"""Problem data for mean-field games with reflected jump-diffusion states.

Coefficient callbacks are vectorised: ``x`` and ``a`` arrive as broadcastable
numpy arrays and ``z`` is the statistic vector of the population for the
coefficient being evaluated.  The population enters every coefficient only
through such a finite statistic vector::

    b(t, x, mu, a) = drift(t, x, sum_y drift_stat(t, y) mu(y), a)

and likewise for the diffusion, jump size, running cost and terminal cost.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable

import numpy as np

if TYPE_CHECKING:
    from lpmfg.grid import DiscreteGrid

Coefficient = Callable[..., np.ndarray]

_CONTAINMENT_TOL = 1e-12


class ModelError(ValueError):
    """Raised for malformed model data or non-finite coefficient values."""


@dataclass(frozen=True)
class StateDomain:
    """Axis-aligned box ``[lo, hi]``; in one dimension the boundary is ``{lo, hi}``."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi) or not lo:
            raise ModelError("domain bounds must be non-empty and of equal length")
        for i, (a, b) in enumerate(zip(lo, hi)):
            if not (np.isfinite(a) and np.isfinite(b)) or a >= b:
                raise ModelError(f"domain coordinate {i}: need lo < hi, got [{a}, {b}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @classmethod
    def interval(cls, lo: float, hi: float) -> StateDomain:
        return cls((lo,), (hi,))

    def inward_normal(self, x: np.ndarray) -> np.ndarray:
        """Sum of inward face normals at ``x`` (1-D: +1 at lo, -1 at hi, 0 inside)."""
        x = np.asarray(x, dtype=float)
        lo, hi = self.lo[0], self.hi[0]
        return np.where(x <= lo, 1.0, 0.0) - np.where(x >= hi, 1.0, 0.0)


@dataclass(frozen=True)
class InitialLaw:
    """Initial distribution, resolved onto the state nodes by :meth:`on_grid`.

    ``kind`` is ``"uniform"``, ``"point_mass"`` (uses ``x0``; off-node
    points are split linearly between the two bracketing nodes) or
    ``"histogram"`` (``weights`` either one per node or one per equal-width
    bin of the domain).
    """

    kind: str = "uniform"
    x0: float | None = None
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("uniform", "point_mass", "histogram"):
            raise ModelError(f"unknown initial law kind {self.kind!r}")
        if self.kind == "point_mass" and self.x0 is None:
            raise ModelError("point_mass initial law needs x0")
        if self.kind == "histogram":
            if not self.weights:
                raise ModelError("histogram initial law needs weights")
            w = np.asarray(self.weights, dtype=float)
            if np.any(w < 0) or not np.isfinite(w).all() or w.sum() <= 0:
                raise ModelError("histogram weights must be finite, nonnegative, not all zero")
            object.__setattr__(self, "weights", tuple(float(v) for v in w))

    def on_grid(self, x_nodes: np.ndarray) -> np.ndarray:
        x_nodes = np.asarray(x_nodes, dtype=float)
        n = x_nodes.size
        if self.kind == "uniform":
            return np.full(n, 1.0 / n)
        if self.kind == "point_mass":
            lo, hi = x_nodes[0], x_nodes[-1]
            if not lo <= self.x0 <= hi:
                raise ModelError(f"point mass x0={self.x0} outside [{lo}, {hi}]")
            out = np.zeros(n)
            pos = (self.x0 - lo) / (x_nodes[1] - x_nodes[0])
            j = int(np.floor(pos))
            frac = pos - j
            if j >= n - 1 or abs(frac) < 1e-12:
                out[min(j, n - 1)] = 1.0
            elif abs(frac - 1.0) < 1e-12:
                out[j + 1] = 1.0
            else:
                out[j] = 1.0 - frac
                out[j + 1] = frac
            return out
        w = np.asarray(self.weights, dtype=float)
        if w.size == n:
            return w / w.sum()
        # one weight per equal-width bin; spread each bin over the nodes it holds
        edges = np.linspace(x_nodes[0], x_nodes[-1], w.size + 1)
        owner = np.clip(np.searchsorted(edges, x_nodes, side="right") - 1, 0, w.size - 1)
        counts = np.bincount(owner, minlength=w.size)
        if np.any((counts == 0) & (w > 0)):
            raise ModelError("histogram has more bins than the state grid can resolve")
        out = w[owner] / np.maximum(counts[owner], 1)
        return out / out.sum()


def _zero_stat(t, y):
    return np.zeros((np.size(y), 1))


def _zero_terminal_stat(y):
    return np.zeros((np.size(y), 1))


@dataclass(frozen=True)
class MfgModel:
    """Coefficients, costs, domain and initial law of a mean-field game.

    Signatures (all vectorised over ``x`` and ``a``)::

        drift(t, x, z, a)          diffusion(t, x, z, a)   -> sigma
        jump(t, x, z, a)           intensity(t)            -> lambda(t) >= 0
        running_cost(t, x, z, a)   boundary_cost(t, x)     terminal_cost(x, z)
        *_stat(t, y) -> (len(y), n_stat)                   terminal_stat(y)
    """

    domain: StateDomain
    horizon: float
    drift: Coefficient
    diffusion: Coefficient
    jump: Coefficient
    intensity: Callable[[float], float]
    running_cost: Coefficient
    boundary_cost: Callable[[float, np.ndarray], np.ndarray]
    terminal_cost: Callable[[np.ndarray, np.ndarray], np.ndarray]
    initial_law: InitialLaw = field(default_factory=InitialLaw)
    drift_stat: Callable = _zero_stat
    diffusion_stat: Callable = _zero_stat
    jump_stat: Callable = _zero_stat
    cost_stat: Callable = _zero_stat
    terminal_stat: Callable = _zero_terminal_stat
    n_stat: int = 1
    name: str = "custom"

    def __post_init__(self):
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise ModelError(f"horizon must be positive, got {self.horizon}")
        if self.n_stat < 1:
            raise ModelError("n_stat must be at least 1")


@dataclass(frozen=True)
class InventoryParams:
    capacity: float = 1.0
    base_demand: float = 0.5
    competition: float = 0.3
    volatility: float = 0.05
    spoilage: float = 0.3
    production_cost: float = 1.0
    holding_cost: float = 0.1
    salvage_price: float = 0.5
    stockout_penalty: float = 1.0
    overflow_penalty: float = 1.0
    spoilage_rate: float = 0.5

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not np.isfinite(value) or value < 0:
                raise ModelError(f"inventory parameter {name} must be a nonnegative real, got {value}")
        if self.capacity <= 0 or self.production_cost <= 0:
            raise ModelError("capacity and production_cost must be positive")
        if not 0.0 < self.spoilage < 1.0:
            raise ModelError(f"spoilage fraction must lie in (0, 1), got {self.spoilage}")


def inventory_model(params: InventoryParams, horizon: float, initial_law: InitialLaw) -> MfgModel:
    """Inventory control of a representative firm under demand competition.

    The state is the inventory level on ``[0, U]``.  Demand falls with the mean
    inventory of the market, ``D = D0 - c * z``, so the only statistic is the
    population mean (``n_stat = 1``).  Spoilage events remove the fraction
    ``delta`` of the stock at rate ``lambda0``.
    """
    p = params
    U = p.capacity

    def drift(t, x, z, a):
        return np.asarray(a, dtype=float) - (p.base_demand - p.competition * z[0]) + 0.0 * np.asarray(x)

    def diffusion(t, x, z, a):
        return np.full(np.broadcast(np.asarray(x), np.asarray(a)).shape, p.volatility)

    def jump(t, x, z, a):
        return -p.spoilage * np.asarray(x, dtype=float) + 0.0 * np.asarray(a)

    def intensity(t):
        return p.spoilage_rate

    def running_cost(t, x, z, a):
        a = np.asarray(a, dtype=float)
        return 0.5 * p.production_cost * a**2 + p.holding_cost * np.asarray(x, dtype=float)

    def boundary_cost(t, x):
        x = np.asarray(x, dtype=float)
        return np.where(x <= 0.0, p.stockout_penalty, np.where(x >= U, p.overflow_penalty, 0.0))

    def terminal_cost(x, z):
        return -p.salvage_price * np.asarray(x, dtype=float)

    def mean_stat(t, y):
        return np.asarray(y, dtype=float).reshape(-1, 1)

    return MfgModel(
        domain=StateDomain.interval(0.0, U),
        horizon=horizon,
        drift=drift,
        diffusion=diffusion,
        jump=jump,
        intensity=intensity,
        running_cost=running_cost,
        boundary_cost=boundary_cost,
        terminal_cost=terminal_cost,
        initial_law=initial_law,
        drift_stat=mean_stat,
        n_stat=1,
        name="inventory",
    )


@dataclass(frozen=True)
class LinearParams:
    """Constant-coefficient family used by the diffusion/zero-dynamics presets.

    Dynamics ``dX = (drift + a) dt + sigma dW - spoilage X dN~``; costs
    ``f = state_cost x + 0.5 action_cost a^2``, ``h = boundary_cost_lo/hi``,
    ``g = terminal_linear x + terminal_quadratic x^2``.
    """

    lo: float = 0.0
    hi: float = 1.0
    drift: float = 0.0
    sigma: float = 0.0
    spoilage: float = 0.0
    jump_rate: float = 0.0
    state_cost: float = 0.0
    action_cost: float = 0.0
    boundary_cost_lo: float = 0.0
    boundary_cost_hi: float = 0.0
    terminal_linear: float = 0.0
    terminal_quadratic: float = 0.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not np.isfinite(value):
                raise ModelError(f"parameter {name} must be finite")
        if self.sigma < 0 or self.jump_rate < 0:
            raise ModelError("sigma and jump_rate must be nonnegative")
        if not 0.0 <= self.spoilage < 1.0:
            raise ModelError("spoilage must lie in [0, 1)")


def linear_model(params: LinearParams, horizon: float, initial_law: InitialLaw, name: str = "linear") -> MfgModel:
    """Flow-independent model with constant drift/volatility (no mean-field coupling)."""
    q = params
    lo, hi = q.lo, q.hi

    def drift(t, x, z, a):
        return q.drift + np.asarray(a, dtype=float) + 0.0 * np.asarray(x)

    def diffusion(t, x, z, a):
        return np.full(np.broadcast(np.asarray(x), np.asarray(a)).shape, q.sigma)

    def jump(t, x, z, a):
        # shrink toward lo by a fraction; stays inside [lo, hi]
        return -q.spoilage * (np.asarray(x, dtype=float) - lo) + 0.0 * np.asarray(a)

    def intensity(t):
        return q.jump_rate

    def running_cost(t, x, z, a):
        return q.state_cost * np.asarray(x, dtype=float) + 0.5 * q.action_cost * np.asarray(a, dtype=float) ** 2

    def boundary_cost(t, x):
        x = np.asarray(x, dtype=float)
        return np.where(x <= lo, q.boundary_cost_lo, np.where(x >= hi, q.boundary_cost_hi, 0.0))

    def terminal_cost(x, z):
        x = np.asarray(x, dtype=float)
        return q.terminal_linear * x + q.terminal_quadratic * x**2

    return MfgModel(
        domain=StateDomain.interval(lo, hi),
        horizon=horizon,
        drift=drift,
        diffusion=diffusion,
        jump=jump,
        intensity=intensity,
        running_cost=running_cost,
        boundary_cost=boundary_cost,
        terminal_cost=terminal_cost,
        initial_law=initial_law,
        name=name,
    )


@dataclass(frozen=True)
class CoefficientBounds:
    """Sup-norms over the validation samples."""

    drift: float
    diffusion: float  # sup of sigma sigma^T
    jump: float
    intensity: float


@dataclass(frozen=True)
class Violation:
    kind: str  # "jump_containment" | "intensity" | "boundedness"
    t: float
    x: float | None
    a: float | None
    value: float

    def __str__(self):
        where = f"t={self.t:.6g}"
        if self.x is not None:
            where += f", x={self.x:.6g}"
        if self.a is not None:
            where += f", a={self.a:.6g}"
        return f"{self.kind} at ({where}): {self.value:.6g}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]
    bounds: CoefficientBounds

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        if self.ok:
            return "model admissible"
        kinds = sorted({v.kind for v in self.violations})
        return f"{len(self.violations)} violation(s): {', '.join(kinds)}"


def statistic_samples(model: MfgModel, grid: DiscreteGrid, stat: Callable) -> np.ndarray:
    """Candidate statistic vectors: a 3-point lattice over the range of ``stat`` on the grid."""
    vals = np.stack([np.asarray(stat(t, grid.x_nodes), dtype=float).reshape(grid.x_nodes.size, -1)
                     for t in grid.t_nodes])
    vals = vals.reshape(-1, vals.shape[-1])
    lo, hi = vals.min(axis=0), vals.max(axis=0)
    axes = [np.unique([l, 0.5 * (l + h), h]) for l, h in zip(lo, hi)]
    return np.array(list(itertools.product(*axes)))


def _check_finite(values, name, t, x, a):
    bad = ~np.isfinite(values)
    if bad.any():
        idx = np.unravel_index(np.argmax(bad), bad.shape)
        xi = float(np.broadcast_to(x, values.shape)[idx])
        ai = float(np.broadcast_to(a, values.shape)[idx]) if a is not None else None
        raise ModelError(f"non-finite {name} at sample (t={t}, x={xi}, a={ai})")


def validate_model(model: MfgModel, grid: DiscreteGrid, bound_limit: float = 1e12) -> ValidationReport:
    """Sweep every grid sample (t_n, x_i, a_k) against the standing assumptions.

    Statistic vectors are sampled on a small lattice covering the range each
    statistic function takes on the grid, since the population law is not
    known at validation time.  Raises :class:`ModelError` on the first
    non-finite evaluation.
    """
    lo, hi = model.domain.lo[0], model.domain.hi[0]
    if abs(grid.x_nodes[0] - lo) > 1e-12 or abs(grid.x_nodes[-1] - hi) > 1e-12:
        raise ModelError("grid does not cover the model domain")
    x = grid.x_nodes[:, None]
    a = grid.a_nodes[None, :]
    span = hi - lo
    tol = _CONTAINMENT_TOL * max(1.0, span)
    violations: list[Violation] = []
    sup = dict(drift=0.0, diffusion=0.0, jump=0.0, intensity=0.0)

    zb = statistic_samples(model, grid, model.drift_stat)
    zs = statistic_samples(model, grid, model.diffusion_stat)
    zj = statistic_samples(model, grid, model.jump_stat)
    zf = statistic_samples(model, grid, model.cost_stat)
    zg = statistic_samples(model, grid, lambda t, y: model.terminal_stat(y))

    def flag_large(values, name, t):
        big = np.abs(values) > bound_limit
        for idx in zip(*np.nonzero(big)):
            violations.append(Violation("boundedness", t, float(grid.x_nodes[idx[0]]),
                                        float(grid.a_nodes[idx[1]]), float(values[idx])))

    for t in grid.t_nodes:
        t = float(t)
        lam = float(model.intensity(t))
        if not np.isfinite(lam):
            raise ModelError(f"non-finite intensity at sample (t={t})")
        if lam < 0:
            violations.append(Violation("intensity", t, None, None, lam))
        sup["intensity"] = max(sup["intensity"], abs(lam))
        for z in zb:
            b = np.broadcast_to(np.asarray(model.drift(t, x, z, a), dtype=float), (x.size, a.size))
            _check_finite(b, "drift", t, x, a)
            flag_large(b, "drift", t)
            sup["drift"] = max(sup["drift"], float(np.abs(b).max()))
        for z in zs:
            s = np.broadcast_to(np.asarray(model.diffusion(t, x, z, a), dtype=float), (x.size, a.size))
            _check_finite(s, "diffusion", t, x, a)
            flag_large(s, "diffusion", t)
            sup["diffusion"] = max(sup["diffusion"], float((s**2).max()))
        for z in zj:
            beta = np.broadcast_to(np.asarray(model.jump(t, x, z, a), dtype=float), (x.size, a.size))
            _check_finite(beta, "jump", t, x, a)
            sup["jump"] = max(sup["jump"], float(np.abs(beta).max()))
            dest = x + beta
            out = (dest < lo - tol) | (dest > hi + tol)
            for i, k in zip(*np.nonzero(out)):
                violations.append(Violation("jump_containment", t, float(grid.x_nodes[i]),
                                            float(grid.a_nodes[k]), float(dest[i, k])))
        for z in zf:
            f = np.broadcast_to(np.asarray(model.running_cost(t, x, z, a), dtype=float), (x.size, a.size))
            _check_finite(f, "running cost", t, x, a)
            flag_large(f, "running cost", t)
        hb = np.asarray(model.boundary_cost(t, grid.x_nodes[list(grid.boundary_index)]), dtype=float)
        if not np.isfinite(hb).all():
            raise ModelError(f"non-finite boundary cost at t={t}")
    for z in zg:
        g = np.asarray(model.terminal_cost(grid.x_nodes, z), dtype=float)
        _check_finite(g, "terminal cost", model.horizon, grid.x_nodes, None)
    seen, unique = set(), []
    for v in violations:
        key = (v.kind, v.t, v.x, v.a)
        if key not in seen:
            seen.add(key)
            unique.append(v)
    return ValidationReport(tuple(unique), CoefficientBounds(**sup))
