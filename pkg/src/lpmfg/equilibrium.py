"""Damped fixed-point iteration on the mean-field flow.

Each iteration freezes the flow, solves the occupation LP (the agent's best
response, a cost minimisation) and relaxes the flow towards the state
marginals of that response.  Exploitability at iteration ``j`` is the cost
gap, under flow ``j``, between the policy of the previous best response and
the new optimum; it measures how much an agent still gains by re-optimising.

When two consecutive best responses induce the same marginals, the loop
also tries the undamped point ``flow = marginals`` directly ("probe"); this
lands exactly on the fixed point whenever the best response no longer moves,
for instance when the dynamics and costs do not depend on the flow.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from lpmfg.generator import (FlowStats, GeneratorTensors, assemble_generator, boundary_operator, flow_stats,
                             flux_nodes, slice_from_law)
from lpmfg.grid import DiscreteGrid, jump_stencil
from lpmfg.lp import (LpError, SolverOptions, assemble_lp, lp_cost, policy_occupation, solve_lp)
from lpmfg.measures import (ControlKernel, MeanFieldFlow, OccupationTriple, extract_kernel,
                            marginal_flow)
from lpmfg.model import MfgModel

__all__ = ["FixedPointParams", "BestResponse", "IterationRecord", "EquilibriumReport", "EquilibriumError",
           "InfeasibleCandidate", "best_response", "marginal_flow", "exploitability", "solve_equilibrium",
           "uncontrolled_rollforward", "initial_flow"]

INITIAL_FLOWS = ("frozen-m0", "uncontrolled-rollforward")


class EquilibriumError(RuntimeError):
    pass


class InfeasibleCandidate(ValueError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


@dataclass(frozen=True)
class FixedPointParams:
    damping: float = 0.5
    max_iters: int = 200
    flow_tolerance: float = 1e-6
    exploitability_tolerance: float = 1e-6
    initial_flow: str = "uncontrolled-rollforward"
    probe: bool = True
    solver: SolverOptions = field(default_factory=SolverOptions)
    override_cfl: bool = False

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise ValueError(f"damping must lie in (0, 1], got {self.damping}")
        if self.flow_tolerance <= 0 or self.exploitability_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError(f"max_iters must be a positive integer, got {self.max_iters}")
        if self.initial_flow not in INITIAL_FLOWS:
            raise ValueError(f"initial_flow must be one of {INITIAL_FLOWS}, got {self.initial_flow!r}")


@dataclass(frozen=True, eq=False)
class BestResponse:
    triple: OccupationTriple
    cost: float
    flow: MeanFieldFlow  # the frozen flow it answers
    stats: FlowStats
    tensors: GeneratorTensors
    lp_stats: dict


def _frozen_operators(model, grid, flow, override_cfl=False):
    stats = flow_stats(model, grid, flow)
    stencil = jump_stencil(model, grid, stats)
    return stats, assemble_generator(model, grid, stats, stencil)


def best_response(model: MfgModel, grid: DiscreteGrid, flow: MeanFieldFlow,
                  solver: SolverOptions | None = None, override_cfl: bool = False) -> BestResponse:
    """Cost-minimising occupation triple against the frozen ``flow``."""
    stats, tensors = _frozen_operators(model, grid, flow)
    problem = assemble_lp(model, grid, tensors, stats, override_cfl=override_cfl)
    sol = solve_lp(problem, solver)
    return BestResponse(sol.triple, sol.objective, flow, stats, tensors, sol.stats)


def _rollout(br: BestResponse, kernel: ControlKernel, model, grid) -> OccupationTriple:
    m0 = model.initial_law.on_grid(grid.x_nodes)
    triple, _ = policy_occupation(br.tensors, grid, m0, kernel)
    return triple


def exploitability(model: MfgModel, grid: DiscreteGrid, flow: MeanFieldFlow, candidate: OccupationTriple,
                   solver: SolverOptions | None = None, override_cfl: bool = False,
                   feasibility_tol: float = 1e-7) -> float:
    """``lp_cost(candidate) - min`` over the occupation LP of ``flow``."""
    stats, tensors = _frozen_operators(model, grid, flow)
    problem = assemble_lp(model, grid, tensors, stats, override_cfl=override_cfl)
    viol, row = problem.residual(problem.pack(candidate))
    if viol > feasibility_tol or candidate.m.min() < -feasibility_tol or candidate.nu.min() < -feasibility_tol:
        raise InfeasibleCandidate(f"candidate violates row {row} by {viol:.3g}", row)
    best = solve_lp(problem, solver).objective
    return lp_cost(candidate, model, grid, stats) - best


def uncontrolled_rollforward(model: MfgModel, grid: DiscreteGrid, action: int = 0) -> MeanFieldFlow:
    """Self-consistent forward chain when every agent plays action node ``action``.

    The statistics at step ``n`` are computed from the chain's own law at
    ``n``, so the result is the flow of the population under that policy.
    """
    rho = np.empty((grid.N + 1, grid.M + 1))
    rho[0] = model.initial_law.on_grid(grid.x_nodes)
    Bt = boundary_operator(grid).T.tocsr()
    fnodes = flux_nodes(grid)
    for n in range(grid.N):
        G, _, kappa = slice_from_law(model, grid, n, rho[n])
        occ = grid.dt * rho[n]
        rho[n + 1] = rho[n] + G[action].T @ occ + Bt @ (kappa[:, :, action] * occ[fnodes]).sum(axis=1)
    rho[np.abs(rho) < 1e-300] = 0.0
    return MeanFieldFlow(rho)


def initial_flow(model: MfgModel, grid: DiscreteGrid, choice: str) -> MeanFieldFlow:
    if choice == "frozen-m0":
        return MeanFieldFlow.constant(model.initial_law.on_grid(grid.x_nodes), grid.N)
    if choice == "uncontrolled-rollforward":
        return uncontrolled_rollforward(model, grid)
    raise ValueError(f"unknown initial flow {choice!r}")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    residual: float
    exploitability: float
    cost: float
    probe: bool = False


@dataclass(frozen=True, eq=False)
class EquilibriumReport:
    flow: MeanFieldFlow
    triple: OccupationTriple
    cost: float
    residual: float
    exploitability: float
    trace: tuple[IterationRecord, ...]
    converged: bool
    iterations: int
    seconds: float
    params: FixedPointParams
    lp_stats: dict = field(default_factory=dict)


def _certify(model, grid, flow, prev_kernel, params):
    """Best response to ``flow``, its consistency residual and exploitability of ``prev_kernel``."""
    br = best_response(model, grid, flow, params.solver, params.override_cfl)
    marg = marginal_flow(br.triple, grid)
    residual = flow.sup_tv(marg)
    kernel = prev_kernel if prev_kernel is not None else extract_kernel(br.triple, grid)
    candidate = _rollout(br, kernel, model, grid)
    expl = lp_cost(candidate, model, grid, br.stats) - br.cost
    return br, marg, residual, expl


def solve_equilibrium(model: MfgModel, grid: DiscreteGrid, params: FixedPointParams | None = None) -> EquilibriumReport:
    params = params or FixedPointParams()
    start = time.perf_counter()
    flow = initial_flow(model, grid, params.initial_flow)
    trace: list[IterationRecord] = []
    prev_kernel = None
    prev_marg = None
    best = None
    for j in range(1, params.max_iters + 1):
        try:
            br, marg, residual, expl = _certify(model, grid, flow, prev_kernel, params)
        except LpError as exc:
            raise EquilibriumError(f"iteration {j}: {exc}") from exc
        trace.append(IterationRecord(j, residual, expl, br.cost))
        best = (flow, br, residual, expl)
        if residual <= params.flow_tolerance and expl <= params.exploitability_tolerance:
            return _report(best, trace, True, j, start, params)
        kernel = extract_kernel(br.triple, grid)
        if params.probe and prev_marg is not None and marg.sup_tv(prev_marg) <= params.flow_tolerance:
            try:
                pbr, pmarg, presidual, pexpl = _certify(model, grid, marg, kernel, params)
            except LpError as exc:
                raise EquilibriumError(f"iteration {j} (probe): {exc}") from exc
            trace.append(IterationRecord(j, presidual, pexpl, pbr.cost, probe=True))
            if presidual <= params.flow_tolerance and pexpl <= params.exploitability_tolerance:
                return _report((marg, pbr, presidual, pexpl), trace, True, j, start, params)
        prev_kernel, prev_marg = kernel, marg
        flow = flow.mix(marg, params.damping)
    return _report(best, trace, False, params.max_iters, start, params)


def _report(best, trace, converged, iterations, start, params):
    flow, br, residual, expl = best
    return EquilibriumReport(flow, br.triple, br.cost, residual, expl, tuple(trace), converged, iterations,
                             time.perf_counter() - start, params, br.lp_stats)
