"""Occupation-measure linear program for a frozen mean-field flow.

Variables, all nonnegative, in this order::

    nu[i]            terminal law                      (M+1)
    m[n, i, k]       time-state-action occupation      (N, M+1, K+1), C order
    lambda_b[n, j]   boundary measure per cell/face    (N, 2)
    rho[n, i]        state marginals, n = 1..N         (N, M+1)

Rows:

    forward   rho[n+1] - rho[n] - sum_k G[n,k]^T m[n,:,k] - B^T lambda_b[n] = 0
    coupling  sum_k m[n,i,k] - dt rho[n,i] = 0
    terminal  nu - rho[N] = 0
    boundary  lambda_b[n,j] - sum_{r,k} kappa[n,j,r,k] m[n,q_jr,k] = 0

with ``rho[0] = m0`` moved to the right-hand side and ``q_j0``, ``q_j1`` the
wall node of face ``j`` and its neighbour.  The boundary rows tie the
boundary measure to the flux pushed through each face; without them the
measure could hold mass at a face indefinitely.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from lpmfg import simplex
from lpmfg.generator import FlowStats, GeneratorTensors, boundary_mass, flux_nodes
from lpmfg.grid import DiscreteGrid, cfl_report
from lpmfg.measures import MASS_TOL, ControlKernel, OccupationTriple, extract_kernel
from lpmfg.model import CoefficientBounds, MfgModel


class LpError(RuntimeError):
    pass


class CflRefusal(LpError):
    pass


class InfeasibleLp(LpError):
    def __init__(self, message, worst_row=None):
        super().__init__(message)
        self.worst_row = worst_row


ROW_KINDS = ("forward", "coupling", "terminal", "boundary")


@dataclass(frozen=True, eq=False)
class LpProblem:
    A: sp.csr_matrix
    b: np.ndarray
    c: np.ndarray
    grid: DiscreteGrid
    m0: np.ndarray
    offsets: dict  # block name -> (start, stop) in the variable vector
    row_offsets: dict  # row kind -> (start, stop)
    tensors: GeneratorTensors
    cfl: float = float("nan")

    @property
    def n_vars(self) -> int:
        return self.A.shape[1]

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    def block(self, x: np.ndarray, name: str) -> np.ndarray:
        N, M, K = self.grid.shape
        lo, hi = self.offsets[name]
        shape = {"nu": (M + 1,), "m": (N, M + 1, K + 1), "lambda_b": (N, 2), "rho": (N, M + 1)}[name]
        return np.asarray(x[lo:hi]).reshape(shape)

    def row_label(self, r: int) -> tuple:
        """``(kind, n, i)`` for forward/coupling/boundary rows, ``(kind, i)`` for terminal rows."""
        M = self.grid.M
        for kind in ROW_KINDS:
            lo, hi = self.row_offsets[kind]
            if lo <= r < hi:
                q = r - lo
                if kind == "terminal":
                    return (kind, q)
                if kind == "boundary":
                    return (kind, q // 2, self.grid.boundary_index[q % 2])
                if kind == "forward":
                    return (kind, q // (M + 1) + 1, q % (M + 1))
                return (kind, q // (M + 1), q % (M + 1))
        raise IndexError(r)

    def pack(self, triple: OccupationTriple) -> np.ndarray:
        """Variable vector of a triple; ``rho`` is taken from its state marginals."""
        N, M, K = self.grid.shape
        rho = np.empty((N, M + 1))
        rho[:-1] = triple.m[1:].sum(axis=2) / self.grid.dt
        rho[-1] = triple.nu
        return np.concatenate([triple.nu, triple.m.ravel(), triple.lambda_b.ravel(), rho.ravel()])

    def residual(self, x: np.ndarray) -> tuple[float, tuple]:
        """Largest absolute constraint violation and the row that attains it."""
        r = np.abs(self.A @ x - self.b)
        worst = int(np.argmax(r))
        return float(r[worst]), self.row_label(worst)


def cost_vectors(model: MfgModel, grid: DiscreteGrid, stats: FlowStats):
    """Running cost on (n, i, k), boundary cost on (n, j) and terminal cost on i."""
    N, M, K = grid.shape
    x = grid.x_nodes[:, None]
    a = grid.a_nodes[None, :]
    bx = grid.x_nodes[list(grid.boundary_index)]
    f = np.empty((N, M + 1, K + 1))
    h = np.empty((N, len(grid.boundary_index)))
    for n in range(N):
        t = float(grid.t_nodes[n])
        f[n] = np.broadcast_to(np.asarray(model.running_cost(t, x, stats.cost[n], a), dtype=float), (M + 1, K + 1))
        h[n] = np.broadcast_to(np.asarray(model.boundary_cost(t, bx), dtype=float), bx.shape)
    g = np.broadcast_to(np.asarray(model.terminal_cost(grid.x_nodes, stats.terminal), dtype=float), (M + 1,))
    return f, h, np.array(g)


def assemble_lp(model: MfgModel, grid: DiscreteGrid, tensors: GeneratorTensors, stats: FlowStats,
                override_cfl: bool = False) -> LpProblem:
    N, M, K = grid.shape
    if len(grid.boundary_index) != 2 or len(tensors.G) != N or len(tensors.G[0]) != K + 1:
        raise LpError("generator tensors do not match the grid")
    cfl = cfl_report(model, grid, stats, warn=not override_cfl)
    if not cfl.stable and not override_cfl:
        raise CflRefusal(f"{cfl}; refine the time grid or pass override_cfl")
    S = M + 1
    dt = grid.dt
    n_nu, n_m, n_lb, n_rho = S, N * S * (K + 1), 2 * N, N * S
    o_nu, o_m = 0, S
    o_lb = o_m + n_m
    o_rho = o_lb + n_lb
    n_vars = o_rho + n_rho

    def m_col(n, i, k):
        return o_m + (n * S + i) * (K + 1) + k

    nodes = np.arange(S)
    blocks_r, blocks_c, blocks_v = [], [], []

    def put(r, c, v):
        blocks_r.append(np.asarray(r, dtype=np.int64).ravel())
        blocks_c.append(np.asarray(c, dtype=np.int64).ravel())
        blocks_v.append(np.broadcast_to(np.asarray(v, dtype=float), np.shape(r)).ravel())

    m0 = np.asarray(model.initial_law.on_grid(grid.x_nodes), dtype=float)
    r_fwd, r_cpl = 0, N * S
    r_term = r_cpl + N * S
    r_bnd = r_term + S
    n_rows = r_bnd + 2 * N
    rhs = np.zeros(n_rows)
    Bt = tensors.B.T.tocoo()
    fnodes = flux_nodes(grid)

    for n in range(N):
        rows = r_fwd + n * S + nodes
        # rho[n+1] - rho[n]
        put(rows, o_rho + n * S + nodes, 1.0)
        if n == 0:
            rhs[rows] = m0
        else:
            put(rows, o_rho + (n - 1) * S + nodes, -1.0)
        # - G^T m: entry G[i', i] couples row i with m[n, i', k]
        for k in range(K + 1):
            Gt = tensors.G[n][k].T.tocoo()
            put(r_fwd + n * S + Gt.row, m_col(n, Gt.col, k), -Gt.data)
        # - B^T lambda_b
        put(r_fwd + n * S + Bt.row, o_lb + 2 * n + Bt.col, -Bt.data)

        # coupling
        rows = r_cpl + n * S + nodes
        for k in range(K + 1):
            put(rows, m_col(n, nodes, k), 1.0)
        if n == 0:
            rhs[rows] = dt * m0
        else:
            put(rows, o_rho + (n - 1) * S + nodes, -dt)

        # boundary identification
        for j in range(2):
            r = r_bnd + 2 * n + j
            put([r], [o_lb + 2 * n + j], 1.0)
            for q, node in enumerate(fnodes[j]):
                for k in range(K + 1):
                    put([r], [m_col(n, node, k)], -tensors.kappa[n, j, q, k])

    put(r_term + nodes, o_nu + nodes, 1.0)
    put(r_term + nodes, o_rho + (N - 1) * S + nodes, -1.0)

    A = sp.csr_matrix((np.concatenate(blocks_v), (np.concatenate(blocks_r), np.concatenate(blocks_c))),
                      shape=(n_rows, n_vars))
    A.eliminate_zeros()
    f, h, g = cost_vectors(model, grid, stats)
    c = np.concatenate([g, f.ravel(), h.ravel(), np.zeros(n_rho)])
    offsets = {"nu": (o_nu, o_nu + n_nu), "m": (o_m, o_m + n_m), "lambda_b": (o_lb, o_lb + n_lb),
               "rho": (o_rho, o_rho + n_rho)}
    row_offsets = {"forward": (r_fwd, r_cpl), "coupling": (r_cpl, r_term), "terminal": (r_term, r_bnd),
                   "boundary": (r_bnd, n_rows)}
    return LpProblem(A, rhs, c, grid, m0, offsets, row_offsets, tensors, cfl.number)


@dataclass
class SolverOptions:
    backend: str = "highs"  # "highs" | "simplex"
    tolerance: float = 1e-10
    max_iter: int = 1_000_000
    simplex_cap: int = 3000  # dual simplex iterations before switching to interior point


@dataclass
class LpSolution:
    triple: OccupationTriple
    objective: float
    rho: np.ndarray  # (N+1, M+1) including rho[0] = m0
    stats: dict = field(default_factory=dict)
    raw: OccupationTriple | None = None  # solver output before polishing


def _first_action_basis(problem: LpProblem) -> np.ndarray:
    """Columns of the policy that always plays the first action.

    With one action per cell the constraint matrix is square, so these columns
    form a basis whose primal solution is that policy's occupation triple.
    """
    grid = problem.grid
    cols = [np.arange(*problem.offsets[name]) for name in ("nu", "lambda_b", "rho")]
    lo, _ = problem.offsets["m"]
    cols.append(lo + np.arange(grid.N * (grid.M + 1)) * (grid.K + 1))
    return np.sort(np.concatenate(cols))


def _run_backend(problem: LpProblem, c, A, b, opts: SolverOptions):
    if opts.backend == "highs":
        # dual simplex is fastest on most flows but occasionally stalls on
        # degenerate vertices; interior point with crossover is the fallback
        tol = {"primal_feasibility_tolerance": opts.tolerance, "dual_feasibility_tolerance": opts.tolerance}
        res = linprog(c, A_eq=A, b_eq=b, bounds=(0, None), method="highs-ds",
                      options={**tol, "maxiter": min(opts.simplex_cap, opts.max_iter)})
        nit = int(getattr(res, "nit", 0))
        if res.status == 1:
            res = linprog(c, A_eq=A, b_eq=b, bounds=(0, None), method="highs-ipm",
                          options={**tol, "maxiter": opts.max_iter})
            nit += int(getattr(res, "nit", 0))
        status = {0: "optimal", 1: "iteration_limit", 2: "infeasible", 3: "unbounded"}.get(res.status, "error")
        x = res.x if res.x is not None else np.zeros(A.shape[1])
        return x, status, nit, res.message
    if opts.backend == "simplex":
        try:
            res = simplex.solve(c, A, b, tol=opts.tolerance, max_iter=opts.max_iter,
                                basis=_first_action_basis(problem) if A is problem.A else None)
        except simplex.SimplexError as exc:
            raise LpError(f"embedded simplex failed: {exc}") from exc
        return res.x, res.status, res.iterations, res.status
    raise LpError(f"unknown LP backend {opts.backend!r}")


def diagnose_infeasibility(problem: LpProblem, opts: SolverOptions) -> tuple:
    """Coupling row with the largest violation in the least-violation (elastic) relaxation."""
    lo, hi = problem.row_offsets["coupling"]
    n_c = hi - lo
    E = sp.csr_matrix((np.concatenate([np.ones(n_c), -np.ones(n_c)]),
                       (np.concatenate([np.arange(lo, hi)] * 2), np.arange(2 * n_c))),
                      shape=(problem.n_rows, 2 * n_c))
    A = sp.hstack([problem.A, E], format="csr")
    c = np.concatenate([np.zeros(problem.n_vars), np.ones(2 * n_c)])
    x, status, _, _ = _run_backend(problem, c, A, problem.b, opts)
    if status != "optimal":
        return None
    slack = x[problem.n_vars:problem.n_vars + n_c] + x[problem.n_vars + n_c:]
    return problem.row_label(lo + int(np.argmax(slack)))


def polish(problem: LpProblem, triple: OccupationTriple) -> tuple[OccupationTriple, np.ndarray]:
    """Re-derive ``triple`` from its control kernel by exact forward recursion.

    The forward rows determine an occupation triple from its kernel, so this
    removes the solver's feasibility error (which dividing by ``dt`` to form
    marginals would otherwise amplify) while moving the objective only by
    that error.
    """
    kernel = extract_kernel(triple, problem.grid)
    return policy_occupation(problem.tensors, problem.grid, problem.m0, kernel)


def solve_lp(problem: LpProblem, opts: SolverOptions | None = None) -> LpSolution:
    opts = opts or SolverOptions()
    grid = problem.grid
    start = time.perf_counter()
    x, status, nit, message = _run_backend(problem, problem.c, problem.A, problem.b, opts)
    elapsed = time.perf_counter() - start
    if status == "infeasible":
        worst = diagnose_infeasibility(problem, opts)
        raise InfeasibleLp(f"occupation LP infeasible; most violated coupling row {worst}", worst)
    if status == "unbounded":
        raise LpError("occupation LP reported unbounded; costs are bounded, so this is an assembly bug")
    if status != "optimal":
        raise LpError(f"LP solver stopped without an optimum: {message}")
    x = np.where((x < 0) & (x > -MASS_TOL), 0.0, x)
    raw_viol, row = problem.residual(x)
    if raw_viol > 1e3 * max(opts.tolerance, 1e-12):
        raise LpError(f"solver returned a point violating row {row} by {raw_viol:.3g}")
    raw = OccupationTriple(problem.block(x, "nu"), problem.block(x, "m"), problem.block(x, "lambda_b"))
    triple, rho = polish(problem, raw)
    xp = problem.pack(triple)
    viol, row = problem.residual(xp)
    problems = triple.check(grid)
    if problems or viol > MASS_TOL:
        raise LpError("solved triple violates occupation invariants: "
                      + "; ".join(problems + [f"row {row} off by {viol:.3g}"]))
    return LpSolution(triple, float(problem.c @ xp), rho,
                      {"backend": opts.backend, "iterations": nit, "seconds": elapsed,
                       "solver_objective": float(problem.c @ x), "solver_residual": raw_viol,
                       "max_residual": viol, "n_vars": problem.n_vars, "n_rows": problem.n_rows,
                       "nnz": int(problem.A.nnz)}, raw)


def lp_cost(triple: OccupationTriple, model: MfgModel, grid: DiscreteGrid, stats: FlowStats) -> float:
    """``sum f m + sum h lambda_b + sum g nu`` for an arbitrary triple."""
    f, h, g = cost_vectors(model, grid, stats)
    return float((f * triple.m).sum() + (h * triple.lambda_b).sum() + g @ triple.nu)


def boundary_mass_bound(bounds: CoefficientBounds, grid: DiscreteGrid) -> float:
    """Upper bound on the total boundary mass of any feasible triple.

    Tests the constraints with ``phi(x) = (x - lo)(hi - x)/L``: its inward
    one-sided difference at both faces is ``1 - dx/L``, ``max phi = L/4`` and
    the discrete generator applied to it is bounded by
    ``|b| + 2 lam |beta| + sup sigma^2 / L`` (upwind differences of a concave
    quadratic never exceed its slope bound 1, linear interpolation of the jump
    loses at most ``|beta|``).
    """
    L = grid.hi - grid.lo
    rate = bounds.drift + 2.0 * bounds.intensity * bounds.jump + bounds.diffusion / L
    return (L / 4.0 + grid.T * rate) / (1.0 - grid.dx / L)


def policy_occupation(tensors: GeneratorTensors, grid: DiscreteGrid, m0: np.ndarray,
                      kernel: ControlKernel) -> tuple[OccupationTriple, np.ndarray]:
    """Occupation triple of the Markov chain driven by ``kernel``, by explicit forward recursion.

    ``rho[n+1] = rho[n] + sum_k G[n,k]^T m[n,:,k] + B^T lambda_b[n]`` with
    ``m[n,i,k] = dt rho[n,i] v[n,i,k]`` and the boundary measure equal to the
    face flux.  Returns the triple and ``rho`` (N+1, M+1).
    """
    N, M, K = grid.shape
    v = np.asarray(kernel.v)
    rho = np.empty((N + 1, M + 1))
    rho[0] = m0
    m = np.empty((N, M + 1, K + 1))
    lam_b = np.empty((N, len(grid.boundary_index)))
    Bt = tensors.B.T.tocsr()
    fnodes = flux_nodes(grid)
    for n in range(N):
        m[n] = grid.dt * rho[n][:, None] * v[n]
        lam_b[n] = boundary_mass(tensors.kappa[n], m[n], fnodes)
        nxt = rho[n] + Bt @ lam_b[n]
        for k in range(K + 1):
            nxt = nxt + tensors.G[n][k].T @ m[n, :, k]
        rho[n + 1] = nxt
    return OccupationTriple(rho[-1].copy(), m, lam_b), rho


def write_mps(problem: LpProblem, path) -> None:
    """Free-format MPS dump (equality rows, default nonnegative bounds)."""
    A = problem.A.tocsc()
    with open(path, "w") as fh:
        fh.write("NAME occupation_lp\nROWS\n N COST\n")
        for r in range(problem.n_rows):
            fh.write(f" E R{r}\n")
        fh.write("COLUMNS\n")
        for j in range(problem.n_vars):
            if problem.c[j] != 0.0:
                fh.write(f" X{j} COST {problem.c[j]:.17g}\n")
            for p in range(A.indptr[j], A.indptr[j + 1]):
                fh.write(f" X{j} R{A.indices[p]} {A.data[p]:.17g}\n")
        fh.write("RHS\n")
        for r in np.flatnonzero(problem.b):
            fh.write(f" RHS R{r} {problem.b[r]:.17g}\n")
        fh.write("ENDATA\n")
