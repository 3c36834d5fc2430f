"""Uniform LP/QP solving contracts shared by every optimization consumer.

Linear programs go through scipy's HiGHS interface; quadratic programs go
through the Clarabel interior-point solver. Both are deterministic for a
fixed problem, and both report KKT residuals so callers can enforce the
contract rather than trust a status flag.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

import clarabel

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
FAILURE = "numerical-failure"


@dataclass(frozen=True)
class Tolerances:
    feas: float = 1e-8
    opt: float = 1e-8


def _dense(M) -> np.ndarray | None:
    if M is None:
        return None
    return np.atleast_2d(np.asarray(M, dtype=float))


@dataclass
class LinearProgram:
    """min c @ z  s.t.  a_eq z = b_eq, a_in z <= b_in, lb <= z <= ub."""

    c: np.ndarray
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    a_in: np.ndarray | None = None
    b_in: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        self.a_eq = _dense(self.a_eq)
        self.a_in = _dense(self.a_in)
        self.b_eq = None if self.b_eq is None else np.asarray(self.b_eq, dtype=float).ravel()
        self.b_in = None if self.b_in is None else np.asarray(self.b_in, dtype=float).ravel()
        nz = self.c.size
        for A, b, name in ((self.a_eq, self.b_eq, "eq"), (self.a_in, self.b_in, "in")):
            if (A is None) != (b is None):
                raise ValueError(f"{name} system needs both matrix and rhs")
            if A is not None and (A.shape[1] != nz or A.shape[0] != b.size):
                raise ValueError(f"{name} system dimensions inconsistent")

    def describe(self) -> str:
        neq = 0 if self.a_eq is None else self.a_eq.shape[0]
        nin = 0 if self.a_in is None else self.a_in.shape[0]
        return f"LP with {self.c.size} variables, {neq} equalities, {nin} inequalities"


@dataclass
class QuadraticProgram:
    """min 0.5 z' H z + f @ z  s.t.  a_eq z = b_eq, a_in z <= b_in.

    H must be symmetric positive semidefinite; sparse matrices are accepted
    for all blocks and are passed to the solver without densification.
    """

    H: object
    f: np.ndarray
    a_eq: object | None = None
    b_eq: np.ndarray | None = None
    a_in: object | None = None
    b_in: np.ndarray | None = None

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float).ravel()
        if not sparse.issparse(self.H):
            self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        nz = self.f.size
        if self.H.shape != (nz, nz):
            raise ValueError(f"H must be {nz}x{nz}, got {self.H.shape}")
        asym = abs(self.H - self.H.T)
        asym_max = asym.max() if not sparse.issparse(self.H) else (asym.max() if asym.nnz else 0.0)
        if asym_max > 1e-12:
            raise ValueError(f"H must be symmetric, asymmetry {asym_max:.2e}")
        if self.a_eq is not None and not sparse.issparse(self.a_eq):
            self.a_eq = _dense(self.a_eq)
        if self.a_in is not None and not sparse.issparse(self.a_in):
            self.a_in = _dense(self.a_in)
        self.b_eq = None if self.b_eq is None else np.asarray(self.b_eq, dtype=float).ravel()
        self.b_in = None if self.b_in is None else np.asarray(self.b_in, dtype=float).ravel()
        for A, b, name in ((self.a_eq, self.b_eq, "eq"), (self.a_in, self.b_in, "in")):
            if (A is None) != (b is None):
                raise ValueError(f"{name} system needs both matrix and rhs")
            if A is not None and (A.shape[1] != nz or A.shape[0] != b.size):
                raise ValueError(f"{name} system dimensions inconsistent")

    def describe(self) -> str:
        neq = 0 if self.a_eq is None else self.a_eq.shape[0]
        nin = 0 if self.a_in is None else self.a_in.shape[0]
        return f"QP with {self.f.size} variables, {neq} equalities, {nin} inequalities"


@dataclass
class SolveReport:
    """Outcome of one LP/QP solve, with enough residual data to audit it."""

    status: str
    x: np.ndarray | None
    objective: float
    primal_residual: float
    dual_residual: float
    iterations: int
    wall_time: float
    feas_tol: float
    opt_tol: float
    duals: dict = field(default_factory=dict)
    note: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def _primal_residual(problem, x: np.ndarray) -> float:
    r = 0.0
    if problem.a_eq is not None:
        r = max(r, float(np.abs(problem.a_eq @ x - problem.b_eq).max(initial=0.0)))
    if problem.a_in is not None:
        r = max(r, float(np.maximum(problem.a_in @ x - problem.b_in, 0.0).max(initial=0.0)))
    if isinstance(problem, LinearProgram):
        if problem.lb is not None:
            r = max(r, float(np.maximum(problem.lb - x, 0.0).max(initial=0.0)))
        if problem.ub is not None:
            r = max(r, float(np.maximum(x - problem.ub, 0.0).max(initial=0.0)))
    return r


def solve_lp(problem: LinearProgram, tolerances: Tolerances = Tolerances()) -> SolveReport:
    """Solve a linear program; never raises on solver trouble, reports status."""
    t0 = time.perf_counter()
    lb = np.full(problem.c.size, -np.inf) if problem.lb is None else np.asarray(problem.lb, float)
    ub = np.full(problem.c.size, np.inf) if problem.ub is None else np.asarray(problem.ub, float)
    res = linprog(
        problem.c,
        A_ub=problem.a_in,
        b_ub=problem.b_in,
        A_eq=problem.a_eq,
        b_eq=problem.b_eq,
        bounds=np.column_stack([lb, ub]),
        method="highs",
        options={"primal_feasibility_tolerance": min(tolerances.feas, 1e-9),
                 "dual_feasibility_tolerance": min(tolerances.opt, 1e-9)},
    )
    wall = time.perf_counter() - t0
    status = {0: OPTIMAL, 1: FAILURE, 2: INFEASIBLE, 3: UNBOUNDED, 4: FAILURE}[res.status]
    x = np.asarray(res.x, dtype=float) if res.x is not None else None
    if status != OPTIMAL or x is None:
        return SolveReport(status, x, float("nan"), float("nan"), float("nan"),
                           int(res.nit), wall, tolerances.feas, tolerances.opt,
                           note=res.message)
    # stationarity: c - A_in' m_in - A_eq' m_eq - m_bounds = 0 in HiGHS' convention
    grad = problem.c.copy()
    duals = {}
    if problem.a_in is not None:
        grad -= problem.a_in.T @ res.ineqlin.marginals
        duals["ineq"] = np.asarray(res.ineqlin.marginals, dtype=float)
    if problem.a_eq is not None:
        grad -= problem.a_eq.T @ res.eqlin.marginals
        duals["eq"] = np.asarray(res.eqlin.marginals, dtype=float)
    grad -= res.lower.marginals + res.upper.marginals
    duals["lower"] = np.asarray(res.lower.marginals, dtype=float)
    duals["upper"] = np.asarray(res.upper.marginals, dtype=float)
    return SolveReport(
        status=OPTIMAL,
        x=x,
        objective=float(res.fun),
        primal_residual=_primal_residual(problem, x),
        dual_residual=float(np.abs(grad).max(initial=0.0)),
        iterations=int(res.nit),
        wall_time=wall,
        feas_tol=tolerances.feas,
        opt_tol=tolerances.opt,
        duals=duals,
    )


def lp_duality_gap(problem: LinearProgram, report: SolveReport) -> float:
    """|primal - dual| objective gap for an optimal LP report."""
    dual = 0.0
    if "eq" in report.duals:
        dual += problem.b_eq @ report.duals["eq"]
    if "ineq" in report.duals:
        dual += problem.b_in @ report.duals["ineq"]
    lower = report.duals.get("lower")
    if lower is not None and problem.lb is not None:
        mask = np.isfinite(problem.lb)
        dual += problem.lb[mask] @ lower[mask]
    upper = report.duals.get("upper")
    if upper is not None and problem.ub is not None:
        mask = np.isfinite(problem.ub)
        dual += problem.ub[mask] @ upper[mask]
    return float(abs(report.objective - dual))


_CLARABEL_STATUS = {
    "Solved": OPTIMAL,
    "PrimalInfeasible": INFEASIBLE,
    "AlmostPrimalInfeasible": INFEASIBLE,
    "DualInfeasible": UNBOUNDED,
    "AlmostDualInfeasible": UNBOUNDED,
}


def _phase1_feasible(problem: QuadraticProgram, tol: float = 1e-7) -> bool:
    """Minimum constraint violation of the QP's feasible set, as an LP.

    Auxiliary variables absorb every violation: A_eq z + s+ - s- = b_eq with
    s >= 0, and A_in z - t <= b_in with t >= 0. A zero optimum means the
    constraint set is nonempty.
    """
    nv = problem.f.size
    neq = 0 if problem.b_eq is None else problem.b_eq.size
    nin = 0 if problem.b_in is None else problem.b_in.size
    n_aux = 2 * neq + nin
    scale = 1.0
    a_eq = b_eq = a_in = b_in = None
    if neq:
        a_eq = sparse.hstack([sparse.csc_matrix(problem.a_eq),
                              sparse.eye(neq), -sparse.eye(neq),
                              sparse.csc_matrix((neq, nin))], format="csc")
        b_eq = problem.b_eq
        scale = max(scale, float(np.abs(b_eq).max(initial=0.0)))
    if nin:
        a_in = sparse.hstack([sparse.csc_matrix(problem.a_in),
                              sparse.csc_matrix((nin, 2 * neq)),
                              -sparse.eye(nin)], format="csc")
        b_in = problem.b_in
        scale = max(scale, float(np.abs(b_in).max(initial=0.0)))
    c = np.concatenate([np.zeros(nv), np.ones(n_aux)])
    lb = np.concatenate([np.full(nv, -np.inf), np.zeros(n_aux)])
    res = linprog(c, A_eq=a_eq, b_eq=b_eq, A_ub=a_in, b_ub=b_in,
                  bounds=np.column_stack([lb, np.full_like(lb, np.inf)]),
                  method="highs")
    if res.status != 0:
        return True  # cannot certify infeasibility, assume solvable
    return res.fun <= tol * scale


def solve_qp(problem: QuadraticProgram, tolerances: Tolerances = Tolerances()) -> SolveReport:
    """Solve a convex QP with Clarabel; strictly convex problems return the unique minimizer."""
    t0 = time.perf_counter()
    nz = problem.f.size
    blocks, rhs, cones = [], [], []
    neq = 0
    if problem.a_eq is not None:
        blocks.append(sparse.csc_matrix(problem.a_eq))
        rhs.append(problem.b_eq)
        neq = problem.b_eq.size
        cones.append(clarabel.ZeroConeT(neq))
    if problem.a_in is not None:
        blocks.append(sparse.csc_matrix(problem.a_in))
        rhs.append(problem.b_in)
        cones.append(clarabel.NonnegativeConeT(problem.b_in.size))
    if blocks:
        A = sparse.vstack(blocks, format="csc")
        b = np.concatenate(rhs)
    else:
        A = sparse.csc_matrix((0, nz))
        b = np.zeros(0)
    P = sparse.triu(sparse.csc_matrix(problem.H), format="csc")
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_feas = max(tolerances.feas * 0.1, 1e-12)
    settings.tol_gap_abs = max(tolerances.opt * 0.1, 1e-12)
    settings.tol_gap_rel = max(tolerances.opt * 0.1, 1e-12)
    solver = clarabel.DefaultSolver(P, problem.f, A, b, cones, settings)
    sol = solver.solve()
    wall = time.perf_counter() - t0
    status = _CLARABEL_STATUS.get(str(sol.status), FAILURE)
    if status == FAILURE and not _phase1_feasible(problem):
        # ambiguous stall: a phase-1 problem distinguishes infeasible from stuck
        status = INFEASIBLE
    if status != OPTIMAL:
        return SolveReport(status, None, float("nan"), float("nan"), float("nan"),
                           int(sol.iterations), wall, tolerances.feas, tolerances.opt,
                           note=str(sol.status))
    x = np.asarray(sol.x, dtype=float)
    return SolveReport(
        status=OPTIMAL,
        x=x,
        objective=float(sol.obj_val),
        primal_residual=_primal_residual(problem, x),
        dual_residual=float(sol.r_dual),
        iterations=int(sol.iterations),
        wall_time=wall,
        feas_tol=tolerances.feas,
        opt_tol=tolerances.opt,
        duals={"z": np.asarray(sol.z, dtype=float), "n_eq": neq},
    )


def pseudoinverse(matrix) -> np.ndarray:
    """Moore-Penrose inverse; satisfies the four Penrose identities to 1e-8."""
    return np.linalg.pinv(np.asarray(matrix, dtype=float))


def induced_one_norm(matrix) -> float:
    """Induced 1-norm: maximum absolute column sum."""
    M = np.asarray(matrix, dtype=float)
    if M.size == 0:
        return 0.0
    return float(np.abs(M).sum(axis=0).max())


def induced_inf_norm(matrix) -> float:
    """Induced inf-norm: maximum absolute row sum."""
    M = np.asarray(matrix, dtype=float)
    if M.size == 0:
        return 0.0
    return float(np.abs(M).sum(axis=1).max())


def dump_problem(problem, path: str) -> None:
    """Write a plain-text description of a failed problem for offline debugging."""
    with open(path, "w") as fh:
        fh.write(problem.describe() + "\n")
        for name in ("c", "f", "b_eq", "b_in", "lb", "ub"):
            v = getattr(problem, name, None)
            if v is not None:
                fh.write(f"{name}: shape={np.shape(v)} inf_norm={np.abs(v).max():.6e}\n")
        for name in ("H", "a_eq", "a_in"):
            M = getattr(problem, name, None)
            if M is not None:
                nnz = M.nnz if sparse.issparse(M) else int(np.count_nonzero(M))
                fh.write(f"{name}: shape={M.shape} nnz={nnz}\n")
