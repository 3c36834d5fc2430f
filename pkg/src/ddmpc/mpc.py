"""Robust data-driven MPC: tightened QP assembly and n-step receding horizon.

The optimizer plans over a window of n past steps plus L future steps. All
future trajectories are parametrized by a column-weight vector through the
Hankel matrices of one noisy data record; a slack vector keeps the noisy
output equality feasible. Output constraints are tightened with the
coefficient arrays from `tightening`, entering through shared epigraph
variables for the relevant norms. The controller applies the first n
planned inputs before re-solving.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse

from .hankel import DataRecord, hankel
from .solvers import QuadraticProgram, SolveReport, Tolerances, solve_qp
from .tightening import TighteningCoefficients

ALPHA_RIDGE = 1e-10  # tie-break when the noise-scaled regularizer vanishes


class InfeasibleTighteningError(RuntimeError):
    """The constant tightening offsets already exceed the output bound."""


class InfeasibleStepError(RuntimeError):
    """One receding-horizon step has no feasible plan."""

    def __init__(self, report: SolveReport):
        super().__init__(f"optimizer reported {report.status}")
        self.report = report


@dataclass(frozen=True)
class QuadraticStageCost:
    """Per-step cost ||u - u_sp||_R^2 + ||y - y_sp||_Q^2 with R, Q positive definite."""

    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Q", np.atleast_2d(np.asarray(self.Q, dtype=float)))
        object.__setattr__(self, "R", np.atleast_2d(np.asarray(self.R, dtype=float)))
        for name, M in (("Q", self.Q), ("R", self.R)):
            if np.abs(M - M.T).max() > 1e-12 or np.linalg.eigvalsh(M).min() <= 0:
                raise ValueError(f"{name} must be symmetric positive definite")


@dataclass(frozen=True)
class LinearStageCost:
    """Per-step cost c_u @ u + c_y @ y."""

    c_u: np.ndarray
    c_y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "c_u", np.atleast_1d(np.asarray(self.c_u, dtype=float)))
        object.__setattr__(self, "c_y", np.atleast_1d(np.asarray(self.c_y, dtype=float)))


@dataclass(frozen=True)
class MpcConfig:
    """Everything one receding-horizon optimizer instance needs to know."""

    horizon: int
    order: int
    noise_bound: float
    lambda_alpha: float
    lambda_sigma: float
    stage_cost: object
    u_lo: np.ndarray
    u_hi: np.ndarray
    y_max: float
    u_setpoint: np.ndarray
    y_setpoint: np.ndarray

    def __post_init__(self):
        for name in ("u_lo", "u_hi", "u_setpoint", "y_setpoint"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if self.horizon < 2 * self.order:
            raise ValueError(f"horizon {self.horizon} must be at least twice the order {self.order}")
        if not self.y_max > 0:
            raise ValueError("y_max must be positive")
        if np.any(self.u_setpoint <= self.u_lo) or np.any(self.u_setpoint >= self.u_hi):
            raise ValueError("input setpoint must lie strictly inside the input box")
        if np.isfinite(self.y_max) and np.abs(self.y_setpoint).max() >= self.y_max:
            raise ValueError("output setpoint must lie strictly inside the output bound")

    @property
    def m(self) -> int:
        return self.u_lo.size

    @property
    def p(self) -> int:
        return self.y_setpoint.size


@dataclass(frozen=True)
class MpcSolution:
    """One solved plan: trajectories over [-n, L-1], weights, slack, norms."""

    u_plan: np.ndarray    # (L+n, m)
    y_plan: np.ndarray    # (L+n, p)
    alpha: np.ndarray
    sigma: np.ndarray
    t_u: float
    t_alpha: float
    t_sigma: float
    objective: float
    u_norm1: float        # 1-norm of the future input plan (steps 0 .. L-1)
    alpha_norm1: float
    sigma_norminf: float
    slack_check_ok: bool  # a-posteriori ||sigma||_inf <= eps (1 + ||alpha||_1)
    active_rows: tuple
    report: SolveReport


def _layout(config: MpcConfig, n_alpha: int, coeffs: TighteningCoefficients) -> dict:
    L, n, m, p = config.horizon, config.order, config.m, config.p
    constrained = np.isfinite(config.y_max)
    lay = {
        "n_alpha": n_alpha,
        "mLn": m * (L + n), "pLn": p * (L + n), "mL": m * L,
        "with_rows": constrained,
        "with_u_epi": constrained and bool(np.any(coeffs.a1 > 0)),
        "with_alpha_epi": constrained and bool(np.any(coeffs.a2 > 0)),
        # the slack is pinned to zero without noise; no epigraph needed then
        "with_sigma_epi": constrained and config.noise_bound > 0.0,
    }
    off = 0
    for name, size in (
        ("alpha", n_alpha),
        ("sigma", lay["pLn"]),
        ("ubar", lay["mLn"]),
        ("ybar", lay["pLn"]),
        ("u_split", 2 * lay["mL"] if lay["with_u_epi"] else 0),
        ("alpha_split", 2 * n_alpha if lay["with_alpha_epi"] else 0),
        ("t_u", 1 if lay["with_u_epi"] else 0),
        ("t_alpha", 1 if lay["with_alpha_epi"] else 0),
        ("t_sigma", 1 if lay["with_sigma_epi"] else 0),
    ):
        lay[name] = off
        off += size
    lay["n_vars"] = off
    return lay


def _build_problem(config: MpcConfig, record: DataRecord,
                   coeffs: TighteningCoefficients):
    """Assemble the constant QP structure; the initial window enters only b_eq."""
    L, n, m, p = config.horizon, config.order, config.m, config.p
    if record.order != n:
        raise ValueError("record prefix length must equal the configured order")
    if coeffs.horizon != L or coeffs.order != n:
        raise ValueError("tightening coefficients do not match the configuration")
    if np.isfinite(config.y_max) and np.any(coeffs.a4 >= config.y_max):
        flagged = np.nonzero(coeffs.a4 >= config.y_max)[0]
        raise InfeasibleTighteningError(
            f"offsets a4 reach y_max={config.y_max} at steps {flagged.tolist()}"
        )
    Hu = hankel(record.u_data(), L + n).entries
    Hy = hankel(record.y_data("noisy"), L + n).entries
    n_alpha = Hu.shape[1]
    lay = _layout(config, n_alpha, coeffs)
    nv = lay["n_vars"]
    mLn, pLn, mL = lay["mLn"], lay["pLn"], lay["mL"]

    def cols(name, size):
        return np.arange(lay[name], lay[name] + size)

    eq_rows, eq_cols, eq_vals, b_eq = [], [], [], []
    row = 0

    def add_entries(r, c, v):
        eq_rows.extend(np.asarray(r, dtype=int).ravel())
        eq_cols.extend(np.asarray(c, dtype=int).ravel())
        eq_vals.extend(np.asarray(v, dtype=float).ravel())

    # dynamics: Hu alpha = ubar, Hy alpha = ybar + sigma
    rr, cc = np.meshgrid(np.arange(mLn), cols("alpha", n_alpha), indexing="ij")
    add_entries(rr + row, cc, Hu)
    add_entries(np.arange(mLn) + row, cols("ubar", mLn), -np.ones(mLn))
    b_eq.extend(np.zeros(mLn)); row += mLn
    rr, cc = np.meshgrid(np.arange(pLn), cols("alpha", n_alpha), indexing="ij")
    add_entries(rr + row, cc, Hy)
    add_entries(np.arange(pLn) + row, cols("ybar", pLn), -np.ones(pLn))
    add_entries(np.arange(pLn) + row, cols("sigma", pLn), -np.ones(pLn))
    b_eq.extend(np.zeros(pLn)); row += pLn

    # the slack bound collapses to sigma = 0 when there is no noise
    if config.noise_bound == 0.0:
        add_entries(np.arange(pLn) + row, cols("sigma", pLn), np.ones(pLn))
        b_eq.extend(np.zeros(pLn)); row += pLn

    # initial window (b entries rewritten every step)
    window_rows = (row, row + n * m + n * p)
    add_entries(np.arange(n * m) + row, cols("ubar", n * m), np.ones(n * m))
    b_eq.extend(np.zeros(n * m)); row += n * m
    add_entries(np.arange(n * p) + row, cols("ybar", n * p), np.ones(n * p))
    b_eq.extend(np.zeros(n * p)); row += n * p

    # terminal window pinned to the setpoint
    add_entries(np.arange(n * m) + row, lay["ubar"] + mL + np.arange(n * m), np.ones(n * m))
    b_eq.extend(np.tile(config.u_setpoint, n)); row += n * m
    add_entries(np.arange(n * p) + row, lay["ybar"] + p * L + np.arange(n * p), np.ones(n * p))
    b_eq.extend(np.tile(config.y_setpoint, n)); row += n * p

    future_u = lay["ubar"] + n * m + np.arange(mL)
    if lay["with_u_epi"]:
        up = cols("u_split", mL)
        um = lay["u_split"] + mL + np.arange(mL)
        add_entries(np.arange(mL) + row, future_u, np.ones(mL))
        add_entries(np.arange(mL) + row, up, -np.ones(mL))
        add_entries(np.arange(mL) + row, um, np.ones(mL))
        b_eq.extend(np.zeros(mL)); row += mL
        add_entries(np.full(2 * mL, row), np.concatenate([up, um]), np.ones(2 * mL))
        add_entries([row], [lay["t_u"]], [-1.0])
        b_eq.append(0.0); row += 1
    if lay["with_alpha_epi"]:
        ap = cols("alpha_split", n_alpha)
        am = lay["alpha_split"] + n_alpha + np.arange(n_alpha)
        add_entries(np.arange(n_alpha) + row, cols("alpha", n_alpha), np.ones(n_alpha))
        add_entries(np.arange(n_alpha) + row, ap, -np.ones(n_alpha))
        add_entries(np.arange(n_alpha) + row, am, np.ones(n_alpha))
        b_eq.extend(np.zeros(n_alpha)); row += n_alpha
        add_entries(np.full(2 * n_alpha, row), np.concatenate([ap, am]), np.ones(2 * n_alpha))
        add_entries([row], [lay["t_alpha"]], [-1.0])
        b_eq.append(0.0); row += 1

    a_eq = sparse.csc_matrix(
        (eq_vals, (eq_rows, eq_cols)), shape=(row, nv)
    )
    b_eq = np.asarray(b_eq)

    in_rows, in_cols, in_vals, b_in = [], [], [], []
    irow = 0

    def add_in(r, c, v):
        in_rows.extend(np.asarray(r, dtype=int).ravel())
        in_cols.extend(np.asarray(c, dtype=int).ravel())
        in_vals.extend(np.asarray(v, dtype=float).ravel())

    # input box over the planned future steps
    add_in(np.arange(mL) + irow, future_u, np.ones(mL))
    b_in.extend(np.tile(config.u_hi, L)); irow += mL
    add_in(np.arange(mL) + irow, future_u, -np.ones(mL))
    b_in.extend(np.tile(-config.u_lo, L)); irow += mL

    if lay["with_u_epi"]:
        split = cols("u_split", 2 * mL)
        add_in(np.arange(2 * mL) + irow, split, -np.ones(2 * mL))
        b_in.extend(np.zeros(2 * mL)); irow += 2 * mL
    if lay["with_alpha_epi"]:
        split = cols("alpha_split", 2 * n_alpha)
        add_in(np.arange(2 * n_alpha) + irow, split, -np.ones(2 * n_alpha))
        b_in.extend(np.zeros(2 * n_alpha)); irow += 2 * n_alpha
    if lay["with_sigma_epi"]:
        sig = cols("sigma", pLn)
        add_in(np.arange(pLn) + irow, sig, np.ones(pLn))
        add_in(np.arange(pLn) + irow, np.full(pLn, lay["t_sigma"]), -np.ones(pLn))
        b_in.extend(np.zeros(pLn)); irow += pLn
        add_in(np.arange(pLn) + irow, sig, -np.ones(pLn))
        add_in(np.arange(pLn) + irow, np.full(pLn, lay["t_sigma"]), -np.ones(pLn))
        b_in.extend(np.zeros(pLn)); irow += pLn

    row_index_of_step = {}
    if lay["with_rows"]:
        for k in range(L - n):
            for i in range(p):
                ycol = lay["ybar"] + (n + k) * p + i
                for sign in (1.0, -1.0):
                    add_in([irow], [ycol], [sign])
                    if lay["with_u_epi"] and coeffs.a1[k] > 0:
                        add_in([irow], [lay["t_u"]], [coeffs.a1[k]])
                    if lay["with_alpha_epi"] and coeffs.a2[k] > 0:
                        add_in([irow], [lay["t_alpha"]], [coeffs.a2[k]])
                    if lay["with_sigma_epi"]:
                        add_in([irow], [lay["t_sigma"]], [coeffs.a3[k]])
                    b_in.append(config.y_max - coeffs.a4[k])
                    row_index_of_step.setdefault(k, []).append(irow)
                    irow += 1
    a_in = sparse.csc_matrix((in_vals, (in_rows, in_cols)), shape=(irow, nv))
    b_in = np.asarray(b_in)

    # cost
    alpha_weight = config.lambda_alpha * config.noise_bound
    ridge_applied = alpha_weight < ALPHA_RIDGE
    hdiag = np.zeros(nv)
    hdiag[cols("alpha", n_alpha)] = 2.0 * max(alpha_weight, ALPHA_RIDGE)
    hdiag[cols("sigma", pLn)] = 2.0 * config.lambda_sigma
    H = sparse.diags(hdiag, format="csc")
    f = np.zeros(nv)
    future_y = lay["ybar"] + n * p + np.arange(p * L)
    sc = config.stage_cost
    if isinstance(sc, LinearStageCost):
        f[future_u] = np.tile(sc.c_u, L)
        f[future_y] = np.tile(sc.c_y, L)
        cost_constant = 0.0
    elif isinstance(sc, QuadraticStageCost):
        H = (H + sparse.block_diag(
            [sparse.csc_matrix((lay["ubar"] + n * m, lay["ubar"] + n * m)),
             sparse.kron(sparse.eye(L), 2.0 * sc.R),
             sparse.csc_matrix((nv - lay["ubar"] - n * m - mL,
                                nv - lay["ubar"] - n * m - mL))],
            format="csc")).tocsc()
        yq = sparse.lil_matrix((nv, nv))
        yq[np.ix_(future_y, future_y)] = sparse.kron(sparse.eye(L), 2.0 * sc.Q)
        H = (H + yq.tocsc()).tocsc()
        f[future_u] = np.tile(-2.0 * sc.R @ config.u_setpoint, L)
        f[future_y] = np.tile(-2.0 * sc.Q @ config.y_setpoint, L)
        cost_constant = L * float(
            config.u_setpoint @ sc.R @ config.u_setpoint
            + config.y_setpoint @ sc.Q @ config.y_setpoint
        )
    else:
        raise TypeError(f"unsupported stage cost {type(sc).__name__}")

    return {
        "H": H, "f": f, "a_eq": a_eq, "b_eq": b_eq, "a_in": a_in, "b_in": b_in,
        "layout": lay, "window_rows": window_rows, "cost_constant": cost_constant,
        "ridge_applied": ridge_applied, "row_index_of_step": row_index_of_step,
    }


def assemble(config: MpcConfig, record: DataRecord, coeffs: TighteningCoefficients,
             u_window, y_window) -> QuadraticProgram:
    """Build the tightened QP for one step as a standalone problem."""
    tmpl = _build_problem(config, record, coeffs)
    b_eq = _window_rhs(tmpl, config, u_window, y_window)
    return QuadraticProgram(H=tmpl["H"], f=tmpl["f"], a_eq=tmpl["a_eq"], b_eq=b_eq,
                            a_in=tmpl["a_in"], b_in=tmpl["b_in"])


def _window_rhs(tmpl: dict, config: MpcConfig, u_window, y_window) -> np.ndarray:
    n, m, p = config.order, config.m, config.p
    u_window = np.asarray(u_window, dtype=float).reshape(n, m)
    y_window = np.asarray(y_window, dtype=float).reshape(n, p)
    b_eq = tmpl["b_eq"].copy()
    start, _ = tmpl["window_rows"]
    b_eq[start:start + n * m] = u_window.ravel()
    b_eq[start + n * m:start + n * m + n * p] = y_window.ravel()
    return b_eq


@dataclass(frozen=True)
class ControllerState:
    """Rolling receding-horizon state: config, frozen data, and the live window."""

    config: MpcConfig
    record: DataRecord
    coeffs: TighteningCoefficients
    u_window: np.ndarray  # (n, m) last applied inputs
    y_window: np.ndarray  # (n, p) last noisy measurements
    t: int = 0
    template: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        n = self.config.order
        object.__setattr__(self, "u_window",
                           np.asarray(self.u_window, dtype=float).reshape(n, self.config.m))
        object.__setattr__(self, "y_window",
                           np.asarray(self.y_window, dtype=float).reshape(n, self.config.p))
        if self.template is None:
            object.__setattr__(self, "template",
                               _build_problem(self.config, self.record, self.coeffs))

    def with_window(self, u_window, y_window) -> "ControllerState":
        return replace(self, u_window=u_window, y_window=y_window)


def make_controller(config: MpcConfig, record: DataRecord,
                    coeffs: TighteningCoefficients,
                    u_window=None, y_window=None) -> ControllerState:
    n = config.order
    if u_window is None:
        u_window = np.zeros((n, config.m))
    if y_window is None:
        y_window = np.zeros((n, config.p))
    return ControllerState(config=config, record=record, coeffs=coeffs,
                           u_window=u_window, y_window=y_window, t=0)


def _default_tolerances(n_vars: int) -> Tolerances:
    # large instances trade a little feasibility slack for speed
    return Tolerances(feas=1e-6, opt=1e-6) if n_vars >= 988 else Tolerances()


def solve_step(state: ControllerState, tolerances: Tolerances | None = None) -> MpcSolution:
    """Solve the current step's plan; raises InfeasibleStepError when there is none."""
    tmpl = state.template
    lay = tmpl["layout"]
    config = state.config
    if tolerances is None:
        tolerances = _default_tolerances(lay["n_vars"])
    problem = QuadraticProgram(H=tmpl["H"], f=tmpl["f"], a_eq=tmpl["a_eq"],
                               b_eq=_window_rhs(tmpl, config, state.u_window, state.y_window),
                               a_in=tmpl["a_in"], b_in=tmpl["b_in"])
    report = solve_qp(problem, tolerances)
    if report.status == "infeasible":
        raise InfeasibleStepError(report)
    if report.status != "optimal":
        raise RuntimeError(f"optimizer failed: {report.status} ({report.note})")
    if tmpl["ridge_applied"]:
        report.note = (report.note + " " if report.note else "") + "alpha-ridge tie-break"

    L, n, m, p = config.horizon, config.order, config.m, config.p
    z = report.x
    alpha = z[lay["alpha"]:lay["alpha"] + lay["n_alpha"]]
    sigma = z[lay["sigma"]:lay["sigma"] + lay["pLn"]]
    u_plan = z[lay["ubar"]:lay["ubar"] + lay["mLn"]].reshape(L + n, m)
    y_plan = z[lay["ybar"]:lay["ybar"] + lay["pLn"]].reshape(L + n, p)
    u_norm1 = float(np.abs(u_plan[n:]).sum())
    alpha_norm1 = float(np.abs(alpha).sum())
    sigma_norminf = float(np.abs(sigma).max())
    t_u = float(z[lay["t_u"]]) if lay["with_u_epi"] else u_norm1
    t_alpha = float(z[lay["t_alpha"]]) if lay["with_alpha_epi"] else alpha_norm1
    t_sigma = float(z[lay["t_sigma"]]) if lay["with_sigma_epi"] else sigma_norminf

    # objective recomputed from the solution so reported cost excludes the ridge
    sc = config.stage_cost
    if isinstance(sc, LinearStageCost):
        stage = float(np.sum(u_plan[n:] @ sc.c_u) + np.sum(y_plan[n:] @ sc.c_y))
    else:
        du = u_plan[n:] - config.u_setpoint
        dy = y_plan[n:] - config.y_setpoint
        stage = float(np.einsum("ki,ij,kj->", du, sc.R, du)
                      + np.einsum("ki,ij,kj->", dy, sc.Q, dy))
    objective = (stage
                 + config.lambda_alpha * config.noise_bound * float(alpha @ alpha)
                 + config.lambda_sigma * float(sigma @ sigma))

    slack_ok = sigma_norminf <= config.noise_bound * (1.0 + alpha_norm1) + 1e-12
    active = []
    if lay["with_rows"]:
        for k in range(L - n):
            margin = (config.y_max - state.coeffs.a4[k]
                      - state.coeffs.a1[k] * t_u - state.coeffs.a2[k] * t_alpha
                      - state.coeffs.a3[k] * t_sigma - float(np.abs(y_plan[n + k]).max()))
            if margin <= 10 * tolerances.feas:
                active.append(k)
    return MpcSolution(
        u_plan=u_plan, y_plan=y_plan, alpha=alpha, sigma=sigma,
        t_u=t_u, t_alpha=t_alpha, t_sigma=t_sigma,
        objective=objective, u_norm1=u_norm1, alpha_norm1=alpha_norm1,
        sigma_norminf=sigma_norminf, slack_check_ok=bool(slack_ok),
        active_rows=tuple(active), report=report,
    )


def n_step_apply(state: ControllerState, solution: MpcSolution):
    """Return the first n planned inputs and the state advanced by n steps.

    The caller applies the inputs to the plant and then installs the fresh
    measurements via with_window.
    """
    if solution.report.status != "optimal":
        raise ValueError("cannot apply a non-optimal solution")
    n = state.config.order
    inputs = solution.u_plan[n:2 * n].copy()
    return inputs, replace(state, t=state.t + n)


def prediction_error_diagnostic(solution: MpcSolution, model, x_state,
                                constants, noise_bound: float):
    """Open-loop rollout error of the plan versus its noise-induced bound.

    Returns (errors, bounds) arrays over the future steps: errors[k] is the
    inf-norm gap between the true response to the planned inputs and the
    planned outputs; bounds[k] is the certified worst case built from the
    step gains, the weight-vector 1-norm, and the slack inf-norm. The
    controller itself never reads the model; this is a validation probe.
    """
    from .plant import simulate

    n = model.n
    u_future = solution.u_plan[n:]
    traj = simulate(model, x_state, u_future)
    errors = np.abs(traj.y - solution.y_plan[n:]).max(axis=1)
    ks = np.arange(u_future.shape[0])
    rho = np.array([constants.rho_at(n + int(k)) for k in ks])
    bounds = (noise_bound * rho
              + noise_bound * (1.0 + rho) * solution.alpha_norm1
              + (1.0 + rho) * solution.sigma_norminf)
    return errors, bounds
