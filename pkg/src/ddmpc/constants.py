"""Purely data-driven certification of the constants the tightening consumes.

Every quantity here is computed from one recorded trajectory: a steering
bound (worst-case l1 input effort returning unit-bounded initial responses
to the origin), per-step free-response output gains, the pseudoinverse norm
of the stacked input/extended-state Hankel map, and the closed-form bound
on extended-state magnitude. Model-based counterparts live in `plant` and
exist only to validate these estimators.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import PolytopeVertexSet, enumerate_box_subspace_vertices  # noqa: F401
from .hankel import DataRecord, build_H_uxi, hankel, zero_input_output_basis
from .solvers import LinearProgram, Tolerances, induced_one_norm, pseudoinverse, solve_lp


class EstimationError(RuntimeError):
    """Raised when an estimation LP fails, signalling insufficient excitation."""


@dataclass(frozen=True)
class SystemConstants:
    """Everything the constraint-tightening recursion needs, with provenance.

    rho[i] is the gain at step k = rho_start + i; the array must cover
    k = n .. L+n-1. Provenance tags record, per field, whether the value
    came from data, from a model oracle, or from a closed form.
    """

    gamma: float
    rho: np.ndarray
    rho_start: int          # equals the system order bound n
    c_pe: float
    xi_max: float
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "rho", np.asarray(self.rho, dtype=float))
        vals = [self.gamma, self.c_pe, self.xi_max, *self.rho]
        if any(not np.isfinite(v) or v < 0 for v in vals):
            raise ValueError("all certified constants must be finite and nonnegative")
        self.rho.setflags(write=False)

    def rho_at(self, k: int) -> float:
        i = k - self.rho_start
        if not 0 <= i < self.rho.size:
            raise KeyError(f"rho_{k} not covered; range is "
                           f"[{self.rho_start}, {self.rho_start + self.rho.size - 1}]")
        return float(self.rho[i])

    @property
    def rho_n_max(self) -> float:
        """Largest gain over the first n covered steps."""
        n = self.rho_start
        return float(self.rho[:n].max())

    @property
    def rho_L_max(self) -> float:
        """Largest gain over the last n covered steps."""
        n = self.rho_start
        return float(self.rho[-n:].max())

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "rho": self.rho.tolist(),
            "rho_start": self.rho_start,
            "c_pe": self.c_pe,
            "xi_max": self.xi_max,
            "provenance": dict(self.provenance),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_dict(cls, d: dict) -> "SystemConstants":
        return cls(
            gamma=d["gamma"], rho=d["rho"], rho_start=d["rho_start"],
            c_pe=d["c_pe"], xi_max=d["xi_max"], provenance=d.get("provenance", {}),
        )

    @classmethod
    def load(cls, path) -> "SystemConstants":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _abs_epigraph_lp(n_free: int, n_abs: int, abs_rows: np.ndarray,
                     a_eq: np.ndarray, b_eq: np.ndarray) -> LinearProgram:
    """min sum t s.t. |abs_rows @ z| <= t componentwise, a_eq z = b_eq."""
    c = np.concatenate([np.zeros(n_free), np.ones(n_abs)])
    eye = np.eye(n_abs)
    a_in = np.block([[abs_rows, -eye], [-abs_rows, -eye]])
    b_in = np.zeros(2 * n_abs)
    a_eq_full = np.hstack([a_eq, np.zeros((a_eq.shape[0], n_abs))])
    return LinearProgram(c=c, a_eq=a_eq_full, b_eq=b_eq, a_in=a_in, b_in=b_in)


def estimate_gamma(record: DataRecord, n: int,
                   tolerances: Tolerances = Tolerances()) -> float:
    """Data-driven controllability constant.

    Reduces the outer maximization to the vertices of the polytope of
    unit-bounded zero-input output windows (coordinates supplied by
    zero_input_output_basis), then solves one inner LP per vertex: the
    minimum l1-norm input over n steps that extends the vertex's initial
    window to a trajectory resting at zero for the following n steps.
    """
    m, p = record.m, record.p
    basis = zero_input_output_basis(record, n)
    if basis.shape[1] == 0:
        return 0.0
    vertices = enumerate_box_subspace_vertices(basis, 1.0)

    # window reconstruction: pin the second half of a 2n-deep window to
    # (0, w) and read the first half off the minimum-norm weight vector
    H2u = hankel(record.u_data(), 2 * n).entries
    H2y = hankel(record.y_data("clean"), 2 * n).entries
    pin = np.vstack([H2u[n * m:], H2y[n * p:]])
    pin_pinv = np.linalg.pinv(pin)

    H3u = hankel(record.u_data(), 3 * n).entries
    H3y = hankel(record.y_data("clean"), 3 * n).entries
    cols = H3u.shape[1]
    a_eq = np.vstack([H3u[:n * m], H3y[:n * p], H3u[2 * n * m:], H3y[2 * n * p:]])

    gamma = 0.0
    for w in vertices.vertices:
        alpha_w = pin_pinv @ np.concatenate([np.zeros(n * m), w])
        window_u = H2u[:n * m] @ alpha_w
        window_y = H2y[:n * p] @ alpha_w
        b_eq = np.concatenate([window_u, window_y,
                               np.zeros(n * m), np.zeros(n * p)])
        lp = _abs_epigraph_lp(cols, n * m, H3u[n * m:2 * n * m], a_eq, b_eq)
        report = solve_lp(lp, tolerances)
        if report.status != "optimal":
            raise EstimationError(
                f"steering LP {report.status} at vertex {w}; data excitation insufficient"
            )
        gamma = max(gamma, report.objective)
    return gamma


def estimate_rho(record: DataRecord, n: int, k: int,
                 tolerances: Tolerances = Tolerances()) -> float:
    """Data-driven free-response gain at step k.

    Maximizes each output component of y_k (both signs) subject to zero
    input and a unit inf-norm bound on the first n outputs, all expressed
    through depth-(k+1) Hankel matrices. The max over the 2p LPs equals the
    inf-norm maximization exactly, with no integer variables.
    """
    if k < n:
        raise ValueError(f"k must be at least n={n}")
    m, p = record.m, record.p
    depth = k + 1
    Hu = hankel(record.u_data(), depth).entries
    Hy = hankel(record.y_data("clean"), depth).entries
    cols = Hu.shape[1]
    head = Hy[:n * p]
    a_in = np.vstack([head, -head])
    b_in = np.ones(2 * n * p)
    best = 0.0
    for i in range(p):
        row = Hy[k * p + i]
        for sign in (1.0, -1.0):
            lp = LinearProgram(c=-sign * row, a_eq=Hu, b_eq=np.zeros(m * depth),
                               a_in=a_in, b_in=b_in)
            report = solve_lp(lp, tolerances)
            if report.status == "unbounded":
                raise EstimationError(
                    f"gain LP unbounded at step {k}: zero-input data rows are degenerate"
                )
            if report.status != "optimal":
                raise EstimationError(f"gain LP {report.status} at step {k}")
            best = max(best, -report.objective)
    return best


def compute_cpe(record: DataRecord, depth: int, view: str = "clean") -> float:
    """Induced 1-norm of the pseudoinverse of the stacked input/state Hankel map."""
    return induced_one_norm(pseudoinverse(build_H_uxi(record, depth, view)))


def compute_xi_max(u_lo, u_hi, y_max: float, n: int, p: int) -> float:
    """Largest 1-norm of an extended state inside the input box and output bound."""
    u_lo = np.atleast_1d(np.asarray(u_lo, dtype=float))
    u_hi = np.atleast_1d(np.asarray(u_hi, dtype=float))
    per_step_u = np.maximum(np.abs(u_lo), np.abs(u_hi)).sum()
    return float(n * (per_step_u + p * y_max))


def certify_constants(record: DataRecord, n: int, horizon: int,
                      u_lo, u_hi, y_max: float,
                      tolerances: Tolerances = Tolerances()) -> SystemConstants:
    """Run all data-driven estimators and package the result with provenance."""
    rho = np.array([estimate_rho(record, n, k, tolerances)
                    for k in range(n, horizon + n)])
    return SystemConstants(
        gamma=estimate_gamma(record, n, tolerances),
        rho=rho,
        rho_start=n,
        c_pe=compute_cpe(record, horizon, view="clean"),
        xi_max=compute_xi_max(u_lo, u_hi, y_max, n, record.p),
        provenance={
            "gamma": "data-driven",
            "rho": "data-driven",
            "c_pe": "data-driven",
            "xi_max": "closed-form",
        },
    )


def oracle_constants(model, record: DataRecord, horizon: int,
                     u_lo, u_hi, y_max: float) -> SystemConstants:
    """Model-based counterpart of certify_constants for validation runs.

    The steering bound and gains come from the state-space oracles; the
    pseudoinverse norm is data-defined by nature and is still computed from
    the record.
    """
    from .plant import gamma_oracle, rho_oracle

    n = model.n
    rho = np.array([rho_oracle(model, k) for k in range(n, horizon + n)])
    return SystemConstants(
        gamma=gamma_oracle(model),
        rho=rho,
        rho_start=n,
        c_pe=compute_cpe(record, horizon, view="clean"),
        xi_max=compute_xi_max(u_lo, u_hi, y_max, n, record.p),
        provenance={
            "gamma": "model-oracle",
            "rho": "model-oracle",
            "c_pe": "data-driven",
            "xi_max": "closed-form",
        },
    )
