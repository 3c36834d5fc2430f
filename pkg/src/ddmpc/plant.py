"""Discrete-time LTI plants: realization, simulation, and model-based constants.

The plant is the simulation ground truth and the source of model-based
reference values (observability gains, controllability steering bound)
against which the purely data-driven estimators are validated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import enumerate_box_subspace_vertices
from .solvers import LinearProgram, solve_lp


class RealizationError(ValueError):
    """Raised when a model cannot be realized as a minimal state-space system."""


def _as_2d(x, name: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(x, dtype=float))
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a matrix, got ndim={arr.ndim}")
    return arr


@dataclass(frozen=True)
class StateSpaceModel:
    """Minimal realization (A, B, C, D) of a discrete-time LTI system.

    Construction fails if the realization is not minimal (controllable and
    observable); all downstream constants assume minimality.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A", _as_2d(self.A, "A"))
        object.__setattr__(self, "B", _as_2d(self.B, "B"))
        object.__setattr__(self, "C", _as_2d(self.C, "C"))
        object.__setattr__(self, "D", _as_2d(self.D, "D"))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise RealizationError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n:
            raise RealizationError(f"B must have {n} rows, got {self.B.shape}")
        if self.C.shape[1] != n:
            raise RealizationError(f"C must have {n} columns, got {self.C.shape}")
        if self.D.shape != (self.C.shape[0], self.B.shape[1]):
            raise RealizationError(
                f"D must be {self.C.shape[0]}x{self.B.shape[1]}, got {self.D.shape}"
            )
        for M in (self.A, self.B, self.C, self.D):
            M.setflags(write=False)
        if np.linalg.matrix_rank(self.observability_matrix()) < n:
            raise RealizationError("realization is not observable")
        if np.linalg.matrix_rank(self.controllability_matrix()) < n:
            raise RealizationError("realization is not controllable")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def observability_matrix(self, depth: int | None = None) -> np.ndarray:
        """Stack C, CA, ..., CA^(depth-1); depth defaults to the state dimension."""
        depth = self.n if depth is None else depth
        blocks, M = [], self.C.copy()
        for _ in range(depth):
            blocks.append(M)
            M = M @ self.A
        return np.vstack(blocks)

    def controllability_matrix(self, depth: int | None = None) -> np.ndarray:
        """[A^(depth-1)B, ..., AB, B]: maps stacked inputs u_0..u_(depth-1) to x_depth."""
        depth = self.n if depth is None else depth
        blocks, M = [], self.B.copy()
        for _ in range(depth):
            blocks.append(M)
            M = self.A @ M
        return np.hstack(blocks[::-1])

    def transfer_at(self, z: complex) -> np.ndarray:
        """Evaluate C (zI - A)^-1 B + D at a complex frequency."""
        return self.C @ np.linalg.solve(z * np.eye(self.n) - self.A, self.B) + self.D

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "D": self.D.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StateSpaceModel":
        if "num" in d:
            return realize_transfer_function(d["num"], d["den"])
        return cls(d["A"], d["B"], d["C"], d["D"])


@dataclass(frozen=True)
class Trajectory:
    """Paired input/output sequences of equal length T."""

    u: np.ndarray  # (T, m)
    y: np.ndarray  # (T, p)

    def __post_init__(self):
        u = np.atleast_2d(np.asarray(self.u, dtype=float))
        y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if u.shape[0] == 1 and y.shape[0] > 1:
            u = u.T
        if y.shape[0] == 1 and u.shape[0] > 1:
            y = y.T
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)
        if self.u.shape[0] != self.y.shape[0]:
            raise ValueError(
                f"u and y must have equal length, got {self.u.shape[0]} and {self.y.shape[0]}"
            )
        if self.u.shape[0] < 1:
            raise ValueError("trajectory must contain at least one sample")
        self.u.setflags(write=False)
        self.y.setflags(write=False)

    @property
    def length(self) -> int:
        return self.u.shape[0]

    def stacked(self) -> np.ndarray:
        """All inputs stacked above all outputs, as one column vector."""
        return np.concatenate([self.u.ravel(), self.y.ravel()])


@dataclass(frozen=True)
class NoiseSpec:
    """Bounded per-sample measurement noise: every draw satisfies the inf-norm bound."""

    bound: float
    distribution: str = "uniform"  # or "extreme-points"
    seed: int = 0

    def __post_init__(self):
        if self.bound < 0:
            raise ValueError("noise bound must be nonnegative")
        if self.distribution not in ("uniform", "extreme-points"):
            raise ValueError(f"unknown noise distribution {self.distribution!r}")

    def draw(self, count: int, dim: int, rng: np.random.Generator | None = None) -> np.ndarray:
        """Draw `count` noise vectors of dimension `dim`; fresh generator from seed unless given."""
        rng = np.random.default_rng(self.seed) if rng is None else rng
        if self.distribution == "uniform":
            return rng.uniform(-self.bound, self.bound, size=(count, dim))
        signs = rng.integers(0, 2, size=(count, dim)) * 2 - 1
        return self.bound * signs.astype(float)


def realize_transfer_function(num, den) -> StateSpaceModel:
    """Build a controllable-canonical state-space realization of num(z)/den(z).

    Coefficients are in descending powers of z. The denominator is normalized
    to monic; deg(num) <= deg(den), with equality producing a nonzero D.
    Raises RealizationError when the realization is not minimal (the
    polynomials share a common factor) or the leading denominator
    coefficient vanishes.
    """
    num = np.atleast_1d(np.asarray(num, dtype=float))
    den = np.atleast_1d(np.asarray(den, dtype=float))
    den = np.trim_zeros(den, "f")
    if den.size == 0:
        raise RealizationError("denominator has zero leading coefficient")
    if num.size > den.size:
        raise RealizationError("numerator degree exceeds denominator degree")
    num = num / den[0]
    den = den / den[0]
    n = den.size - 1
    if n == 0:
        raise RealizationError("denominator must have positive degree")
    if num.size == den.size:
        d = num[0]
        num = num[1:] - d * den[1:]
    else:
        d = 0.0
        num = np.concatenate([np.zeros(den.size - 1 - num.size), num])
    # bottom-row companion: x+ = A x + B u, last state row carries -den coeffs
    A = np.zeros((n, n))
    if n > 1:
        A[:-1, 1:] = np.eye(n - 1)
    A[-1, :] = -den[1:][::-1]
    B = np.zeros((n, 1))
    B[-1, 0] = 1.0
    C = num[::-1].reshape(1, n)
    D = np.array([[d]])
    try:
        return StateSpaceModel(A, B, C, D)
    except RealizationError as exc:
        raise RealizationError(
            f"transfer function yields a non-minimal realization "
            f"(likely a common num/den factor): {exc}"
        ) from exc


def simulate(
    model: StateSpaceModel,
    x0,
    u,
    noise: NoiseSpec | None = None,
):
    """Run the state recursion x+ = Ax + Bu, y = Cx + Du from x0.

    Returns the clean Trajectory, or (Trajectory, noisy_outputs) when a
    NoiseSpec is supplied. Deterministic for a fixed noise seed.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.ndim == 1:
        u = u.reshape(-1, model.m) if model.m == 1 else u.reshape(1, -1)
    if u.shape[1] != model.m:
        raise ValueError(f"input dimension {u.shape[1]} does not match m={model.m}")
    if u.shape[0] == 0:
        raise ValueError("input sequence must be nonempty")
    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.size != model.n:
        raise ValueError(f"x0 dimension {x.size} does not match n={model.n}")
    T = u.shape[0]
    y = np.empty((T, model.p))
    for k in range(T):
        y[k] = model.C @ x + model.D @ u[k]
        x = model.A @ x + model.B @ u[k]
    traj = Trajectory(u, y)
    if noise is None:
        return traj
    ytilde = y + noise.draw(T, model.p)
    return traj, ytilde


def rho_oracle(model: StateSpaceModel, k: int) -> float:
    """Worst-case output gain at step k of the free response, unit-bounded initial window.

    Equals the induced inf-norm of C A^k pinv(Phi), with Phi the n-block
    observability matrix.
    """
    if k < model.n:
        raise ValueError(f"k must be at least the state dimension n={model.n}")
    phi_pinv = np.linalg.pinv(model.observability_matrix())
    M = model.C @ np.linalg.matrix_power(model.A, k) @ phi_pinv
    return float(np.abs(M).sum(axis=1).max())


def _min_l1_steering_cost(model: StateSpaceModel, x0: np.ndarray) -> float:
    """Smallest l1-norm n-step input sequence driving x0 to the origin (LP)."""
    n, m = model.n, model.m
    ctrl = model.controllability_matrix()  # maps stacked u_0..u_{n-1} to x_n
    nm = n * m
    # variables: u (free), s >= |u| componentwise; minimize sum s
    c = np.concatenate([np.zeros(nm), np.ones(nm)])
    a_eq = np.hstack([ctrl, np.zeros((n, nm))])
    b_eq = -np.linalg.matrix_power(model.A, n) @ x0
    eye = np.eye(nm)
    a_in = np.block([[eye, -eye], [-eye, -eye]])
    b_in = np.zeros(2 * nm)
    report = solve_lp(LinearProgram(c=c, a_eq=a_eq, b_eq=b_eq, a_in=a_in, b_in=b_in))
    if report.status != "optimal":
        raise RuntimeError(f"steering LP failed with status {report.status}")
    return report.objective


def gamma_oracle(model: StateSpaceModel) -> float:
    """Model-based controllability constant: worst-case l1 steering cost.

    Maximizes, over vertices of the set of free-response output windows with
    inf-norm at most 1, the minimum l1-norm n-step input that returns the
    corresponding initial state to the origin.
    """
    phi = model.observability_matrix()
    # orthonormal basis of the free-response window space {Phi x}
    q, s, _ = np.linalg.svd(phi, full_matrices=False)
    rank = int((s > s[0] * max(phi.shape) * np.finfo(float).eps).sum())
    vertices = enumerate_box_subspace_vertices(q[:, :rank], 1.0)
    phi_pinv = np.linalg.pinv(phi)
    best = 0.0
    for w in vertices.vertices:
        best = max(best, _min_l1_steering_cost(model, phi_pinv @ w))
    return best


def equilibrium_check(model: StateSpaceModel, u_s, y_s, tol: float = 1e-8):
    """Check whether (u_s, y_s) is an equilibrium input/output pair.

    Returns (ok, residual) where residual is the inf-norm mismatch between
    y_s and the steady-state output for constant input u_s. Falls back to a
    constant-trajectory test when I - A is singular.
    """
    u_s = np.asarray(u_s, dtype=float).reshape(-1)
    y_s = np.asarray(y_s, dtype=float).reshape(-1)
    eye_minus_a = np.eye(model.n) - model.A
    if abs(np.linalg.det(eye_minus_a)) > 1e-12:
        y_inf = (model.C @ np.linalg.solve(eye_minus_a, model.B) + model.D) @ u_s
        residual = float(np.abs(y_s - y_inf).max())
        return residual <= tol, residual
    # singular I - A: test whether the constant sequence of length n+1 is a trajectory
    x_ls, *_ = np.linalg.lstsq(eye_minus_a, model.B @ u_s, rcond=None)
    traj = simulate(model, x_ls, np.tile(u_s, (model.n + 1, 1)))
    residual = float(np.abs(traj.y - y_s).max())
    return residual <= tol, residual
