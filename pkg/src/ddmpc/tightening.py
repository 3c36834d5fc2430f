"""Output-constraint tightening coefficients from certified system constants.

Four coefficient arrays a1..a4 shrink the output bound inside the optimizer
so the true noise-perturbed closed loop keeps the original constraints. The
first n steps get a closed-form base case; later steps grow by a recursion
whose increments are polynomials in the noise bound with nonnegative
coefficients, so everything is monotone in the noise level and collapses to
the nominal constraint as the noise bound goes to zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constants import SystemConstants


@dataclass(frozen=True)
class TighteningCoefficients:
    """Coefficient arrays indexed k = 0 .. L-n-1, plus their generating inputs.

    In the constrained rows, a1 weights the plan's input 1-norm, a2 the
    column-weight 1-norm, a3 the slack inf-norm, and a4 is a constant
    offset. a2[k] equals noise_bound * a3[k] identically.
    """

    a1: np.ndarray
    a2: np.ndarray
    a3: np.ndarray
    a4: np.ndarray
    noise_bound: float
    horizon: int
    order: int
    constants: SystemConstants = field(repr=False)

    def __post_init__(self):
        for name in ("a1", "a2", "a3", "a4"):
            arr = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arr)
            if arr.size != self.horizon - self.order:
                raise ValueError(f"{name} must cover k = 0 .. {self.horizon - self.order - 1}")
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ValueError(f"{name} must be nonnegative and finite")
            arr.setflags(write=False)

    @property
    def count(self) -> int:
        return self.a1.size

    def to_dict(self) -> dict:
        return {
            "a1": self.a1.tolist(),
            "a2": self.a2.tolist(),
            "a3": self.a3.tolist(),
            "a4": self.a4.tolist(),
            "inputs": {
                "noise_bound": self.noise_bound,
                "horizon": self.horizon,
                "order": self.order,
                "constants": self.constants.to_dict(),
            },
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def save_csv(self, path) -> None:
        lines = ["k,a1,a2,a3,a4"]
        for k in range(self.count):
            lines.append(
                f"{k},{self.a1[k]:.17g},{self.a2[k]:.17g},{self.a3[k]:.17g},{self.a4[k]:.17g}"
            )
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_dict(cls, d: dict) -> "TighteningCoefficients":
        inputs = d["inputs"]
        return cls(
            a1=d["a1"], a2=d["a2"], a3=d["a3"], a4=d["a4"],
            noise_bound=inputs["noise_bound"],
            horizon=inputs["horizon"],
            order=inputs["order"],
            constants=SystemConstants.from_dict(inputs["constants"]),
        )


def compute_coefficients(constants: SystemConstants, noise_bound: float,
                         horizon: int, order: int) -> TighteningCoefficients:
    """Evaluate the base case and recursion for all constrained steps.

    Each recursion step fills index k+n from index k, in increasing k, in
    the order a1, a3 (needs the new a1), a2 (= noise * new a3), a4 (mixes
    old a3/a4 with the new a1).
    """
    n, L, eps = order, horizon, noise_bound
    if L < 2 * n:
        raise ValueError(f"horizon {L} must be at least twice the order {n}")
    if eps < 0:
        raise ValueError("noise bound must be nonnegative")
    if constants.rho_start != n or constants.rho.size < L:
        raise ValueError(
            f"rho must cover steps {n} .. {L + n - 1}; got start "
            f"{constants.rho_start}, size {constants.rho.size}"
        )
    rho_n_max = constants.rho_n_max
    rho_L_max = float(constants.rho[L - n:L].max())  # steps L .. L+n-1
    gamma, c_pe, xi_max = constants.gamma, constants.c_pe, constants.xi_max

    count = L - n
    a1 = np.zeros(count)
    a2 = np.zeros(count)
    a3 = np.zeros(count)
    a4 = np.zeros(count)
    for k in range(n):
        a1[k] = 0.0
        a3[k] = 1.0 + rho_n_max
        a2[k] = eps * a3[k]
        a4[k] = eps * rho_n_max
    for k in range(L - 2 * n):
        rho_k = constants.rho_at(2 * n + k)
        a1[k + n] = a1[k] + (a2[k] + a3[k] * eps) * c_pe
        a3[k + n] = 1.0 + rho_k + gamma * (1.0 + rho_L_max) * a1[k + n]
        a2[k + n] = eps * a3[k + n]
        a4[k + n] = (a4[k] + eps * rho_k + eps * a1[k + n] * gamma * rho_L_max
                     + eps * a3[k] + (a2[k] + a3[k] * eps) * c_pe * xi_max)
    return TighteningCoefficients(
        a1=a1, a2=a2, a3=a3, a4=a4,
        noise_bound=eps, horizon=L, order=n, constants=constants,
    )


@dataclass(frozen=True)
class PrecheckReport:
    """Which constrained steps are dead on arrival, and how much noise would fit."""

    flagged: tuple
    feasible: bool
    y_max: float
    max_admissible_noise: float


def feasibility_precheck(coeffs: TighteningCoefficients, y_max: float,
                         bisection_iters: int = 20) -> PrecheckReport:
    """Flag steps whose constant offset already exceeds the output bound.

    Also bisects for the largest noise bound at which no step is flagged,
    holding the noise-independent constants fixed. The offsets are monotone
    in the noise bound, so bisection is exact up to the iteration budget.
    """
    flagged = tuple(int(k) for k in np.nonzero(coeffs.a4 >= y_max)[0])

    def ok(eps: float) -> bool:
        trial = compute_coefficients(coeffs.constants, eps, coeffs.horizon, coeffs.order)
        return bool(np.all(trial.a4 < y_max))

    cap = 1e12
    lo, hi = 0.0, max(coeffs.noise_bound, 1e-6)
    while ok(hi):
        hi *= 2.0
        if hi > cap:
            return PrecheckReport(flagged, not flagged, y_max, cap)
    for _ in range(bisection_iters):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return PrecheckReport(flagged, not flagged, y_max, lo)


def tightened_margin(coeffs: TighteningCoefficients, k: int,
                     u_norm1: float, alpha_norm1: float, sigma_norminf: float) -> float:
    """Left-hand-side tightening contribution at step k for given plan norms."""
    if not 0 <= k < coeffs.count:
        raise IndexError(f"step {k} outside 0 .. {coeffs.count - 1}")
    return float(coeffs.a1[k] * u_norm1 + coeffs.a2[k] * alpha_norm1
                 + coeffs.a3[k] * sigma_norminf + coeffs.a4[k])
