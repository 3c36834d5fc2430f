"""Hankel-matrix construction, excitation certificates, and trajectory algebra.

One measured input/output experiment, arranged into block-Hankel matrices,
parametrizes every trajectory of the underlying system as long as the input
is persistently exciting of sufficient order. This module owns that algebra:
building the matrices, certifying excitation, mapping column weights to
trajectories, and testing candidate trajectories for membership.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .plant import Trajectory


class DegenerateDataError(RuntimeError):
    """Raised when measured data lacks the rank structure excitation promises."""


def _as_signal(signal) -> np.ndarray:
    arr = np.asarray(signal, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    return arr


@dataclass(frozen=True)
class HankelMatrix:
    """Block-Hankel matrix of a vector signal: block (i, j) is sample i+j."""

    depth: int
    signal_dim: int
    source_length: int
    entries: np.ndarray  # (signal_dim * depth, source_length - depth + 1)

    @property
    def shape(self):
        return self.entries.shape


def hankel(signal, depth: int) -> HankelMatrix:
    """Arrange sliding length-`depth` windows of the signal as columns."""
    sig = _as_signal(signal)
    N, q = sig.shape
    if N < depth:
        raise ValueError(f"signal length {N} is shorter than depth {depth}")
    cols = N - depth + 1
    entries = np.empty((q * depth, cols))
    for i in range(depth):
        entries[i * q:(i + 1) * q, :] = sig[i:i + cols].T
    return HankelMatrix(depth=depth, signal_dim=q, source_length=N, entries=entries)


@dataclass(frozen=True)
class ExcitationReport:
    """Numerical-rank certificate for persistence of excitation of one order."""

    order: int
    rank: int
    required: int
    is_pe: bool
    smallest_retained_sv: float
    threshold: float


def is_persistently_exciting(u, order: int) -> ExcitationReport:
    """Check rank(H_order(u)) == m * order via singular values.

    Singular values below max(shape) * eps * sigma_max count as zero; the
    smallest retained value is reported so callers can judge how far the
    excitation is from degenerate.
    """
    H = hankel(u, order).entries
    sv = np.linalg.svd(H, compute_uv=False)
    threshold = max(H.shape) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
    rank = int((sv > threshold).sum())
    required = _as_signal(u).shape[1] * order
    smallest = float(sv[rank - 1]) if rank > 0 else 0.0
    return ExcitationReport(
        order=order,
        rank=rank,
        required=required,
        is_pe=rank == required,
        smallest_retained_sv=smallest,
        threshold=float(threshold),
    )


@dataclass(frozen=True)
class DataRecord:
    """One offline experiment: N + n samples, the first n being a prefix.

    The prefix exists only to form extended states at the earliest times;
    sample index 0 of the effective data corresponds to array index n.
    Clean outputs are kept alongside the noisy ones so estimators (which
    assume noise-free data) and the controller (which sees noise) can share
    one record.
    """

    u: np.ndarray        # (N + n, m)
    y: np.ndarray        # (N + n, p) clean
    y_noisy: np.ndarray  # (N + n, p)
    noise_bound: float
    seed: int
    order: int           # prefix length n

    def __post_init__(self):
        for name in ("u", "y", "y_noisy"):
            object.__setattr__(self, name, _as_signal(getattr(self, name)))
        if not (self.u.shape[0] == self.y.shape[0] == self.y_noisy.shape[0]):
            raise ValueError("u, y, y_noisy must have equal length")
        if self.u.shape[0] <= self.order:
            raise ValueError("record must contain more samples than the prefix")
        if self.y.shape != self.y_noisy.shape:
            raise ValueError("clean and noisy outputs must have equal shape")
        dev = float(np.abs(self.y_noisy - self.y).max(initial=0.0))
        if dev > self.noise_bound + 1e-12:
            raise ValueError(
                f"noisy outputs deviate by {dev:.3e}, beyond the bound {self.noise_bound:.3e}"
            )
        for name in ("u", "y", "y_noisy"):
            getattr(self, name).setflags(write=False)

    @property
    def N(self) -> int:
        return self.u.shape[0] - self.order

    @property
    def m(self) -> int:
        return self.u.shape[1]

    @property
    def p(self) -> int:
        return self.y.shape[1]

    def outputs(self, view: str) -> np.ndarray:
        if view == "clean":
            return self.y
        if view == "noisy":
            return self.y_noisy
        raise ValueError(f"view must be 'clean' or 'noisy', got {view!r}")

    def u_data(self) -> np.ndarray:
        """Effective inputs u_0 .. u_{N-1} (prefix stripped)."""
        return self.u[self.order:]

    def y_data(self, view: str = "clean") -> np.ndarray:
        """Effective outputs y_0 .. y_{N-1} (prefix stripped)."""
        return self.outputs(view)[self.order:]


def save_record(record: DataRecord, csv_path) -> None:
    """Write the record as CSV (k, u_*, y_*, ytilde_*) plus a JSON sidecar."""
    csv_path = Path(csv_path)
    header = (
        ["k"]
        + [f"u_{i+1}" for i in range(record.m)]
        + [f"y_{i+1}" for i in range(record.p)]
        + [f"ytilde_{i+1}" for i in range(record.p)]
    )
    lines = [",".join(header)]
    for idx in range(record.u.shape[0]):
        k = idx - record.order
        vals = [str(k)] + [
            f"{v:.17g}"
            for v in (*record.u[idx], *record.y[idx], *record.y_noisy[idx])
        ]
        lines.append(",".join(vals))
    csv_path.write_text("\n".join(lines) + "\n")
    sidecar = {
        "noise_bound": record.noise_bound,
        "seed": record.seed,
        "N": record.N,
        "n": record.order,
    }
    csv_path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_record(csv_path) -> DataRecord:
    """Read a record written by save_record."""
    csv_path = Path(csv_path)
    sidecar = json.loads(csv_path.with_suffix(".json").read_text())
    rows = csv_path.read_text().strip().split("\n")
    header = rows[0].split(",")
    m = sum(1 for h in header if h.startswith("u_"))
    p = sum(1 for h in header if h.startswith("y_"))
    data = np.array([[float(v) for v in row.split(",")] for row in rows[1:]])
    u = data[:, 1:1 + m]
    y = data[:, 1 + m:1 + m + p]
    ytilde = data[:, 1 + m + p:1 + m + 2 * p]
    return DataRecord(
        u=u, y=y, y_noisy=ytilde,
        noise_bound=sidecar["noise_bound"],
        seed=sidecar["seed"],
        order=sidecar["n"],
    )


def trajectory_from_alpha(record: DataRecord, depth: int, alpha, view: str = "clean") -> Trajectory:
    """Map a column-weight vector through the depth-L Hankel matrices."""
    alpha = np.asarray(alpha, dtype=float).ravel()
    Hu = hankel(record.u_data(), depth).entries
    Hy = hankel(record.y_data(view), depth).entries
    if alpha.size != Hu.shape[1]:
        raise ValueError(f"alpha must have length {Hu.shape[1]}, got {alpha.size}")
    u = (Hu @ alpha).reshape(depth, record.m)
    y = (Hy @ alpha).reshape(depth, record.p)
    return Trajectory(u, y)


def membership_residual(record: DataRecord, candidate: Trajectory):
    """Least-squares certificate that a candidate window is a system trajectory.

    Returns (residual, alpha) where alpha is the minimum-norm weight vector
    and residual is the 2-norm of the stacked reconstruction mismatch; a
    residual near zero certifies membership given sufficiently exciting data.
    """
    depth = candidate.length
    Hu = hankel(record.u_data(), depth).entries
    Hy = hankel(record.y_data("clean"), depth).entries
    stacked = np.vstack([Hu, Hy])
    target = np.concatenate([candidate.u.ravel(), candidate.y.ravel()])
    alpha, *_ = np.linalg.lstsq(stacked, target, rcond=None)
    residual = float(np.linalg.norm(stacked @ alpha - target))
    return residual, alpha


def zero_input_output_basis(record: DataRecord, window: int) -> np.ndarray:
    """Orthonormal basis of output windows reachable with identically zero input.

    Computed as the image of the Hankel output map restricted to the
    nullspace of the Hankel input map. For an observable system with
    window >= n the basis has exactly n columns.
    """
    Hu = hankel(record.u_data(), window).entries
    Hy = hankel(record.y_data("clean"), window).entries
    _, sv, vt = np.linalg.svd(Hu, full_matrices=True)
    tol = max(Hu.shape) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
    rank_u = int((sv > tol).sum())
    null = vt[rank_u:].T  # (cols, nullity)
    if null.shape[1] == 0:
        raise DegenerateDataError(
            "Hankel input map has no nullspace; data too short for this window"
        )
    image = Hy @ null
    q, s, _ = np.linalg.svd(image, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((Hy.shape[0], 0))
    cutoff = max(image.shape) * np.finfo(float).eps * s[0]
    rank = int((s > cutoff).sum())
    return q[:, :rank]


def extended_state_sequence(record: DataRecord, view: str = "clean",
                            count: int | None = None) -> np.ndarray:
    """Stacked past-input/past-output windows, one row per effective time k.

    Row k holds (u_{k-n} .. u_{k-1}, y_{k-n} .. y_{k-1}) flattened, inputs
    first; prefix samples supply the history for k < n. By default all N
    states are returned; pass count to truncate.
    """
    n = record.order
    if count is None:
        count = record.N
    if count > record.N:
        raise ValueError(f"cannot form {count} states from {record.N} effective samples")
    dim = n * (record.m + record.p)
    out = np.empty((count, dim))
    y_full = record.outputs(view)
    for k in range(count):
        out[k, :n * record.m] = record.u[k:k + n].ravel()
        out[k, n * record.m:] = y_full[k:k + n].ravel()
    return out


def build_H_uxi(record: DataRecord, depth: int, view: str = "clean") -> np.ndarray:
    """Stack the depth+n input Hankel matrix over the extended-state row matrix.

    Columns correspond to window start times 0 .. N-depth-n; the result has
    m*(depth+n) + n*(m+p) rows. This is the map whose pseudoinverse norm
    quantifies how expensive it is to realize a desired input and initial
    extended state as a column combination.
    """
    n = record.order
    full_depth = depth + n
    Hu = hankel(record.u_data(), full_depth).entries
    cols = Hu.shape[1]
    xi = extended_state_sequence(record, view=view, count=cols)
    return np.vstack([Hu, xi.T])
