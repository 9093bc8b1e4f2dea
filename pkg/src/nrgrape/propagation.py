"""Single-slice propagators and state trajectories.

A slice with net rotation coefficients (x, y, z) evolves states by the
spin-1 rotation matrix exp(-i (x Lx + y Ly + z Lz) dt). The closed form
is evaluated from the Cayley-Klein parameters

    alpha = cos(phi) - i (z/r) sin(phi)
    beta  = -((y + i x)/r) sin(phi),      phi = r dt / 2,  r = |(x, y, z)|

which is the complex conjugate/sign-flipped reading of the usual Wigner
parametrisation; this is the choice that reproduces exp(-i L dt) with the
generators of :func:`nrgrape.spinops.standard_generators` (verified
against the dense exponential in the test suite).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import expm_batch
from .spinops import ControlPulse, SpinSystem, StateVector

__all__ = [
    "Propagator",
    "TrajectoryMatrix",
    "WignerFactors",
    "expm_oracle",
    "wigner_factors",
    "wigner_propagator",
    "wigner_propagators",
    "forward_trajectory",
    "backward_trajectory",
    "effective_propagator",
]


@dataclass(frozen=True)
class Propagator:
    """A 3x3 unitary slice propagator."""

    matrix: np.ndarray

    def unitarity_defect(self) -> float:
        m = self.matrix
        return float(np.abs(m.conj().T @ m - np.eye(3)).max())


@dataclass(frozen=True)
class TrajectoryMatrix:
    """States stacked as columns, annotated with the slice-index range.

    Column ``i`` holds the state at slice index ``first + i``; ``first`` and
    ``last`` are inclusive. Forward trajectories cover 0..N, backward
    (adjoint) trajectories cover 1..N+1.
    """

    columns: np.ndarray  # (3, count) complex
    first: int
    last: int

    def state(self, index: int) -> np.ndarray:
        if not (self.first <= index <= self.last):
            raise IndexError(
                f"slice index {index} outside trajectory range "
                f"[{self.first}, {self.last}]"
            )
        return self.columns[:, index - self.first]

    @property
    def count(self) -> int:
        return self.columns.shape[1]


@dataclass(frozen=True)
class WignerFactors:
    """Per-slice rotation shorthands; z already includes the drift offset."""

    x: float
    y: float
    z: float
    r: float
    phi: float
    alpha: complex
    beta: complex


def expm_oracle(a: np.ndarray) -> np.ndarray:
    """Dense matrix exponential (Pade scaling-and-squaring).

    Accepts a single (n, n) matrix or a stacked batch (..., n, n). This is
    the correctness oracle for every closed-form propagator expression and
    the engine behind the auxiliary-matrix block exponentials.
    """
    a = np.asarray(a, dtype=complex)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError("expected a square matrix or a stack of them")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    return expm_batch(a)


def wigner_factors(cx: float, cy: float, cz: float, offset: float, dt: float) -> WignerFactors:
    """Rotation factors of one slice; ``z = cz + offset``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x, y, z = float(cx), float(cy), float(cz) + float(offset)
    r = float(np.sqrt(x * x + y * y + z * z))
    phi = 0.5 * r * dt
    if r == 0.0:
        alpha, beta = 1.0 + 0.0j, 0.0 + 0.0j
    else:
        # sin(phi)/r stays finite as r -> 0 (equals dt/2 in the limit)
        sc = np.sin(phi) / r
        alpha = complex(np.cos(phi), -z * sc)
        beta = complex(-y * sc, -x * sc)
    return WignerFactors(x=x, y=y, z=z, r=r, phi=phi, alpha=alpha, beta=beta)


def wigner_propagator(f: WignerFactors) -> Propagator:
    """Slice propagator from rotation factors (rank-1 Wigner matrix)."""
    a, b = f.alpha, f.beta
    s2 = np.sqrt(2.0)
    ac, bc = np.conj(a), np.conj(b)
    m = np.array(
        [
            [a * a, s2 * a * b, b * b],
            [-s2 * a * bc, a * ac - b * bc, s2 * ac * b],
            [bc * bc, -s2 * ac * bc, ac * ac],
        ]
    )
    return Propagator(m)


def wigner_propagators(x, y, z, dt: float) -> np.ndarray:
    """Batched slice propagators for coefficient arrays of any shape.

    ``x``, ``y``, ``z`` broadcast against each other; ``z`` must already
    include the drift. Returns an array shaped like the broadcast inputs
    plus trailing (3, 3).
    """
    x, y, z = np.broadcast_arrays(
        np.asarray(x, float), np.asarray(y, float), np.asarray(z, float)
    )
    r = np.sqrt(x * x + y * y + z * z)
    phi = 0.5 * r * dt
    # guarded sin(phi)/r: series dt/2 * (1 - phi^2/6) below the cutover
    small = r < 1e-9
    rs = np.where(small, 1.0, r)
    sc = np.where(small, 0.5 * dt * (1.0 - phi * phi / 6.0), np.sin(phi) / rs)
    alpha = np.cos(phi) - 1j * z * sc
    beta = -(y * sc) - 1j * (x * sc)
    s2 = np.sqrt(2.0)
    ac, bc = np.conj(alpha), np.conj(beta)
    out = np.empty(x.shape + (3, 3), dtype=complex)
    out[..., 0, 0] = alpha * alpha
    out[..., 0, 1] = s2 * alpha * beta
    out[..., 0, 2] = beta * beta
    out[..., 1, 0] = -s2 * alpha * bc
    out[..., 1, 1] = alpha * ac - beta * bc
    out[..., 1, 2] = s2 * ac * beta
    out[..., 2, 0] = bc * bc
    out[..., 2, 1] = -s2 * ac * bc
    out[..., 2, 2] = ac * ac
    return out


def _slice_propagators(sys: SpinSystem, pulse: ControlPulse) -> np.ndarray:
    amps = pulse.amplitudes
    return wigner_propagators(
        amps[:, 0], amps[:, 1], amps[:, 2] + sys.offset, pulse.dt
    )


def forward_trajectory(sys: SpinSystem, pulse: ControlPulse, rho0: StateVector) -> TrajectoryMatrix:
    """States rho_n = P_n ... P_1 rho_0 for n = 0..N (N+1 columns)."""
    props = _slice_propagators(sys, pulse)
    n = pulse.n_slices
    cols = np.empty((3, n + 1), dtype=complex)
    state = np.asarray(rho0.coeffs, dtype=complex)
    cols[:, 0] = state
    for i in range(n):
        state = props[i] @ state
        cols[:, i + 1] = state
    return TrajectoryMatrix(cols, 0, n)


def backward_trajectory(sys: SpinSystem, pulse: ControlPulse, sigma: StateVector) -> TrajectoryMatrix:
    """Adjoint states chi_n = P_n^+ ... P_N^+ sigma for n = N+1 down to 1.

    Column layout is ascending in n; chi_{N+1} = sigma sits in the last
    column.
    """
    props = _slice_propagators(sys, pulse)
    n = pulse.n_slices
    cols = np.empty((3, n + 1), dtype=complex)
    state = np.asarray(sigma.coeffs, dtype=complex)
    cols[:, n] = state
    for i in range(n - 1, -1, -1):
        state = props[i].conj().T @ state
        cols[:, i] = state
    return TrajectoryMatrix(cols, 1, n + 1)


def effective_propagator(props, m: int, n: int) -> Propagator:
    """Ordered product of slice propagators between slices m and n.

    ``props`` is a sequence of :class:`Propagator` (or bare 3x3 arrays)
    for slices 1..N. For m <= n this is U_m^n = P_n ... P_m; a reversed
    range returns the time-reversed propagator U_m^n = (U_n^m)^+.
    """
    mats = [p.matrix if isinstance(p, Propagator) else np.asarray(p) for p in props]
    count = len(mats)
    lo, hi = (m, n) if m <= n else (n, m)
    if not (1 <= lo and hi <= count):
        raise IndexError(f"slice range ({m}, {n}) outside 1..{count}")
    acc = np.eye(3, dtype=complex)
    for i in range(lo - 1, hi):
        acc = mats[i] @ acc
    if m > n:
        acc = acc.conj().T
    return Propagator(acc)
