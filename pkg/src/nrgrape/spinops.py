"""Spherical-tensor basis, control generators, and problem records.

The controllable dynamics of a single spin-1/2 live in the rank-1
irreducible subspace of its Liouville space. With basis operators ordered
(T_{1,+1}, T_{1,0}, T_{1,-1}) the commutation superoperators of the x, y, z
spin operators are the spin-1 angular momentum matrices, so states are
complex 3-vectors and propagators are 3x3 unitaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Generators",
    "SpinSystem",
    "ControlPulse",
    "StateVector",
    "standard_generators",
    "named_state",
    "random_pulse",
]

_SQ2 = 1.0 / np.sqrt(2.0)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Generators:
    """The three control generators Lx, Ly, Lz (3x3 Hermitian, spin-1)."""

    Lx: np.ndarray
    Ly: np.ndarray
    Lz: np.ndarray

    def stack(self) -> np.ndarray:
        """Generators as a (3, 3, 3) array indexed by direction x, y, z."""
        return np.stack([self.Lx, self.Ly, self.Lz])


@dataclass(frozen=True)
class SpinSystem:
    """A single two-level system: resonance offset (rad/s) plus generators."""

    offset: float
    generators: Generators = field(default_factory=lambda: standard_generators())

    def __post_init__(self):
        if not np.isfinite(self.offset):
            raise ValueError("offset must be finite")


@dataclass(frozen=True)
class ControlPulse:
    """Piecewise-constant control amplitudes.

    ``amplitudes`` is an (N, 3) real array in rad/s with columns ordered
    (x, y, z); row n holds the amplitudes of time slice n. ``dt`` is the
    slice width in seconds, so the pulse duration is ``N * dt``.
    """

    amplitudes: np.ndarray
    dt: float

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=float)
        if amps.ndim != 2 or amps.shape[1] != 3 or amps.shape[0] < 1:
            raise ValueError("amplitudes must have shape (N, 3) with N >= 1")
        if not np.all(np.isfinite(amps)):
            raise ValueError("amplitudes must be finite")
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ValueError("dt must be positive and finite")
        object.__setattr__(self, "amplitudes", _readonly(amps))

    @property
    def n_slices(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def duration(self) -> float:
        return self.n_slices * self.dt

    def with_amplitudes(self, amplitudes: np.ndarray) -> "ControlPulse":
        return ControlPulse(amplitudes, self.dt)


@dataclass(frozen=True)
class StateVector:
    """Rank-1 coefficient vector in basis order (T_{1,+1}, T_{1,0}, T_{1,-1})."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != (3,):
            raise ValueError("state must be a 3-vector")
        if not np.all(np.isfinite(c)):
            raise ValueError("state coefficients must be finite")
        object.__setattr__(self, "coeffs", _readonly(c))

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))


def standard_generators() -> Generators:
    """Spin-1 generators in the (T_{1,+1}, T_{1,0}, T_{1,-1}) basis.

    Lz is diagonal descending (+1, 0, -1); Lx and Ly carry off-diagonal
    magnitude 1/sqrt(2) in the Condon-Shortley phase convention. The sign
    convention is the one under which the closed-form rotation matrix in
    :func:`nrgrape.propagation.wigner_propagator` equals exp(-i L dt).
    """
    Lx = np.array(
        [[0, _SQ2, 0], [_SQ2, 0, _SQ2], [0, _SQ2, 0]], dtype=complex
    )
    Ly = np.array(
        [[0, -1j * _SQ2, 0], [1j * _SQ2, 0, -1j * _SQ2], [0, 1j * _SQ2, 0]],
        dtype=complex,
    )
    Lz = np.array([[1, 0, 0], [0, 0, 0], [0, 0, -1]], dtype=complex)
    return Generators(_readonly(Lx), _readonly(Ly), _readonly(Lz))


# Coefficient vectors of the normalised x, y, z magnetisation operators.
# z is the Lz eigenvalue-0 tensor; x and y follow from
# sigma_x = -T_{1,+1} + T_{1,-1} and sigma_y = i T_{1,+1} + i T_{1,-1}
# (both over sqrt(2)) under the adopted phases. All three are verified by
# rotation tests: exp(-i (pi/2) Ly) z = x and exp(+i (pi/2) Lx) z = y.
_NAMED = {
    "z": np.array([0.0, 1.0, 0.0], dtype=complex),
    "x": np.array([-1.0, 0.0, 1.0], dtype=complex) / np.sqrt(2.0),
    "y": np.array([1.0j, 0.0, 1.0j], dtype=complex) / np.sqrt(2.0),
}


def named_state(name: str) -> StateVector:
    """Unit-norm state for the x, y or z magnetisation direction."""
    try:
        return StateVector(_NAMED[name])
    except KeyError:
        raise ValueError(
            f"unknown state name {name!r}; expected one of 'x', 'y', 'z'"
        ) from None


def random_pulse(n_slices: int, scale: float, seed: int, dt: float = 1e-5) -> ControlPulse:
    """Reproducible random pulse, uniform in [-scale, +scale] per channel.

    Uses numpy's PCG64 generator seeded with ``seed``; the same arguments
    always produce the same pulse.
    """
    if n_slices < 1:
        raise ValueError("n_slices must be >= 1")
    if not (scale > 0 and np.isfinite(scale)):
        raise ValueError("scale must be positive")
    rng = np.random.default_rng(seed)
    amps = rng.uniform(-scale, scale, size=(n_slices, 3))
    return ControlPulse(amps, dt)
